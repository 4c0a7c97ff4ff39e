//! Factorial enumeration of permutations, the oracle for the assignment
//! solver on small instances.

use crate::grad::Matrix;

/// Minimum of `sum_i cost[i, p(i)]` over all permutations, and the first
/// permutation attaining it. Practical up to `n` of about 9.
pub fn brute_force_assignment(cost: &Matrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "cost must be square");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), total(cost, &perm));
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let t = total(cost, &perm);
            if t < best.1 {
                best = (perm.clone(), t);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn total(cost: &Matrix<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerates_all_of_three() {
        // The unique optimum is the last permutation visited from identity.
        let c = Matrix::from_rows(&[[9.0, 9.0, 0.0], [9.0, 0.0, 9.0], [0.0, 9.0, 9.0]]).unwrap();
        assert_eq!(brute_force_assignment(&c), (vec![2, 1, 0], 0.0));
        assert_eq!(brute_force_assignment(&Matrix::zeros(0, 0)).1, 0.0);
    }
}
