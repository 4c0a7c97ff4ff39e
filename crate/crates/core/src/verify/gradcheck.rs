//! Central finite differences, the oracle for every autodiff check.

use crate::error::{Error, Result};
use crate::grad::{Graph, GroupSet, ParamStore, Var};

/// Central-difference gradient of `f` at `point`.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x)?;
        x[i] = orig - step;
        let down = f(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::contract(format!(
                "non-finite loss while probing coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Relative error between autodiff and central differences of the 1x1
/// node built by `build`, over every parameter in `groups`.
///
/// While probing, stop-gradient nodes replay their values at the base
/// point, so the oracle differentiates only the paths the graph keeps.
pub fn param_gradient_error<F>(store: &ParamStore<f64>, groups: GroupSet, step: f64, build: F) -> Result<f64>
where
    F: Fn(&Graph<'_, f64>) -> Result<Var>,
{
    let ids: Vec<_> = store.ids_in(groups).collect();
    let (analytic, frozen) = {
        let g = Graph::with_params(store, groups);
        let loss = build(&g)?;
        let grads = g.backward(loss)?;
        let mut flat = Vec::new();
        for &id in &ids {
            match grads.get(id) {
                Some(m) => flat.extend_from_slice(m.as_slice()),
                None => flat.extend(std::iter::repeat_n(0.0, store.value(id).len())),
            }
        }
        (flat, g.stopped_values())
    };
    let point: Vec<f64> = ids.iter().flat_map(|&id| store.value(id).as_slice().to_vec()).collect();
    let mut probe = store.clone();
    let numeric = finite_diff_grad(
        |flat| {
            let mut off = 0;
            for &id in &ids {
                let m = probe.value_mut(id);
                let n = m.len();
                m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
            let g = Graph::with_params(&probe, GroupSet::NONE).with_frozen_stops(frozen.clone());
            let loss = build(&g)?;
            g.item(loss)
        },
        &point,
        step,
    )?;
    Ok(relative_error(&analytic, &numeric))
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, with the denominator
/// floored at 1e-8 so that two vanishing gradients compare as equal.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    diff / scale.max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|x| Ok(x[0] * x[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| Ok(4.2), &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn frozen_stops_follow_the_kept_path() {
        use crate::grad::{Matrix, ParamGroup};
        // loss = w * sg(w): the kept path has derivative sg(w) = w, while
        // the full derivative would be 2w.
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Direction, Matrix::scalar(1.5));
        let build = |g: &Graph<'_, f64>| {
            let p = g.param(w);
            g.mul(p, g.stop_gradient(p))
        };
        let err = param_gradient_error(&store, GroupSet::ALL, 1e-5, build).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        assert!(finite_diff_grad(|x| Ok(x[0]), &[1.0], 0.0).is_err());
        assert!(finite_diff_grad(|_| Ok(f64::NAN), &[1.0], 1e-5).is_err());
    }
}
