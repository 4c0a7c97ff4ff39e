//! Monte-Carlo properties of the mixture sampler.

use sona_core::mog::{sample_joint, MogSpec, Rng};

#[test]
fn class_frequencies_are_uniform_within_three_sigma() {
    let spec = MogSpec::new(6);
    let n = 100_000usize;
    let (_, y) = sample_joint::<f64>(&spec, &mut Rng::new(42), n);
    let p = 1.0 / 6.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let mut counts = [0usize; 6];
    for c in y {
        counts[c] += 1;
    }
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "count {c}");
    }
}

#[test]
fn per_class_std_within_five_percent() {
    let spec = MogSpec::new(4);
    let n = 100_000usize;
    let (x, y) = sample_joint::<f64>(&spec, &mut Rng::new(7), n);
    let means = spec.means();
    for class in 0..4 {
        let (mut ss, mut cnt) = (0.0, 0usize);
        for i in (0..n).filter(|&i| y[i] == class) {
            for d in 0..2 {
                ss += (x.get(i, d) - means[class][d]).powi(2);
            }
            cnt += 2;
        }
        let std = (ss / cnt as f64).sqrt();
        assert!((std - 0.03).abs() < 0.05 * 0.03, "class {class}: std {std}");
    }
}

#[test]
fn marginal_mean_near_centroid() {
    // Centroid of evenly spaced means is the origin.
    let spec = MogSpec::new(5);
    let n = 100_000usize;
    let (x, _) = sample_joint::<f64>(&spec, &mut Rng::new(3), n);
    // Per-coordinate marginal variance is at most radius^2 + std^2.
    let sd = (0.75f64.powi(2) + 0.03f64.powi(2)).sqrt();
    for d in 0..2 {
        let m: f64 = (0..n).map(|i| x.get(i, d)).sum::<f64>() / n as f64;
        assert!(m.abs() < 3.0 * sd / (n as f64).sqrt(), "coord {d}: {m}");
    }
}
