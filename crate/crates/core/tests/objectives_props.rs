use std::f64::consts::LN_2;

use sona_core::grad::{Graph, GroupSet, Matrix, ParamGroup, ParamStore};
use sona_core::mog::Rng;
use sona_core::nets::{FeatureNet, SonaHead};
use sona_core::objectives::{effective_weights, j_san, v_bt_cond, v_bt_mm, BatchTriple, Scores, SonaDiscriminator};
use sona_core::verify::{gradient_checks, stop_gradient_checks, Fixture};

fn zero_features(store: &mut ParamStore<f64>) {
    let ids: Vec<_> = store.ids_in(GroupSet::of(&[ParamGroup::Features])).collect();
    for id in ids {
        store.value_mut(id).as_mut_slice().fill(0.0);
    }
}

#[test]
fn gradients_match_finite_differences() {
    for c in gradient_checks(2) {
        assert!(c.passed, "{c}");
    }
}

#[test]
fn stop_gradients_are_exact() {
    for seed in [1, 2] {
        for c in stop_gradient_checks(seed) {
            assert!(c.passed, "{c}");
        }
    }
}

#[test]
fn zero_features_give_symmetric_totals() {
    let mut rng = Rng::new(3);
    let mut store = ParamStore::new();
    let d = SonaDiscriminator::new(&mut store, 4, true, true, &mut rng).unwrap();
    zero_features(&mut store);
    let x: Matrix<f64> = rng.normal_matrix(6, 2, 1.0);
    let gen: Matrix<f64> = rng.normal_matrix(6, 2, 1.0);
    let triple = BatchTriple::new(x.clone(), vec![1, 2, 3, 4, 5, 0], gen.clone(), vec![0, 1, 2, 3, 0, 1]).unwrap();
    let g = Graph::with_params(&store, GroupSet::NONE);
    let loss = d.total_discriminator_loss(&g, &triple).unwrap();
    // Each scaled log-sigmoid at 0 with s = 1/sqrt(3) is -sqrt(3) ln 2.
    let t = -(3f64.sqrt()) * LN_2;
    assert!((g.item(loss.v_san).unwrap() - 2.0 * t).abs() < 1e-12);
    assert!((g.item(loss.v_bt_cond.unwrap()).unwrap() - t).abs() < 1e-12);
    assert!((g.item(loss.v_bt_mm.unwrap()).unwrap() - t).abs() < 1e-12);
    assert!((g.item(loss.total).unwrap() + 4.0 * t).abs() < 1e-12);

    let gl = d.total_generator_loss(&g, g.constant(gen), &x, &triple.y).unwrap();
    assert!(g.item(gl.j_san).unwrap().abs() < 1e-15);
    assert!((g.item(gl.total).unwrap() - LN_2).abs() < 1e-12);
}

#[test]
fn two_term_variant_drops_the_mismatch_loss() {
    let mut rng = Rng::new(4);
    let mut store = ParamStore::new();
    let d = SonaDiscriminator::new(&mut store, 3, false, true, &mut rng).unwrap();
    zero_features(&mut store);
    let x: Matrix<f64> = rng.normal_matrix(4, 2, 1.0);
    let triple = BatchTriple::new(x.clone(), vec![1, 0, 3, 2], x, vec![0, 1, 2, 0]).unwrap();
    let g = Graph::with_params(&store, GroupSet::NONE);
    let loss = d.total_discriminator_loss(&g, &triple).unwrap();
    assert!(loss.v_bt_mm.is_none());
    assert_eq!(g.value(loss.weights).cols(), 2);
    // s = 1/sqrt(2): three log-sigmoid terms of -sqrt(2) ln 2.
    assert!((g.item(loss.total).unwrap() - 3.0 * 2f64.sqrt() * LN_2).abs() < 1e-12);
}

#[test]
fn j_san_along_the_first_axis() {
    let mut rng = Rng::new(5);
    let mut store = ParamStore::new();
    let head = SonaHead::new(&mut store, 2, 5, &mut rng).unwrap();
    let e1 = store.value_mut(head.omega_id());
    e1.as_mut_slice().fill(0.0);
    e1.set(0, 0, 3.0);
    let g: Graph<'_, f64> = Graph::with_params(&store, GroupSet::NONE);
    let vars = head.bind(&g).unwrap();
    let h = Matrix::from_rows(&[[0.5, 9.0, 0.0, 1.0, 2.0], [-2.5, 1.0, 4.0, 0.0, 0.0]]).unwrap();
    let loss = j_san(&g, &vars, g.constant(h)).unwrap();
    // -mean(0.5, -2.5) = 1.
    assert!((g.item(loss).unwrap() - 1.0).abs() < 1e-15);
}

fn scores(g: &Graph<'_, f64>, nat: &[f64], align: &[f64]) -> Scores {
    let col = |v: &[f64]| g.constant(Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap());
    Scores {
        naturalness: col(nat),
        alignment: col(align),
    }
}

#[test]
fn bradley_terry_reference_values() {
    let g: Graph<'_, f64> = Graph::new();
    let one = g.scalar_const(1.0);
    let win = scores(&g, &[10.0, 4.0], &[0.0, 7.0]);
    let lose = scores(&g, &[0.0, 1.0], &[0.0, 0.0]);
    let v = g.item(v_bt_cond(&g, win, lose, one).unwrap()).unwrap();
    let oracle = -(-10f64).exp().ln_1p();
    assert!((v - oracle).abs() < 1e-15, "{v} vs {oracle}");
    assert!((v + 4.5398899e-5).abs() < 1e-12);

    let s = g.scalar_const(0.25);
    let same = scores(&g, &[1.5, -2.0], &[0.3, 0.1]);
    let v = g.item(v_bt_mm(&g, same, same, s).unwrap()).unwrap();
    assert!((v + LN_2 / 0.25).abs() < 1e-12);
}

#[test]
fn large_raw_dominates_weights() {
    let w = effective_weights(&[10.0, 0.0, 0.0]);
    let sp10 = 10.0 + (-10f64).exp().ln_1p();
    let norm = (sp10 * sp10 + 2.0 * LN_2 * LN_2).sqrt();
    assert!((w[0] - sp10 / norm).abs() < 1e-15);
    assert!((w[1] - LN_2 / norm).abs() < 1e-15);
    for t in [-3.0, 0.7, 12.0] {
        for v in effective_weights(&[t, t, t]) {
            assert!((v - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        }
    }
}

#[test]
fn fixture_is_deterministic() {
    let a = Fixture::new(9).unwrap();
    let b = Fixture::new(9).unwrap();
    assert_eq!(a.x_data, b.x_data);
    assert_eq!(a.sona.store.named_values(), b.sona.store.named_values());
}

#[test]
fn features_are_zero_after_zeroing() {
    let mut rng = Rng::new(6);
    let mut store = ParamStore::new();
    let f = FeatureNet::new(&mut store, &mut rng).unwrap();
    zero_features(&mut store);
    let g = Graph::with_params(&store, GroupSet::NONE);
    let h = f.forward(&g, g.constant(rng.normal_matrix(3, 2, 1.0))).unwrap();
    assert!(g.value(h).as_slice().iter().all(|v| *v == 0.0));
}
