use sona_core::checkpoint::Checkpoint;
use sona_core::grad::{GroupSet, Matrix};
use sona_core::nets::SonaHead;
use sona_core::trainer::{parameter_routing, Discriminator, LossBreakdown, Method, Model, StepKind, TrainConfig, Trainer};
use sona_core::Error;

fn small(method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        batch: 32,
        iters: 30,
        eval_every: 10,
        eval_samples: 64,
        ..TrainConfig::new(method, 3, seed)
    }
}

/// `(name, changed)` for every parameter, comparing bits.
fn groups_changed(before: &Trainer<f64>, after: &Trainer<f64>) -> Vec<(String, bool)> {
    before
        .model()
        .store
        .iter()
        .zip(after.model().store.iter())
        .map(|(a, b)| {
            let same = a.value.as_slice().iter().zip(b.value.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
            (a.name.clone(), !same)
        })
        .collect()
}

#[test]
fn same_seed_same_history() {
    for method in [Method::Sona, Method::Pdgan] {
        let run = || {
            let out = Trainer::<f64>::new(small(method, 5)).unwrap().train(|_| Ok(())).unwrap();
            serde_json::to_string(&out.history).unwrap()
        };
        assert_eq!(run(), run());
    }
    let a = Trainer::<f64>::new(small(Method::Sona, 5)).unwrap().train(|_| Ok(())).unwrap();
    let b = Trainer::<f64>::new(small(Method::Sona, 6)).unwrap().train(|_| Ok(())).unwrap();
    assert_ne!(a.history, b.history);
}

#[test]
fn zero_iterations_return_the_initial_checkpoint() {
    let cfg = TrainConfig { iters: 0, ..small(Method::Sona, 1) };
    let t = Trainer::<f64>::new(cfg).unwrap();
    let initial = t.model().store.named_values();
    let (w2, _) = t.evaluate().unwrap();
    let out = t.train(|_| Ok(())).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].iteration, 0);
    assert!(out.history[0].losses.is_none());
    assert_eq!(out.best.iteration, 0);
    assert_eq!(out.best.w2, w2);
    assert_eq!(out.best.params, initial);
}

#[test]
fn steps_touch_only_their_groups() {
    for method in Method::ALL {
        let mut t = Trainer::<f64>::new(small(method, 2)).unwrap();
        for kind in [StepKind::Discriminator, StepKind::Generator] {
            let mut before = Trainer::<f64>::new(small(method, 2)).unwrap();
            before.model_mut().store = t.model().store.clone();
            let mut losses = LossBreakdown::default();
            match kind {
                StepKind::Discriminator => {
                    t.discriminator_step(&mut losses).unwrap();
                }
                StepKind::Generator => t.generator_step(&mut losses).unwrap(),
            }
            let routing = parameter_routing(method, kind);
            for (p, (name, changed)) in t.model().store.iter().zip(groups_changed(&before, &t)) {
                if !routing.contains(p.group) {
                    assert!(!changed, "{method} {kind:?} step changed {name}");
                }
            }
        }
    }
}

#[test]
fn routing_table() {
    use sona_core::grad::ParamGroup::*;
    assert_eq!(parameter_routing(Method::Sona, StepKind::Generator), GroupSet::of(&[Generator]));
    assert!(!parameter_routing(Method::Sona, StepKind::Discriminator).contains(Generator));
    let d = parameter_routing(Method::Sona, StepKind::Discriminator);
    for g in [Features, Direction, ClassDirections, Weighting] {
        assert!(d.contains(g));
    }
    assert!(!parameter_routing(Method::Pdgan, StepKind::Discriminator).contains(Weighting));
}

fn unit_rows(m: &Matrix<f64>) -> f64 {
    (0..m.rows())
        .map(|i| (m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn bound_directions(model: &Model<f64>, head: &SonaHead) -> (Matrix<f64>, Matrix<f64>) {
    let g = sona_core::grad::Graph::with_params(&model.store, GroupSet::NONE);
    let v = head.bind(&g).unwrap();
    let out = (g.value(v.omega).clone(), g.value(v.omega_y).clone());
    out
}

#[test]
fn weights_and_directions_stay_unit_for_500_iterations() {
    let mut t = Trainer::<f64>::new(TrainConfig {
        batch: 64,
        ..TrainConfig::new(Method::Sona, 6, 3)
    })
    .unwrap();
    for _ in 0..500 {
        let r = t.step().unwrap();
        assert_eq!(r.weights.len(), 3);
        let sq: f64 = r.weights.iter().map(|w| w * w).sum();
        assert!((sq - 1.0).abs() < 1e-12, "iteration {}: {sq}", r.iteration);
        if r.iteration.is_multiple_of(50) {
            let Discriminator::Sona(d) = &t.model().discriminator else { unreachable!() };
            let (w, wy) = bound_directions(t.model(), &d.head);
            assert!(unit_rows(&w) < 1e-12 && unit_rows(&wy) < 1e-12);
        }
    }
}

#[test]
fn losses_stay_finite_for_100_iterations() {
    for method in [Method::Sona, Method::SonaNoMm, Method::Pdgan] {
        for seed in 0..5 {
            let mut t = Trainer::<f64>::new(TrainConfig::new(method, 6, seed)).unwrap();
            for _ in 0..100 {
                let r = t.step().unwrap();
                assert!(r.losses.is_finite(), "{method} seed {seed}: {:?}", r.losses);
            }
        }
    }
}

#[test]
fn nan_parameters_abort_with_the_iteration() {
    let mut t = Trainer::<f64>::new(small(Method::Sona, 0)).unwrap();
    t.step().unwrap();
    let id = t.model().store.find("generator.embedding").unwrap();
    t.model_mut().store.value_mut(id).set(0, 0, f64::NAN);
    t.model_mut().store.value_mut(id).set(1, 0, f64::NAN);
    t.model_mut().store.value_mut(id).set(2, 0, f64::NAN);
    match t.step() {
        Err(Error::NonFiniteLoss { iteration, breakdown }) => {
            assert_eq!(iteration, 2);
            assert!(breakdown.contains("v_san"), "{breakdown}");
        }
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_keeps_w2() {
    let mut t = Trainer::<f64>::new(small(Method::Sona, 4)).unwrap();
    for _ in 0..20 {
        t.step().unwrap();
    }
    let (w2, cw2) = t.evaluate().unwrap();
    let ck = t.model().snapshot(t.iteration(), w2, t.config_hash());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back, ck);
    let restored = Model::from_checkpoint(&back).unwrap();
    let (w2b, cw2b) = t.evaluate_model(&restored).unwrap();
    assert_eq!(w2.to_bits(), w2b.to_bits());
    assert_eq!(cw2.to_bits(), cw2b.to_bits());
    assert_eq!(restored.effective_weights(), t.model().effective_weights());
}

#[test]
fn best_checkpoint_has_the_lowest_recorded_w2() {
    let out = Trainer::<f64>::new(small(Method::SonaNoMm, 8)).unwrap().train(|_| Ok(())).unwrap();
    let min = out.history.iter().map(|r| r.w2).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.w2, min);
    assert_eq!(out.history.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 10, 20, 30]);
    assert_eq!(out.best.weights.len(), 2);
}
