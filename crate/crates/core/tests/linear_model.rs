mod common;

use graph_unlearn::dense::{dot, norm, sub};
use graph_unlearn::{train, DenseMatrix, LossKind, Objective, PropagationConfig, TrainConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

struct Instance {
    z: DenseMatrix<f64>,
    targets: Vec<f64>,
    mask: Vec<bool>,
    noise: Vec<f64>,
}

fn instance(n: usize, d: usize, loss: LossKind, seed: u64) -> Instance {
    let mut rng = common::rng(seed);
    let z = common::capped_features(n, d, &mut rng);
    let targets = (0..n)
        .map(|_| match loss {
            LossKind::Logistic => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            LossKind::LeastSquares => rng.random_range(-2.0..2.0),
        })
        .collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    let noise = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
    Instance { z, targets, mask, noise }
}

fn loss_strategy() -> impl Strategy<Value = LossKind> {
    prop_oneof![Just(LossKind::Logistic), Just(LossKind::LeastSquares)]
}

fn weights(d: usize, scale: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(b).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(
        seed in any::<u64>(), n in 2usize..40, d in 1usize..8, loss in loss_strategy(), lambda in 1e-3..1.0f64,
    ) {
        let inst = instance(n, d, loss, seed);
        let obj = Objective::new(&inst.z, inst.targets.clone(), &inst.mask, lambda, loss, &inst.noise).unwrap();
        let mut rng = common::rng(seed.wrapping_add(1));
        let w = weights(d, 3.0, &mut rng);
        let h = 1e-5;
        let fd: Vec<f64> = (0..d)
            .map(|k| {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[k] += h;
                wm[k] -= h;
                (obj.value(&wp) - obj.value(&wm)) / (2.0 * h)
            })
            .collect();
        let g = obj.gradient(&w);
        prop_assert!(rel_err(&fd, &g) <= 1e-5, "relative error {}", rel_err(&fd, &g));
    }

    #[test]
    fn hessian_matches_gradient_differences(
        seed in any::<u64>(), n in 2usize..40, d in 1usize..8, loss in loss_strategy(), lambda in 1e-3..1.0f64,
    ) {
        let inst = instance(n, d, loss, seed);
        let obj = Objective::new(&inst.z, inst.targets.clone(), &inst.mask, lambda, loss, &inst.noise).unwrap();
        let mut rng = common::rng(seed.wrapping_add(2));
        let w = weights(d, 3.0, &mut rng);
        let v = weights(d, 1.0, &mut rng);
        let h = 1e-5;
        let wp: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let wm: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let fd: Vec<f64> = sub(&obj.gradient(&wp), &obj.gradient(&wm)).iter().map(|x| x / (2.0 * h)).collect();
        let hv = obj.hessian_vec(&w, &v);
        prop_assert!(rel_err(&fd, &hv) <= 1e-4, "relative error {}", rel_err(&fd, &hv));
        let dense = obj.hessian(&w).matvec(&v);
        prop_assert!(rel_err(&dense, &hv) <= 1e-12);
    }

    #[test]
    fn hessian_eigenvalues_exceed_regularisation(
        seed in any::<u64>(), n in 2usize..40, d in 1usize..10, loss in loss_strategy(), lambda in 1e-4..1.0f64,
    ) {
        let inst = instance(n, d, loss, seed);
        let obj = Objective::new(&inst.z, inst.targets.clone(), &inst.mask, lambda, loss, &inst.noise).unwrap();
        let mut rng = common::rng(seed.wrapping_add(3));
        let h = obj.hessian(&weights(d, 5.0, &mut rng));
        prop_assert!(h.is_symmetric(0.0));
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, h.as_slice()));
        let floor = obj.strong_convexity();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= floor * (1.0 - 1e-10), "min eigenvalue {} below {}", min, floor);
    }

    #[test]
    fn gradient_is_strongly_monotone(
        seed in any::<u64>(), n in 2usize..40, d in 1usize..8, loss in loss_strategy(), lambda in 1e-3..1.0f64,
    ) {
        let inst = instance(n, d, loss, seed);
        let obj = Objective::new(&inst.z, inst.targets.clone(), &inst.mask, lambda, loss, &inst.noise).unwrap();
        let mut rng = common::rng(seed.wrapping_add(4));
        let (w1, w2) = (weights(d, 4.0, &mut rng), weights(d, 4.0, &mut rng));
        let dw = sub(&w1, &w2);
        let lhs = dot(&sub(&obj.gradient(&w1), &obj.gradient(&w2)), &dw);
        let rhs = obj.strong_convexity() * dot(&dw, &dw);
        prop_assert!(lhs >= rhs * (1.0 - 1e-10) - 1e-12, "{} < {}", lhs, rhs);
    }

    #[test]
    fn logistic_derivatives_respect_constants(s in -50.0..50.0f64, positive in any::<bool>()) {
        let y = if positive { 1.0 } else { -1.0 };
        let c = LossKind::Logistic.constants::<f64>();
        let d1 = LossKind::Logistic.first(s, y);
        let d2 = LossKind::Logistic.second(s, y);
        prop_assert!(d1.abs() <= c.c1);
        prop_assert!(d2 > 0.0 || s.abs() > 30.0);
        prop_assert!(d2 <= c.gamma1);
    }

    #[test]
    fn training_reaches_tolerance(seed in any::<u64>(), lambda in prop_oneof![Just(1e-2), Just(1e-4)], depth in 0usize..3) {
        let ds = common::sbm(60, 2, 4, 4.0, false, seed);
        let z = common::embed(&ds, PropagationConfig::sgc(depth));
        let cfg = TrainConfig::new(lambda, 0.1, LossKind::Logistic);
        let model = train(&ds, &z, &cfg, seed).unwrap();
        let obj = model.objective(0, &ds, &z).unwrap();
        let g = norm(&obj.gradient(&model.classifiers()[0].weights));
        prop_assert!(g <= 1e-8 * ds.training_count() as f64);
    }
}

#[test]
fn value_matches_independent_evaluation() {
    let inst = instance(12, 3, LossKind::Logistic, 21);
    let obj = Objective::new(&inst.z, inst.targets.clone(), &inst.mask, 0.3, LossKind::Logistic, &inst.noise).unwrap();
    let w = [0.4, -1.2, 0.7];
    let mut expected = 0.0;
    let m = inst.mask.iter().filter(|&&b| b).count() as f64;
    for i in 0..12 {
        if inst.mask[i] {
            let s: f64 = (0..3).map(|k| inst.z[(i, k)] * w[k]).sum();
            expected += (1.0 + (-inst.targets[i] * s).exp()).ln();
        }
    }
    expected += 0.5 * 0.3 * m * w.iter().map(|v| v * v).sum::<f64>();
    expected += (0..3).map(|k| inst.noise[k] * w[k]).sum::<f64>();
    assert!((obj.value(&w) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
}

#[test]
fn least_squares_training_matches_normal_equations() {
    let inst = instance(30, 5, LossKind::LeastSquares, 8);
    let lambda = 0.05;
    let obj = Objective::new(&inst.z, inst.targets.clone(), &inst.mask, lambda, LossKind::LeastSquares, &inst.noise)
        .unwrap();
    let w = graph_unlearn::model::minimize(&obj, vec![0.0; 5], &Default::default()).unwrap();
    // (2 Z'Z + lambda m I) w = 2 Z'y - b
    let rows: Vec<usize> = (0..30).filter(|&i| inst.mask[i]).collect();
    let zt = DMatrix::from_fn(rows.len(), 5, |r, c| inst.z[(rows[r], c)]);
    let y = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|&i| inst.targets[i]));
    let a = zt.transpose() * &zt * 2.0 + DMatrix::identity(5, 5) * (lambda * rows.len() as f64);
    let rhs = zt.transpose() * y * 2.0 - nalgebra::DVector::from_column_slice(&inst.noise);
    let exact = a.lu().solve(&rhs).unwrap();
    for k in 0..5 {
        assert!((w[k] - exact[k]).abs() <= 1e-8, "{} vs {}", w[k], exact[k]);
    }
}

#[test]
fn f32_training_tracks_f64() {
    let ds = common::sbm(80, 2, 4, 4.0, false, 12);
    let z = common::embed(&ds, PropagationConfig::sgc(2));
    let m64 = train(&ds, &z, &TrainConfig::new(0.01, 0.0, LossKind::Logistic), 1).unwrap();

    let ds32 = graph_unlearn::Dataset::new(
        ds.graph().clone(),
        ds.features().map(|v| v as f32),
        ds.labels().to_vec(),
        2,
        ds.split().to_vec(),
    )
    .unwrap();
    let z32 = graph_unlearn::propagate(ds32.graph(), ds32.features(), PropagationConfig::sgc(2)).unwrap();
    let m32 = train(&ds32, &z32, &TrainConfig::new(0.01f32, 0.0, LossKind::Logistic), 1).unwrap();
    for (a, b) in m64.classifiers()[0].weights.iter().zip(&m32.classifiers()[0].weights) {
        assert!((a - *b as f64).abs() < 1e-3, "{a} vs {b}");
    }
}
