use dmdc_core::dmdc::{fit, train};
use dmdc_core::model_io::{from_json, to_json};
use dmdc_core::plant::{gaussian_inputs, random_plant, simulate};
use dmdc_core::validation::{draw_folds, run_folds, CvConfig};
use dmdc_core::{ChannelSpec, ModelConfig, SnapshotSet, TimeSeriesDataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hand_snapshots(u: &[f64]) -> SnapshotSet {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
    let b = DVector::from_vec(vec![1.0, 0.0]);
    let mut y = vec![DVector::from_vec(vec![1.0, 1.0])];
    for &ut in u {
        let next = &a * y.last().unwrap() + &b * ut;
        y.push(next);
    }
    let n = u.len();
    SnapshotSet {
        observable_names: vec!["y0".into(), "y1".into()],
        input_names: vec!["u".into()],
        y_t: DMatrix::from_fn(2, n, |i, t| y[t][i]),
        y_t1: DMatrix::from_fn(2, n, |i, t| y[t + 1][i]),
        u_t: DMatrix::from_row_slice(1, n, u),
    }
}

#[test]
fn hand_instance_with_varying_input() {
    // normal-equation solution of the four pairs, computed separately
    let f = fit(&hand_snapshots(&[1.0, 0.0, 1.0, 1.0]), None).unwrap();
    assert_eq!(f.svd_rank_used, 3);
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    assert!((&f.a - a).amax() < 1e-9);
    assert!((&f.b - b).amax() < 1e-9);
}

#[test]
fn constant_input_leaves_omega_rank_deficient() {
    // y0 + y1 stays at 2 under u = 1, so only a minimum-norm fit exists;
    // it still reproduces every training pair
    let s = hand_snapshots(&[1.0; 4]);
    let f = fit(&s, None).unwrap();
    assert_eq!(f.svd_rank_used, 2);
    let pred = &f.a * &s.y_t + &f.b * &s.u_t;
    assert!((pred - &s.y_t1).amax() < 1e-12);
}

#[test]
fn random_stable_plant_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let spec = random_plant(3, 2, 0.9, &mut rng).unwrap();
    let u = gaussian_inputs("e", &spec.input_names(), 1000, 100.0, &mut rng).unwrap();
    let sim = simulate(&spec, &u, &[0.3, -0.2, 0.1], 0).unwrap();
    let snaps =
        dmdc_core::dmdc::build_snapshots(&[&sim.dataset], &spec.input_names(), &spec.observable_names()).unwrap();
    let f = fit(&snaps, None).unwrap();
    assert!((&f.a - spec.a()).norm() / spec.a().norm() < 1e-6);
    assert!((&f.b - spec.b()).norm() / spec.b().norm() < 1e-6);
}

#[test]
fn least_squares_beats_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = random_plant(3, 2, 0.8, &mut rng).unwrap().with_noise(vec![0.1; 3]).unwrap();
    let u = gaussian_inputs("e", &spec.input_names(), 400, 100.0, &mut rng).unwrap();
    let sim = simulate(&spec, &u, &[0.0; 3], 9).unwrap();
    let s = dmdc_core::dmdc::build_snapshots(&[&sim.dataset], &spec.input_names(), &spec.observable_names()).unwrap();
    let f = fit(&s, None).unwrap();
    let omega = {
        let mut o = DMatrix::zeros(5, s.pair_count());
        o.rows_mut(0, 3).copy_from(&s.y_t);
        o.rows_mut(3, 2).copy_from(&s.u_t);
        o
    };
    let mut g = DMatrix::zeros(3, 5);
    g.columns_mut(0, 3).copy_from(&f.a);
    g.columns_mut(3, 2).copy_from(&f.b);
    let best = (&s.y_t1 - &g * &omega).norm();
    for _ in 0..100 {
        let mut d = DMatrix::from_fn(3, 5, |_, _| rng.random::<f64>() - 0.5);
        d *= 1e-3 / d.norm();
        assert!((&s.y_t1 - (&g + d) * &omega).norm() >= best);
    }
}

fn offset_experiments() -> (Vec<TimeSeriesDataset>, Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = random_plant(3, 2, 0.85, &mut rng).unwrap();
    let sets = (0..6)
        .map(|i| {
            let u = gaussian_inputs(&format!("e{i}"), &spec.input_names(), 500, 100.0, &mut rng).unwrap();
            // inputs with a nonzero mean, so centering shifts the dynamics
            let shifted = spec
                .input_names()
                .iter()
                .map(|n| (ChannelSpec::input(n, ""), u.column(n).unwrap().iter().map(|v| v + 4.0).collect()))
                .collect();
            let u = TimeSeriesDataset::from_columns(format!("e{i}"), 100.0, shifted).unwrap();
            simulate(&spec, &u, &[1.0, 2.0, -1.0], 0).unwrap().dataset
        })
        .collect();
    (sets, spec.input_names(), spec.observable_names())
}

#[test]
fn noise_free_data_is_reproduced_in_every_fold() {
    let (sets, inputs, observables) = offset_experiments();
    let cfg = CvConfig { p: 2, repeats: 5, seed: 3, ..Default::default() };
    let folds = draw_folds(sets.len(), 2, 5, 3).unwrap();
    let out = run_folds(&sets, &folds, &inputs, &observables, &cfg).unwrap();
    for fold in &out.report.folds {
        let train: Vec<&TimeSeriesDataset> = fold.train_ids.iter().map(|id| sets.iter().find(|d| &d.experiment_id == id).unwrap()).collect();
        let model = train_model(&train, &inputs, &observables);
        for (k, s) in fold.scores.iter().enumerate() {
            assert!(s.r2_test >= 0.999, "fold {} {}: r2 {}", fold.fold_index, s.observable, s.r2_test);
            let rmse_std = s.rmse_test / model.observable_standardizer.scale[k];
            assert!(rmse_std <= 1e-4, "fold {} {}: rmse {rmse_std}", fold.fold_index, s.observable);
        }
    }
}

fn train_model(sets: &[&TimeSeriesDataset], inputs: &[String], observables: &[String]) -> dmdc_core::StateSpaceModel {
    train(sets, inputs, observables, &ModelConfig::default()).unwrap()
}

#[test]
fn offset_survives_the_model_file() {
    let (sets, inputs, observables) = offset_experiments();
    let refs: Vec<&TimeSeriesDataset> = sets.iter().collect();
    let model = train_model(&refs, &inputs, &observables);
    assert!(model.offset.amax() > 1e-3, "centered inputs need a constant term");
    let back = from_json(&to_json(&model).unwrap()).unwrap();
    assert_eq!(back, model);

    let raw = train(&refs, &inputs, &observables, &ModelConfig { standardize_inputs: false, standardize_observables: false, rank: None }).unwrap();
    assert_eq!(raw.offset, DVector::zeros(3));
}

#[test]
fn model_file_without_offset_reads_as_zero() {
    let (sets, inputs, observables) = offset_experiments();
    let refs: Vec<&TimeSeriesDataset> = sets.iter().collect();
    let model = train_model(&refs, &inputs, &observables);
    let mut v: serde_json::Value = serde_json::from_str(&to_json(&model).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("offset");
    let back = from_json(&v.to_string()).unwrap();
    assert_eq!(back.offset, DVector::zeros(3));
}
