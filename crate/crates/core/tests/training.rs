use saner_core::harness::{self, ConfigMap, ExperimentConfig, Tracking};
use saner_core::model::{self, Activation, Batch, ModelSpec};
use saner_core::noise;
use saner_core::optim::{self, Mode, OptimConfig};

fn small_config(extra: &[&str]) -> ExperimentConfig {
    let mut map = ConfigMap::default();
    map.apply_overrides(["data_n=400", "data_n_test=200", "probe_size=64", "batch_size=32", "epochs=6"])
        .unwrap();
    map.apply_overrides(extra.iter().copied()).unwrap();
    map.resolve().unwrap()
}

#[test]
fn sgd_separates_two_distant_blobs() {
    let ds = noise::make_gaussian_blobs(600, 2, 8, 10.0, 4).unwrap();
    let (train, test) = ds.split_at(400);
    let config = {
        let mut map = ConfigMap::default();
        map.apply_overrides(["layers=8,2", "mode=sgd", "epochs=10", "batch_size=32", "eta=0.05", "diagnostics=false"])
            .unwrap();
        map.resolve().unwrap()
    };
    let record = harness::train_on(&config, &train, Some(&test), Tracking { accuracy: true, diagnostics: false }).unwrap();
    let last = record.rows.last().unwrap();
    assert!(last.clean_train_acc.unwrap() >= 0.99, "{last:?}");
    assert!(last.test_acc.unwrap() >= 0.99);
    assert_eq!(last.noisy_train_acc, None);
}

#[test]
fn sam_gradient_is_the_gradient_at_the_perturbed_point() {
    let spec = ModelSpec::new(vec![4, 5, 3], Activation::Tanh).unwrap();
    let params = model::init_params(&spec, 2);
    let batch = Batch::clean(
        vec![0.1, -0.4, 1.2, 0.3, -1.0, 0.5, 0.2, 0.9, 0.0, 0.7, -0.3, -0.8],
        4,
        vec![2, 0, 1],
    )
    .unwrap();
    let rho = 0.05;
    let (g_sgd, g_sam) = optim::sam_gradient(&params, &batch, &spec, rho).unwrap();

    let norm = g_sgd.iter().map(|v| v * v).sum::<f64>().sqrt();
    let moved: Vec<f64> = params.iter().zip(g_sgd.iter()).map(|(w, g)| w + rho * g / norm).collect();
    let expected = model::backward(&moved.into(), &batch, &spec).unwrap();
    assert_eq!(g_sam, expected);
}

#[test]
fn sam_step_on_a_quadratic_bowl() {
    // For f(w) = ½‖w‖², g = w and the SAM gradient is w (1 + ρ/‖w‖).
    let w = [3.0, 4.0];
    let rho = 0.5;
    let eps = optim::sam_perturbation(&w, rho);
    let g_sam: Vec<f64> = w.iter().zip(eps.iter()).map(|(a, e)| a + e).collect();
    assert!((g_sam[0] - 3.3).abs() < 1e-12 && (g_sam[1] - 4.4).abs() < 1e-12);
    let ratio = optim::component_ratio(&g_sam, &w).unwrap();
    assert!(ratio.iter().all(|r| (r.unwrap() - 1.1).abs() < 1e-12));
    assert!(optim::mask_b(&ratio).iter().all(|m| !m));
}

#[test]
fn metrics_survive_a_file_round_trip() {
    let record = harness::run_training(&small_config(&["seed=3"])).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("metrics.csv");
    harness::write_metrics(&record.rows, &path).unwrap();
    let back = harness::read_metrics(&path).unwrap();
    assert_eq!(back, record.rows);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(harness::metrics::encode_metrics(&back), text);
    assert!(text.starts_with(harness::METRICS_HEADER));
}

#[test]
fn every_row_is_self_consistent() {
    let config = small_config(&["mode=saner", "k=3", "alpha=0.5", "seed=4", "lr_milestones=3,5"]);
    let record = harness::run_training(&config).unwrap();
    assert_eq!(record.rows.len(), 6);
    let etas: Vec<f64> = record.rows.iter().map(|r| r.eta).collect();
    assert_eq!(etas[..3], [0.1, 0.1, 0.1]);
    assert!((etas[3] - 0.01).abs() < 1e-15 && (etas[5] - 0.001).abs() < 1e-15);
    for (epoch, row) in record.rows.iter().enumerate() {
        assert_eq!(row.epoch, epoch);
        assert_eq!(row.alpha, optim::alpha_schedule(epoch, 3, 0.5));
        let gap = row.clean_train_acc.unwrap() - row.noisy_train_acc.unwrap();
        assert_eq!(row.clean_noisy_gap, Some(gap));
        assert_eq!(row.generalization_gap, Some(row.train_acc_overall.unwrap() - row.test_acc.unwrap()));
        let sum = row.frac_a.unwrap() + row.frac_b.unwrap() + row.frac_c.unwrap();
        assert!(sum <= 1.0 + 1e-12);
        if let (Some(pc), Some(pn), Some(pr)) = (row.p_clean, row.p_noise, row.pr) {
            assert!((pr - pn / pc).abs() < 1e-12);
        }
    }
}

#[test]
fn tracking_flags_do_not_change_the_trajectory() {
    let config = small_config(&["seed=5"]);
    let (train, test) = harness::prepare_data(&config).unwrap();
    let full = harness::train_on(&config, &train, test.as_ref(), Tracking { accuracy: true, diagnostics: true }).unwrap();
    let bare = harness::train_on(&config, &train, None, Tracking { accuracy: false, diagnostics: false }).unwrap();
    let diag = harness::train_on(&config, &train, None, Tracking { accuracy: false, diagnostics: true }).unwrap();
    assert_eq!(full.final_params, bare.final_params);
    for (a, b) in full.rows.iter().zip(&diag.rows) {
        assert_eq!((a.frac_a, a.frac_b, a.frac_c, a.p_clean, a.p_noise, a.pr), (b.frac_a, b.frac_b, b.frac_c, b.p_clean, b.p_noise, b.pr));
        assert_eq!(b.test_acc, None);
    }
}

#[test]
fn divergence_reports_completed_epochs() {
    let config = small_config(&["mode=sgd", "eta=1e12", "momentum=0", "seed=1"]);
    match harness::run_training(&config) {
        Err(saner_core::Error::Diverged { epoch, partial }) => assert_eq!(partial.rows.len(), epoch),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.rows.len())),
    }
}

#[test]
fn resolved_text_reproduces_the_config() {
    let config = small_config(&["mode=sgd_gr_b", "rho=0.2", "noise_kind=asymmetric_pairmap", "noise_pairs=9:1,2:0"]);
    let again = ExperimentConfig::from_kv_text(&config.to_kv_text()).unwrap();
    assert_eq!(again, config);
    assert_eq!(again.optim.mode, Mode::SgdGrB);
    let defaults = OptimConfig::default();
    assert_eq!((defaults.rho, defaults.momentum, defaults.weight_decay), (0.1, 0.9, 5e-4));
}
