use stochdyn_core::models::{build_sbm, SpinBosonSpec};
use stochdyn_core::propagator::{run_ensemble, TrajectoryStore};
use stochdyn_core::TimeGrid;
use stochdyn_nn::{forecast, ModelConfig, TrainConfig};
use stochdyn_pipeline::{
    damped_cosines, run_pipeline, EnsembleSource, PipelineConfig, PipelineError, StoreSource, SyntheticSource,
};

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        patience: 4,
        ..TrainConfig::default()
    }
}

fn times(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 * dt).collect()
}

fn small_config(n_total: usize, window: usize) -> PipelineConfig {
    let grid = vec![ModelConfig::new(window, 2, vec![4], 5).unwrap()];
    let mut cfg = PipelineConfig::new(n_total, grid).unwrap();
    cfg.train = quick_train();
    cfg
}

#[test]
fn config_validation() {
    let mut cfg = small_config(100, 20);
    assert!(cfg.validate().is_ok());
    cfg.group_counts.swap(2, 3);
    assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    let mut cfg = small_config(100, 20);
    cfg.group_counts.pop();
    assert!(cfg.validate().is_err());
    let mut cfg = small_config(100, 20);
    cfg.growth = 1.0;
    assert!(cfg.validate().is_err());
    let mut cfg = small_config(100, 20);
    cfg.grid.push(ModelConfig::new(20, 3, vec![4], 0).unwrap());
    assert!(cfg.validate().is_err());
}

#[test]
fn noiseless_source_accepts_in_first_round() {
    let t = times(120, 0.1);
    let clean = damped_cosines(&t);
    let mut src = SyntheticSource::new(t.clone(), clean.clone(), vec![0.0; t.len()], 3).unwrap();
    let report = run_pipeline(&mut src, &small_config(200, 20)).unwrap();
    assert!(report.accepted);
    assert_eq!(report.rounds.len(), 1);
    assert_eq!(report.final_round, 1);
    assert_eq!(report.rounds[0].max_sd, 0.0);
    assert_eq!(report.tc_index, t.len() - 1);
    assert_eq!(report.final_series, clean);
    let text = report.to_text(&[("forecast", "forecast.csv")]);
    assert!(text.contains("status: accepted"));
    assert!(text.contains("forecast: forecast.csv"));
}

#[test]
fn final_series_is_prefix_then_forecast() {
    let t = times(160, 0.1);
    let clean = damped_cosines(&t);
    let sigma: Vec<f64> = t.iter().map(|x| 0.01 + 0.02 * x).collect();
    let mut src = SyntheticSource::new(t.clone(), clean, sigma, 11).unwrap();
    let mut cfg = small_config(400, 20);
    cfg.eps2 = f64::INFINITY;
    let report = run_pipeline(&mut src, &cfg).unwrap();
    assert!(report.accepted);
    let tc = report.tc_index;
    assert!(tc + 1 < t.len(), "the benchmark should leave an unconverged tail");
    assert_eq!(report.final_series.len(), t.len());

    let largest = src.group(cfg.group_counts[9]).unwrap();
    assert_eq!(&report.final_series[..=tc], &largest.series[..=tc]);
    let model = &report.final_group().model;
    let l = model.config().window;
    let f = forecast(model, &largest.series[tc + 1 - l..=tc], t.len() - tc - 1).unwrap();
    assert_eq!(&report.final_series[tc + 1..], &f.steps[..]);
    let jump = f.steps[0]
        .iter()
        .zip(&largest.series[tc])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert_eq!(report.continuity, Some(jump));

    // smaller groups converge no later than larger ones on this source
    let tcs: Vec<usize> = report.groups.iter().map(|g| g.tc_index).collect();
    assert!(tcs.windows(2).all(|w| w[0] <= w[1]), "{tcs:?}");
}

#[test]
fn unconverged_data_exhaust_rounds() {
    let t = times(60, 0.1);
    let clean = damped_cosines(&t);
    let mut src = SyntheticSource::new(t.clone(), clean, vec![5.0; t.len()], 0).unwrap();
    let mut cfg = small_config(40, 20);
    cfg.max_rounds = 2;
    match run_pipeline(&mut src, &cfg) {
        Err(PipelineError::NoPrediction { rounds, reason }) => {
            assert_eq!(rounds, 2);
            assert!(reason.contains("no converged prefix"), "{reason}");
        }
        other => panic!("expected NoPrediction, got {other:?}"),
    }
}

#[test]
fn horizon_truncates_the_result() {
    let t = times(120, 0.1);
    let clean = damped_cosines(&t);
    let mut src = SyntheticSource::new(t.clone(), clean.clone(), vec![0.0; t.len()], 0).unwrap();
    let mut cfg = small_config(200, 20);
    cfg.horizon = Some(8.0);
    let report = run_pipeline(&mut src, &cfg).unwrap();
    assert_eq!(report.times.len(), 81);
    assert_eq!(report.final_series, clean[..81].to_vec());
}

#[test]
fn store_groups_are_nested_prefixes() {
    let spec = SpinBosonSpec::new(1.0, 1.0, 0.5, 1.0, 0.5);
    let model = build_sbm(&spec, 2).unwrap();
    let grid = TimeGrid::new(0.0, 0.02, 40).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.bin");
    let mut store = TrajectoryStore::create(&path, model.hash(), grid, 7, 2).unwrap();
    {
        let mut src = StoreSource::new(&model, grid, &mut store, 4, 1).unwrap();
        assert_eq!(src.times().len(), 11);
        for n in [6, 10, 4, 10] {
            let g = src.group(n).unwrap();
            let oracle = run_ensemble(&model, n, 7, grid, None).unwrap();
            assert_eq!(src.stats(), &oracle);
            let expect: Vec<Vec<f64>> = oracle.observable_series().into_iter().step_by(4).collect();
            assert_eq!(g.series, expect);
            assert_eq!(g.series.len(), 11);
        }
    }
    assert_eq!(store.len(), 10);
    assert!(StoreSource::new(&model, TimeGrid::new(0.0, 0.01, 80).unwrap(), &mut store, 4, 1).is_err());
}

#[test]
fn closed_model_pipeline_on_a_store() {
    // no bath coupling: every trajectory is the same unitary evolution
    let spec = SpinBosonSpec::new(1.0, 1.0, 0.0, 1.0, 0.5);
    let model = build_sbm(&spec, 1).unwrap();
    let grid = TimeGrid::new(0.0, 0.01, 400).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut store = TrajectoryStore::create(dir.path().join("s.bin"), model.hash(), grid, 0, 2).unwrap();
    let mut src = StoreSource::new(&model, grid, &mut store, 4, 1).unwrap();
    let report = run_pipeline(&mut src, &small_config(20, 20)).unwrap();
    assert!(report.accepted);
    assert_eq!(report.rounds.len(), 1);
    assert!(report.rounds[0].max_sd < 1e-12);
    assert_eq!(report.final_series.len(), 101);
}
