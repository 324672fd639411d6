//! One function per CLI verb. Each returns the process exit code on success.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use stochdyn_core::dataset::{component_names, devectorize, find_converged_prefix, ObservableVector, PrefixFlag};
use stochdyn_core::models::PureDephasing;
use stochdyn_core::propagator::{EnsembleRunner, EnsembleStats, PropagationOptions, TrajectoryStore};
use stochdyn_nn::{forecast, load_checkpoint, save_checkpoint, History};
use stochdyn_pipeline::{fit_group, run_pipeline, stitch, GroupData, PipelineError, StoreSource};

use crate::config::RunConfig;
use crate::error::{CliError, Result, EXIT_NOT_CONVERGED, EXIT_OK};
use crate::table::{read_table, Table};

pub const CONFIG_ECHO: &str = "config.toml";
pub const STATS_CSV: &str = "stats.csv";
pub const FORECAST_CSV: &str = "forecast.csv";
pub const PREDICTION_CSV: &str = "prediction.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const CHECKPOINT: &str = "model.ckpt";
pub const PLOT_DIR: &str = "plots";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir().to_path_buf();
    fs::create_dir_all(&out)?;
    fs::write(out.join(CONFIG_ECHO), cfg.to_toml())?;
    Ok(out)
}

fn header(names: &[String], se: bool) -> String {
    let mut h = String::from("t");
    for n in names {
        h.push(',');
        h.push_str(n);
    }
    if se {
        for n in names {
            h.push_str(",se_");
            h.push_str(n);
        }
    }
    h
}

fn write_row<W: Write>(w: &mut W, t: f64, parts: &[&[f64]]) -> Result<()> {
    write!(w, "{t:?}")?;
    for part in parts {
        for x in *part {
            write!(w, ",{x:?}")?;
        }
    }
    writeln!(w)?;
    Ok(())
}

/// `t`, mean observable components, then their standard errors, on every
/// `stride`-th grid point.
pub fn write_stats_csv(path: &Path, stats: &EnsembleStats, stride: usize) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", header(&component_names(stats.d_s()), true))?;
    let means = stats.observable_series();
    for (i, t) in stats.grid().times().enumerate().step_by(stride) {
        write_row(&mut w, t, &[&means[i], &stats.se_at(i)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    let out = prepare_out(cfg)?;
    let model = cfg.prepare_model()?;
    let grid = cfg.time_grid()?;
    let mut store = TrajectoryStore::create(cfg.store_path(), model.hash(), grid, cfg.ensemble.seed0, model.system_dim())?;
    let runner = EnsembleRunner::new(&model, grid, PropagationOptions::default(), cfg.ensemble.workers)?;
    let stats = runner.run(cfg.ensemble.n, cfg.ensemble.seed0, Some(&mut store))?;
    write_stats_csv(&out.join(STATS_CSV), &stats, cfg.pipeline.stride)?;
    println!(
        "simulated {} trajectories on {} points; store {}",
        stats.n(),
        grid.len(),
        store.path().display()
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub t_c: f64,
    pub count: usize,
    pub n_points: usize,
    pub flag: PrefixFlag,
    /// `(t, max standard error)` at the quartiles of the time range.
    pub profile: Vec<(f64, f64)>,
}

impl Assessment {
    pub fn converged_fraction(&self) -> f64 {
        self.count as f64 / self.n_points as f64
    }

    /// True when nothing beyond the deterministic initial point converged.
    pub fn no_converged_prefix(&self) -> bool {
        self.count <= 1
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "t_c: {:?}\nconverged points: {} of {} ({:.1}%)\n",
            self.t_c,
            self.count,
            self.n_points,
            100.0 * self.converged_fraction()
        );
        if self.no_converged_prefix() {
            s.push_str("notice: no converged prefix\n");
        } else if self.flag == PrefixFlag::Complete {
            s.push_str("notice: converged over the whole grid\n");
        }
        s.push_str("standard error profile (t, max se):\n");
        for (t, se) in &self.profile {
            s.push_str(&format!("  {t:?}  {se:?}\n"));
        }
        s
    }
}

/// Reads the stats table: `t`, components and their `se_` columns.
fn read_stats(path: &Path) -> Result<(Table, Vec<f64>)> {
    let table = read_table(path)?;
    let se_cols: Vec<usize> = table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("se_"))
        .map(|(i, _)| i)
        .collect();
    if se_cols.is_empty() {
        return Err(CliError::Input(format!("{} has no se_ columns", path.display())));
    }
    let se = table
        .rows
        .iter()
        .map(|r| se_cols.iter().map(|&c| r[c]).fold(0.0, f64::max))
        .collect();
    Ok((table, se))
}

pub fn assess_stats(path: &Path, eps1: f64) -> Result<Assessment> {
    if !(eps1 >= 0.0) {
        return Err(CliError::Config(format!("eps1 = {eps1} must be non-negative")));
    }
    let (table, se) = read_stats(path)?;
    let prefix = find_converged_prefix(&se, eps1)?;
    let times = table.column(0);
    let t_c = times[prefix.count.saturating_sub(1)];
    let n = times.len();
    let profile = [0, n / 4, n / 2, 3 * n / 4, n - 1].iter().map(|&i| (times[i], se[i])).collect();
    Ok(Assessment {
        t_c,
        count: prefix.count,
        n_points: n,
        flag: prefix.flag,
        profile,
    })
}

pub fn cmd_assess(stats: &Path, eps1: f64) -> Result<i32> {
    let a = assess_stats(stats, eps1)?;
    print!("{}", a.to_text());
    Ok(EXIT_OK)
}

fn open_store(cfg: &RunConfig) -> Result<TrajectoryStore> {
    let path = cfg.store_path();
    if !path.exists() {
        return Err(CliError::Input(format!(
            "trajectory store {} not found; run `simulate` first",
            path.display()
        )));
    }
    Ok(TrajectoryStore::open(path)?)
}

/// Ensemble statistics over every stored trajectory.
fn stored_group(cfg: &RunConfig) -> Result<(GroupData, EnsembleStats)> {
    let model = cfg.prepare_model()?;
    let grid = cfg.time_grid()?;
    let mut store = open_store(cfg)?;
    let n = store.len();
    if n < 2 {
        return Err(CliError::Input(format!("store holds {n} trajectories, need at least 2")));
    }
    let mut src = StoreSource::new(&model, grid, &mut store, cfg.pipeline.stride, cfg.ensemble.workers)?;
    let data = stochdyn_pipeline::EnsembleSource::group(&mut src, n)?;
    let stats = src.stats().clone();
    Ok((data, stats))
}

fn truncate_to_horizon(cfg: &RunConfig, data: &mut GroupData) -> Result<Vec<f64>> {
    let grid = cfg.data_grid()?;
    let mut times: Vec<f64> = grid.times().collect();
    if let Some(h) = cfg.pipeline.horizon {
        let end = grid.nearest_index(h);
        times.truncate(end + 1);
        data.series.truncate(end + 1);
        data.se_summary.truncate(end + 1);
    }
    Ok(times)
}

fn write_history(path: &Path, h: &History) -> Result<()> {
    let mut w = create(path)?;
    h.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<i32> {
    let out = prepare_out(cfg)?;
    let (mut data, _) = stored_group(cfg)?;
    truncate_to_horizon(cfg, &mut data)?;
    let result = fit_group(&cfg.pipeline_config()?, &data)?;
    let mut w = create(&out.join(CHECKPOINT))?;
    save_checkpoint(&result.model, &mut w)?;
    w.flush()?;
    write_history(&out.join("history_pretrain.csv"), &result.pretrain)?;
    if let Some(f) = &result.finetune {
        write_history(&out.join("history_finetune.csv"), f)?;
    }
    let m = result.model.config();
    println!(
        "trained window {} lstm {:?} on {} trajectories; converged through index {}",
        m.window, m.lstm_units, data.n, result.tc_index
    );
    Ok(EXIT_OK)
}

fn write_series(path: &Path, d_s: usize, times: &[f64], series: &[Vec<f64>], sd: Option<&[Vec<f64>]>) -> Result<()> {
    let names = component_names(d_s);
    let mut w = create(path)?;
    let mut h = header(&names, false);
    if sd.is_some() {
        for n in &names {
            h.push_str(",sd_");
            h.push_str(n);
        }
    }
    writeln!(w, "{h}")?;
    for (i, (t, row)) in times.iter().zip(series).enumerate() {
        match sd {
            Some(sd) => write_row(&mut w, *t, &[row, &sd[i]])?,
            None => write_row(&mut w, *t, &[row])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<i32> {
    let out = prepare_out(cfg)?;
    let ckpt = out.join(CHECKPOINT);
    if !ckpt.exists() {
        return Err(CliError::Input(format!("checkpoint {} not found; run `train` first", ckpt.display())));
    }
    let model = load_checkpoint(std::io::BufReader::new(File::open(&ckpt)?))?;
    let (mut data, _) = stored_group(cfg)?;
    let times = truncate_to_horizon(cfg, &mut data)?;
    let count = find_converged_prefix(&data.se_summary, cfg.pipeline.eps1)?.count;
    let l = model.config().window;
    if count < l {
        return Err(CliError::Input(format!("{count} converged points cannot seed a window of {l}")));
    }
    let steps = data.series.len() - count;
    let f = if steps > 0 {
        forecast(&model, &data.series[count - l..count], steps)?.steps
    } else {
        Vec::new()
    };
    let stitched = stitch(&data.series, count - 1, &f, count)?;
    write_series(&out.join(PREDICTION_CSV), cfg.d_s(), &times, &stitched.series, None)?;
    println!(
        "forecast {steps} steps after t_c = {:?}; continuity {:?}",
        times[count - 1],
        stitched.continuity
    );
    Ok(EXIT_OK)
}

fn open_or_create_store(cfg: &RunConfig, model: &stochdyn_core::models::PreparedModel) -> Result<TrajectoryStore> {
    let path = cfg.store_path();
    let grid = cfg.time_grid()?;
    if path.exists() {
        if let Ok(store) = TrajectoryStore::open(&path) {
            let m = store.manifest();
            if m.model_hash == model.hash() && m.grid == grid && m.seed0 == cfg.ensemble.seed0 {
                return Ok(store);
            }
            log::warn!("store {} belongs to another run, recreating it", path.display());
        }
    }
    Ok(TrajectoryStore::create(path, model.hash(), grid, cfg.ensemble.seed0, model.system_dim())?)
}

pub fn cmd_pipeline(cfg: &RunConfig) -> Result<i32> {
    let out = prepare_out(cfg)?;
    let model = cfg.prepare_model()?;
    let grid = cfg.time_grid()?;
    let pcfg = cfg.pipeline_config()?;
    let mut store = open_or_create_store(cfg, &model)?;
    let mut src = StoreSource::new(&model, grid, &mut store, cfg.pipeline.stride, cfg.ensemble.workers)?;
    let report = match run_pipeline(&mut src, &pcfg) {
        Ok(r) => r,
        Err(e @ PipelineError::NoPrediction { .. }) => {
            fs::write(out.join(REPORT_TXT), format!("status: failed\nreason: {e}\n"))?;
            eprintln!("{e}");
            return Ok(EXIT_NOT_CONVERGED);
        }
        Err(e) => return Err(e.into()),
    };
    let n_final = report.final_group().n;
    stochdyn_pipeline::EnsembleSource::group(&mut src, n_final)?;
    write_stats_csv(&out.join(STATS_CSV), src.stats(), cfg.pipeline.stride)?;
    write_series(
        &out.join(FORECAST_CSV),
        cfg.d_s(),
        &report.times,
        &report.final_series,
        Some(&report.sd),
    )?;
    let g = report.final_group();
    let mut w = create(&out.join(CHECKPOINT))?;
    save_checkpoint(&g.model, &mut w)?;
    w.flush()?;
    write_history(&out.join("history_pretrain.csv"), &g.pretrain)?;
    if let Some(f) = &g.finetune {
        write_history(&out.join("history_finetune.csv"), f)?;
    }
    let text = report.to_text(&[
        ("statistics", STATS_CSV),
        ("forecast", FORECAST_CSV),
        ("checkpoint", CHECKPOINT),
        ("pretraining history", "history_pretrain.csv"),
        ("fine-tuning history", "history_finetune.csv"),
    ]);
    fs::write(out.join(REPORT_TXT), &text)?;
    print!("{text}");
    Ok(if report.accepted { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn populations(row: &[f64], d_s: usize) -> Result<Vec<f64>> {
    let omega = ObservableVector::from_flat(row, d_s)?;
    let rho = devectorize(&omega, 1.0);
    Ok((0..d_s).map(|i| rho[i * d_s + i].re).collect())
}

/// Per-panel CSVs from a finished run directory: populations, standard
/// errors, the stitched forecast, and for the `V = 0` spin-boson model the
/// deviation from the exact solution.
pub fn cmd_export(run_dir: &Path) -> Result<i32> {
    let missing: Vec<&str> = [CONFIG_ECHO, STATS_CSV, FORECAST_CSV]
        .into_iter()
        .filter(|f| !run_dir.join(f).exists())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Input(format!(
            "run directory {} is incomplete (missing {})",
            run_dir.display(),
            missing.join(", ")
        )));
    }
    let cfg = RunConfig::load(&run_dir.join(CONFIG_ECHO))?;
    let d_s = cfg.d_s();
    let m = component_names(d_s).len();
    let (stats, se) = read_stats(&run_dir.join(STATS_CSV))?;
    let fc = read_table(&run_dir.join(FORECAST_CSV))?;
    if stats.columns.len() != 1 + 2 * m || fc.columns.len() != 1 + 2 * m {
        return Err(CliError::Input("stats or forecast table does not match the configured system".into()));
    }
    let dir = run_dir.join(PLOT_DIR);
    fs::create_dir_all(&dir)?;
    let pop_names: Vec<String> = (1..=d_s).map(|i| format!("p_{i}")).collect();

    let mut w = create(&dir.join("population.csv"))?;
    writeln!(w, "{}", header(&pop_names, false))?;
    for row in &stats.rows {
        write_row(&mut w, row[0], &[&populations(&row[1..=m], d_s)?])?;
    }
    w.flush()?;

    let mut w = create(&dir.join("se.csv"))?;
    writeln!(w, "t,{},se_max", stats.columns[1 + m..].join(","))?;
    for (row, s) in stats.rows.iter().zip(&se) {
        write_row(&mut w, row[0], &[&row[1 + m..], &[*s]])?;
    }
    w.flush()?;

    let mut w = create(&dir.join("forecast.csv"))?;
    writeln!(w, "{},{}", fc.columns.join(","), pop_names.join(","))?;
    for row in &fc.rows {
        write_row(&mut w, row[0], &[&row[1..], &populations(&row[1..=m], d_s)?])?;
    }
    w.flush()?;

    let deviation = dir.join("deviation.csv");
    if let Some((spec, noise)) = cfg.dephasing_spec() {
        let t_end = fc.rows.last().map_or(0.0, |r| r[0]);
        let exact = PureDephasing::with_noise(&spec, t_end, &noise)?;
        let mut w = create(&deviation)?;
        let names = component_names(d_s);
        writeln!(w, "t,{}", names.iter().map(|n| format!("dev_{n}")).collect::<Vec<_>>().join(","))?;
        for row in &fc.rows {
            let rho = exact.rho(row[0]);
            let oracle = stochdyn_core::dataset::vectorize(&rho, 2)?.to_flat();
            let dev: Vec<f64> = row[1..=m].iter().zip(&oracle).map(|(a, b)| (a - b).abs()).collect();
            write_row(&mut w, row[0], &[&dev])?;
        }
        w.flush()?;
    } else if deviation.exists() {
        fs::remove_file(&deviation)?;
    }
    println!("plot data written to {}", dir.display());
    Ok(EXIT_OK)
}
