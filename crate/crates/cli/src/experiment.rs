//! Seeded trial ensembles on synthetic data: fixed-size runs and sample-size
//! sweeps.

use std::path::Path;

use lsrtr::glm::{Dataset, GlmFamily};
use lsrtr::lsr::LsrParams;
use lsrtr::metrics::{convergence_success_rate, prediction_error, TrialRecord};
use lsrtr::optim::{run_with_observer, Algorithm, IterateLog, OptConfig};
use lsrtr::rng::Substream;
use lsrtr::synth::generate;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{self, fmt_f64, CsvOut};

/// Substream of a trial seed that drives the solver initialization. Streams
/// 0–4 belong to the data generator.
pub const STREAM_INIT: u64 = 5;
pub const STREAM_TRAIN_SUBSAMPLE: u64 = 6;
pub const STREAM_TEST_SUBSAMPLE: u64 = 7;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Run trials one at a time and record wall-clock time. Without it,
    /// elapsed times are dropped so every output file is reproducible.
    pub timing: bool,
    /// Suppress progress messages on stderr.
    pub quiet: bool,
}

pub fn trial_seed(base: u64, trial: usize) -> u64 {
    Substream::new(base).child(trial as u64).seed()
}

/// Runs `f` for every trial index, in parallel unless timing is requested.
/// Results come back in trial order.
pub fn run_trials<T, F>(trials: usize, opts: RunOptions, f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> CliResult<T> + Sync + Send,
{
    if opts.timing {
        (0..trials).map(f).collect()
    } else {
        (0..trials).into_par_iter().map(f).collect()
    }
}

/// Runs one solver and evaluates `per_iter` on every logged iterate.
pub fn tracked_run(
    algorithm: Algorithm,
    family: GlmFamily,
    init: &LsrParams,
    train: &Dataset,
    cfg: &OptConfig,
    truth: Option<&LsrParams>,
    opts: RunOptions,
    mut per_iter: impl FnMut(&LsrParams) -> CliResult<f64>,
) -> CliResult<(IterateLog, Vec<f64>)> {
    let mut values = Vec::with_capacity(cfg.max_iters + 1);
    let mut failure = None;
    let out = run_with_observer(algorithm, family, init, train, cfg, truth, |_, p| {
        if failure.is_none() {
            match per_iter(p) {
                Ok(v) => values.push(v),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut log = out.log;
    if !opts.timing {
        for r in &mut log.records {
            r.elapsed_s = f64::NAN;
        }
    }
    Ok((log, values))
}

/// Held-out prediction error of the model `p`.
pub fn test_prediction_error(family: GlmFamily, p: &LsrParams, test: &Dataset) -> CliResult<f64> {
    let eta = test.predictors(&p.reconstruct())?;
    let yhat: Vec<f64> = eta.iter().map(|&e| family.mean(e)).collect();
    Ok(prediction_error(family, test.responses(), &yhat)?)
}

#[derive(Debug, Clone)]
pub struct SyntheticTrial {
    /// One record per requested algorithm, in `Algorithm::BOTH` order.
    pub records: Vec<TrialRecord>,
    pub core_rescale: f64,
}

/// Generates the trial's data, builds the shared near-truth start and runs
/// every requested algorithm from it.
pub fn run_synthetic_trial(
    cfg: &ExperimentConfig,
    trial: usize,
    n_train: usize,
    opts: RunOptions,
) -> CliResult<SyntheticTrial> {
    let seed = trial_seed(cfg.seed, trial);
    let mut spec = cfg.spec.clone();
    spec.seed = seed;
    spec.n_train = n_train;
    let data = generate(&spec)?;
    let init = LsrParams::perturbed_init(
        &data.truth,
        cfg.init_noise,
        &mut Substream::new(seed).rng(STREAM_INIT),
    )?;
    let mut records = Vec::with_capacity(cfg.algorithms.len());
    for &algo in &cfg.algorithms {
        let (log, pred_errors) = tracked_run(
            algo,
            cfg.family,
            &init,
            &data.train,
            cfg.opt_config(algo),
            Some(&data.truth),
            opts,
            |p| test_prediction_error(cfg.family, p, &data.test),
        )?;
        records.push(TrialRecord {
            trial,
            seed,
            log,
            pred_errors,
        });
    }
    Ok(SyntheticTrial {
        records,
        core_rescale: data.core_rescale,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub trials: Vec<SyntheticTrial>,
}

impl SyntheticRun {
    pub fn records(&self) -> Vec<TrialRecord> {
        self.trials.iter().flat_map(|t| t.records.iter().cloned()).collect()
    }

    pub fn records_for(&self, algorithm: Algorithm) -> Vec<TrialRecord> {
        self.trials
            .iter()
            .flat_map(|t| t.records.iter())
            .filter(|r| r.algorithm() == algorithm)
            .cloned()
            .collect()
    }
}

/// Last logged value of a series for every non-diverged trial.
pub fn final_values(records: &[TrialRecord], pick: impl Fn(&TrialRecord) -> f64) -> Vec<f64> {
    records.iter().filter(|r| !r.diverged()).map(pick).collect()
}

pub fn final_est_error(r: &TrialRecord) -> f64 {
    r.log
        .records
        .last()
        .and_then(|x| x.estimation_error)
        .unwrap_or(f64::NAN)
}

pub fn final_pred_error(r: &TrialRecord) -> f64 {
    r.pred_errors.last().copied().unwrap_or(f64::NAN)
}

/// Mean and sample standard deviation; NaN mean for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn progress(opts: RunOptions, msg: impl AsRef<str>) {
    if !opts.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn check_any_converged(records: &[TrialRecord], what: &str) -> CliResult<()> {
    if records.iter().all(TrialRecord::diverged) {
        return Err(CliError::AllDiverged(what.to_string()));
    }
    Ok(())
}

/// Writes `config.txt`, `trajectories.csv`, `aggregate.csv`, `summary.csv`
/// and the `plots/` panels.
pub fn run_synthetic(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> CliResult<SyntheticRun> {
    progress(
        opts,
        format!(
            "synthetic {}: {} trials, n = {}, n_test = {} -> {}",
            cfg.family,
            cfg.trials,
            cfg.spec.n_train,
            cfg.spec.n_test,
            out.display()
        ),
    );
    output::write_text(&out.join("config.txt"), &cfg.echo())?;
    let trials = run_trials(cfg.trials, opts, |t| {
        run_synthetic_trial(cfg, t, cfg.spec.n_train, opts)
    })?;
    let run = SyntheticRun { trials };
    let records = run.records();
    output::write_trajectories(&out.join("trajectories.csv"), &records)?;
    let (agg, warnings) = output::aggregate(&records);
    for w in &warnings {
        progress(opts, format!("warning: {w}"));
    }
    output::write_aggregates(&out.join("aggregate.csv"), &agg)?;
    write_summary(&out.join("summary.csv"), cfg, &run)?;
    let plots = out.join("plots");
    let panels = output::emit_plot_data(&plots, &agg, cfg.family.name())?;
    output::write_plots(&plots, &panels)?;
    check_any_converged(&records, "synthetic run")?;
    Ok(run)
}

fn write_summary(path: &Path, cfg: &ExperimentConfig, run: &SyntheticRun) -> CliResult<()> {
    let mut out = CsvOut::create(
        path,
        &[
            "algorithm",
            "trials",
            "converged",
            "success_rate",
            "mean_final_est",
            "std_final_est",
            "mean_final_pred",
            "std_final_pred",
            "mean_core_rescale",
        ],
    )?;
    let rescale: Vec<f64> = run.trials.iter().map(|t| t.core_rescale).collect();
    for &algo in &cfg.algorithms {
        let recs = run.records_for(algo);
        let est = final_values(&recs, final_est_error);
        let pred = final_values(&recs, final_pred_error);
        let (me, se) = mean_std(&est);
        let (mp, sp) = mean_std(&pred);
        out.row([
            algo.name().to_string(),
            recs.len().to_string(),
            est.len().to_string(),
            fmt_f64(convergence_success_rate(&recs)),
            fmt_f64(me),
            fmt_f64(se),
            fmt_f64(mp),
            fmt_f64(sp),
            fmt_f64(mean_std(&rescale).0),
        ])?;
    }
    out.finish()
}

/// Final-error statistics of one (algorithm, n) ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub mean_est: f64,
    pub std_est: f64,
    pub mean_pred: f64,
    pub std_pred: f64,
    pub success_rate: f64,
    pub converged: usize,
    pub trials: usize,
}

pub const SWEEP_HEADER: &[&str] = &[
    "algorithm",
    "n",
    "mean_est",
    "std_est",
    "mean_pred",
    "std_pred",
    "success_rate",
    "converged",
    "trials",
];

/// Repeats the synthetic ensemble for each training size in `n_values`,
/// with the test-set size fixed. Trial `t` uses the same seed at every n.
pub fn run_sample_sweep(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> CliResult<Vec<SweepRow>> {
    output::write_text(&out.join("config.txt"), &cfg.echo())?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &n in &cfg.n_values {
        progress(
            opts,
            format!("sweep {}: n = {n}, {} trials", cfg.family, cfg.trials),
        );
        let trials = run_trials(cfg.trials, opts, |t| run_synthetic_trial(cfg, t, n, opts))?;
        let run = SyntheticRun { trials };
        for &algo in &cfg.algorithms {
            let recs = run.records_for(algo);
            let (mean_est, std_est) = mean_std(&final_values(&recs, final_est_error));
            let (mean_pred, std_pred) = mean_std(&final_values(&recs, final_pred_error));
            rows.push(SweepRow {
                algorithm: algo,
                n,
                mean_est,
                std_est,
                mean_pred,
                std_pred,
                success_rate: convergence_success_rate(&recs),
                converged: recs.iter().filter(|r| !r.diverged()).count(),
                trials: recs.len(),
            });
        }
        all.extend(run.records());
    }
    write_sweep(&out.join("sweep.csv"), &rows)?;
    let plots = out.join("plots");
    let panels = emit_sweep_plots(&plots, &rows, cfg.family.name())?;
    output::write_plots(&plots, &panels)?;
    check_any_converged(&all, "sample sweep")?;
    Ok(rows)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let mut out = CsvOut::create(path, SWEEP_HEADER)?;
    for r in rows {
        out.row([
            r.algorithm.name().to_string(),
            r.n.to_string(),
            fmt_f64(r.mean_est),
            fmt_f64(r.std_est),
            fmt_f64(r.mean_pred),
            fmt_f64(r.std_pred),
            fmt_f64(r.success_rate),
            r.converged.to_string(),
            r.trials.to_string(),
        ])?;
    }
    out.finish()
}

pub fn read_sweep(path: &Path) -> CliResult<Vec<SweepRow>> {
    let bad = |msg: &str| CliError::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    let header = reader.headers().map_err(CliError::csv(path))?.clone();
    if header.iter().ne(SWEEP_HEADER.iter().copied()) {
        return Err(bad("unexpected header"));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(CliError::csv(path))?;
        let num = |i: usize| output::parse_f64(&rec[i]).ok_or_else(|| bad("bad number"));
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad("bad integer"));
        rows.push(SweepRow {
            algorithm: rec[0].parse().map_err(|_| bad("bad algorithm"))?,
            n: int(1)?,
            mean_est: num(2)?,
            std_est: num(3)?,
            mean_pred: num(4)?,
            std_pred: num(5)?,
            success_rate: num(6)?,
            converged: int(7)?,
            trials: int(8)?,
        });
    }
    Ok(rows)
}

/// Final estimation error, prediction error and success rate against n.
pub fn emit_sweep_plots(dir: &Path, rows: &[SweepRow], label: &str) -> CliResult<Vec<output::Panel>> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let algos: Vec<Algorithm> = Algorithm::BOTH
        .into_iter()
        .filter(|a| rows.iter().any(|r| r.algorithm == *a))
        .collect();
    let find = |a: Algorithm, n: usize| rows.iter().find(|r| r.algorithm == a && r.n == n);
    let column = |a: Algorithm| match a {
        Algorithm::Lsrtr => "lsrtr",
        Algorithm::LsrtrM => "lsrtr_m",
    };
    type Pick = fn(&SweepRow) -> (f64, f64);
    let series: [(&str, Pick, bool); 3] = [
        ("est_error", |r| (r.mean_est, r.std_est), true),
        ("pred_error", |r| (r.mean_pred, r.std_pred), true),
        ("success_rate", |r| (r.success_rate, 0.0), false),
    ];
    let mut panels = Vec::new();
    for (name, pick, log_y) in series {
        let file = format!("{name}_vs_n.csv");
        let mut header = vec!["x".to_string()];
        let mut curves = Vec::new();
        for (i, a) in algos.iter().enumerate() {
            header.push(format!("mean_{}", column(*a)));
            header.push(format!("std_{}", column(*a)));
            curves.push((*a, 1, 2 + 2 * i, 3 + 2 * i));
        }
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut out = CsvOut::create(dir.join(&file), &hdr)?;
        for &n in &ns {
            let mut row = vec![n.to_string()];
            for &a in &algos {
                let (m, s) = find(a, n).map_or((f64::NAN, f64::NAN), pick);
                row.push(fmt_f64(m));
                row.push(fmt_f64(s));
            }
            out.row(row)?;
        }
        out.finish()?;
        panels.push(output::Panel {
            file,
            title: format!("{label}: final {name} vs n"),
            xlabel: "n".into(),
            ylabel: name.into(),
            curves,
            log_y,
            markers: Vec::new(),
        });
    }
    Ok(panels)
}
