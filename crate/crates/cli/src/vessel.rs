//! Binary classification of 3D vessel volumes with early stopping on the
//! mean test-error curve.

use std::path::Path;

use lsrtr::dataset::{balanced_subsample, load_vessel, VesselSplits, VolumeDataset};
use lsrtr::glm::GlmFamily;
use lsrtr::lsr::LsrParams;
use lsrtr::metrics::{
    classification_report, early_stop_select, misclassification_rate, prediction_error,
    ClassificationReport, TrialRecord,
};
use lsrtr::optim::Algorithm;
use lsrtr::rng::Substream;

use crate::config::{ExperimentConfig, TestErrorMetric};
use crate::error::{CliError, CliResult};
use crate::experiment::{
    mean_std, run_trials, trial_seed, tracked_run, RunOptions, STREAM_INIT,
    STREAM_TEST_SUBSAMPLE, STREAM_TRAIN_SUBSAMPLE,
};
use crate::output::{self, fmt_f64, CsvOut, Panel};

const THRESHOLD: f64 = 0.5;

/// One algorithm's run within a trial: the trajectory plus the test-set
/// probabilities at every logged iterate.
#[derive(Debug, Clone)]
struct VesselTrial {
    record: TrialRecord,
    scores: Vec<Vec<f64>>,
    test_labels: Vec<u8>,
}

/// Averaged outcome for one algorithm.
#[derive(Debug, Clone)]
pub struct VesselResult {
    pub algorithm: Algorithm,
    /// Metrics averaged over trials at the selected iteration.
    /// `runtime_seconds` is the mean solver time up to that iteration.
    pub report: ClassificationReport,
    pub total_runtime_s: f64,
    pub curve_mean: Vec<f64>,
    pub curve_std: Vec<f64>,
    pub trials: usize,
    pub converged: usize,
}

#[derive(Debug, Clone)]
pub struct VesselOutcome {
    pub results: Vec<VesselResult>,
    pub warnings: Vec<String>,
}

impl VesselOutcome {
    pub fn result(&self, algorithm: Algorithm) -> Option<&VesselResult> {
        self.results.iter().find(|r| r.algorithm == algorithm)
    }
}

/// Loads the archive named by `cfg.dataset` and runs the protocol.
pub fn run_vessel(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> CliResult<VesselOutcome> {
    let path = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| CliError::Data("vessel experiment needs `dataset = PATH`".into()))?;
    let splits = load_vessel(path)?;
    run_vessel_on(cfg, splits, out, opts)
}

/// Runs the protocol on already loaded splits. Trials always run one at a
/// time with timing enabled since running time is one of the reported
/// metrics.
pub fn run_vessel_on(
    cfg: &ExperimentConfig,
    splits: VesselSplits,
    out: &Path,
    opts: RunOptions,
) -> CliResult<VesselOutcome> {
    let opts = RunOptions {
        timing: true,
        ..opts
    };
    let mut warnings = splits.warnings.clone();
    for w in &warnings {
        if !opts.quiet {
            eprintln!("warning: {w}");
        }
    }
    if !opts.quiet {
        eprintln!(
            "vessel ({}): {} train / {} test volumes, {} trials",
            if cfg.balanced { "balanced" } else { "unbalanced" },
            splits.train.len(),
            splits.test.len(),
            cfg.trials
        );
    }
    output::write_text(&out.join("config.txt"), &cfg.echo())?;
    let per_trial = run_trials(cfg.trials, opts, |t| vessel_trial(cfg, &splits, t, opts))?;

    let mut results = Vec::new();
    let mut records = Vec::new();
    for (a, &algo) in cfg.algorithms.iter().enumerate() {
        let runs: Vec<&VesselTrial> = per_trial.iter().map(|t| &t[a]).collect();
        records.extend(runs.iter().map(|r| r.record.clone()));
        match summarize(algo, &runs)? {
            Some(r) => results.push(r),
            None => warnings.push(format!("{algo}: every trial diverged")),
        }
    }
    output::write_trajectories(&out.join("trajectories.csv"), &records)?;
    write_summary(&out.join("vessel_summary.csv"), &results)?;
    write_curves(&out.join("vessel_curve.csv"), &results)?;
    let plots = out.join("plots");
    let panel = curve_panel(&plots, &results, cfg)?;
    output::write_plots(&plots, &[panel])?;
    if results.is_empty() {
        return Err(CliError::AllDiverged("vessel run".into()));
    }
    Ok(VesselOutcome { results, warnings })
}

fn vessel_trial(
    cfg: &ExperimentConfig,
    splits: &VesselSplits,
    trial: usize,
    opts: RunOptions,
) -> CliResult<Vec<VesselTrial>> {
    let seed = trial_seed(cfg.seed, trial);
    let root = Substream::new(seed);
    let (train, test): (VolumeDataset, VolumeDataset) = if cfg.balanced {
        (
            balanced_subsample(&splits.train, cfg.per_class_train, &mut root.rng(STREAM_TRAIN_SUBSAMPLE))?,
            balanced_subsample(&splits.test, cfg.per_class_test, &mut root.rng(STREAM_TEST_SUBSAMPLE))?,
        )
    } else {
        (splits.train.clone(), splits.test.clone())
    };
    let test_labels = test.labels();
    let init = LsrParams::random_init(
        train.as_dataset().shape(),
        &cfg.spec.rank,
        cfg.init_scale,
        &mut root.rng(STREAM_INIT),
    )?;
    let mut runs = Vec::with_capacity(cfg.algorithms.len());
    for &algo in &cfg.algorithms {
        let mut scores = Vec::new();
        let (log, errors) = tracked_run(
            algo,
            GlmFamily::Logistic,
            &init,
            train.as_dataset(),
            cfg.opt_config(algo),
            None,
            opts,
            |p| {
                let eta = test.as_dataset().predictors(&p.reconstruct())?;
                let prob: Vec<f64> = eta.iter().map(|&e| GlmFamily::Logistic.mean(e)).collect();
                let err = test_error(cfg.test_error, &prob, &test_labels)?;
                scores.push(prob);
                Ok(err)
            },
        )?;
        runs.push(VesselTrial {
            record: TrialRecord {
                trial,
                seed,
                log,
                pred_errors: errors,
            },
            scores,
            test_labels: test_labels.clone(),
        });
    }
    Ok(runs)
}

fn test_error(metric: TestErrorMetric, prob: &[f64], labels: &[u8]) -> CliResult<f64> {
    Ok(match metric {
        TestErrorMetric::Misclassification => misclassification_rate(prob, labels, THRESHOLD)?,
        TestErrorMetric::Mae => {
            let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            prediction_error(GlmFamily::Logistic, &y, prob)?
        }
    })
}

/// Mean test-error curve over non-diverged trials, its global minimum, and
/// the trial-averaged report at that iteration.
fn summarize(algorithm: Algorithm, runs: &[&VesselTrial]) -> CliResult<Option<VesselResult>> {
    let ok: Vec<&VesselTrial> = runs.iter().copied().filter(|r| !r.record.diverged()).collect();
    if ok.is_empty() {
        return Ok(None);
    }
    let len = ok.iter().map(|r| r.record.pred_errors.len()).max().unwrap_or(0);
    let mut curve_mean = Vec::with_capacity(len);
    let mut curve_std = Vec::with_capacity(len);
    for i in 0..len {
        let vals: Vec<f64> = ok.iter().filter_map(|r| r.record.pred_errors.get(i).copied()).collect();
        let (m, s) = mean_std(&vals);
        curve_mean.push(m);
        curve_std.push(s);
    }
    let chosen = early_stop_select(&curve_mean)?;
    let mut reports = Vec::new();
    let mut totals = Vec::new();
    for r in &ok {
        let at = chosen.min(r.scores.len() - 1);
        let mut rep = classification_report(&r.scores[at], &r.test_labels, THRESHOLD)?;
        rep.runtime_seconds = r.record.log.records[at].elapsed_s;
        reports.push(rep);
        totals.push(r.record.log.records.last().map_or(0.0, |x| x.elapsed_s));
    }
    let avg = |f: fn(&ClassificationReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>()).0;
    let mut report = reports[0].clone();
    report.sensitivity = avg(|r| r.sensitivity);
    report.specificity = avg(|r| r.specificity);
    report.f1 = avg(|r| r.f1);
    report.auc = avg(|r| r.auc);
    report.accuracy = avg(|r| r.accuracy);
    report.runtime_seconds = avg(|r| r.runtime_seconds);
    report.chosen_iteration = chosen;
    report.f1_undefined = reports.iter().any(|r| r.f1_undefined);
    Ok(Some(VesselResult {
        algorithm,
        report,
        total_runtime_s: mean_std(&totals).0,
        curve_mean,
        curve_std,
        trials: runs.len(),
        converged: ok.len(),
    }))
}

pub const SUMMARY_HEADER: &[&str] = &[
    "algorithm",
    "chosen_iteration",
    "sensitivity",
    "specificity",
    "f1",
    "auc",
    "accuracy",
    "runtime_s",
    "total_runtime_s",
    "converged",
    "trials",
];

fn write_summary(path: &Path, results: &[VesselResult]) -> CliResult<()> {
    let mut out = CsvOut::create(path, SUMMARY_HEADER)?;
    for r in results {
        let rep = &r.report;
        out.row([
            r.algorithm.name().to_string(),
            rep.chosen_iteration.to_string(),
            fmt_f64(rep.sensitivity),
            fmt_f64(rep.specificity),
            fmt_f64(rep.f1),
            fmt_f64(rep.auc),
            fmt_f64(rep.accuracy),
            fmt_f64(rep.runtime_seconds),
            fmt_f64(r.total_runtime_s),
            r.converged.to_string(),
            r.trials.to_string(),
        ])?;
    }
    out.finish()
}

fn write_curves(path: &Path, results: &[VesselResult]) -> CliResult<()> {
    let mut out = CsvOut::create(path, &["algorithm", "iter", "mean", "std", "selected"])?;
    for r in results {
        for (i, (m, s)) in r.curve_mean.iter().zip(&r.curve_std).enumerate() {
            out.row([
                r.algorithm.name().to_string(),
                i.to_string(),
                fmt_f64(*m),
                fmt_f64(*s),
                u8::from(i == r.report.chosen_iteration).to_string(),
            ])?;
        }
    }
    out.finish()
}

fn curve_panel(dir: &Path, results: &[VesselResult], cfg: &ExperimentConfig) -> CliResult<Panel> {
    let file = "test_error_vs_iter.csv".to_string();
    let mut header = vec!["x".to_string()];
    let mut curves = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let tag = r.algorithm.name().replace('-', "_");
        header.push(format!("mean_{tag}"));
        header.push(format!("std_{tag}"));
        curves.push((r.algorithm, 1, 2 + 2 * i, 3 + 2 * i));
    }
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(dir.join(&file), &hdr)?;
    let len = results.iter().map(|r| r.curve_mean.len()).max().unwrap_or(0);
    for i in 0..len {
        let mut row = vec![i.to_string()];
        for r in results {
            row.push(fmt_f64(r.curve_mean.get(i).copied().unwrap_or(f64::NAN)));
            row.push(fmt_f64(r.curve_std.get(i).copied().unwrap_or(f64::NAN)));
        }
        out.row(row)?;
    }
    out.finish()?;
    Ok(Panel {
        file,
        title: format!(
            "vessel ({}): test error",
            if cfg.balanced { "balanced" } else { "unbalanced" }
        ),
        xlabel: "iteration".into(),
        ylabel: format!("test error ({})", cfg.test_error.name()),
        curves,
        log_y: false,
        markers: results
            .iter()
            .map(|r| (r.algorithm, r.report.chosen_iteration as f64))
            .collect(),
    })
}
