//! CSV writing, aggregation tables and plot-ready panel files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use lsrtr::metrics::{mean_curve_and_band, CurveBand, Series, TrialRecord};
use lsrtr::optim::Algorithm;

use crate::error::{CliError, CliResult};

/// 17 significant digits, enough for a lossless `f64` round trip.
/// Missing values print as an empty field.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.16e}")
    }
}

/// Inverse of [`fmt_f64`]: empty fields read back as NaN.
pub fn parse_f64(s: &str) -> Option<f64> {
    if s.is_empty() {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: impl Into<PathBuf>, header: &[&str]) -> CliResult<Self> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        let file = File::create(&path).map_err(CliError::io(&path))?;
        let mut out = Self {
            writer: csv::Writer::from_writer(file),
            path,
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(CliError::csv(&self.path))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.writer
            .flush()
            .map_err(|e| CliError::io(&self.path)(e))
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, text).map_err(CliError::io(path))
}

pub const TRAJECTORY_HEADER: &[&str] = &[
    "algorithm",
    "trial",
    "iter",
    "loss",
    "est_error",
    "pred_error",
    "elapsed_s",
    "diverged",
    "seed",
    "ortho_residual",
];

pub fn write_trajectories(path: &Path, records: &[TrialRecord]) -> CliResult<()> {
    let mut out = CsvOut::create(path, TRAJECTORY_HEADER)?;
    for r in records {
        for (rec, pred) in r.log.records.iter().zip(&r.pred_errors) {
            out.row([
                r.algorithm().name().to_string(),
                r.trial.to_string(),
                rec.iter.to_string(),
                fmt_f64(rec.loss),
                fmt_f64(rec.estimation_error.unwrap_or(f64::NAN)),
                fmt_f64(*pred),
                fmt_f64(rec.elapsed_s),
                r.diverged().to_string(),
                r.seed.to_string(),
                fmt_f64(rec.ortho_residual),
            ])?;
        }
    }
    out.finish()
}

/// Inverse of [`write_trajectories`].
pub fn read_trajectories(path: &Path) -> CliResult<Vec<TrialRecord>> {
    use lsrtr::optim::{IterateLog, IterateRecord};

    let bad = |line: u64, msg: &str| CliError::Data(format!("{}:{line}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    let header = reader.headers().map_err(CliError::csv(path))?.clone();
    if header.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(bad(1, "unexpected header"));
    }
    let mut out: Vec<TrialRecord> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(CliError::csv(path))?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| parse_f64(&row[i]).ok_or_else(|| bad(line, "bad number"));
        let int = |i: usize| row[i].parse::<u64>().map_err(|_| bad(line, "bad integer"));
        let algorithm: Algorithm = row[0].parse().map_err(|_| bad(line, "bad algorithm"))?;
        let trial = int(1)? as usize;
        let est = num(4)?;
        let record = IterateRecord {
            iter: int(2)? as usize,
            loss: num(3)?,
            estimation_error: (!est.is_nan()).then_some(est),
            elapsed_s: num(6)?,
            ortho_residual: num(9)?,
        };
        let diverged: bool = row[7].parse().map_err(|_| bad(line, "bad flag"))?;
        let seed = int(8)?;
        let pred = num(5)?;
        match out.last_mut() {
            Some(last) if last.trial == trial && last.algorithm() == algorithm => {
                last.log.records.push(record);
                last.pred_errors.push(pred);
            }
            _ => out.push(TrialRecord {
                trial,
                seed,
                log: IterateLog {
                    algorithm,
                    records: vec![record],
                    diverged,
                },
                pred_errors: vec![pred],
            }),
        }
    }
    if out.is_empty() {
        return Err(bad(1, "no trajectory rows"));
    }
    Ok(out)
}

/// Mean ± std curves per algorithm and series.
pub type Aggregates = BTreeMap<(Algorithm, SeriesKey), CurveBand>;

/// `Series` with an ordering, for use as a map key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SeriesKey {
    Loss,
    EstimationError,
    PredictionError,
    OrthoResidual,
    Elapsed,
}

impl SeriesKey {
    pub const ALL: [SeriesKey; 5] = [
        SeriesKey::Loss,
        SeriesKey::EstimationError,
        SeriesKey::PredictionError,
        SeriesKey::OrthoResidual,
        SeriesKey::Elapsed,
    ];

    pub fn series(self) -> Series {
        match self {
            SeriesKey::Loss => Series::Loss,
            SeriesKey::EstimationError => Series::EstimationError,
            SeriesKey::PredictionError => Series::PredictionError,
            SeriesKey::OrthoResidual => Series::OrthoResidual,
            SeriesKey::Elapsed => Series::Elapsed,
        }
    }

    pub fn name(self) -> &'static str {
        self.series().name()
    }
}

/// Aggregates every series that has data. Algorithms whose trials all
/// diverged are skipped and reported in the returned warnings.
pub fn aggregate(records: &[TrialRecord]) -> (Aggregates, Vec<String>) {
    let mut agg = Aggregates::new();
    let mut warnings = Vec::new();
    for algo in Algorithm::BOTH {
        let mine: Vec<TrialRecord> = records
            .iter()
            .filter(|r| r.algorithm() == algo)
            .cloned()
            .collect();
        if mine.is_empty() {
            continue;
        }
        for key in SeriesKey::ALL {
            match mean_curve_and_band(&mine, key.series()) {
                Ok(band) if band.mean.iter().all(|v| v.is_nan()) => {}
                Ok(band) => {
                    agg.insert((algo, key), band);
                }
                Err(e) => {
                    if key == SeriesKey::Loss {
                        warnings.push(format!("{algo}: {e}"));
                    }
                }
            }
        }
    }
    (agg, warnings)
}

pub fn write_aggregates(path: &Path, agg: &Aggregates) -> CliResult<()> {
    let mut out = CsvOut::create(
        path,
        &["algorithm", "series", "iter", "mean", "std", "included", "excluded"],
    )?;
    for ((algo, key), band) in agg {
        for (i, (m, s)) in band.mean.iter().zip(&band.std).enumerate() {
            out.row([
                algo.name().to_string(),
                key.name().to_string(),
                i.to_string(),
                fmt_f64(*m),
                fmt_f64(*s),
                band.included.to_string(),
                band.excluded.to_string(),
            ])?;
        }
    }
    out.finish()
}

fn algo_column(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Lsrtr => "lsrtr",
        Algorithm::LsrtrM => "lsrtr_m",
    }
}

/// One plotted panel: a CSV plus the gnuplot block that draws it.
#[derive(Debug, Clone)]
pub struct Panel {
    pub file: String,
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    /// (algorithm, column index of x, column index of mean, column of std), 1-based.
    pub curves: Vec<(Algorithm, usize, usize, usize)>,
    pub log_y: bool,
    /// Iteration marked with a dashed vertical line, per algorithm.
    pub markers: Vec<(Algorithm, f64)>,
}

/// Writes `x, mean_A, std_A, mean_B, std_B` panels for each series against
/// the iteration count and, when timing data exists, `x_A, mean_A, std_A,
/// x_B, mean_B, std_B` panels against mean cumulative seconds.
pub fn emit_plot_data(dir: &Path, agg: &Aggregates, label: &str) -> CliResult<Vec<Panel>> {
    let mut panels = Vec::new();
    let algos: Vec<Algorithm> = Algorithm::BOTH
        .into_iter()
        .filter(|a| agg.contains_key(&(*a, SeriesKey::Loss)))
        .collect();
    for key in [SeriesKey::Loss, SeriesKey::EstimationError, SeriesKey::PredictionError] {
        let bands: Vec<(Algorithm, &CurveBand)> = algos
            .iter()
            .filter_map(|a| agg.get(&(*a, key)).map(|b| (*a, b)))
            .collect();
        if bands.is_empty() {
            continue;
        }
        let rows = bands.iter().map(|(_, b)| b.mean.len()).max().unwrap_or(0);

        let file = format!("{}_vs_iter.csv", key.name());
        let mut header = vec!["x".to_string()];
        let mut curves = Vec::new();
        for (i, (a, _)) in bands.iter().enumerate() {
            header.push(format!("mean_{}", algo_column(*a)));
            header.push(format!("std_{}", algo_column(*a)));
            curves.push((*a, 1, 2 + 2 * i, 3 + 2 * i));
        }
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut out = CsvOut::create(dir.join(&file), &hdr)?;
        for t in 0..rows {
            let mut row = vec![t.to_string()];
            for (_, b) in &bands {
                row.push(b.mean.get(t).map_or(String::new(), |v| fmt_f64(*v)));
                row.push(b.std.get(t).map_or(String::new(), |v| fmt_f64(*v)));
            }
            out.row(row)?;
        }
        out.finish()?;
        panels.push(Panel {
            file,
            title: format!("{label}: {} vs iteration", key.name()),
            xlabel: "iteration".into(),
            ylabel: key.name().into(),
            curves,
            log_y: key != SeriesKey::PredictionError || label.contains("linear"),
            markers: Vec::new(),
        });

        let timed: Vec<(Algorithm, &CurveBand, &CurveBand)> = bands
            .iter()
            .filter_map(|(a, b)| agg.get(&(*a, SeriesKey::Elapsed)).map(|t| (*a, *b, t)))
            .collect();
        if timed.is_empty() {
            continue;
        }
        let file = format!("{}_vs_time.csv", key.name());
        let mut header = Vec::new();
        let mut curves = Vec::new();
        for (i, (a, _, _)) in timed.iter().enumerate() {
            header.push(format!("x_{}", algo_column(*a)));
            header.push(format!("mean_{}", algo_column(*a)));
            header.push(format!("std_{}", algo_column(*a)));
            curves.push((*a, 1 + 3 * i, 2 + 3 * i, 3 + 3 * i));
        }
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut out = CsvOut::create(dir.join(&file), &hdr)?;
        for t in 0..rows {
            let mut row = Vec::new();
            for (_, b, time) in &timed {
                let n = b.mean.len().min(time.mean.len());
                if t < n {
                    row.extend([fmt_f64(time.mean[t]), fmt_f64(b.mean[t]), fmt_f64(b.std[t])]);
                } else {
                    row.extend([String::new(), String::new(), String::new()]);
                }
            }
            out.row(row)?;
        }
        out.finish()?;
        panels.push(Panel {
            file,
            title: format!("{label}: {} vs time", key.name()),
            xlabel: "seconds".into(),
            ylabel: key.name().into(),
            curves,
            log_y: key != SeriesKey::PredictionError || label.contains("linear"),
            markers: Vec::new(),
        });
    }
    Ok(panels)
}

/// Gnuplot script rendering each panel to a PNG next to its CSV.
pub fn gnuplot_script(panels: &[Panel]) -> String {
    let mut s = String::from(
        "# Render with: gnuplot plots.gp\n\
         set datafile separator ','\n\
         set datafile missing ''\n\
         set terminal pngcairo size 900,600\n\
         set grid\n\
         set key top right\n",
    );
    for p in panels {
        let png = p.file.replace(".csv", ".png");
        s.push_str(&format!(
            "\nset output '{png}'\nset title '{}' noenhanced\nset xlabel '{}'\nset ylabel '{}' noenhanced\n",
            p.title, p.xlabel, p.ylabel
        ));
        s.push_str(if p.log_y { "set logscale y\n" } else { "unset logscale y\n" });
        s.push_str("unset arrow\n");
        for (a, x) in &p.markers {
            s.push_str(&format!(
                "set arrow from {x},graph 0 to {x},graph 1 nohead dashtype 2 # {}\n",
                a.name()
            ));
        }
        let mut parts = Vec::new();
        for (a, x, m, sd) in &p.curves {
            parts.push(format!(
                "'{}' using {x}:(${m}-${sd}):(${m}+${sd}) skip 1 with filledcurves fs transparent solid 0.2 notitle",
                p.file
            ));
            parts.push(format!(
                "'{}' using {x}:{m} skip 1 with lines lw 2 title '{}'",
                p.file,
                a.name()
            ));
        }
        s.push_str(&format!("plot {}\n", parts.join(", \\\n     ")));
    }
    s
}

pub fn write_plots(dir: &Path, panels: &[Panel]) -> CliResult<()> {
    write_text(&dir.join("plots.gp"), &gnuplot_script(panels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lsrtr::optim::{IterateLog, IterateRecord};

    fn record(algo: Algorithm, trial: usize, losses: &[f64], timed: bool) -> TrialRecord {
        TrialRecord {
            trial,
            seed: 40 + trial as u64,
            log: IterateLog {
                algorithm: algo,
                records: losses
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| IterateRecord {
                        iter: i,
                        loss: l,
                        estimation_error: Some(l / 2.0),
                        elapsed_s: if timed { 0.1 * i as f64 } else { f64::NAN },
                        ortho_residual: 1e-15,
                    })
                    .collect(),
                diverged: false,
            },
            pred_errors: losses.iter().map(|l| l / 3.0).collect(),
        }
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(parse_f64(&s).unwrap().to_bits(), x.to_bits(), "{s}");
            let digits = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(digits.len(), 17);
        }
        assert_eq!(fmt_f64(f64::NAN), "");
        assert!(parse_f64("").unwrap().is_nan());
        assert_eq!(parse_f64(&fmt_f64(f64::INFINITY)), Some(f64::INFINITY));
    }

    #[test]
    fn trajectories_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let records = vec![
            record(Algorithm::Lsrtr, 0, &[1.0, 0.5, 0.25], false),
            record(Algorithm::LsrtrM, 0, &[1.0, 0.2], false),
            record(Algorithm::Lsrtr, 1, &[2.0, 0.7, 0.3], false),
        ];
        write_trajectories(&path, &records).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.pred_errors, b.pred_errors);
            assert_eq!(a.log.records.len(), b.log.records.len());
            assert_eq!(a.log.records[1].loss, b.log.records[1].loss);
            assert!(b.log.records[1].elapsed_s.is_nan());
        }
    }

    #[test]
    fn panels_have_one_row_per_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            record(Algorithm::Lsrtr, 0, &[1.0, 0.5, 0.25, 0.2], true),
            record(Algorithm::LsrtrM, 0, &[1.0, 0.2, 0.1, 0.05], true),
        ];
        let (agg, warnings) = aggregate(&records);
        assert!(warnings.is_empty());
        let panels = emit_plot_data(dir.path(), &agg, "linear").unwrap();
        assert_eq!(panels.len(), 6);
        let text = fs::read_to_string(dir.path().join("loss_vs_iter.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,mean_lsrtr,std_lsrtr,mean_lsrtr_m,std_lsrtr_m");
        assert_eq!(lines.len(), 1 + 4);
        let time = fs::read_to_string(dir.path().join("loss_vs_time.csv")).unwrap();
        let row: Vec<&str> = time.lines().nth(3).unwrap().split(',').collect();
        assert_eq!(parse_f64(row[0]).unwrap(), 0.1 * 2.0);
        let script = gnuplot_script(&panels);
        assert!(script.contains("loss_vs_time.png"));

        let untimed = vec![record(Algorithm::Lsrtr, 0, &[1.0, 0.5], false)];
        let (agg, _) = aggregate(&untimed);
        assert_eq!(emit_plot_data(dir.path(), &agg, "x").unwrap().len(), 3);
    }
}
