//! Flat `key = value` experiment configs.
//!
//! A config file holds one assignment per line; `#` starts a comment.
//! Command-line `--set key=value` overrides are applied after the file, in
//! order. Defaults depend on the experiment kind and family, so those two
//! keys (and `balanced` for vessel runs) are resolved first and every other
//! key is layered on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lsrtr::lsr::LsrRank;
use lsrtr::optim::{Algorithm, OptConfig, SweepMode};
use lsrtr::synth::SynthSpec;
use lsrtr::tensor::Shape;
use lsrtr::GlmFamily;
use thiserror::Error;

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    Override { index: usize },
    Flag(&'static str),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Override { index } => write!(f, "--set #{}", index + 1),
            Origin::Flag(name) => write!(f, "--{name}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Invalid { origin: Origin, message: String },
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Semantic(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

fn invalid(origin: &Origin, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        origin: origin.clone(),
        message: message.into(),
    }
}

/// Splits file text into entries; rejects malformed lines, unknown keys and
/// keys assigned twice in the same file.
pub fn parse_file_text(text: &str, path: &Path) -> Result<Vec<Entry>, ConfigError> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let origin = Origin::File {
            path: path.to_path_buf(),
            line: i + 1,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let entry = parse_assignment(line, origin)?;
        if let Some(prev) = out.iter().find(|e| e.key == entry.key) {
            return Err(invalid(
                &entry.origin,
                format!("`{}` already set at {}", entry.key, prev.origin),
            ));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn parse_override(text: &str, index: usize) -> Result<Entry, ConfigError> {
    parse_assignment(text, Origin::Override { index })
}

fn parse_assignment(line: &str, origin: Origin) -> Result<Entry, ConfigError> {
    let (key, value) = line
        .split_once('=')
        .ok_or_else(|| invalid(&origin, format!("expected `key = value`, got `{line}`")))?;
    let key = key.trim().to_string();
    if !KEYS.contains(&key.as_str()) {
        return Err(invalid(&origin, format!("unknown key `{key}`")));
    }
    Ok(Entry {
        key,
        value: value.trim().to_string(),
        origin,
    })
}

pub fn load_file(path: &Path) -> Result<Vec<Entry>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_file_text(&text, path)
}

const KEYS: &[&str] = &[
    "experiment",
    "family",
    "seed",
    "trials",
    "algo",
    "shape",
    "rank",
    "sep_rank",
    "n_train",
    "n_test",
    "noise_var",
    "eta_bound",
    "init_noise",
    "max_iters",
    "ns_iters",
    "rel_tol",
    "sweep_mode",
    "lsrtr.alpha",
    "lsrtr_m.alpha",
    "lsrtr_m.alpha_m",
    "lsrtr_m.beta",
    "lsrtr_m.lambda",
    "n_values",
    "dataset",
    "balanced",
    "per_class_train",
    "per_class_test",
    "init_scale",
    "test_error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Synthetic,
    SampleSweep,
    Vessel,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Synthetic => "synthetic",
            ExperimentKind::SampleSweep => "sample_sweep",
            ExperimentKind::Vessel => "vessel",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "sample_sweep" | "sweep" => Ok(Self::SampleSweep),
            "vessel" => Ok(Self::Vessel),
            other => Err(format!(
                "unknown experiment `{other}` (synthetic, sample_sweep, vessel)"
            )),
        }
    }
}

/// Series that drives early stopping on the vessel task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestErrorMetric {
    Misclassification,
    Mae,
}

impl TestErrorMetric {
    pub fn name(self) -> &'static str {
        match self {
            TestErrorMetric::Misclassification => "misclassification",
            TestErrorMetric::Mae => "mae",
        }
    }
}

impl FromStr for TestErrorMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "misclassification" => Ok(Self::Misclassification),
            "mae" => Ok(Self::Mae),
            other => Err(format!("unknown test error `{other}` (misclassification, mae)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub family: GlmFamily,
    pub seed: u64,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    /// Shape, rank and sample sizes; `spec.seed` is replaced per trial.
    pub spec: SynthSpec,
    /// Scale of the Gaussian perturbation around the truth for synthetic starts.
    pub init_noise: f64,
    pub lsrtr: OptConfig,
    pub lsrtr_m: OptConfig,
    pub n_values: Vec<usize>,
    pub dataset: Option<PathBuf>,
    pub balanced: bool,
    pub per_class_train: usize,
    pub per_class_test: usize,
    /// Core scale of the random vessel initialization.
    pub init_scale: f64,
    pub test_error: TestErrorMetric,
}

/// Default sample-size grids for the sweeps, per family.
pub fn default_n_values(family: GlmFamily) -> Vec<usize> {
    match family {
        GlmFamily::Linear => vec![200, 300, 400, 500, 750, 1000],
        GlmFamily::Logistic => vec![2000, 5000, 10_000, 20_000],
        GlmFamily::Poisson => vec![1000, 2000, 3000, 5000],
    }
}

impl ExperimentConfig {
    /// Protocol defaults for an experiment kind and family.
    pub fn defaults(kind: ExperimentKind, family: GlmFamily, balanced: bool) -> Self {
        let mut spec = SynthSpec::defaults(family);
        let mut lsrtr = OptConfig::default();
        let mut m = OptConfig::default();
        let mut trials = 50;
        match family {
            GlmFamily::Linear => {}
            GlmFamily::Logistic => {
                lsrtr.max_iters = 30;
                lsrtr.alpha = 0.1;
            }
            GlmFamily::Poisson => {
                lsrtr.max_iters = 20;
                lsrtr.alpha = 0.05;
                m.alpha_m = 0.05;
            }
        }
        m.max_iters = lsrtr.max_iters;
        m.alpha = lsrtr.alpha;
        match kind {
            ExperimentKind::Synthetic => {}
            ExperimentKind::SampleSweep => {
                spec.n_test = match family {
                    GlmFamily::Linear => 100,
                    GlmFamily::Logistic | GlmFamily::Poisson => 5000,
                };
                if family == GlmFamily::Logistic {
                    lsrtr.alpha = 0.5;
                }
            }
            ExperimentKind::Vessel => {
                trials = 10;
                spec.shape = Shape::new([28, 28, 28]).expect("static shape");
                spec.rank = LsrRank::new([5, 5, 5], 3).expect("static rank");
                spec.eta_bound = None;
                if balanced {
                    lsrtr.max_iters = 50;
                    lsrtr.alpha = 0.5;
                    m = OptConfig {
                        max_iters: 50,
                        alpha: 0.5,
                        alpha_m: 0.07,
                        beta: 0.1,
                        lambda: 0.01,
                        ..m
                    };
                } else {
                    lsrtr.max_iters = 30;
                    lsrtr.alpha = 0.7;
                    m = OptConfig {
                        max_iters: 30,
                        alpha: 0.7,
                        alpha_m: 0.08,
                        beta: 0.3,
                        lambda: 0.05,
                        ..m
                    };
                }
            }
        }
        Self {
            kind,
            family,
            seed: 0,
            trials,
            algorithms: Algorithm::BOTH.to_vec(),
            spec,
            init_noise: 0.1,
            lsrtr,
            lsrtr_m: m,
            n_values: default_n_values(family),
            dataset: None,
            balanced,
            per_class_train: 150,
            per_class_test: 43,
            init_scale: 0.01,
            test_error: TestErrorMetric::Misclassification,
        }
    }

    /// Layers `entries` (file first, then overrides) over the protocol
    /// defaults selected by the `experiment`, `family` and `balanced` keys.
    pub fn resolve(entries: &[Entry]) -> Result<Self, ConfigError> {
        let last = |key: &str| entries.iter().rev().find(|e| e.key == key);
        let kind = match last("experiment") {
            Some(e) => parse_with(e, str::parse::<ExperimentKind>)?,
            None => ExperimentKind::Synthetic,
        };
        let family = match last("family") {
            Some(e) => parse_with(e, |s| s.parse::<GlmFamily>().map_err(|e| e.to_string()))?,
            None if kind == ExperimentKind::Vessel => GlmFamily::Logistic,
            None => GlmFamily::Linear,
        };
        if kind == ExperimentKind::Vessel && family != GlmFamily::Logistic {
            let e = last("family").expect("family was given");
            return Err(invalid(&e.origin, "vessel experiments use the logistic family"));
        }
        let balanced = match last("balanced") {
            Some(e) => parse_with(e, parse_bool)?,
            None => false,
        };
        let mut cfg = Self::defaults(kind, family, balanced);
        let mut shape_dims: Option<Vec<usize>> = None;
        let mut rank_dims: Option<Vec<usize>> = None;
        let mut sep_rank: Option<usize> = None;
        for e in entries {
            match e.key.as_str() {
                "experiment" | "family" | "balanced" => {}
                "seed" => cfg.seed = parse_with(e, parse_num)?,
                "trials" => cfg.trials = parse_with(e, parse_num)?,
                "algo" => cfg.algorithms = parse_with(e, parse_algos)?,
                "shape" => shape_dims = Some(parse_with(e, parse_list)?),
                "rank" => rank_dims = Some(parse_with(e, parse_list)?),
                "sep_rank" => sep_rank = Some(parse_with(e, parse_num)?),
                "n_train" => cfg.spec.n_train = parse_with(e, parse_num)?,
                "n_test" => cfg.spec.n_test = parse_with(e, parse_num)?,
                "noise_var" => cfg.spec.noise_var = parse_with(e, parse_num)?,
                "eta_bound" => {
                    cfg.spec.eta_bound = parse_with(e, |s| match s {
                        "none" => Ok(None),
                        _ => parse_num(s).map(Some),
                    })?
                }
                "init_noise" => cfg.init_noise = parse_with(e, parse_num)?,
                "max_iters" => {
                    let v = parse_with(e, parse_num)?;
                    cfg.lsrtr.max_iters = v;
                    cfg.lsrtr_m.max_iters = v;
                }
                "ns_iters" => {
                    let v = parse_with(e, parse_num)?;
                    cfg.lsrtr.ns_iters = v;
                    cfg.lsrtr_m.ns_iters = v;
                }
                "rel_tol" => {
                    let v = parse_with(e, parse_num)?;
                    cfg.lsrtr.rel_tol = v;
                    cfg.lsrtr_m.rel_tol = v;
                }
                "sweep_mode" => {
                    let v: SweepMode = parse_with(e, |s| s.parse().map_err(|e| format!("{e}")))?;
                    cfg.lsrtr.sweep_mode = v;
                    cfg.lsrtr_m.sweep_mode = v;
                }
                "lsrtr.alpha" => cfg.lsrtr.alpha = parse_with(e, parse_num)?,
                "lsrtr_m.alpha" => cfg.lsrtr_m.alpha = parse_with(e, parse_num)?,
                "lsrtr_m.alpha_m" => cfg.lsrtr_m.alpha_m = parse_with(e, parse_num)?,
                "lsrtr_m.beta" => cfg.lsrtr_m.beta = parse_with(e, parse_num)?,
                "lsrtr_m.lambda" => cfg.lsrtr_m.lambda = parse_with(e, parse_num)?,
                "n_values" => cfg.n_values = parse_with(e, parse_list)?,
                "dataset" => cfg.dataset = (!e.value.is_empty()).then(|| PathBuf::from(&e.value)),
                "per_class_train" => cfg.per_class_train = parse_with(e, parse_num)?,
                "per_class_test" => cfg.per_class_test = parse_with(e, parse_num)?,
                "init_scale" => cfg.init_scale = parse_with(e, parse_num)?,
                "test_error" => cfg.test_error = parse_with(e, str::parse)?,
                other => unreachable!("key `{other}` passed the key filter"),
            }
        }

        let origin_of = |key: &str| last(key).map(|e| e.origin.clone());
        if let Some(dims) = shape_dims {
            cfg.spec.shape = Shape::new(dims)
                .map_err(|err| invalid(&origin_of("shape").expect("set"), err.to_string()))?;
        }
        if rank_dims.is_some() || sep_rank.is_some() {
            let dims = rank_dims.unwrap_or_else(|| cfg.spec.rank.multilinear().to_vec());
            let s = sep_rank.unwrap_or(cfg.spec.rank.sep_rank());
            let origin = origin_of("rank").or_else(|| origin_of("sep_rank")).expect("set");
            cfg.spec.rank = LsrRank::new(dims, s).map_err(|err| invalid(&origin, err.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sem = |m: String| Err(ConfigError::Semantic(m));
        if self.trials == 0 {
            return sem("trials must be ≥ 1".into());
        }
        if self.kind == ExperimentKind::Vessel {
            if self.spec.shape.dims() != [28, 28, 28] {
                return sem(format!("vessel volumes are 28×28×28, not {}", self.spec.shape));
            }
            if self.per_class_train == 0 || self.per_class_test == 0 {
                return sem("per_class_train and per_class_test must be ≥ 1".into());
            }
            if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
                return sem(format!("init_scale must be finite and ≥ 0, got {}", self.init_scale));
            }
        } else {
            self.spec
                .validate()
                .or_else(|e| sem(e.to_string()))?;
        }
        if self.kind == ExperimentKind::SampleSweep && self.n_values.is_empty() {
            return sem("n_values must list at least one sample size".into());
        }
        if self.n_values.contains(&0) {
            return sem("n_values entries must be ≥ 1".into());
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return sem(format!("init_noise must be finite and ≥ 0, got {}", self.init_noise));
        }
        self.spec
            .rank
            .check_against(&self.spec.shape)
            .or_else(|e| sem(e.to_string()))?;
        for (name, c) in [("lsrtr", &self.lsrtr), ("lsrtr_m", &self.lsrtr_m)] {
            c.validate().or_else(|e| sem(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    pub fn opt_config(&self, algorithm: Algorithm) -> &OptConfig {
        match algorithm {
            Algorithm::Lsrtr => &self.lsrtr,
            Algorithm::LsrtrM => &self.lsrtr_m,
        }
    }

    /// Effective settings as a loadable config file. Keys that do not apply
    /// to the experiment kind are omitted.
    pub fn echo(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut lines: Vec<(String, String)> = vec![
            ("experiment".into(), self.kind.name().into()),
            ("family".into(), self.family.name().into()),
            ("seed".into(), self.seed.to_string()),
            ("trials".into(), self.trials.to_string()),
            (
                "algo".into(),
                self.algorithms.iter().map(|a| a.name()).collect::<Vec<_>>().join(","),
            ),
            ("shape".into(), list(self.spec.shape.dims())),
            ("rank".into(), list(self.spec.rank.multilinear())),
            ("sep_rank".into(), self.spec.rank.sep_rank().to_string()),
        ];
        match self.kind {
            ExperimentKind::Synthetic | ExperimentKind::SampleSweep => {
                if self.kind == ExperimentKind::Synthetic {
                    lines.push(("n_train".into(), self.spec.n_train.to_string()));
                } else {
                    lines.push(("n_values".into(), list(&self.n_values)));
                }
                lines.push(("n_test".into(), self.spec.n_test.to_string()));
                lines.push(("noise_var".into(), fmt_num(self.spec.noise_var)));
                lines.push((
                    "eta_bound".into(),
                    self.spec.eta_bound.map_or("none".into(), fmt_num),
                ));
                lines.push(("init_noise".into(), fmt_num(self.init_noise)));
            }
            ExperimentKind::Vessel => {
                let path = self
                    .dataset
                    .as_ref()
                    .map_or(String::new(), |p| p.display().to_string());
                lines.push(("dataset".into(), path));
                lines.push(("balanced".into(), self.balanced.to_string()));
                if self.balanced {
                    lines.push(("per_class_train".into(), self.per_class_train.to_string()));
                    lines.push(("per_class_test".into(), self.per_class_test.to_string()));
                }
                lines.push(("init_scale".into(), fmt_num(self.init_scale)));
                lines.push(("test_error".into(), self.test_error.name().into()));
            }
        }
        let c = &self.lsrtr;
        let m = &self.lsrtr_m;
        lines.extend([
            ("max_iters".into(), c.max_iters.to_string()),
            ("ns_iters".into(), m.ns_iters.to_string()),
            ("rel_tol".into(), fmt_num(c.rel_tol)),
            ("sweep_mode".into(), c.sweep_mode.name().into()),
            ("lsrtr.alpha".into(), fmt_num(c.alpha)),
            ("lsrtr_m.alpha".into(), fmt_num(m.alpha)),
            ("lsrtr_m.alpha_m".into(), fmt_num(m.alpha_m)),
            ("lsrtr_m.beta".into(), fmt_num(m.beta)),
            ("lsrtr_m.lambda".into(), fmt_num(m.lambda)),
        ]);
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Shortest round-trip decimal.
fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn parse_with<T>(e: &Entry, f: impl Fn(&str) -> Result<T, String>) -> Result<T, ConfigError> {
    f(&e.value).map_err(|msg| invalid(&e.origin, format!("`{}`: {msg}", e.key)))
}

fn parse_num<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    s.parse::<T>().map_err(|e| format!("cannot parse `{s}`: {e}"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| parse_num::<usize>(p.trim()))
        .collect()
}

fn parse_algos(s: &str) -> Result<Vec<Algorithm>, String> {
    match s {
        "both" => Ok(Algorithm::BOTH.to_vec()),
        _ => {
            let mut v = Vec::new();
            for part in s.split(',') {
                let a: Algorithm = part.trim().parse().map_err(|e| format!("{e}"))?;
                if !v.contains(&a) {
                    v.push(a);
                }
            }
            v.sort_by_key(|a| Algorithm::BOTH.iter().position(|b| b == a));
            Ok(v)
        }
    }
}
