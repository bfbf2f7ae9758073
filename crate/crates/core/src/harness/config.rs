//! Experiment configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! problem = line1hz
//! train_structures = 2,4,6,8
//! hidden_sizes = 10,20,30
//! seed = 7
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maml::MamlConfig;
use crate::population::{FrequencyGrid, TargetKind, TemperatureRange, DEFAULT_STIFFNESS_INTERVAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Problem {
    /// |H11| at 1 Hz.
    Line1Hz,
    /// |H11| at 50 Hz.
    Line50Hz,
    /// Leading principal components of the two-DOF FRF.
    FullFrfPca,
}

impl Problem {
    pub const ALL: [Problem; 3] = [Problem::Line1Hz, Problem::Line50Hz, Problem::FullFrfPca];

    pub fn name(self) -> &'static str {
        match self {
            Problem::Line1Hz => "line1hz",
            Problem::Line50Hz => "line50hz",
            Problem::FullFrfPca => "frf-pca",
        }
    }

    pub fn target_kind(self) -> TargetKind {
        match self {
            Problem::Line1Hz => TargetKind::LINE_1HZ,
            Problem::Line50Hz => TargetKind::LINE_50HZ,
            Problem::FullFrfPca => TargetKind::FullFrf,
        }
    }
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "line1hz" | "1" | "one" => Ok(Problem::Line1Hz),
            "line50hz" | "2" | "two" => Ok(Problem::Line50Hz),
            "frf-pca" | "frf" | "3" | "three" => Ok(Problem::FullFrfPca),
            other => Err(Error::Parse(format!("unknown problem `{other}`"))),
        }
    }
}

/// One cell of the protocol: a problem and a training-population size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub n_train_structures: usize,
    pub hidden_sizes: Vec<usize>,
    pub shot_counts: Vec<usize>,
    pub n_test_structures: usize,
    pub eval_samples_per_structure: usize,
    pub train_samples_per_structure: usize,
    pub n_components: usize,
    pub master_seed: u64,
    pub maml: MamlConfig,
    pub gp_restarts: usize,
    pub stiffness_interval: (f64, f64),
    pub temperature_range: TemperatureRange,
    pub grid: FrequencyGrid,
    /// Worker threads; `None` uses all cores. Results do not depend on it.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: Problem::Line1Hz,
            n_train_structures: 8,
            hidden_sizes: (1..=10).map(|i| 10 * i).collect(),
            shot_counts: (1..=10).collect(),
            n_test_structures: 200,
            eval_samples_per_structure: 100,
            train_samples_per_structure: 100,
            n_components: 3,
            master_seed: 0,
            maml: MamlConfig::default(),
            gp_restarts: crate::gp::DEFAULT_RESTARTS,
            stiffness_interval: DEFAULT_STIFFNESS_INTERVAL,
            temperature_range: TemperatureRange::default(),
            grid: FrequencyGrid::default(),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.maml.validate()?;
        if self.n_train_structures == 0 {
            return Err(Error::invalid("at least one training structure is required"));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden sizes must be a non-empty list of positive sizes"));
        }
        if self.shot_counts.is_empty() || self.shot_counts.contains(&0) {
            return Err(Error::invalid("shot counts must be a non-empty list of positive counts"));
        }
        if self.n_test_structures == 0 || self.eval_samples_per_structure == 0 {
            return Err(Error::invalid("testing structures and evaluation samples must be positive"));
        }
        if self.gp_restarts == 0 {
            return Err(Error::invalid("gp_restarts must be positive"));
        }
        let need = self.maml.inner_batch + self.maml.meta_batch;
        if self.train_samples_per_structure < need {
            return Err(Error::invalid(format!(
                "train_samples ({}) must cover inner_batch + meta_batch ({need})",
                self.train_samples_per_structure
            )));
        }
        if self.problem == Problem::FullFrfPca && self.n_components == 0 {
            return Err(Error::invalid("n_components must be positive"));
        }
        if let crate::population::TargetKind::Line(hz) = self.problem.target_kind() {
            if self.grid.index_of(hz).is_none() {
                return Err(Error::invalid(format!("{hz} Hz is not on the frequency grid")));
            }
        }
        Ok(())
    }

    pub fn max_shots(&self) -> usize {
        self.shot_counts.iter().copied().max().unwrap_or(0)
    }
}

/// A full sweep: one experiment per training-population size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub train_structure_counts: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            base: ExperimentConfig::default(),
            train_structure_counts: vec![2, 4, 6, 8],
        }
    }
}

/// Every key accepted by [`SweepConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "problem",
    "train_structures",
    "hidden_sizes",
    "shot_counts",
    "test_structures",
    "eval_samples",
    "train_samples",
    "components",
    "seed",
    "alpha",
    "beta",
    "epochs",
    "inner_batch",
    "meta_batch",
    "adapt_steps",
    "second_order",
    "activation",
    "gp_restarts",
    "stiffness_min",
    "stiffness_max",
    "temperature_min",
    "temperature_max",
    "workers",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected a boolean, got `{value}`"))),
    }
}

impl SweepConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let b = &mut self.base;
        match key.trim() {
            "problem" => b.problem = parse(key, value)?,
            "train_structures" => self.train_structure_counts = parse_list(key, value)?,
            "hidden_sizes" => b.hidden_sizes = parse_list(key, value)?,
            "shot_counts" => b.shot_counts = parse_list(key, value)?,
            "test_structures" => b.n_test_structures = parse(key, value)?,
            "eval_samples" => b.eval_samples_per_structure = parse(key, value)?,
            "train_samples" => b.train_samples_per_structure = parse(key, value)?,
            "components" => b.n_components = parse(key, value)?,
            "seed" => {
                b.master_seed = parse(key, value)?;
                b.maml.seed = b.master_seed;
            }
            "alpha" => b.maml.alpha = parse(key, value)?,
            "beta" => b.maml.beta = parse(key, value)?,
            "epochs" => b.maml.epochs = parse(key, value)?,
            "inner_batch" => b.maml.inner_batch = parse(key, value)?,
            "meta_batch" => b.maml.meta_batch = parse(key, value)?,
            "adapt_steps" => b.maml.adapt_steps = parse(key, value)?,
            "second_order" => b.maml.second_order = parse_bool(key, value)?,
            "activation" => b.maml.activation = parse(key, value)?,
            "gp_restarts" => b.gp_restarts = parse(key, value)?,
            "stiffness_min" => b.stiffness_interval.0 = parse(key, value)?,
            "stiffness_max" => b.stiffness_interval.1 = parse(key, value)?,
            "temperature_min" => b.temperature_range.lo = parse(key, value)?,
            "temperature_max" => b.temperature_range.hi = parse(key, value)?,
            "workers" => {
                let w: usize = parse(key, value)?;
                b.workers = (w > 0).then_some(w);
            }
            other => return Err(Error::Parse(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parses the flat text format on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Renders the configuration back into the flat text format.
    pub fn to_text(&self) -> String {
        let b = &self.base;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let act = match b.maml.activation {
            crate::nn::Activation::Tanh => "tanh",
            crate::nn::Activation::Sigmoid => "sigmoid",
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("problem", b.problem.name().into());
        kv("train_structures", list(&self.train_structure_counts));
        kv("hidden_sizes", list(&b.hidden_sizes));
        kv("shot_counts", list(&b.shot_counts));
        kv("test_structures", b.n_test_structures.to_string());
        kv("eval_samples", b.eval_samples_per_structure.to_string());
        kv("train_samples", b.train_samples_per_structure.to_string());
        kv("components", b.n_components.to_string());
        kv("seed", b.master_seed.to_string());
        kv("alpha", b.maml.alpha.to_string());
        kv("beta", b.maml.beta.to_string());
        kv("epochs", b.maml.epochs.to_string());
        kv("inner_batch", b.maml.inner_batch.to_string());
        kv("meta_batch", b.maml.meta_batch.to_string());
        kv("adapt_steps", b.maml.adapt_steps.to_string());
        kv("second_order", b.maml.second_order.to_string());
        kv("activation", act.into());
        kv("gp_restarts", b.gp_restarts.to_string());
        kv("stiffness_min", b.stiffness_interval.0.to_string());
        kv("stiffness_max", b.stiffness_interval.1.to_string());
        kv("temperature_min", b.temperature_range.lo.to_string());
        kv("temperature_max", b.temperature_range.hi.to_string());
        kv("workers", b.workers.unwrap_or(0).to_string());
        out
    }

    /// The single-cell configuration for `n_train` training structures.
    pub fn cell(&self, n_train: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_train_structures: n_train,
            ..self.base.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_structure_counts.is_empty() || self.train_structure_counts.contains(&0) {
            return Err(Error::invalid("train_structures must list positive counts"));
        }
        TemperatureRange::new(self.base.temperature_range.lo, self.base.temperature_range.hi)?;
        self.train_structure_counts
            .iter()
            .try_for_each(|&n| self.cell(n).validate())
    }
}
