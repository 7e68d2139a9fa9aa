//! Run configuration: a JSON file with every key optional, overridden by
//! command-line flags and validated before any computation starts.

use std::fs;
use std::path::{Path, PathBuf};

use redmd::dictionary::{centers_from_data, median_heuristic_gamma};
use redmd::{DMatrix, Dictionary, DictionaryKind};
use serde::Deserialize;

use crate::error::CliError;

/// Seed stream indices for [`redmd::seed::fan_out`].
pub mod streams {
    pub const SYSTEM: u64 = 0;
    pub const INITIAL_STATE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const CENTERS: u64 = 3;
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dictionary: DictionaryConfig,
    pub delta: f64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Report dominant eigenvalues every `cadence` accepted samples.
    pub cadence: usize,
    /// Number of dominant modes reported.
    pub dominant: usize,
    pub seed: u64,
    /// Train on only the first `train_rows` rows of the input.
    pub train_rows: Option<usize>,
    pub system: SystemConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dictionary: DictionaryConfig::default(),
            delta: 1e-6,
            input: None,
            output: None,
            cadence: 50,
            dominant: 10,
            seed: 0,
            train_rows: None,
            system: SystemConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionaryConfig {
    pub kind: DictionaryKind,
    pub rbf_count: usize,
    /// Inverse width; the median heuristic over the centers when absent.
    pub gamma: Option<f64>,
    /// Prepend the raw state to an RBF block. Defaults to true.
    pub include_state: Option<bool>,
    /// CSV of centers (one per row, header `x1..xN`). Sampled from the
    /// training data when absent.
    pub centers_file: Option<PathBuf>,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            kind: DictionaryKind::Linear,
            rbf_count: 150,
            gamma: None,
            include_state: None,
            centers_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Linear,
    Swing,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// State dimension of the linear system.
    pub n: usize,
    pub spectral_radius: f64,
    pub steps: usize,
    pub noise_std: f64,
    pub dt: f64,
    /// Half-width of the uniform initial state of the linear system.
    pub initial_scale: f64,
    /// Half-widths of the swing perturbation about equilibrium.
    pub angle_perturbation: f64,
    pub frequency_perturbation: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            kind: SystemKind::Linear,
            n: 20,
            spectral_radius: 0.95,
            steps: 1000,
            noise_std: 0.0,
            dt: redmd::datagen::DEFAULT_DT,
            initial_scale: 1.0,
            angle_perturbation: 0.3,
            frequency_perturbation: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DictArg {
    Linear,
    GaussianRbf,
    Composite,
}

impl From<DictArg> for DictionaryKind {
    fn from(a: DictArg) -> Self {
        match a {
            DictArg::Linear => DictionaryKind::Linear,
            DictArg::GaussianRbf => DictionaryKind::GaussianRbf,
            DictArg::Composite => DictionaryKind::Composite,
        }
    }
}

/// Flags shared by every subcommand that override config keys.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Input snapshot CSV.
    #[arg(long, short, global = true)]
    pub input: Option<PathBuf>,
    /// Primary output path; standard output when absent.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub dict: Option<DictArg>,
    #[arg(long, global = true)]
    pub rbf_count: Option<usize>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub include_state: Option<bool>,
    #[arg(long, global = true)]
    pub centers_file: Option<PathBuf>,
    #[arg(long, global = true)]
    pub train_rows: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut c = RunConfig::load(o.config.as_deref())?;
        if let Some(v) = o.seed {
            c.seed = v;
        }
        if let Some(v) = o.delta {
            c.delta = v;
        }
        if let Some(v) = &o.input {
            c.input = Some(v.clone());
        }
        if let Some(v) = &o.output {
            c.output = Some(v.clone());
        }
        if let Some(v) = o.dict {
            c.dictionary.kind = v.into();
        }
        if let Some(v) = o.rbf_count {
            c.dictionary.rbf_count = v;
        }
        if let Some(v) = o.gamma {
            c.dictionary.gamma = Some(v);
        }
        if let Some(v) = o.include_state {
            c.dictionary.include_state = Some(v);
        }
        if let Some(v) = &o.centers_file {
            c.dictionary.centers_file = Some(v.clone());
        }
        if let Some(v) = o.train_rows {
            c.train_rows = Some(v);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(usage(format!(
                "delta must be positive and finite, got {}",
                self.delta
            )));
        }
        if self.cadence == 0 {
            return Err(usage("cadence must be at least 1"));
        }
        if self.dominant == 0 {
            return Err(usage("dominant must be at least 1"));
        }
        if self.train_rows == Some(0) {
            return Err(usage("train_rows must be at least 1"));
        }
        let d = &self.dictionary;
        if d.kind != DictionaryKind::Linear {
            if d.rbf_count == 0 {
                return Err(usage("rbf_count must be at least 1"));
            }
            if let Some(g) = d.gamma {
                if !(g > 0.0) || !g.is_finite() {
                    return Err(usage(format!("gamma must be positive, got {g}")));
                }
            }
            if d.kind == DictionaryKind::Composite && d.include_state == Some(false) {
                return Err(usage("a composite dictionary always includes the state"));
            }
        }
        let s = &self.system;
        if s.n == 0 {
            return Err(usage("system.n must be at least 1"));
        }
        if !(s.spectral_radius > 0.0 && s.spectral_radius < 1.0) {
            return Err(usage("system.spectral_radius must lie in (0, 1)"));
        }
        if !(s.dt > 0.0) || !s.dt.is_finite() {
            return Err(usage("system.dt must be positive"));
        }
        if !(s.noise_std >= 0.0) || !s.noise_std.is_finite() {
            return Err(usage("system.noise_std must be non-negative"));
        }
        if !(s.initial_scale > 0.0) || !s.initial_scale.is_finite() {
            return Err(usage("system.initial_scale must be positive"));
        }
        for (name, v) in [
            ("system.angle_perturbation", s.angle_perturbation),
            ("system.frequency_perturbation", s.frequency_perturbation),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(usage(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| usage("an input CSV is required (--input or config \"input\")"))
    }

    /// Builds the dictionary for `n`-dimensional states, sampling RBF
    /// centers from `training` (`N × M`, finite columns) when no file is set.
    pub fn build_dictionary(
        &self,
        n: usize,
        training: &DMatrix<f64>,
    ) -> Result<Dictionary, CliError> {
        let d = &self.dictionary;
        if d.kind == DictionaryKind::Linear {
            return Ok(Dictionary::linear(n)?);
        }
        let include_state = match d.kind {
            DictionaryKind::Composite => true,
            _ => d.include_state.unwrap_or(true),
        };
        let centers = match &d.centers_file {
            Some(path) => {
                let c = redmd::io::read_snapshot_file(path)?.transpose();
                if c.ncols() != n {
                    return Err(CliError::Data(format!(
                        "centers file {} has dimension {}, data has {n}",
                        path.display(),
                        c.ncols()
                    )));
                }
                c
            }
            None => {
                if training.ncols() < d.rbf_count {
                    return Err(CliError::Data(format!(
                        "cannot draw {} centers from {} training states",
                        d.rbf_count,
                        training.ncols()
                    )));
                }
                let seed = redmd::seed::fan_out(self.seed, streams::CENTERS);
                centers_from_data(training, d.rbf_count, seed)?
            }
        };
        let gamma = match d.gamma {
            Some(g) => g,
            None => median_heuristic_gamma(&centers)?,
        };
        Ok(Dictionary::rbf(&centers, gamma, include_state)?)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
