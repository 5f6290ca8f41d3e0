//! Flag/config-file merging into one resolved run configuration.

use std::path::{Path, PathBuf};

use clap::Args;
use movedetect::data::SynthConfig;
use movedetect::eval::{Condition, MatrixConfig, Method};
use movedetect::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Flags shared by every subcommand; each uses the ones it needs.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset directory containing manifest.json.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Generate a synthetic dataset in memory instead of loading one.
    #[arg(long)]
    pub synth: bool,
    /// Trials per synthetic subject.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Number of synthetic subjects.
    #[arg(long)]
    pub n_subjects: Option<usize>,
    /// Subject ids to evaluate (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub subjects: Option<Vec<String>>,
    /// Methods among D,S,M,E,SM,SE,ME,SME (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Postprocessing window counts (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel fold jobs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replace existing artifacts instead of refusing.
    #[arg(long)]
    pub overwrite: bool,
    /// Results table to read (stats, report).
    #[arg(long, value_name = "FILE")]
    pub results: Option<PathBuf>,
    /// Metric for statistics: accuracy, twp, edr or ndr.
    #[arg(long)]
    pub metric: Option<String>,
    /// Conditions such as E3,SE2,ME2,SME2 (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub conditions: Option<Vec<String>>,
    /// Also emit SVG charts (report).
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub synth: Option<bool>,
    pub trials: Option<usize>,
    pub n_subjects: Option<usize>,
    pub subjects: Option<Vec<String>>,
    pub methods: Option<Vec<String>>,
    pub windows: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub overwrite: Option<bool>,
    pub results: Option<PathBuf>,
    pub metric: Option<String>,
    pub conditions: Option<Vec<String>>,
    pub svg: Option<bool>,
    pub synth_config: Option<SynthConfig>,
    pub pipeline: Option<PipelineConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Data(PathBuf),
    Synth(SynthConfig),
}

/// Everything a command needs, after merging and validation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: Option<Source>,
    pub matrix: MatrixConfig,
    pub synth: SynthConfig,
    pub jobs: usize,
    pub out: PathBuf,
    pub overwrite: bool,
    pub results: Option<PathBuf>,
    pub metric: String,
    pub conditions: Vec<Condition>,
    pub svg: bool,
}

pub const DEFAULT_CONDITIONS: [&str; 4] = ["E3", "SE2", "ME2", "SME2"];
const METRICS: [&str; 4] = ["accuracy", "twp", "edr", "ndr"];

impl RunConfig {
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let bad = |m: String| CliError::Config(m);

        let mut synth = file.synth_config.clone().unwrap_or_default();
        if let Some(n) = flags.trials.or(file.trials) {
            synth.n_trials = n;
        }
        if let Some(n) = flags.n_subjects.or(file.n_subjects) {
            synth.n_subjects = n;
        }
        synth.validate().map_err(|e| bad(e.to_string()))?;

        let seed = flags.seed.or(file.seed);
        if let Some(s) = seed {
            synth.seed = s;
        }

        let data = flags.data.clone().or(file.data.clone());
        let use_synth = flags.synth || file.synth.unwrap_or(false);
        let source = match (data, use_synth) {
            (Some(_), true) => return Err(bad("--data and --synth are mutually exclusive".into())),
            (Some(p), false) => {
                if !p.exists() {
                    return Err(bad(format!("data path {} does not exist", p.display())));
                }
                Some(Source::Data(p))
            }
            (None, true) => Some(Source::Synth(synth.clone())),
            (None, false) => None,
        };

        let mut matrix = MatrixConfig {
            pipeline: file.pipeline.clone().unwrap_or_default(),
            ..MatrixConfig::default()
        };
        if let Some(m) = flags.methods.clone().or(file.methods.clone()) {
            matrix.methods = m
                .iter()
                .map(|s| s.parse::<Method>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(e.to_string()))?;
        }
        if let Some(w) = flags.windows.clone().or(file.windows.clone()) {
            matrix.windows = w;
        }
        if let Some(s) = seed {
            matrix.seed = s;
        }
        matrix.subjects = flags.subjects.clone().or(file.subjects.clone());
        matrix.validate().map_err(|e| bad(e.to_string()))?;

        let jobs = flags.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            return Err(bad("--jobs must be at least 1".into()));
        }
        let out = flags
            .out
            .clone()
            .or(file.out.clone())
            .ok_or_else(|| bad("--out is required".into()))?;

        let metric = flags
            .metric
            .clone()
            .or(file.metric.clone())
            .unwrap_or_else(|| "twp".into())
            .to_ascii_lowercase();
        if !METRICS.contains(&metric.as_str()) {
            return Err(bad(format!("unknown metric {metric:?}; expected one of {}", METRICS.join(", "))));
        }
        let conditions = flags
            .conditions
            .clone()
            .or(file.conditions.clone())
            .unwrap_or_else(|| DEFAULT_CONDITIONS.iter().map(|s| s.to_string()).collect())
            .iter()
            .map(|c| c.parse::<Condition>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;

        Ok(RunConfig {
            source,
            matrix,
            synth,
            jobs,
            out,
            overwrite: flags.overwrite || file.overwrite.unwrap_or(false),
            results: flags.results.clone().or(file.results.clone()),
            metric,
            conditions,
            svg: flags.svg || file.svg.unwrap_or(false),
        })
    }

    pub fn require_source(&self) -> Result<&Source, CliError> {
        self.source
            .as_ref()
            .ok_or_else(|| CliError::Config("one of --data or --synth is required".into()))
    }
}
