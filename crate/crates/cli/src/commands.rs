use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use movedetect::data::{generate_synthetic, load_dataset, validate_dataset, write_dataset, Dataset};
use movedetect::eval::{
    compare_conditions, config_fingerprint, dataset_digest, make_folds, read_results_csv, run_matrix_with,
    train_folds, write_json, write_outcomes_csv, write_results_csv, CvFold, FoldRun, MatrixConfig, ResultRow,
};
use movedetect::pipeline::FoldModels;
use serde::Serialize;

use crate::config::{RunConfig, Source};
use crate::error::{output, CliError};
use crate::svg;

pub const TOOL: &str = concat!("movedetect ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    EvalOffline,
    EvalPseudoOnline,
    FullMatrix,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::EvalOffline => "eval-offline",
            Mode::EvalPseudoOnline => "eval-pseudo-online",
            Mode::FullMatrix => "full-matrix",
        }
    }
}

fn refuse_existing(paths: &[PathBuf], overwrite: bool) -> Result<(), CliError> {
    if overwrite {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(CliError::Config(format!(
            "{} already exists; pass --overwrite to replace it",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| output(format!("cannot create {}: {e}", dir.display())))
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    refuse_existing(&[cfg.out.join("manifest.json")], cfg.overwrite)?;
    let ds = generate_synthetic(&cfg.synth).map_err(|e| CliError::Config(e.to_string()))?;
    write_dataset(&ds, &cfg.out).map_err(output)?;
    eprintln!(
        "wrote {} subject(s), {} trials to {}",
        ds.subjects.len(),
        ds.n_trials(),
        cfg.out.display()
    );
    Ok(())
}

fn load(source: &Source) -> Result<Dataset, CliError> {
    let ds = match source {
        Source::Data(p) => load_dataset(p).map_err(|e| CliError::Data(e.to_string()))?,
        Source::Synth(s) => generate_synthetic(s).map_err(|e| CliError::Config(e.to_string()))?,
    };
    let report = validate_dataset(&ds);
    if let Some(v) = report.violations.first() {
        return Err(CliError::Data(format!(
            "{} violation(s); first: subject {} set {} trial {} {:?}",
            report.violations.len(),
            v.subject_id,
            v.set_id,
            v.trial_id,
            v.kind
        )));
    }
    Ok(ds)
}

/// Rejects unknown subjects (config) and unusable set layouts (data)
/// before any model is trained.
fn check_folds(ds: &Dataset, matrix: &MatrixConfig) -> Result<(), CliError> {
    let subjects: Vec<_> = match &matrix.subjects {
        None => ds.subjects.iter().collect(),
        Some(ids) => ids
            .iter()
            .map(|id| ds.subject(id).ok_or_else(|| CliError::Config(format!("unknown subject {id:?}"))))
            .collect::<Result<_, _>>()?,
    };
    if subjects.is_empty() {
        return Err(CliError::Data("dataset has no subjects".into()));
    }
    for s in subjects {
        make_folds(s, matrix.seed).map_err(|e| CliError::Data(format!("subject {}: {e}", s.id)))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    command: &'a str,
    dataset_digest: &'a str,
    matrix: &'a MatrixConfig,
}

#[derive(Serialize)]
struct FoldSeed {
    subject: String,
    fold: u32,
    model_seed: u64,
}

#[derive(Serialize)]
struct Seeds {
    run: u64,
    synth: Option<u64>,
    folds: Vec<FoldSeed>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'a str,
    command: &'a str,
    config_fingerprint: &'a str,
    source: &'a Source,
    dataset_digest: &'a str,
    config: &'a MatrixConfig,
    seeds: Seeds,
    folds: &'a [FoldRun],
    artifacts: Vec<String>,
}

fn model_prefix(fold: &CvFold) -> String {
    format!("{}_fold{}", fold.subject_id, fold.fold_id)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| output(format!("thread pool: {e}")))
}

/// Shared body of train / eval-offline / eval-pseudo-online / full-matrix.
pub fn run(mode: Mode, cfg: &RunConfig) -> Result<(), CliError> {
    let source = cfg.require_source()?;
    let mut matrix = cfg.matrix.clone();
    match mode {
        Mode::EvalOffline => matrix.online = false,
        Mode::EvalPseudoOnline => matrix.offline = false,
        Mode::Train | Mode::FullMatrix => {}
    }

    let out = &cfg.out;
    let models_dir = out.join("models");
    let results = out.join("results.csv");
    let outcomes = out.join("outcomes.csv");
    let stats = out.join("stats.json");
    let manifest = out.join("run-manifest.json");
    let mut targets = vec![models_dir.clone(), manifest.clone()];
    if mode != Mode::Train {
        targets.push(results.clone());
    }
    if matches!(mode, Mode::EvalPseudoOnline | Mode::FullMatrix) {
        targets.push(outcomes.clone());
    }
    if mode == Mode::FullMatrix {
        targets.push(stats.clone());
    }
    refuse_existing(&targets, cfg.overwrite)?;

    let ds = load(source)?;
    check_folds(&ds, &matrix)?;
    let digest = dataset_digest(&ds);
    let fingerprint = config_fingerprint(&FingerprintInput {
        command: mode.name(),
        dataset_digest: &digest,
        matrix: &matrix,
    })
    .map_err(output)?;

    if cfg.overwrite && models_dir.exists() {
        std::fs::remove_dir_all(&models_dir).map_err(|e| output(format!("{}: {e}", models_dir.display())))?;
    }
    create_dir(&models_dir)?;
    let provenance = serde_json::json!({ "tool": TOOL, "config_fingerprint": fingerprint });
    let save = |fold: &CvFold, models: &FoldModels| {
        models.save(&models_dir, &model_prefix(fold), &provenance, &matrix.pipeline)
    };

    let pool = pool(cfg.jobs)?;
    let mut artifacts: Vec<String> = Vec::new();
    let folds = if mode == Mode::Train {
        pool.install(|| train_folds(&ds, &matrix, &save)).map_err(CliError::Training)?
    } else {
        let result = pool.install(|| run_matrix_with(&ds, &matrix, &save)).map_err(CliError::Training)?;
        write_results_csv(&results, &result.rows, &fingerprint).map_err(output)?;
        artifacts.push("results.csv".into());
        if matrix.online {
            write_outcomes_csv(&outcomes, &result.outcomes, &fingerprint).map_err(output)?;
            artifacts.push("outcomes.csv".into());
        }
        if mode == Mode::FullMatrix {
            if let Some(report) = default_stats(&result.rows, cfg, &fingerprint)? {
                write_json(&stats, &report).map_err(output)?;
                artifacts.push("stats.json".into());
            }
        }
        result.folds
    };

    let mut model_files: Vec<String> = std::fs::read_dir(&models_dir)
        .map_err(|e| output(format!("{}: {e}", models_dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| format!("models/{}", e.file_name().to_string_lossy()))
        .collect();
    model_files.sort();
    artifacts.extend(model_files);

    let run_manifest = RunManifest {
        tool: TOOL,
        command: mode.name(),
        config_fingerprint: &fingerprint,
        source,
        dataset_digest: &digest,
        config: &matrix,
        seeds: Seeds {
            run: matrix.seed,
            synth: match source {
                Source::Synth(s) => Some(s.seed),
                Source::Data(_) => None,
            },
            folds: folds
                .iter()
                .map(|f| FoldSeed {
                    subject: f.fold.subject_id.clone(),
                    fold: f.fold.fold_id,
                    model_seed: f.model_seed,
                })
                .collect(),
        },
        folds: &folds,
        artifacts,
    };
    write_json(&manifest, &run_manifest).map_err(output)?;
    eprintln!("{}: {} fold(s) -> {} [{}]", mode.name(), folds.len(), out.display(), &fingerprint[..12]);
    Ok(())
}

#[derive(Serialize)]
struct StatsFile<'a> {
    config_fingerprint: &'a str,
    #[serde(flatten)]
    report: movedetect::eval::StatsReport,
}

/// Statistics over the configured conditions when every one of them was run.
fn default_stats<'a>(
    rows: &[ResultRow],
    cfg: &RunConfig,
    fingerprint: &'a str,
) -> Result<Option<StatsFile<'a>>, CliError> {
    let present = |c: &movedetect::eval::Condition| {
        rows.iter().any(|r| {
            r.metric == cfg.metric
                && r.method == c.method.name()
                && (r.n_windows == Some(c.n_windows) || (r.n_windows.is_none() && cfg.metric == "accuracy"))
        })
    };
    if cfg.conditions.len() < 3 || !cfg.conditions.iter().all(present) {
        return Ok(None);
    }
    let report = compare_conditions(rows, &cfg.metric, &cfg.conditions).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Some(StatsFile {
        config_fingerprint: fingerprint,
        report,
    }))
}

fn read_results(cfg: &RunConfig) -> Result<(PathBuf, Vec<ResultRow>, String), CliError> {
    let path = cfg.results.clone().unwrap_or_else(|| cfg.out.join("results.csv"));
    if !path.exists() {
        return Err(CliError::Config(format!("results file {} does not exist", path.display())));
    }
    let (rows, fp) = read_results_csv(&path).map_err(|e| CliError::Data(e.to_string()))?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", path.display())));
    }
    Ok((path, rows, fp.unwrap_or_default()))
}

pub fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    let (_, rows, fingerprint) = read_results(cfg)?;
    let target = cfg.out.join("stats.json");
    refuse_existing(&[target.clone()], cfg.overwrite)?;
    let report = compare_conditions(&rows, &cfg.metric, &cfg.conditions).map_err(|e| CliError::Data(e.to_string()))?;
    create_dir(&cfg.out)?;
    write_json(
        &target,
        &StatsFile {
            config_fingerprint: &fingerprint,
            report,
        },
    )
    .map_err(output)?;
    eprintln!("wrote {}", target.display());
    Ok(())
}

/// Per (method, n_windows, metric) summary across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub n_windows: Option<usize>,
    pub metric: String,
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryRow {
    pub fn label(&self) -> String {
        match self.n_windows {
            Some(n) => format!("{}{n}", self.method),
            None => self.method.clone(),
        }
    }
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, Option<usize>, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.metric.clone(), r.n_windows, r.method.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((metric, n_windows, method), mut v)| {
            v.sort_by(f64::total_cmp);
            let k = v.len();
            let median = if k % 2 == 1 { v[k / 2] } else { (v[k / 2 - 1] + v[k / 2]) / 2.0 };
            SummaryRow {
                method,
                n_windows,
                metric,
                n: k,
                median,
                mean: v.iter().sum::<f64>() / k as f64,
                min: v[0],
                max: v[k - 1],
            }
        })
        .collect()
}

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let (_, rows, fingerprint) = read_results(cfg)?;
    let summary = summarize(&rows);
    let target = cfg.out.join("summary.csv");
    let mut targets = vec![target.clone()];
    let metrics: Vec<String> = {
        let mut m: Vec<String> = summary.iter().map(|r| r.metric.clone()).collect();
        m.dedup();
        m
    };
    if cfg.svg {
        targets.extend(metrics.iter().map(|m| cfg.out.join(format!("{m}.svg"))));
    }
    refuse_existing(&targets, cfg.overwrite)?;
    create_dir(&cfg.out)?;

    let mut text = String::from("method,n_windows,metric,n,median,mean,min,max,config_fingerprint\n");
    for r in &summary {
        text += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.n_windows.map(|n| n.to_string()).unwrap_or_default(),
            r.metric,
            r.n,
            r.median,
            r.mean,
            r.min,
            r.max,
            fingerprint
        );
    }
    std::fs::write(&target, text).map_err(|e| output(format!("{}: {e}", target.display())))?;
    if cfg.svg {
        for m in &metrics {
            let bars: Vec<(String, f64)> = summary
                .iter()
                .filter(|r| &r.metric == m)
                .map(|r| (r.label(), r.median))
                .collect();
            let path = cfg.out.join(format!("{m}.svg"));
            let doc = svg::bar_chart(&format!("median {m} ({})", &fingerprint[..fingerprint.len().min(12)]), &bars);
            std::fs::write(&path, doc).map_err(|e| output(format!("{}: {e}", path.display())))?;
        }
    }
    eprintln!("wrote {}", target.display());
    Ok(())
}
