use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    make_folds, method_labels, score_trial, subject_seed_part, CvFold, Method, MetricsReport,
    OutcomeCounts, OutcomeRow, ResultRow, TrialOutcome, PSEUDO_ONLINE_WINDOWS, WINDOWS_PER_TRIAL,
};
use crate::data::{Dataset, Subject};
use crate::dsp::{slice_windows, TEST_STRIDE_S, WINDOW_LENGTH_S};
use crate::ensemble::Label;
use crate::error::{Error, Result};
use crate::models::{ModelKind, TrainReport};
use crate::pipeline::{
    derive_seed, labelled_window_ends, labelled_windows, train_fold_models, window_features,
    FoldModels, PipelineConfig, PreparedTrial, Preprocessor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub methods: Vec<Method>,
    pub windows: Vec<usize>,
    pub seed: u64,
    /// Subject ids to run; all when `None`.
    pub subjects: Option<Vec<String>>,
    pub offline: bool,
    pub online: bool,
    pub pipeline: PipelineConfig,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            methods: Method::all(),
            windows: vec![1, 2, 3],
            seed: 0,
            subjects: None,
            offline: true,
            online: true,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if self.online && (self.windows.is_empty() || self.windows.contains(&0)) {
            return Err(Error::InvalidArgument(format!(
                "window counts {:?} must be non-empty and >= 1",
                self.windows
            )));
        }
        if !self.offline && !self.online {
            return Err(Error::InvalidArgument("neither offline nor pseudo-online evaluation selected".into()));
        }
        self.pipeline.train.validate()?;
        self.pipeline.eegnet.validate()
    }

    /// Base models needed by the selected methods.
    pub fn kinds(&self) -> Vec<ModelKind> {
        let set: BTreeSet<ModelKind> = self.methods.iter().flat_map(|m| m.members().iter().copied()).collect();
        set.into_iter().collect()
    }
}

/// Member probabilities on a fold's test trials, computed once and shared
/// by every method and window count.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldProbabilities {
    pub test_ids: Vec<u32>,
    pub offline_ends: Vec<f64>,
    pub offline_truth: Vec<bool>,
    pub online_ends: Vec<f64>,
    /// `[trial][window]` per model for the 12 labelled windows.
    pub offline: BTreeMap<ModelKind, Vec<Vec<f64>>>,
    /// `[trial][window]` per model for the pseudo-online grid.
    pub online: BTreeMap<ModelKind, Vec<Vec<f64>>>,
}

impl FoldProbabilities {
    fn rows<'a>(
        table: &'a BTreeMap<ModelKind, Vec<Vec<f64>>>,
        method: &Method,
        trial: usize,
    ) -> Result<Vec<&'a [f64]>> {
        method
            .members()
            .iter()
            .map(|k| {
                table
                    .get(k)
                    .map(|t| t[trial].as_slice())
                    .ok_or_else(|| Error::InvalidArgument(format!("no {k:?} probabilities for method {method}")))
            })
            .collect()
    }

    /// Fraction of the labelled test windows classified correctly.
    pub fn offline_accuracy(&self, method: &Method) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for i in 0..self.test_ids.len() {
            let labels = method_labels(&Self::rows(&self.offline, method, i)?)?;
            if labels.len() != WINDOWS_PER_TRIAL {
                return Err(Error::ShapeMismatch(format!("{} offline windows per trial", labels.len())));
            }
            correct += labels
                .iter()
                .zip(&self.offline_truth)
                .filter(|(l, &t)| l.is_movement() == t)
                .count();
            total += labels.len();
        }
        if total == 0 {
            return Err(Error::Empty("offline test windows".into()));
        }
        Ok(correct as f64 / total as f64)
    }

    /// Label sequence of every test trial over the pseudo-online grid.
    pub fn online_labels(&self, method: &Method) -> Result<Vec<Vec<Label>>> {
        (0..self.test_ids.len())
            .map(|i| method_labels(&Self::rows(&self.online, method, i)?))
            .collect()
    }

    pub fn pseudo_online(&self, method: &Method, n_windows: usize) -> Result<(OutcomeCounts, Vec<(u32, TrialOutcome)>)> {
        let mut counts = OutcomeCounts::default();
        let mut outcomes = Vec::with_capacity(self.test_ids.len());
        for (labels, &id) in self.online_labels(method)?.iter().zip(&self.test_ids) {
            if labels.len() != PSEUDO_ONLINE_WINDOWS {
                return Err(Error::ShapeMismatch(format!("trial {id} has {} pseudo-online windows", labels.len())));
            }
            let o = score_trial(labels, &self.online_ends, n_windows)?;
            counts.add(o.kind);
            outcomes.push((id, o));
        }
        Ok((counts, outcomes))
    }
}

/// Bookkeeping for one (subject, fold) job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldRun {
    pub fold: CvFold,
    pub training_windows: usize,
    pub validation_windows: usize,
    pub model_seed: u64,
    pub training_runs: BTreeMap<ModelKind, usize>,
    pub fingerprints: BTreeMap<ModelKind, String>,
    pub reports: BTreeMap<ModelKind, TrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixResult {
    pub rows: Vec<ResultRow>,
    pub outcomes: Vec<OutcomeRow>,
    pub reports: Vec<MetricsReport>,
    pub folds: Vec<FoldRun>,
}

struct FoldOutput {
    run: FoldRun,
    rows: Vec<ResultRow>,
    outcomes: Vec<OutcomeRow>,
    reports: Vec<MetricsReport>,
}

pub fn run_matrix(dataset: &Dataset, cfg: &MatrixConfig) -> Result<MatrixResult> {
    run_matrix_with(dataset, cfg, &|_, _| Ok(()))
}

/// Runs every (subject, fold) job in parallel on the current rayon pool;
/// `on_fold` sees each fold's trained models (for saving).
pub fn run_matrix_with(
    dataset: &Dataset,
    cfg: &MatrixConfig,
    on_fold: &(dyn Fn(&CvFold, &FoldModels) -> Result<()> + Sync),
) -> Result<MatrixResult> {
    let pre = Preprocessor::new(dataset.fs)?;
    let jobs = fold_jobs(dataset, cfg)?;
    let outputs: Vec<FoldOutput> = jobs
        .into_par_iter()
        .map(|(s, f)| run_fold(&pre, s, f, cfg, on_fold))
        .collect::<Result<_>>()?;
    let mut out = MatrixResult {
        rows: Vec::new(),
        outcomes: Vec::new(),
        reports: Vec::new(),
        folds: Vec::new(),
    };
    for o in outputs {
        out.rows.extend(o.rows);
        out.outcomes.extend(o.outcomes);
        out.reports.extend(o.reports);
        out.folds.push(o.run);
    }
    Ok(out)
}

fn prepare(pre: &Preprocessor, subject: &Subject, ids: &[u32]) -> Result<Vec<PreparedTrial>> {
    ids.iter()
        .map(|&id| {
            let t = subject
                .trials()
                .find(|t| t.trial_id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("subject {} has no trial {id}", subject.id)))?;
            pre.prepare(t)
        })
        .collect()
}

fn selected_subjects<'a>(dataset: &'a Dataset, cfg: &MatrixConfig) -> Result<Vec<&'a Subject>> {
    match &cfg.subjects {
        None => Ok(dataset.subjects.iter().collect()),
        Some(ids) => ids
            .iter()
            .map(|id| {
                dataset
                    .subject(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown subject {id:?}")))
            })
            .collect(),
    }
}

fn fold_jobs<'a>(dataset: &'a Dataset, cfg: &MatrixConfig) -> Result<Vec<(&'a Subject, CvFold)>> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for s in selected_subjects(dataset, cfg)? {
        for f in make_folds(s, cfg.seed)? {
            jobs.push((s, f));
        }
    }
    Ok(jobs)
}

/// Trains every fold's base models without evaluating them.
pub fn train_folds(
    dataset: &Dataset,
    cfg: &MatrixConfig,
    on_fold: &(dyn Fn(&CvFold, &FoldModels) -> Result<()> + Sync),
) -> Result<Vec<FoldRun>> {
    let pre = Preprocessor::new(dataset.fs)?;
    fold_jobs(dataset, cfg)?
        .into_par_iter()
        .map(|(s, f)| {
            let (run, models) = train_fold(&pre, s, f, cfg)?;
            on_fold(&run.fold, &models)?;
            Ok(run)
        })
        .collect()
}

fn train_fold(pre: &Preprocessor, subject: &Subject, fold: CvFold, cfg: &MatrixConfig) -> Result<(FoldRun, FoldModels)> {
    let model_seed = derive_seed(cfg.seed, &[subject_seed_part(&subject.id), fold.fold_id as u64]);
    let (train_x, train_y) = {
        let trials = prepare(pre, subject, &fold.train)?;
        labelled_windows(&trials.iter().collect::<Vec<_>>())?
    };
    let (val_x, val_y) = {
        let trials = prepare(pre, subject, &fold.val)?;
        labelled_windows(&trials.iter().collect::<Vec<_>>())?
    };
    if train_x.len() != fold.train.len() * WINDOWS_PER_TRIAL {
        return Err(Error::ShapeMismatch(format!(
            "{} training windows for {} trials",
            train_x.len(),
            fold.train.len()
        )));
    }
    let kinds = cfg.kinds();
    let models = train_fold_models(&train_x, &train_y, &val_x, &val_y, &kinds, &cfg.pipeline, model_seed)?;
    let fingerprints = kinds
        .iter()
        .filter_map(|&k| models.fingerprint(k).map(|f| (k, f)))
        .collect();
    let run = FoldRun {
        fold,
        training_windows: train_x.len(),
        validation_windows: val_x.len(),
        model_seed,
        training_runs: models.training_runs.clone(),
        fingerprints,
        reports: models.reports.clone(),
    };
    Ok((run, models))
}

fn run_fold(
    pre: &Preprocessor,
    subject: &Subject,
    fold: CvFold,
    cfg: &MatrixConfig,
    on_fold: &(dyn Fn(&CvFold, &FoldModels) -> Result<()> + Sync),
) -> Result<FoldOutput> {
    let (run, models) = train_fold(pre, subject, fold, cfg)?;
    on_fold(&run.fold, &models)?;
    let fold = &run.fold;
    let probs = fold_probabilities(pre, subject, fold, &models, &cfg.kinds(), cfg.online)?;
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut reports = Vec::new();
    let row = |method: &Method, n: Option<usize>, metric: &str, value: f64| ResultRow {
        subject: subject.id.clone(),
        fold: fold.fold_id,
        method: method.name(),
        n_windows: n,
        metric: metric.into(),
        value,
    };
    for method in &cfg.methods {
        if cfg.offline {
            rows.push(row(method, None, "accuracy", probs.offline_accuracy(method)?));
        }
        if cfg.online {
            for &n in &cfg.windows {
                let (counts, trial_outcomes) = probs.pseudo_online(method, n)?;
                rows.push(row(method, Some(n), "twp", counts.twp()));
                rows.push(row(method, Some(n), "edr", counts.edr()));
                rows.push(row(method, Some(n), "ndr", counts.ndr()));
                for (id, o) in &trial_outcomes {
                    outcomes.push(OutcomeRow {
                        subject: subject.id.clone(),
                        fold: fold.fold_id,
                        method: method.name(),
                        n_windows: n,
                        trial_id: *id,
                        outcome: o.kind.as_str().into(),
                        detection_time: o.detection_time,
                    });
                }
                reports.push(MetricsReport {
                    subject_id: subject.id.clone(),
                    fold_id: fold.fold_id,
                    method: method.name(),
                    n_windows: n,
                    counts,
                    outcomes: trial_outcomes,
                });
            }
        }
    }
    Ok(FoldOutput {
        run,
        rows,
        outcomes,
        reports,
    })
}

/// Predicts every requested model on the fold's test trials, one trial at a
/// time to bound memory.
pub(crate) fn fold_probabilities(
    pre: &Preprocessor,
    subject: &Subject,
    fold: &CvFold,
    models: &FoldModels,
    kinds: &[ModelKind],
    online: bool,
) -> Result<FoldProbabilities> {
    let labelled = labelled_window_ends();
    let mut out = FoldProbabilities {
        test_ids: fold.test.clone(),
        offline_ends: labelled.iter().map(|e| e.0).collect(),
        offline_truth: labelled.iter().map(|e| e.1).collect(),
        online_ends: Vec::new(),
        offline: BTreeMap::new(),
        online: BTreeMap::new(),
    };
    for &id in &fold.test {
        let trial = prepare(pre, subject, &[id])?.pop().expect("one trial");
        let offline: Vec<_> = out
            .offline_ends
            .iter()
            .map(|&t| window_features(&trial, t))
            .collect::<Result<_>>()?;
        for &k in kinds {
            out.offline.entry(k).or_default().push(models.predict(k, &offline)?);
        }
        drop(offline);
        if online {
            let ends: Vec<f64> = slice_windows(&trial.raw, WINDOW_LENGTH_S, TEST_STRIDE_S)?
                .iter()
                .map(|w| w.end_time())
                .collect();
            if ends.len() != PSEUDO_ONLINE_WINDOWS {
                return Err(Error::ShapeMismatch(format!(
                    "trial {id} yields {} pseudo-online windows, expected {PSEUDO_ONLINE_WINDOWS}",
                    ends.len()
                )));
            }
            let grid: Vec<_> = ends.iter().map(|&t| window_features(&trial, t)).collect::<Result<_>>()?;
            for &k in kinds {
                out.online.entry(k).or_default().push(models.predict(k, &grid)?);
            }
            out.online_ends = ends;
        }
    }
    Ok(out)
}
