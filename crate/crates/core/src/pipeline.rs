//! Per-method processing chains from a trial epoch to window probabilities.
//!
//! * SVM: 0.3-5 Hz window -> xDAWN -> amplitude samples, plus raw-window band
//!   power, standardised.
//! * MLP and dummy: 0.3-5 Hz amplitude samples on every channel plus band
//!   power, standardised.
//! * EEGNet: 0.3-40 Hz window, z-scored per channel.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Trial, EPOCH_END_S, EPOCH_START_S};
use crate::dsp::{
    design_bandpass, epoch_trial, filter_forward, window_at, zscore_channels, Epoch, FilterCoeffs,
    FilterSpec, Window,
};
use crate::error::{Error, Result};
use crate::features::{
    apply_xdawn, assemble_features, extract_psd_features, extract_time_features, fit_xdawn, BandSet,
    Scaler, SpatialFilter, DEFAULT_COMPONENTS,
};
use crate::models::{
    eegnet_tensors, make_dummy, mlp_tensors, svm_tensors, train_eegnet, train_mlp, train_svm,
    write_model_files, Classifier, EegnetConfig, EegnetModel, MlpModel, ModelKind, ModelMetadata,
    NamedTensor, SvmConfig, SvmModel, TrainConfig, TrainReport, FORMAT_VERSION,
};

/// Training window end times for the rest class, seconds from onset.
pub const NEGATIVE_ENDS: [f64; 6] = [-3.0, -2.0, -1.5, -1.0, -0.8, -0.6];
/// Training window end times for the movement class.
pub const POSITIVE_ENDS: [f64; 6] = [0.04, 0.06, 0.08, 0.1, 0.12, 0.14];

/// The twelve labelled window ends used for training and offline testing.
pub fn labelled_window_ends() -> Vec<(f64, bool)> {
    NEGATIVE_ENDS
        .iter()
        .map(|&t| (t, false))
        .chain(POSITIVE_ENDS.iter().map(|&t| (t, true)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub svm: SvmConfig,
    pub eegnet: EegnetConfig,
    pub xdawn_components: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
            eegnet: EegnetConfig::default(),
            xdawn_components: DEFAULT_COMPONENTS,
        }
    }
}

/// One trial's canonical epoch, raw and through both band-pass filters.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub set_id: u32,
    pub trial_id: u32,
    pub raw: Epoch,
    pub mrcp: Epoch,
    pub broad: Epoch,
}

#[derive(Debug, Clone)]
pub struct Preprocessor {
    mrcp: FilterCoeffs,
    broad: FilterCoeffs,
}

impl Preprocessor {
    pub fn new(fs: f64) -> Result<Self> {
        Ok(Preprocessor {
            mrcp: design_bandpass(&FilterSpec::mrcp(fs))?,
            broad: design_bandpass(&FilterSpec::broadband(fs))?,
        })
    }

    pub fn prepare(&self, trial: &Trial) -> Result<PreparedTrial> {
        let raw = epoch_trial(trial, EPOCH_START_S, EPOCH_END_S)?;
        Ok(PreparedTrial {
            set_id: trial.set_id,
            trial_id: trial.trial_id,
            mrcp: filter_forward(&self.mrcp, &raw),
            broad: filter_forward(&self.broad, &raw),
            raw,
        })
    }
}

/// Everything any model needs from one window.
#[derive(Debug, Clone)]
pub struct WindowFeatures {
    pub end_time: f64,
    /// Low-pass window kept for the xDAWN path.
    pub mrcp: Window,
    /// Amplitude samples of all physical channels.
    pub time: Vec<f64>,
    /// Band power of all physical channels.
    pub psd: Vec<f64>,
    /// Z-scored broadband window, channel-major.
    pub eeg: Vec<f64>,
}

pub fn window_features(trial: &PreparedTrial, end_time: f64) -> Result<WindowFeatures> {
    let mrcp = window_at(&trial.mrcp, end_time)?;
    let raw = window_at(&trial.raw, end_time)?;
    let broad = window_at(&trial.broad, end_time)?;
    Ok(WindowFeatures {
        end_time,
        time: extract_time_features(&mrcp)?,
        psd: extract_psd_features(&raw, &BandSet::standard())?,
        eeg: zscore_channels(&broad).window.data().to_vec(),
        mrcp,
    })
}

fn mlp_vector(w: &WindowFeatures) -> Result<Vec<f64>> {
    let rows = w.mrcp.n_channels();
    Ok(assemble_features(&w.time, rows, &w.psd, rows)?.values)
}

fn svm_vector(xdawn: &SpatialFilter, w: &WindowFeatures) -> Result<Vec<f64>> {
    let virt = apply_xdawn(xdawn, &w.mrcp)?;
    let time = extract_time_features(&virt)?;
    Ok(assemble_features(&time, virt.n_channels(), &w.psd, w.mrcp.n_channels())?.values)
}

#[derive(Debug)]
pub struct SvmPipeline {
    pub xdawn: SpatialFilter,
    pub scaler: Scaler,
    pub model: SvmModel,
}

impl SvmPipeline {
    pub fn predict(&self, windows: &[WindowFeatures]) -> Result<Vec<f64>> {
        windows
            .iter()
            .map(|w| self.model.predict_proba(&self.scaler.apply(&svm_vector(&self.xdawn, w)?)?))
            .collect()
    }
}

/// Feature-vector network (trained MLP or untrained dummy) with its scaler.
#[derive(Debug)]
pub struct MlpPipeline {
    pub scaler: Scaler,
    pub model: MlpModel,
}

impl MlpPipeline {
    pub fn predict(&self, windows: &[WindowFeatures]) -> Result<Vec<f64>> {
        let x = windows
            .iter()
            .map(|w| self.scaler.apply(&mlp_vector(w)?))
            .collect::<Result<Vec<_>>>()?;
        self.model.predict_proba_batch(&x)
    }
}

#[derive(Debug)]
pub struct EegnetPipeline {
    pub model: EegnetModel,
}

impl EegnetPipeline {
    pub fn predict(&self, windows: &[WindowFeatures]) -> Result<Vec<f64>> {
        let x: Vec<Vec<f64>> = windows.iter().map(|w| w.eeg.clone()).collect();
        self.model.predict_proba_batch(&x)
    }
}

/// Base models trained once for a fold and shared by every method.
#[derive(Debug, Default)]
pub struct FoldModels {
    pub svm: Option<SvmPipeline>,
    pub mlp: Option<MlpPipeline>,
    pub eegnet: Option<EegnetPipeline>,
    pub dummy: Option<MlpPipeline>,
    /// Training report per network.
    pub reports: BTreeMap<ModelKind, TrainReport>,
    /// Number of times each base model was built.
    pub training_runs: BTreeMap<ModelKind, usize>,
}

impl FoldModels {
    pub fn kinds(&self) -> Vec<ModelKind> {
        let mut k = Vec::new();
        if self.svm.is_some() {
            k.push(ModelKind::Svm);
        }
        if self.mlp.is_some() {
            k.push(ModelKind::Mlp);
        }
        if self.eegnet.is_some() {
            k.push(ModelKind::Eegnet);
        }
        if self.dummy.is_some() {
            k.push(ModelKind::Dummy);
        }
        k
    }

    pub fn predict(&self, kind: ModelKind, windows: &[WindowFeatures]) -> Result<Vec<f64>> {
        let missing = || Error::InvalidArgument(format!("no {kind:?} model trained for this fold"));
        match kind {
            ModelKind::Svm => self.svm.as_ref().ok_or_else(missing)?.predict(windows),
            ModelKind::Mlp => self.mlp.as_ref().ok_or_else(missing)?.predict(windows),
            ModelKind::Eegnet => self.eegnet.as_ref().ok_or_else(missing)?.predict(windows),
            ModelKind::Dummy => self.dummy.as_ref().ok_or_else(missing)?.predict(windows),
        }
    }

    /// Serialised weights plus the fitted preprocessing of one model.
    pub fn tensors(&self, kind: ModelKind) -> Option<Vec<NamedTensor>> {
        let scaler_tensors = |s: &Scaler| {
            vec![
                NamedTensor::vector("scaler.mean", s.mean.iter().map(|&v| v as f32).collect()),
                NamedTensor::vector("scaler.std", s.std.iter().map(|&v| v as f32).collect()),
            ]
        };
        match kind {
            ModelKind::Svm => self.svm.as_ref().map(|p| {
                let mut t = svm_tensors(&p.model);
                t.push(NamedTensor {
                    name: "xdawn".into(),
                    shape: vec![p.xdawn.k(), p.xdawn.n_channels()],
                    data: p.xdawn.weights().iter().map(|&v| v as f32).collect(),
                });
                t.extend(scaler_tensors(&p.scaler));
                t
            }),
            ModelKind::Mlp | ModelKind::Dummy => {
                let p = if kind == ModelKind::Mlp { &self.mlp } else { &self.dummy };
                p.as_ref().map(|p| {
                    let mut t = mlp_tensors(&p.model);
                    t.extend(scaler_tensors(&p.scaler));
                    t
                })
            }
            ModelKind::Eegnet => self.eegnet.as_ref().map(|p| eegnet_tensors(&p.model)),
        }
    }

    /// SHA-256 over the exact `f64`/`f32` parameters of a model.
    pub fn fingerprint(&self, kind: ModelKind) -> Option<String> {
        let mut h = Sha256::new();
        h.update([kind.tag()]);
        match kind {
            ModelKind::Svm => {
                let p = self.svm.as_ref()?;
                for v in p.model.weights.iter().chain([&p.model.bias, &p.model.a, &p.model.b]) {
                    h.update(v.to_le_bytes());
                }
                for v in p.xdawn.weights().iter().chain(&p.scaler.mean).chain(&p.scaler.std) {
                    h.update(v.to_le_bytes());
                }
            }
            _ => {
                for t in self.tensors(kind)? {
                    h.update(t.name.as_bytes());
                    for v in t.data {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        }
        Some(hex::encode(h.finalize()))
    }

    /// Writes `<dir>/<prefix>_<kind>.bin` plus sidecars for every model.
    pub fn save(&self, dir: &Path, prefix: &str, provenance: &serde_json::Value, cfg: &PipelineConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for kind in self.kinds() {
            let tensors = self.tensors(kind).expect("kind listed as present");
            let seed = match kind {
                ModelKind::Mlp => self.mlp.as_ref().map(|p| p.model.seed),
                ModelKind::Dummy => self.dummy.as_ref().map(|p| p.model.seed),
                ModelKind::Eegnet => self.eegnet.as_ref().map(|p| p.model.seed),
                ModelKind::Svm => Some(cfg.svm.seed),
            }
            .unwrap_or(0);
            let meta = ModelMetadata {
                format_version: FORMAT_VERSION,
                kind,
                seed,
                config: serde_json::to_value(cfg).map_err(|e| Error::ModelFormat(e.to_string()))?,
                provenance: serde_json::json!({
                    "run": provenance,
                    "fingerprint": self.fingerprint(kind),
                    "training": self.reports.get(&kind),
                }),
            };
            let name = format!("{prefix}_{}.bin", format!("{kind:?}").to_lowercase());
            write_model_files(&dir.join(name), kind, &tensors, &meta)?;
        }
        Ok(())
    }
}

/// Deterministic per-purpose seed derived from a base seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Labelled training/validation windows for a group of trials.
pub fn labelled_windows(trials: &[&PreparedTrial]) -> Result<(Vec<WindowFeatures>, Vec<bool>)> {
    let ends = labelled_window_ends();
    let mut feats = Vec::with_capacity(trials.len() * ends.len());
    let mut labels = Vec::with_capacity(trials.len() * ends.len());
    for t in trials {
        for &(end, label) in &ends {
            feats.push(window_features(t, end)?);
            labels.push(label);
        }
    }
    Ok((feats, labels))
}

/// Trains the requested base models; networks stop early on `val`.
pub fn train_fold_models(
    train: &[WindowFeatures],
    train_labels: &[bool],
    val: &[WindowFeatures],
    val_labels: &[bool],
    kinds: &[ModelKind],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<FoldModels> {
    if train.len() != train_labels.len() || val.len() != val_labels.len() {
        return Err(Error::ShapeMismatch("windows and labels differ in length".into()));
    }
    let mut out = FoldModels::default();
    let needs = |k: ModelKind| kinds.contains(&k);
    let bump = |out: &mut FoldModels, k: ModelKind| *out.training_runs.entry(k).or_insert(0) += 1;

    if needs(ModelKind::Mlp) || needs(ModelKind::Dummy) {
        let x: Vec<Vec<f64>> = train.iter().map(mlp_vector).collect::<Result<_>>()?;
        let scaler = Scaler::fit(&x)?;
        if needs(ModelKind::Mlp) {
            let xs: Vec<Vec<f64>> = x.iter().map(|v| scaler.apply(v)).collect::<Result<_>>()?;
            let xv: Vec<Vec<f64>> = val
                .iter()
                .map(|w| scaler.apply(&mlp_vector(w)?))
                .collect::<Result<_>>()?;
            let tc = TrainConfig {
                seed: derive_seed(seed, &[ModelKind::Mlp.tag() as u64]),
                ..cfg.train.clone()
            };
            let model = train_mlp(&xs, train_labels, &xv, val_labels, &tc)?;
            if let Some(r) = &model.report {
                out.reports.insert(ModelKind::Mlp, r.clone());
            }
            bump(&mut out, ModelKind::Mlp);
            out.mlp = Some(MlpPipeline {
                scaler: scaler.clone(),
                model,
            });
        }
        if needs(ModelKind::Dummy) {
            let d = scaler.dim();
            bump(&mut out, ModelKind::Dummy);
            out.dummy = Some(MlpPipeline {
                scaler,
                model: make_dummy(d, derive_seed(seed, &[ModelKind::Dummy.tag() as u64])),
            });
        }
    }

    if needs(ModelKind::Svm) {
        let windows: Vec<Window> = train.iter().map(|w| w.mrcp.clone()).collect();
        let xdawn = fit_xdawn(&windows, train_labels, cfg.xdawn_components)?;
        let x: Vec<Vec<f64>> = train.iter().map(|w| svm_vector(&xdawn, w)).collect::<Result<_>>()?;
        let scaler = Scaler::fit(&x)?;
        let xs: Vec<Vec<f64>> = x.iter().map(|v| scaler.apply(v)).collect::<Result<_>>()?;
        let sc = SvmConfig {
            seed: derive_seed(seed, &[ModelKind::Svm.tag() as u64]),
            ..cfg.svm.clone()
        };
        let model = train_svm(&xs, train_labels, &sc)?;
        bump(&mut out, ModelKind::Svm);
        out.svm = Some(SvmPipeline { xdawn, scaler, model });
    }

    if needs(ModelKind::Eegnet) {
        let x: Vec<Vec<f64>> = train.iter().map(|w| w.eeg.clone()).collect();
        let xv: Vec<Vec<f64>> = val.iter().map(|w| w.eeg.clone()).collect();
        let tc = TrainConfig {
            seed: derive_seed(seed, &[ModelKind::Eegnet.tag() as u64]),
            ..cfg.train.clone()
        };
        let model = train_eegnet(&x, train_labels, &xv, val_labels, &cfg.eegnet, &tc)?;
        if let Some(r) = &model.report {
            out.reports.insert(ModelKind::Eegnet, r.clone());
        }
        bump(&mut out, ModelKind::Eegnet);
        out.eegnet = Some(EegnetPipeline { model });
    }
    Ok(out)
}
