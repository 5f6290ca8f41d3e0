//! Classifiers behind one probability-emitting contract: linear SVM, MLP,
//! EEGNet-style CNN and the untrained dummy, plus model persistence.

mod container;
mod eegnet;
mod mlp;
pub mod nn;
mod svm;

pub use container::{
    decode_container, eegnet_tensors, encode_container, load_model, mlp_tensors, save_model,
    svm_tensors, write_model_files, AnyModel, ModelMetadata, NamedTensor, FORMAT_VERSION, MAGIC,
};
pub use eegnet::{build_eegnet_net, train_eegnet, EegnetConfig, EegnetModel};
pub use mlp::{build_mlp_net, make_dummy, train_mlp, MlpModel, MLP_DROPOUT, MLP_HIDDEN, MLP_LEAKY_SLOPE};
pub use nn::{TrainConfig, TrainReport};
pub use svm::{
    fit_linear_svm, fit_platt, primal_objective, stratified_folds, train_svm, LinearFit, SvmConfig,
    SvmModel, Calibration, C_GRID,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Svm,
    Mlp,
    Eegnet,
    Dummy,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Svm => 0,
            ModelKind::Mlp => 1,
            ModelKind::Eegnet => 2,
            ModelKind::Dummy => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ModelKind::Svm,
            1 => ModelKind::Mlp,
            2 => ModelKind::Eegnet,
            3 => ModelKind::Dummy,
            _ => return None,
        })
    }

    /// One-letter code used in method names.
    pub fn code(self) -> char {
        match self {
            ModelKind::Svm => 'S',
            ModelKind::Mlp => 'M',
            ModelKind::Eegnet => 'E',
            ModelKind::Dummy => 'D',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputDescriptor {
    Features { len: usize },
    Windows { channels: usize, samples: usize },
}

impl InputDescriptor {
    pub fn len(&self) -> usize {
        match *self {
            InputDescriptor::Features { len } => len,
            InputDescriptor::Windows { channels, samples } => channels * samples,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inference contract shared by every model.
pub trait Classifier: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn input(&self) -> InputDescriptor;

    /// Movement probability per input; inputs are flat (`channels * samples`
    /// channel-major for windows).
    fn predict_proba_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>>;

    fn predict_proba(&self, input: &[f64]) -> Result<f64> {
        Ok(self.predict_proba_batch(&[input.to_vec()])?[0])
    }
}

impl Classifier for SvmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Svm
    }

    fn input(&self) -> InputDescriptor {
        InputDescriptor::Features {
            len: self.n_features(),
        }
    }

    fn predict_proba_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        inputs.iter().map(|v| SvmModel::predict_proba(self, v)).collect()
    }

    fn predict_proba(&self, input: &[f64]) -> Result<f64> {
        SvmModel::predict_proba(self, input)
    }
}

/// Packs flat inputs into an `f32` tensor with per-item shape `item`.
pub(crate) fn to_tensor(inputs: &[Vec<f64>], item: [usize; 3]) -> Result<Tensor<f32>> {
    let len: usize = item.iter().product();
    let mut data = Vec::with_capacity(inputs.len() * len);
    for v in inputs {
        if v.len() != len {
            return Err(Error::ShapeMismatch(format!("model expects {len} inputs, got {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        data.extend(v.iter().map(|&x| x as f32));
    }
    Ok(Tensor::from_vec([inputs.len(), item[0], item[1], item[2]], data))
}
