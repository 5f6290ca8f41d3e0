//! Binary weight container plus JSON sidecar.
//!
//! Layout (little endian): magic `MVDM`, `u16` format version, `u8` kind tag,
//! `u8` reserved, `u32` tensor count, then per tensor a `u16` name length,
//! the UTF-8 name, a `u8` rank and `u32` dims; finally every tensor's `f32`
//! values in table order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eegnet::{build_eegnet_net, EegnetConfig, EegnetModel};
use super::mlp::{build_mlp_net, MlpModel};
use super::svm::SvmModel;
use super::{Classifier, InputDescriptor, ModelKind};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MVDM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn vector(name: impl Into<String>, data: Vec<f32>) -> Self {
        NamedTensor {
            name: name.into(),
            shape: vec![data.len()],
            data,
        }
    }
}

pub fn encode_container(kind: ModelKind, tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind.tag());
    out.push(0);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::ModelFormat(format!("tensor {} shape does not match data", t.name)));
        }
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::ModelFormat(format!("tensor name too long: {}", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFormat("truncated model container".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<(ModelKind, Vec<NamedTensor>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let tag = r.u8()?;
    let kind = ModelKind::from_tag(tag).ok_or_else(|| Error::ModelFormat(format!("unknown kind tag {tag}")))?;
    r.u8()?;
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::ModelFormat("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut tensors = Vec::with_capacity(table.len());
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::ModelFormat("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat("trailing bytes after tensor data".into()));
    }
    Ok((kind, tensors))
}

/// Sidecar metadata written next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u16,
    pub kind: ModelKind,
    pub seed: u64,
    pub config: serde_json::Value,
    pub provenance: serde_json::Value,
}

#[derive(Debug)]
pub enum AnyModel {
    Svm(SvmModel),
    Mlp(MlpModel),
    Eegnet(EegnetModel),
}

impl AnyModel {
    pub fn as_classifier(&self) -> &dyn Classifier {
        match self {
            AnyModel::Svm(m) => m,
            AnyModel::Mlp(m) => m,
            AnyModel::Eegnet(m) => m,
        }
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        match self {
            AnyModel::Svm(m) => svm_tensors(m),
            AnyModel::Mlp(m) => mlp_tensors(m),
            AnyModel::Eegnet(m) => eegnet_tensors(m),
        }
    }

    pub fn from_tensors(kind: ModelKind, tensors: Vec<NamedTensor>, seed: u64) -> Result<Self> {
        let get = |name: &str| -> Result<&NamedTensor> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::ModelFormat(format!("missing tensor {name}")))
        };
        let rest = |tensors: &[NamedTensor]| -> Vec<(String, Vec<f32>)> {
            tensors[1..].iter().map(|t| (t.name.clone(), t.data.clone())).collect()
        };
        match kind {
            ModelKind::Svm => {
                let cal = &get("calibration")?.data;
                if cal.len() != 2 {
                    return Err(Error::ModelFormat("calibration tensor needs 2 values".into()));
                }
                Ok(AnyModel::Svm(SvmModel {
                    weights: get("weights")?.data.iter().map(|&v| v as f64).collect(),
                    bias: *get("bias")?.data.first().unwrap_or(&0.0) as f64,
                    a: cal[0] as f64,
                    b: cal[1] as f64,
                    c: *get("c")?.data.first().unwrap_or(&0.0) as f64,
                    cv_accuracy: Vec::new(),
                    fold_fits: 0,
                }))
            }
            ModelKind::Mlp | ModelKind::Dummy => {
                let arch = &get("arch")?.data;
                let n = *arch.first().ok_or_else(|| Error::ModelFormat("empty arch".into()))? as usize;
                let mut net = build_mlp_net(n, seed);
                net.import_state(&rest(&tensors)).map_err(Error::ModelFormat)?;
                Ok(AnyModel::Mlp(MlpModel::from_net(kind, n, seed, net)))
            }
            ModelKind::Eegnet => {
                let cfg = EegnetConfig::from_arch(&get("arch")?.data)?;
                let mut net = build_eegnet_net(&cfg, seed)?;
                net.import_state(&rest(&tensors)).map_err(Error::ModelFormat)?;
                let model = EegnetModel::new(cfg, seed)?;
                *model.net.lock().unwrap() = net;
                Ok(AnyModel::Eegnet(model))
            }
        }
    }
}

pub fn svm_tensors(m: &SvmModel) -> Vec<NamedTensor> {
    vec![
        NamedTensor::vector("weights", m.weights.iter().map(|&v| v as f32).collect()),
        NamedTensor::vector("bias", vec![m.bias as f32]),
        NamedTensor::vector("calibration", vec![m.a as f32, m.b as f32]),
        NamedTensor::vector("c", vec![m.c as f32]),
    ]
}

pub fn mlp_tensors(m: &MlpModel) -> Vec<NamedTensor> {
    let mut v = vec![NamedTensor::vector("arch", vec![m.n_features as f32])];
    v.extend(m.export_state().into_iter().map(|(n, d)| NamedTensor::vector(n, d)));
    v
}

pub fn eegnet_tensors(m: &EegnetModel) -> Vec<NamedTensor> {
    let mut v = vec![NamedTensor::vector("arch", m.config.to_arch())];
    v.extend(m.export_state().into_iter().map(|(n, d)| NamedTensor::vector(n, d)));
    v
}

impl Classifier for AnyModel {
    fn kind(&self) -> ModelKind {
        self.as_classifier().kind()
    }

    fn input(&self) -> InputDescriptor {
        self.as_classifier().input()
    }

    fn predict_proba_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.as_classifier().predict_proba_batch(inputs)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes `path` (weights) and `path.json` (metadata).
pub fn save_model(model: &AnyModel, path: &Path, meta: &ModelMetadata) -> Result<()> {
    write_model_files(path, model.kind(), &model.to_tensors(), meta)
}

/// Writes a container for `tensors` plus the sidecar.
pub fn write_model_files(path: &Path, kind: ModelKind, tensors: &[NamedTensor], meta: &ModelMetadata) -> Result<()> {
    let bytes = encode_container(kind, tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(meta).map_err(|e| Error::ModelFormat(e.to_string()))?;
    text.push('\n');
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_model(path: &Path) -> Result<(AnyModel, ModelMetadata)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: ModelMetadata = serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let (kind, tensors) = decode_container(&bytes)?;
    if kind != meta.kind {
        return Err(Error::ModelFormat(format!("container kind {kind:?}, sidecar {:?}", meta.kind)));
    }
    Ok((AnyModel::from_tensors(kind, tensors, meta.seed)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_dummy, SvmModel};

    fn meta(kind: ModelKind, seed: u64) -> ModelMetadata {
        ModelMetadata {
            format_version: FORMAT_VERSION,
            kind,
            seed,
            config: serde_json::json!({"note": "test"}),
            provenance: serde_json::json!({}),
        }
    }

    fn inputs(n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..d).map(|j| ((i * d + j) as f64 * 0.713).sin()).collect())
            .collect()
    }

    #[test]
    fn round_trips_every_kind() {
        let dir = tempfile::tempdir().unwrap();
        let svm = AnyModel::Svm(SvmModel {
            weights: vec![0.5, -0.25, 1.5],
            bias: 0.125,
            a: -2.0,
            b: 0.0,
            c: 0.01,
            cv_accuracy: vec![],
            fold_fits: 0,
        });
        let dummy = AnyModel::Mlp(make_dummy(3, 5));
        let eeg = AnyModel::Eegnet(
            EegnetModel::new(
                EegnetConfig {
                    channels: 2,
                    samples: 64,
                    ..EegnetConfig::default()
                },
                2,
            )
            .unwrap(),
        );
        for (i, (model, x)) in [(svm, inputs(10, 3)), (dummy, inputs(10, 3)), (eeg, inputs(4, 128))]
            .into_iter()
            .enumerate()
        {
            let path = dir.path().join(format!("m{i}.bin"));
            save_model(&model, &path, &meta(model.kind(), i as u64)).unwrap();
            let (back, m) = load_model(&path).unwrap();
            assert_eq!(back.kind(), model.kind());
            assert_eq!(m.kind, model.kind());
            let a = model.predict_proba_batch(&x).unwrap();
            let b = back.predict_proba_batch(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-6, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let t = vec![NamedTensor::vector("w", vec![1.0, 2.0])];
        let bytes = encode_container(ModelKind::Svm, &t).unwrap();
        let (k, back) = decode_container(&bytes).unwrap();
        assert_eq!((k, back), (ModelKind::Svm, t));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_container(&bad).is_err());
        assert!(decode_container(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_container(&extra).is_err());
        let mut tag = bytes;
        tag[6] = 42;
        assert!(decode_container(&tag).is_err());
    }
}
