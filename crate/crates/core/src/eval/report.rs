use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// One line of `results.csv`; offline accuracy rows have no window count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub subject: String,
    pub fold: u32,
    pub method: String,
    pub n_windows: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// One line of `outcomes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub subject: String,
    pub fold: u32,
    pub method: String,
    pub n_windows: usize,
    pub trial_id: u32,
    pub outcome: String,
    pub detection_time: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ResultRecord {
    subject: String,
    fold: u32,
    method: String,
    n_windows: Option<usize>,
    metric: String,
    value: f64,
    config_fingerprint: String,
}

#[derive(Serialize)]
struct OutcomeRecord<'a> {
    subject: &'a str,
    fold: u32,
    method: &'a str,
    n_windows: usize,
    trial_id: u32,
    outcome: &'a str,
    detection_time: Option<f64>,
    config_fingerprint: &'a str,
}

/// SHA-256 of the JSON serialisation.
pub fn config_fingerprint(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// SHA-256 over channel layout, trial identity and every sample.
pub fn dataset_digest(d: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(d.fs.to_le_bytes());
    for name in d.channel_set.names() {
        h.update(name.as_bytes());
        h.update([0]);
    }
    for s in &d.subjects {
        h.update(s.id.as_bytes());
        h.update([0]);
        for set in &s.sets {
            for t in &set.trials {
                h.update(set.id.to_le_bytes());
                h.update(t.trial_id.to_le_bytes());
                h.update((t.onset_index as u64).to_le_bytes());
                for v in t.samples() {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    hex::encode(h.finalize())
}

fn write_records<R: Serialize>(path: &Path, records: impl Iterator<Item = R>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in records {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow], fingerprint: &str) -> Result<()> {
    if rows.is_empty() {
        return write_header(path, "subject,fold,method,n_windows,metric,value,config_fingerprint");
    }
    write_records(
        path,
        rows.iter().map(|r| ResultRecord {
            subject: r.subject.clone(),
            fold: r.fold,
            method: r.method.clone(),
            n_windows: r.n_windows,
            metric: r.metric.clone(),
            value: r.value,
            config_fingerprint: fingerprint.into(),
        }),
    )
}

pub fn write_outcomes_csv(path: &Path, rows: &[OutcomeRow], fingerprint: &str) -> Result<()> {
    if rows.is_empty() {
        return write_header(
            path,
            "subject,fold,method,n_windows,trial_id,outcome,detection_time,config_fingerprint",
        );
    }
    write_records(
        path,
        rows.iter().map(|r| OutcomeRecord {
            subject: &r.subject,
            fold: r.fold,
            method: &r.method,
            n_windows: r.n_windows,
            trial_id: r.trial_id,
            outcome: &r.outcome,
            detection_time: r.detection_time,
            config_fingerprint: fingerprint,
        }),
    )
}

fn write_header(path: &Path, header: &str) -> Result<()> {
    std::fs::write(path, format!("{header}\n")).map_err(|e| Error::io(path, e))
}

/// Rows plus the fingerprint they were written with.
pub fn read_results_csv(path: &Path) -> Result<(Vec<ResultRow>, Option<String>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut rows = Vec::new();
    let mut fingerprint = None;
    for rec in r.deserialize::<ResultRecord>() {
        let rec = rec.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        match &fingerprint {
            None => fingerprint = Some(rec.config_fingerprint),
            Some(f) if *f != rec.config_fingerprint => {
                return Err(Error::Manifest(format!("{} mixes config fingerprints", path.display())))
            }
            _ => {}
        }
        rows.push(ResultRow {
            subject: rec.subject,
            fold: rec.fold,
            method: rec.method,
            n_windows: rec.n_windows,
            metric: rec.metric,
            value: rec.value,
        });
    }
    Ok((rows, fingerprint))
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
