//! Product-of-probabilities fusion with a `0.5^n` decision boundary.
//!
//! Multiplying `n` member probabilities and comparing against `0.5^n` is the
//! same as asking whether their geometric mean exceeds 0.5, so ensembles of
//! different sizes share one operating point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Member probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
/// multiplication.
pub const PROB_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Rest,
    Movement,
}

impl Label {
    pub fn is_movement(self) -> bool {
        self == Label::Movement
    }
}

impl From<bool> for Label {
    fn from(movement: bool) -> Self {
        if movement {
            Label::Movement
        } else {
            Label::Rest
        }
    }
}

/// Product of member probabilities, members kept for the audit log.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedScore {
    pub value: f64,
    pub members: Vec<f64>,
}

impl FusedScore {
    pub fn n(&self) -> usize {
        self.members.len()
    }
}

pub fn fuse(probs: &[f64]) -> Result<FusedScore> {
    if probs.is_empty() {
        return Err(Error::Empty("ensemble member probabilities".into()));
    }
    if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::ProbabilityOutOfRange(bad));
    }
    let value = probs
        .iter()
        .map(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
        .product();
    Ok(FusedScore {
        value,
        members: probs.to_vec(),
    })
}

pub fn threshold(n: usize) -> f64 {
    0.5f64.powi(n as i32)
}

/// Movement iff the fused value is strictly above `0.5^n`.
pub fn decide(score: &FusedScore, n: usize) -> Result<Label> {
    if n == 0 || n != score.n() {
        return Err(Error::MemberCountMismatch {
            expected: score.n(),
            got: n,
        });
    }
    Ok(Label::from(score.value > threshold(n)))
}

/// `fuse` followed by `decide` with `n` = member count.
pub fn classify(probs: &[f64]) -> Result<Label> {
    let s = fuse(probs)?;
    decide(&s, s.n())
}
