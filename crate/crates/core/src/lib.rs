//! Asynchronous detection of self-initiated movement onsets from multichannel
//! EEG.
//!
//! The pipeline runs trial epochs through causal band-pass filters, cuts 1 s
//! sliding windows, classifies each window with an SVM, an MLP and an
//! EEGNet-style CNN, fuses member probabilities by their product against a
//! `0.5^n` boundary, and requires `N` consecutive positive windows before
//! emitting a detection. Evaluation covers window-level (offline) accuracy and
//! pseudo-online trial replay scored by trial-wise performance and early
//! detection rate.

pub mod data;
pub mod dsp;
pub mod error;
pub mod detector;
pub mod ensemble;
pub mod features;
pub mod models;
pub mod eval;
pub mod pipeline;

pub use error::{Error, Result};
