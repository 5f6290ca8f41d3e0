//! Streaming postprocessing: a detection needs `n_required` consecutive
//! movement windows, and the detector latches after the first one.

use serde::Serialize;

use crate::ensemble::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionEvent {
    /// End time of the window that completed the run, seconds from onset.
    pub time: f64,
    pub run_length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    n_required: usize,
    consecutive: usize,
    fired: bool,
    last_window_end: Option<f64>,
}

impl Detector {
    pub fn new(n_required: usize) -> Result<Self> {
        if n_required == 0 {
            return Err(Error::InvalidArgument("detector needs n_required >= 1".into()));
        }
        Ok(Detector {
            n_required,
            consecutive: 0,
            fired: false,
            last_window_end: None,
        })
    }

    pub fn n_required(&self) -> usize {
        self.n_required
    }

    pub fn consecutive(&self) -> usize {
        self.consecutive
    }

    pub fn fired(&self) -> bool {
        self.fired
    }

    pub fn last_window_end(&self) -> Option<f64> {
        self.last_window_end
    }

    /// Feeds one classified window. Returns the event when this window
    /// completes the run; pushes after the latch are ignored.
    pub fn push(&mut self, label: Label, window_end: f64) -> Result<Option<DetectionEvent>> {
        if let Some(prev) = self.last_window_end {
            if !(window_end > prev) {
                return Err(Error::NonMonotoneTime {
                    previous: prev,
                    got: window_end,
                });
            }
        }
        self.last_window_end = Some(window_end);
        if self.fired {
            return Ok(None);
        }
        match label {
            Label::Movement => self.consecutive += 1,
            Label::Rest => self.consecutive = 0,
        }
        if self.consecutive >= self.n_required {
            self.fired = true;
            self.consecutive = 0;
            return Ok(Some(DetectionEvent {
                time: window_end,
                run_length: self.n_required,
            }));
        }
        Ok(None)
    }

    pub fn reset(&mut self) {
        self.consecutive = 0;
        self.fired = false;
        self.last_window_end = None;
    }

    /// Runs a fresh detector over a labelled, time-ordered sequence.
    pub fn first_detection(
        n_required: usize,
        labels: impl IntoIterator<Item = (Label, f64)>,
    ) -> Result<Option<DetectionEvent>> {
        let mut d = Detector::new(n_required)?;
        for (label, t) in labels {
            if let Some(ev) = d.push(label, t)? {
                return Ok(Some(ev));
            }
        }
        Ok(None)
    }
}
