//! Training objectives.
//!
//! Enhancement is trained with `WSDR + CMS + MRS`; each inversion task with
//! `(1 - PC) + alpha * RMSE`. Every loss exists twice: a graph builder used
//! during training and a plain function over waveforms or matrices.

mod si_task;
mod spectral;
mod wsdr;

pub use si_task::{si_task_graph, si_task_loss, si_task_terms, SiTaskTerms};
pub use spectral::{cms_graph, cms_loss, mrs_graph, mrs_loss, SpectralTarget};
pub use wsdr::{wsdr_graph, wsdr_loss, wsdr_terms};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// How the L1 distance between two complex spectra is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ComplexL1 {
    /// `|re_a - re_b| + |im_a - im_b|`.
    #[default]
    Componentwise,
    /// `|a - b|`.
    Modulus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha_si: f64,
    pub mrs_fft_sizes: Vec<usize>,
    pub pc_epsilon: f64,
    pub complex_l1: ComplexL1,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_si: 0.2,
            mrs_fft_sizes: vec![256, 512, 1024],
            pc_epsilon: 1e-8,
            complex_l1: ComplexL1::Componentwise,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_si >= 0.0) {
            return Err(Error::InvalidInput("alpha_si must be >= 0".into()));
        }
        if self.mrs_fft_sizes.is_empty() {
            return Err(Error::InvalidInput("at least one MRS fft size".into()));
        }
        for w in self.mrs_fft_sizes.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidInput("MRS fft sizes must increase".into()));
            }
        }
        if self.mrs_fft_sizes.iter().any(|n| !n.is_power_of_two() || *n < 4) {
            return Err(Error::InvalidInput("MRS fft sizes must be powers of two".into()));
        }
        if !(self.pc_epsilon > 0.0) {
            return Err(Error::InvalidInput("pc_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn largest_mrs_window(&self) -> usize {
        self.mrs_fft_sizes.last().copied().unwrap_or(0)
    }
}

/// Per-step loss breakdown; absent components were not computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wsdr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub si_task_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub si_task_b: Option<f64>,
    pub total: f64,
    /// Per-channel PC over the ten track channels, when inversion ran.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pc: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rmse: Vec<f64>,
}

impl LossReport {
    pub fn se_total(&self) -> Option<f64> {
        Some(self.wsdr? + self.cms? + self.mrs?)
    }

    pub fn si_total(&self) -> Option<f64> {
        Some(self.si_task_a? + self.si_task_b?)
    }
}

/// Unweighted sum of the components a scenario trains on.
pub fn compose_total(report: &LossReport, scenario: Scenario) -> Result<f64> {
    let missing = |what: &str| {
        Error::InvalidInput(format!("{scenario} needs the {what} loss components"))
    };
    let mut total = 0.0;
    if scenario.uses_se_loss() {
        total += report.se_total().ok_or_else(|| missing("enhancement"))?;
    }
    if scenario.uses_si_loss() {
        total += report.si_total().ok_or_else(|| missing("inversion"))?;
    }
    Ok(total)
}
