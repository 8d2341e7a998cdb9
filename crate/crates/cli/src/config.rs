use adp_core::adp::Horizon;
use adp_core::stats::{CHI2_P_FLOOR, KS_CRITICAL_SCALE};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub ks_critical_scale: f64,
    pub chi2_p_floor: f64,
    pub n_samples: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ks_critical_scale: KS_CRITICAL_SCALE,
            chi2_p_floor: CHI2_P_FLOOR,
            n_samples: 100_000,
        }
    }
}

/// Settings of one invocation, written next to its outputs. The worker
/// thread count and output directory are left out so that the file is
/// identical across machines and thread counts.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_bar: Option<f64>,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Horizon>,
    pub seed: u64,
    pub replications: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
}
