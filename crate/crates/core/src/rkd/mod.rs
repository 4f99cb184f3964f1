//! Regression kink design: local polynomial estimation of the change in
//! slope of an outcome at a known kink of the treatment rule.
//!
//! With `v = w - k` and `D = 1{v >= 0}`, the outcome is regressed on
//! `1, v, v·D` (plus `v², v²·D` for quadratic fits), controls and fixed
//! effects, inside `|v| <= h`. The coefficient on `v·D` is the outcome's
//! slope change `ν₁`; the effect is `α = ν₁/π₁`, where `π₁` is the slope
//! change of the treatment, either known (sharp) or estimated in a first
//! stage that instruments the treatment with `v·D` (fuzzy).

mod bandwidth;
mod data;
mod diagnostics;
mod estimate;
mod ols;
mod spells;

use serde::{Deserialize, Serialize};

pub use bandwidth::{boundary_kernel_constants, fg_bandwidth, mse_optimal_bandwidth, KernelConstants};
pub use data::{FixedEffect, RkdData};
pub use diagnostics::{binned_means, density_kink_check, trim_percentiles, Bin, DensityCheck};
pub use estimate::{
    covariate_smoothness, estimate, fuzzy_rkd, pooled_running, pooled_two_kink_rkd, sharp_rkd,
    PooledKinks,
};
pub use spells::{duration_group, spell_data, SpellDataReport, SpellOutcome, COVARIATE_NAMES, FIXED_EFFECT_NAMES};

use crate::error::{domain, Result};

/// Local polynomial order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolyOrder {
    Linear,
    Quadratic,
}

impl PolyOrder {
    pub fn degree(self) -> usize {
        match self {
            PolyOrder::Linear => 1,
            PolyOrder::Quadratic => 2,
        }
    }

    pub fn from_degree(p: usize) -> Result<Self> {
        match p {
            1 => Ok(PolyOrder::Linear),
            2 => Ok(PolyOrder::Quadratic),
            _ => domain(format!("polynomial order must be 1 or 2, got {p}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Uniform,
    Triangular,
}

impl Kernel {
    /// Weight at `t = |v|/h`, zero outside `[0, 1]`.
    pub fn weight(self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self {
            Kernel::Uniform => 1.0,
            Kernel::Triangular => 1.0 - t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    /// Known slope change of the treatment at the kink.
    Sharp { slope_change: f64 },
    Fuzzy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed(f64),
    /// Rule-of-thumb plug-in with a global polynomial pilot.
    Fg,
    /// Simplified MSE-optimal plug-in for the slope change.
    Mse,
}

/// Everything that defines one kink regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RkdSpec {
    pub kink_point: f64,
    pub poly_order: PolyOrder,
    pub method: Method,
    pub bandwidth: Bandwidth,
    pub kernel: Kernel,
    /// Names of continuous controls in the data.
    #[serde(default)]
    pub controls: Vec<String>,
    /// Names of categorical controls, expanded to dummies.
    #[serde(default)]
    pub fixed_effects: Vec<String>,
    /// Admissible running-variable range, applied before the bandwidth.
    #[serde(default)]
    pub sample_window: Option<(f64, f64)>,
    #[serde(default = "default_weak_f")]
    pub weak_f_threshold: f64,
    /// Treatment level at the kink, used for elasticities.
    #[serde(default)]
    pub benefit_at_kink: Option<f64>,
    /// Whether the outcome is already in logs.
    #[serde(default)]
    pub log_outcome: bool,
}

fn default_weak_f() -> f64 {
    10.0
}

impl RkdSpec {
    /// Linear, uniform-kernel spec with no controls.
    pub fn new(kink_point: f64, method: Method, bandwidth: Bandwidth) -> Self {
        RkdSpec {
            kink_point,
            poly_order: PolyOrder::Linear,
            method,
            bandwidth,
            kernel: Kernel::Uniform,
            controls: Vec::new(),
            fixed_effects: Vec::new(),
            sample_window: None,
            weak_f_threshold: default_weak_f(),
            benefit_at_kink: None,
            log_outcome: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kink_point.is_finite() {
            return domain("kink point must be finite");
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return domain(format!("fixed bandwidth must be positive, got {h}"));
            }
        }
        if let Method::Sharp { slope_change } = self.method {
            if slope_change == 0.0 || !slope_change.is_finite() {
                return domain("known slope change must be finite and non-zero");
            }
        }
        if let Some((lo, hi)) = self.sample_window {
            if !(lo < hi) {
                return domain("sample window must have lo < hi");
            }
        }
        Ok(())
    }
}

/// A named coefficient with its robust standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkdFit {
    pub kink_point: f64,
    pub poly_order: PolyOrder,
    pub kernel: Kernel,
    pub fuzzy: bool,
    /// Slope change of the outcome (reduced form).
    pub nu1: f64,
    pub se_nu1: f64,
    /// Slope change of the treatment; known for sharp fits.
    pub pi1: f64,
    pub se_pi1: Option<f64>,
    pub alpha: f64,
    pub se_alpha: f64,
    pub n_used: usize,
    pub h_used: f64,
    pub mean_outcome: f64,
    pub first_stage_f: Option<f64>,
    pub weak_instrument: bool,
    pub b_at_kink: Option<f64>,
    pub log_outcome: bool,
    pub elasticity: Option<f64>,
    /// Rows removed because their fixed-effect level was a singleton.
    pub n_singletons_dropped: usize,
    /// Censored spells excluded from the data before fitting.
    pub n_censored_excluded: usize,
    /// Main-equation coefficients (outcome equation, or second stage).
    pub coefficients: Vec<Coefficient>,
}

/// `α·b/Ȳ`, or `α·b` when the outcome is in logs.
pub fn elasticity(alpha: f64, b_at_kink: f64, mean_outcome: Option<f64>, log_outcome: bool) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(0.0);
    }
    if log_outcome {
        return Ok(alpha * b_at_kink);
    }
    match mean_outcome {
        Some(m) if m > 0.0 => Ok(alpha * b_at_kink / m),
        Some(m) => domain(format!("level elasticity needs a positive mean outcome, got {m}")),
        None => domain("level elasticity needs the mean outcome"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elasticity_examples() {
        assert!((elasticity(6.53, 400.0, Some(2585.57), false).unwrap() - 1.01).abs() < 0.005);
        assert!((elasticity(0.0009, 400.0, None, true).unwrap() - 0.36).abs() < 1e-12);
        assert_eq!(elasticity(0.0, 400.0, Some(-3.0), false).unwrap(), 0.0);
        assert!(elasticity(1.0, 400.0, Some(0.0), false).is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let mut s = RkdSpec::new(963.0, Method::Sharp { slope_change: -0.4155 }, Bandwidth::Fixed(200.0));
        s.sample_window = Some((632.1, f64::MAX));
        let j = serde_json::to_string(&s).unwrap();
        let back: RkdSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(s, back);
    }
}
