//! Sufficient-statistics test for a marginal benefit increase.
//!
//! Gains are `lhs - rhs` with
//! `lhs = η_{w,b} · (w*/b) · Λ` and `rhs = (dR/db) / (1/δ + R/b)`.
//! Setting `w*/b = Λ = 1` gives a lower bound on the gains.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rkd::{elasticity, RkdFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelfareInputs {
    /// Elasticity of reemployment wages with respect to the benefit.
    pub eta_wb: f64,
    pub dr_db: f64,
    pub r_over_b: f64,
    /// Monthly separation rate.
    pub delta: f64,
    pub w_star_over_b: f64,
    pub lambda_factor: f64,
}

impl Default for WelfareInputs {
    fn default() -> Self {
        WelfareInputs {
            eta_wb: 0.0,
            dr_db: 0.0,
            r_over_b: 0.0,
            delta: 0.03,
            w_star_over_b: 1.0,
            lambda_factor: 1.0,
        }
    }
}

impl WelfareInputs {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.eta_wb,
            self.dr_db,
            self.r_over_b,
            self.delta,
            self.w_star_over_b,
            self.lambda_factor,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return domain("welfare inputs must be finite");
        }
        if !(self.delta > 0.0) {
            return domain(format!("delta must be positive, got {}", self.delta));
        }
        if self.r_over_b < 0.0 {
            return domain("R/b must be non-negative");
        }
        if self.lambda_factor < 1.0 {
            return domain("lambda_factor is at least 1");
        }
        if !(self.w_star_over_b > 0.0) {
            return domain("w*/b must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareResult {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs`.
    pub gains: f64,
    /// Delta-method standard error, treating the two fits as independent.
    pub se_gains: Option<f64>,
}

pub fn calibrate_formula(inp: &WelfareInputs) -> Result<WelfareResult> {
    inp.validate()?;
    let lhs = inp.eta_wb * inp.w_star_over_b * inp.lambda_factor;
    let rhs = inp.dr_db / (1.0 / inp.delta + inp.r_over_b);
    Ok(WelfareResult { lhs, rhs, gains: lhs - rhs, se_gains: None })
}

fn kink_benefit(wage_fit: &RkdFit, ui_fit: &RkdFit) -> Result<f64> {
    let scale = wage_fit.kink_point.abs().max(ui_fit.kink_point.abs()).max(1.0);
    if (wage_fit.kink_point - ui_fit.kink_point).abs() > 1e-9 * scale {
        return Err(Error::Mismatch(format!(
            "wage fit at kink {} but UI fit at kink {}",
            wage_fit.kink_point, ui_fit.kink_point
        )));
    }
    if !wage_fit.log_outcome {
        return Err(Error::Mismatch("wage fit must be on the log reemployment wage".into()));
    }
    if ui_fit.log_outcome {
        return Err(Error::Mismatch("UI fit must be on total UI paid in levels".into()));
    }
    let b = match (wage_fit.b_at_kink, ui_fit.b_at_kink) {
        (Some(a), Some(c)) if (a - c).abs() > 1e-9 * a.abs().max(1.0) => {
            return Err(Error::Mismatch(format!(
                "fits disagree on the benefit at the kink: {a} vs {c}"
            )))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return domain("neither fit records the benefit at the kink"),
    };
    if !(b > 0.0) {
        return domain("benefit at the kink must be positive");
    }
    Ok(b)
}

/// Inputs implied by a log-wage fit and a total-UI fit at the same kink.
pub fn inputs_from_fits(wage_fit: &RkdFit, ui_fit: &RkdFit, delta: f64) -> Result<WelfareInputs> {
    let b = kink_benefit(wage_fit, ui_fit)?;
    Ok(WelfareInputs {
        eta_wb: elasticity(wage_fit.alpha, b, None, true)?,
        dr_db: ui_fit.alpha,
        r_over_b: ui_fit.mean_outcome / b,
        delta,
        ..WelfareInputs::default()
    })
}

pub fn calibrate_from_fits(wage_fit: &RkdFit, ui_fit: &RkdFit, delta: f64) -> Result<WelfareResult> {
    let b = kink_benefit(wage_fit, ui_fit)?;
    let inp = inputs_from_fits(wage_fit, ui_fit, delta)?;
    let mut out = calibrate_formula(&inp)?;
    let d_lhs = b * wage_fit.se_alpha;
    let d_rhs = ui_fit.se_alpha / (1.0 / delta + inp.r_over_b);
    out.se_gains = Some(d_lhs.hypot(d_rhs));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains(eta: f64, dr: f64, rb: f64) -> WelfareResult {
        calibrate_formula(&WelfareInputs { eta_wb: eta, dr_db: dr, r_over_b: rb, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn headline_cells() {
        let r = gains(0.37, 6.53, 6.46);
        assert!((r.rhs - 0.16).abs() <= 0.01 && (r.gains - 0.21).abs() <= 0.01);
        assert!((gains(0.23, 6.20, 6.46).gains - 0.07).abs() <= 0.01);
        assert_eq!(gains(0.0, 0.0, 6.46).gains, 0.0);
        assert_eq!(r.gains, r.lhs - r.rhs);
    }

    #[test]
    fn zero_separation_rejected() {
        let inp = WelfareInputs { delta: 0.0, ..Default::default() };
        assert!(matches!(calibrate_formula(&inp), Err(Error::Domain(_))));
        let inp = WelfareInputs { lambda_factor: 0.5, ..Default::default() };
        assert!(calibrate_formula(&inp).is_err());
    }
}
