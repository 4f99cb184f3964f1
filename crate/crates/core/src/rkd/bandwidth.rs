//! Plug-in bandwidths for the slope change at the kink.
//!
//! Both selectors fit a global polynomial pilot of order `p + 3` on each
//! side of the kink and use one-sided (boundary) equivalent-kernel constants
//! for the first derivative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ols::weighted_ls;
use super::{Kernel, RkdData, RkdSpec};
use crate::error::{domain, Error, Result};
use crate::numerics::GaussLegendre;

/// Order of the derivative being estimated.
const DERIV: usize = 1;
const MIN_SIDE: usize = 20;

/// Moments of the one-sided equivalent kernel on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    /// `∫ K*²`.
    pub variance: f64,
    /// `∫ t^{p+1} K*`.
    pub bias: f64,
    /// Rule-of-thumb multiplier `[((p+1)!)² (2ν+1) V / (2(p+1-ν) B²)]^{1/(2p+3)}`.
    pub scale: f64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Constants for local polynomials of order `p` estimating derivative `nu`
/// at a boundary point.
pub fn boundary_kernel_constants(kernel: Kernel, p: usize, nu: usize) -> KernelConstants {
    assert!(nu <= p, "derivative order exceeds polynomial order");
    let gl = GaussLegendre::new(64);
    let m = p + 1;
    let s = DMatrix::from_fn(m, m, |i, j| {
        gl.integrate(0.0, 1.0, |t| t.powi((i + j) as i32) * kernel.weight(t))
    });
    let s_inv = s.try_inverse().expect("moment matrix of a kernel is positive definite");
    let k_star = |t: f64| -> f64 {
        (0..m).map(|j| s_inv[(nu, j)] * t.powi(j as i32)).sum::<f64>() * kernel.weight(t)
    };
    let variance = gl.integrate(0.0, 1.0, |t| k_star(t).powi(2));
    let bias = gl.integrate(0.0, 1.0, |t| t.powi(m as i32) * k_star(t));
    let scale = (factorial(m).powi(2) * (2 * nu + 1) as f64 * variance
        / (2.0 * (m - nu) as f64 * bias * bias))
        .powf(1.0 / (2 * p + 3) as f64);
    KernelConstants { variance, bias, scale }
}

/// Global polynomial pilot on one side of the kink.
#[derive(Debug, Clone, Copy)]
struct SidePilot {
    n: usize,
    /// Residual variance, `RSS / n`.
    sigma2: f64,
    support: f64,
    /// `Σ m^{(p+1)}(v_i)²`.
    sum_deriv_sq: f64,
    /// `m^{(p+1)}(0)`.
    deriv_at_kink: f64,
}

fn side_pilot(v: &[f64], y: &[f64], p: usize, side: &str) -> Result<SidePilot> {
    let n = v.len();
    let q = p + 3;
    if n < MIN_SIDE.max(q + 2) {
        return Err(Error::InsufficientData(format!(
            "bandwidth pilot needs at least {} observations {side} the kink, got {n}",
            MIN_SIDE.max(q + 2)
        )));
    }
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if !(scale > 0.0) {
        return domain(format!("running variable is constant {side} the kink"));
    }
    let x = DMatrix::from_fn(n, q + 1, |i, j| (v[i] / scale).powi(j as i32));
    let y0 = y[0];
    let yv = DVector::from_iterator(n, y.iter().map(|yi| yi - y0));
    let fit = weighted_ls(&x, &yv, &vec![1.0; n], "bandwidth pilot")?;
    let resid = &yv - &x * &fit.beta;
    let sigma2 = resid.norm_squared() / n as f64;
    let order = p + 1;
    let deriv = |vi: f64| -> f64 {
        let u = vi / scale;
        (order..=q)
            .map(|j| fit.beta[j] * factorial(j) / factorial(j - order) * u.powi((j - order) as i32))
            .sum::<f64>()
            / scale.powi(order as i32)
    };
    let sum_deriv_sq = v.iter().map(|&vi| deriv(vi).powi(2)).sum();
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(SidePilot { n, sigma2, support: hi - lo, sum_deriv_sq, deriv_at_kink: deriv(0.0) })
}

/// Centered running variable and outcome inside the sample window, split by side.
fn split_sides(data: &RkdData, spec: &RkdSpec) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    data.validate()?;
    spec.validate()?;
    let (mut vl, mut yl, mut vr, mut yr) = (vec![], vec![], vec![], vec![]);
    for (&w, &y) in data.running.iter().zip(&data.outcome) {
        if let Some((lo, hi)) = spec.sample_window {
            if w < lo || w > hi {
                continue;
            }
        }
        let v = w - spec.kink_point;
        if v >= 0.0 {
            vr.push(v);
            yr.push(y);
        } else {
            vl.push(v);
            yl.push(y);
        }
    }
    Ok((vl, yl, vr, yr))
}

/// Rule-of-thumb bandwidth: the smaller of the two one-sided values
/// `C · [σ² · support / Σ m^{(p+1)}(v_i)²]^{1/(2p+3)}`.
pub fn fg_bandwidth(data: &RkdData, spec: &RkdSpec) -> Result<f64> {
    let p = spec.poly_order.degree();
    let c = boundary_kernel_constants(spec.kernel, p, DERIV).scale;
    let (vl, yl, vr, yr) = split_sides(data, spec)?;
    let mut h = f64::INFINITY;
    for (v, y, side) in [(&vl, &yl, "below"), (&vr, &yr, "above")] {
        let s = side_pilot(v, y, p, side)?;
        if !(s.sum_deriv_sq > 0.0) || !s.sum_deriv_sq.is_finite() {
            return domain(format!("degenerate pilot fit {side} the kink: zero curvature"));
        }
        let hs = c * (s.sigma2 * s.support / s.sum_deriv_sq).powf(1.0 / (2 * p + 3) as f64);
        h = h.min(hs);
    }
    if !(h > 0.0) || !h.is_finite() {
        return domain("degenerate pilot fit: bandwidth is not positive");
    }
    Ok(h)
}

/// Plug-in minimizer of the leading bias² + variance of the slope change,
/// `h = [(2ν+1) V (σ₊² + σ₋²) / (2(p+1-ν) n f(k) B_c²)]^{1/(2p+3)}`, with
/// `B_c = B/(p+1)! · (m₊^{(p+1)} + (-1)^{ν+p} m₋^{(p+1)})`. The count density
/// `n f(k)` is taken from a Silverman-width window around the kink.
pub fn mse_optimal_bandwidth(data: &RkdData, spec: &RkdSpec) -> Result<f64> {
    let p = spec.poly_order.degree();
    let kc = boundary_kernel_constants(spec.kernel, p, DERIV);
    let (vl, yl, vr, yr) = split_sides(data, spec)?;
    let left = side_pilot(&vl, &yl, p, "below")?;
    let right = side_pilot(&vr, &yr, p, "above")?;
    let n = left.n + right.n;
    let all: Vec<f64> = vl.iter().chain(&vr).copied().collect();
    let mean = all.iter().sum::<f64>() / n as f64;
    let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let hs = 1.06 * sd * (n as f64).powf(-0.2);
    let in_window = all.iter().filter(|v| v.abs() <= hs).count();
    if in_window == 0 || !(hs > 0.0) {
        return Err(Error::InsufficientData("no observations near the kink for the density".into()));
    }
    let count_density = in_window as f64 / (2.0 * hs);
    let sign = if (DERIV + p) % 2 == 0 { 1.0 } else { -1.0 };
    let bc = kc.bias / factorial(p + 1) * (right.deriv_at_kink + sign * left.deriv_at_kink);
    if !(bc.abs() > 0.0) || !bc.is_finite() {
        return domain("degenerate pilot fit: no curvature at the kink");
    }
    let num = (2 * DERIV + 1) as f64 * kc.variance * (left.sigma2 + right.sigma2);
    let den = 2.0 * (p + 1 - DERIV) as f64 * count_density * bc * bc;
    let h = (num / den).powf(1.0 / (2 * p + 3) as f64);
    if !(h > 0.0) || !h.is_finite() {
        return domain("degenerate pilot fit: bandwidth is not positive");
    }
    Ok(h)
}
