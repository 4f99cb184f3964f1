//! Stationary McCall search model with an eligible and an exhausted
//! unemployment state, lognormal wage offers and lump-sum labor taxes.
//!
//! The model is solved in continuous time. A job at wage `w` is worth
//! `V(w) = (u(w-τ) + δU)/(r+δ)`, and separation always leads back to the
//! eligible state. Writing `x_U = u(w*_U - τ) = rU` and
//! `x_S = u(w*_S - τ) = (r+δ)S - δU`:
//!
//! ```text
//! eligible:  rU = u(b + y)   + λ/(r+δ) · E[(u(w-τ) - x_U)^+] + γ(S - U)
//! exhausted: rS = u(b_a + y) + λ/(r+δ) · E[(u(w-τ) - x_S)^+]
//! ```
//!
//! The exhausted state depends on `U` through `x_S`, so the pair is solved
//! by nesting: the outer root is in `w*_U`, and every outer evaluation
//! solves the exhausted equation given `x_U`. The outer residual is
//! decreasing because `d(rS)/d(rU)` lies in `[0, δ/(r+δ))`. Each scalar
//! equation is solved by bisection accelerated with Newton steps that are
//! only accepted inside the current bracket.

use std::cell::Cell;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{norm_pdf, norm_sf, normal_hazard, GaussLegendre};
use crate::schedule::BenefitRule;

/// Period utility of consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Utility {
    Linear,
    /// `u(c) = (1 - exp(-a c)) / a`.
    Cara { risk_aversion: f64 },
}

impl Utility {
    pub fn value(&self, c: f64) -> f64 {
        match *self {
            Utility::Linear => c,
            Utility::Cara { risk_aversion: a } => -(-a * c).exp_m1() / a,
        }
    }

    pub fn marginal(&self, c: f64) -> f64 {
        match *self {
            Utility::Linear => 1.0,
            Utility::Cara { risk_aversion: a } => (-a * c).exp(),
        }
    }

    pub fn inverse(&self, x: f64) -> f64 {
        match *self {
            Utility::Linear => x,
            Utility::Cara { risk_aversion: a } => -(-a * x).ln_1p() / a,
        }
    }

    /// `u(c1) - u(c0)` without cancellation for CARA.
    fn diff(&self, c1: f64, c0: f64) -> f64 {
        match *self {
            Utility::Linear => c1 - c0,
            Utility::Cara { risk_aversion: a } => {
                (-a * c0).exp() * -(-a * (c1 - c0)).exp_m1() / a
            }
        }
    }
}

/// Lognormal wage-offer distribution: `log w ~ N(mu, sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalOffers {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalOffers {
    fn z(&self, w: f64) -> f64 {
        (w.ln() - self.mu) / self.sigma
    }

    /// `1 - F(w)`.
    pub fn survival(&self, w: f64) -> f64 {
        if w <= 0.0 {
            1.0
        } else {
            norm_sf(self.z(w))
        }
    }
}

/// Model primitives, all rates per month. Missing fields deserialize to the
/// calibrated values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Discount rate.
    pub r: f64,
    /// Job separation rate.
    pub delta: f64,
    /// Offer arrival rate.
    pub lambda_offer: f64,
    /// Eligibility-loss rate.
    pub gamma: f64,
    /// UI benefit.
    pub b: f64,
    /// Assistance transfer after exhaustion.
    pub b_a: f64,
    /// Informal income while not formally employed.
    pub y: f64,
    /// Lump-sum labor tax.
    pub tau: f64,
    pub utility: Utility,
    pub offers: LogNormalOffers,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::calibrated()
    }
}

impl ModelParams {
    /// CARA benchmark used throughout the tests and as the simulation default.
    pub fn calibrated() -> Self {
        ModelParams {
            r: 0.004,
            delta: 0.03,
            lambda_offer: 0.3,
            gamma: 1.0 / 9.0,
            b: 400.0,
            b_a: 0.0,
            y: 150.0,
            tau: 20.0,
            utility: Utility::Cara { risk_aversion: 0.002 },
            offers: LogNormalOffers { mu: 1200f64.ln(), sigma: 0.5 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("r", self.r),
            ("delta", self.delta),
            ("lambda_offer", self.lambda_offer),
            ("gamma", self.gamma),
            ("y", self.y),
            ("b_a", self.b_a),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return domain(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.b >= self.b_a) {
            return domain(format!("need b >= b_a, got b={} b_a={}", self.b, self.b_a));
        }
        if !(self.offers.sigma > 0.0) || !self.offers.mu.is_finite() {
            return domain("offer distribution needs finite mu and sigma > 0");
        }
        if self.lambda_offer > 0.0 && !(self.r + self.delta > 0.0) {
            return domain("offers arrive but r + delta = 0: employment value is unbounded");
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return domain(format!("discount rate must be positive, got {}", self.r));
        }
        if let Utility::Cara { risk_aversion } = self.utility {
            if !(risk_aversion > 0.0) {
                return domain("CARA risk aversion must be positive");
            }
        }
        Ok(())
    }
}

/// Solved reservation wages and flow values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSolution {
    pub w_star_eligible: f64,
    pub w_star_exhausted: f64,
    /// `rU`.
    pub flow_eligible: f64,
    /// `rS`.
    pub flow_exhausted: f64,
    /// Largest absolute residual of the two flow equations, utility units.
    pub residual: f64,
    pub iterations: usize,
}

impl ModelSolution {
    /// Lifetime utility `U`; undefined without discounting.
    pub fn value_eligible(&self, r: f64) -> Option<f64> {
        (r > 0.0).then(|| self.flow_eligible / r)
    }

    pub fn value_exhausted(&self, r: f64) -> Option<f64> {
        (r > 0.0).then(|| self.flow_exhausted / r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Residual tolerance in utility units.
    pub tol: f64,
    pub max_iter: usize,
    /// Gauss–Legendre nodes on the standard-normal scale.
    pub nodes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iter: 10_000, nodes: 256 }
    }
}

/// Reusable solver; holds the quadrature rule.
#[derive(Debug, Clone)]
pub struct Solver {
    opts: SolverOptions,
    rule: GaussLegendre,
}

const Z_SPAN: f64 = 12.0;

fn default_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(SolverOptions::default().nodes))
}

impl Default for Solver {
    fn default() -> Self {
        Solver { opts: SolverOptions::default(), rule: default_rule().clone() }
    }
}

impl Solver {
    pub fn new(opts: SolverOptions) -> Result<Self> {
        if !(opts.tol > 0.0) {
            return domain("solver tolerance must be positive");
        }
        if opts.nodes < 8 {
            return domain("need at least 8 quadrature nodes");
        }
        let rule = if opts.nodes == SolverOptions::default().nodes {
            default_rule().clone()
        } else {
            GaussLegendre::new(opts.nodes)
        };
        Ok(Solver { opts, rule })
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    /// Option value of search at reservation wage `w_res`:
    /// `E[(u(w - τ) - u(w_res - τ))^+]`, together with `1 - F(w_res)`.
    pub fn search_surplus(&self, p: &ModelParams, w_res: f64) -> (f64, f64) {
        let LogNormalOffers { mu, sigma } = p.offers;
        let z_star = if w_res > 0.0 { (w_res.ln() - mu) / sigma } else { f64::NEG_INFINITY };
        let lo = z_star.max(-Z_SPAN);
        let hi = lo.max(0.0) + sigma + Z_SPAN;
        let c_res = w_res - p.tau;
        let g = self.rule.integrate(lo, hi, |z| {
            let w = (mu + sigma * z).exp();
            p.utility.diff(w - p.tau, c_res) * norm_pdf(z)
        });
        (g.max(0.0), p.offers.survival(w_res))
    }

    /// Solves for both reservation wages: joint Newton steps first, then a
    /// bracketed nested solve (outer root in `w*_U`, exhausted state solved
    /// given `x_U` at every evaluation) if Newton does not converge.
    pub fn solve(&self, p: &ModelParams) -> Result<ModelSolution> {
        p.validate()?;
        if let Some(s) = self.solve_joint(p) {
            return Ok(s);
        }
        self.solve_nested(p)
    }

    /// Newton's method on both flow equations at once. Returns `None` when
    /// it fails to converge, leaving the bracketed nested solve to decide.
    fn solve_joint(&self, p: &ModelParams) -> Option<ModelSolution> {
        let u = p.utility;
        let k = offer_weight(p);
        let loss = p.gamma / p.r;
        let share = p.r / (p.r + p.delta);
        let (flow_u, flow_s) = (u.value(p.b + p.y), u.value(p.b_a + p.y));
        let (mut wu, mut ws) = (p.b + p.y + p.tau, p.b_a + p.y + p.tau);
        for it in 1..=50 {
            let (gu, su) = self.search_surplus(p, wu);
            let (gs, ss) = self.search_surplus(p, ws);
            let (cu, cs) = (wu - p.tau, ws - p.tau);
            let (xu, xs) = (u.value(cu), u.value(cs));
            let rs = flow_s + k * gs;
            let f1 = flow_u + k * gu - xu + loss * (rs - xu);
            let f2 = rs - share * xs - (1.0 - share) * xu;
            if !(f1.is_finite() && f2.is_finite()) {
                return None;
            }
            if f1.abs() <= self.opts.tol && f2.abs() <= self.opts.tol {
                return Some(ModelSolution {
                    w_star_eligible: wu,
                    w_star_exhausted: ws,
                    flow_eligible: xu,
                    flow_exhausted: rs,
                    residual: f1.abs().max(f2.abs()),
                    iterations: it,
                });
            }
            let (mu, ms) = (u.marginal(cu), u.marginal(cs));
            let a11 = -mu * (1.0 + k * su + loss);
            let a12 = -loss * k * ss * ms;
            let a21 = -(1.0 - share) * mu;
            let a22 = -ms * (k * ss + share);
            let det = a11 * a22 - a12 * a21;
            if !(det.abs() > 0.0) || !det.is_finite() {
                return None;
            }
            wu -= (f1 * a22 - f2 * a12) / det;
            ws -= (a11 * f2 - a21 * f1) / det;
        }
        None
    }

    /// Outer root in `w*_U` with the exhausted state solved inside.
    fn solve_nested(&self, p: &ModelParams) -> Result<ModelSolution> {
        let u = p.utility;
        let k = offer_weight(p);
        let loss = p.gamma / p.r;
        let flow_u = u.value(p.b + p.y);
        let lo = p.b_a + p.y + p.tau;
        let guess = Cell::new(lo);
        let inner_iters = Cell::new(0usize);
        let exhausted = |x_u: f64| -> Result<Exhausted> {
            let e = self.solve_exhausted_given(p, x_u, guess.get())?;
            guess.set(e.w_star);
            inner_iters.set(inner_iters.get() + e.iterations);
            Ok(e)
        };
        let failure = Cell::new(None);
        let f = |w: f64| {
            let (g, surv) = self.search_surplus(p, w);
            let c = w - p.tau;
            let x_u = u.value(c);
            let e = if loss > 0.0 {
                match exhausted(x_u) {
                    Ok(e) => e,
                    Err(err) => {
                        failure.set(Some(err));
                        return (f64::NAN, f64::NAN);
                    }
                }
            } else {
                Exhausted { w_star: 0.0, flow: x_u, slope: 0.0, residual: 0.0, iterations: 0 }
            };
            (
                flow_u - x_u + k * g + loss * (e.flow - x_u),
                -u.marginal(c) * (1.0 + k * surv + loss * (1.0 - e.slope)),
            )
        };
        let root = self.root(f, lo, Some(lo), "eligible reservation wage");
        if let Some(err) = failure.take() {
            return Err(err);
        }
        let (w_u, res_u, it_u) = root?;
        let x_u = u.value(w_u - p.tau);
        let e = exhausted(x_u)?;
        Ok(ModelSolution {
            w_star_eligible: w_u,
            w_star_exhausted: e.w_star,
            flow_eligible: x_u,
            flow_exhausted: e.flow,
            residual: res_u.abs().max(e.residual.abs()),
            iterations: it_u + inner_iters.get(),
        })
    }

    /// Exhausted state for a given eligible flow value `x_U = rU`:
    /// `V(w*_S) = S` with `rS = u(b_a + y) + λ/(r+δ)·E[(u(w-τ) - u(w*_S-τ))^+]`
    /// and `u(w*_S - τ) = (r+δ)S - δU`.
    fn solve_exhausted_given(&self, p: &ModelParams, x_u: f64, guess: f64) -> Result<Exhausted> {
        let u = p.utility;
        let k = offer_weight(p);
        let flow_s = u.value(p.b_a + p.y);
        let share = p.r / (p.r + p.delta);
        let f = |w: f64| {
            let (g, surv) = self.search_surplus(p, w);
            let c = w - p.tau;
            (
                flow_s + k * g - share * u.value(c) - (1.0 - share) * x_u,
                -u.marginal(c) * (k * surv + share),
            )
        };
        let (w, residual, iterations) = self.root(f, guess, None, "exhausted reservation wage")?;
        let (g, surv) = self.search_surplus(p, w);
        let ks = k * surv;
        let slope = if ks > 0.0 { p.delta * ks / (p.r + (p.r + p.delta) * ks) } else { 0.0 };
        Ok(Exhausted { w_star: w, flow: flow_s + k * g, slope, residual, iterations })
    }

    /// Root of a decreasing function, searched outward from `start`. With a
    /// `floor`, the root is known to lie at or above `start`.
    fn root<F>(&self, mut f: F, start: f64, floor: Option<f64>, what: &str) -> Result<(f64, f64, usize)>
    where
        F: FnMut(f64) -> (f64, f64),
    {
        let tol = self.opts.tol;
        let (f0, _) = f(start);
        if f0.is_nan() {
            return domain(format!("{what}: residual undefined at {start}"));
        }
        if f0.abs() <= tol {
            return Ok((start, f0, 0));
        }
        if f0 < 0.0 && floor.is_some() {
            // below zero at the floor only through rounding at a degenerate root
            return Ok((start, f0, 0));
        }
        let up = f0 > 0.0;
        let mut step = 0.25 * start.abs().max(1.0);
        let (mut a, mut b) = (start, start);
        let mut iters = 0;
        loop {
            iters += 1;
            let x = if up { start + step } else { start - step };
            let fx = f(x).0;
            if fx.is_nan() || iters > 2000 {
                return Err(Error::NonConvergence {
                    iterations: iters,
                    residual: fx,
                    context: format!("{what}: could not bracket the root"),
                });
            }
            if (fx > 0.0) == up {
                if up { a = x } else { b = x }
                step *= 2.0;
            } else {
                if up { b = x } else { a = x }
                break;
            }
        }
        let mut x = 0.5 * (a + b);
        let mut last = f64::INFINITY;
        while iters < self.opts.max_iter {
            iters += 1;
            let (fx, dfx) = f(x);
            if fx.is_nan() {
                return domain(format!("{what}: residual undefined at {x}"));
            }
            last = fx;
            if fx.abs() <= tol {
                return Ok((x, fx, iters));
            }
            if fx > 0.0 {
                a = x;
            } else {
                b = x;
            }
            if b - a <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                return Ok((x, fx, iters));
            }
            let newton = x - fx / dfx;
            x = if dfx < 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
        }
        Err(Error::NonConvergence {
            iterations: iters,
            residual: last,
            context: what.to_string(),
        })
    }
}

/// Exhausted-state solution given the eligible flow value.
#[derive(Debug, Clone, Copy)]
struct Exhausted {
    w_star: f64,
    /// `rS`.
    flow: f64,
    /// `d(rS)/d(rU)`.
    slope: f64,
    residual: f64,
    iterations: usize,
}

fn offer_weight(p: &ModelParams) -> f64 {
    if p.lambda_offer > 0.0 {
        p.lambda_offer / (p.r + p.delta)
    } else {
        0.0
    }
}

/// Solves the model with default options and the given residual tolerance.
pub fn solve_model(p: &ModelParams, tol: f64) -> Result<ModelSolution> {
    if tol == SolverOptions::default().tol {
        return Solver::default().solve(p);
    }
    Solver::new(SolverOptions { tol, ..SolverOptions::default() })?.solve(p)
}

/// Moments of log accepted wages, `log w | w >= w*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptedWageMoments {
    pub mean_log: f64,
    pub var_log: f64,
    /// `σ² / (σ² - var_log)`; infinite when nothing is truncated.
    pub lambda_factor: f64,
}

pub fn accepted_wage_moments(offers: &LogNormalOffers, w_star: f64) -> Result<AcceptedWageMoments> {
    if !(w_star > 0.0) {
        return domain(format!("truncation point must be positive, got {w_star}"));
    }
    let LogNormalOffers { mu, sigma } = *offers;
    let z = (w_star.ln() - mu) / sigma;
    let sf = norm_sf(z);
    if !(sf >= f64::MIN_POSITIVE) {
        return domain(format!("truncation at z = {z:.2} leaves no probability mass"));
    }
    let h = normal_hazard(z);
    if !h.is_finite() {
        return domain(format!("hazard not finite at z = {z:.2}"));
    }
    // h * (h - z) is the derivative of the hazard; it lies in (0, 1).
    let shrink = if h == 0.0 { 0.0 } else { h * (h - z) };
    Ok(AcceptedWageMoments {
        mean_log: mu + sigma * h,
        var_log: sigma * sigma * (1.0 - shrink),
        lambda_factor: 1.0 / shrink,
    })
}

/// Continuous-time exit rate out of the eligible state.
pub fn ui_exit_rate(p: &ModelParams, w_star: f64) -> f64 {
    p.gamma + p.lambda_offer * p.offers.survival(w_star)
}

/// Expected duration in UI, `1 / (γ + λ(1 - F(w*)))`.
pub fn expected_ui_duration(p: &ModelParams, w_star: f64) -> Result<f64> {
    let rate = ui_exit_rate(p, w_star);
    if !(rate > 0.0) {
        return domain("exit hazard from UI is zero: expected duration is infinite");
    }
    Ok(1.0 / rate)
}

/// Probability of still collecting at the start of each month, `S_1 = 1`.
fn survival_path(rate: f64, months: u32) -> impl Iterator<Item = (u32, f64)> {
    (1..=months).map(move |d| (d, (-rate * f64::from(d - 1)).exp()))
}

/// Expected benefits paid over a spell, `Σ_d S_d b_d` for `d = 1..=potential`,
/// with `S_d = exp(-(γ + λ(1 - F(w*)))(d - 1))` the probability that the
/// month-`d` payment is made.
pub fn expected_total_benefits(
    rule: &BenefitRule,
    p: &ModelParams,
    w_star: f64,
    net_ref_wage: f64,
    potential_months: u32,
) -> Result<f64> {
    let level = rule.capped_level(net_ref_wage)?;
    expected_total_at_level(rule, level, ui_exit_rate(p, w_star), potential_months)
}

/// As [`expected_total_benefits`] for a given capped benefit level and exit rate.
pub fn expected_total_at_level(
    rule: &BenefitRule,
    level: f64,
    exit_rate: f64,
    potential_months: u32,
) -> Result<f64> {
    if potential_months < 1 {
        return domain("potential duration must be at least one month");
    }
    if !(exit_rate >= 0.0) {
        return domain("exit rate must be non-negative");
    }
    Ok(survival_path(exit_rate, potential_months)
        .map(|(d, s)| s * rule.benefit_from_level(level, d))
        .sum())
}

/// Expected number of paid months, `Σ_d S_d`.
pub fn expected_months_paid(exit_rate: f64, potential_months: u32) -> f64 {
    survival_path(exit_rate, potential_months).map(|(_, s)| s).sum()
}

/// Finite-difference responses to the benefit level (and the tax).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenefitDerivatives {
    pub dw_star_db: f64,
    pub d_meanlog_db: f64,
    pub dr_db: f64,
    pub dw_star_dtau: f64,
    /// Reservation wage, moments and spending at the unperturbed point.
    pub w_star: f64,
    pub lambda_factor: f64,
    pub total_benefits: f64,
    /// `Σ_d ρ_d S_d` over months where the floor does not bind: the response
    /// of spending holding survival fixed.
    pub mechanical: f64,
    /// `dR/db - mechanical`.
    pub behavioral: f64,
}

/// Central differences of the solved model with respect to `b` (and `τ`).
///
/// `b` is the capped benefit level: the monthly path is
/// `max{b_low, ρ_d b}` for `d = 1..=potential_months`.
pub fn benefit_derivatives(
    p: &ModelParams,
    rule: &BenefitRule,
    potential_months: u32,
    step: f64,
) -> Result<BenefitDerivatives> {
    benefit_derivatives_with(&Solver::default(), p, rule, potential_months, step)
}

pub fn benefit_derivatives_with(
    solver: &Solver,
    p: &ModelParams,
    rule: &BenefitRule,
    potential_months: u32,
    step: f64,
) -> Result<BenefitDerivatives> {
    if !(step > 0.0) || step >= p.b {
        return domain("finite-difference step must be positive and smaller than b");
    }
    let at = |b: f64, tau: f64| -> Result<(f64, f64, f64)> {
        let q = ModelParams { b, tau, ..*p };
        let w = solver.solve(&q)?.w_star_eligible;
        let m = accepted_wage_moments(&q.offers, w)?.mean_log;
        let r = expected_total_at_level(rule, b, ui_exit_rate(&q, w), potential_months)?;
        Ok((w, m, r))
    };
    let (w_up, m_up, r_up) = at(p.b + step, p.tau)?;
    let (w_dn, m_dn, r_dn) = at(p.b - step, p.tau)?;
    let (w_tu, _, _) = at(p.b, p.tau + step)?;
    let (w_td, _, _) = at(p.b, p.tau - step)?;
    let (w0, _, r0) = at(p.b, p.tau)?;

    let rate = ui_exit_rate(p, w0);
    let mechanical = survival_path(rate, potential_months)
        .filter(|&(d, _)| rule.decay_fraction(d) * p.b > rule.b_low)
        .map(|(d, s)| s * rule.decay_fraction(d))
        .sum::<f64>();
    let dr_db = (r_up - r_dn) / (2.0 * step);
    Ok(BenefitDerivatives {
        dw_star_db: (w_up - w_dn) / (2.0 * step),
        d_meanlog_db: (m_up - m_dn) / (2.0 * step),
        dr_db,
        dw_star_dtau: (w_tu - w_td) / (2.0 * step),
        w_star: w0,
        lambda_factor: accepted_wage_moments(&p.offers, w0)?.lambda_factor,
        total_benefits: r0,
        mechanical,
        behavioral: dr_db - mechanical,
    })
}
