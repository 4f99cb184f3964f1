//! Independent oracles shared by the integration tests. None of these call
//! the solver, the quadrature or the estimators they are used to check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use ui_rkd::rkd::RkdData;
use ui_rkd::schedule::BenefitRule;
use ui_rkd::search_model::{ModelParams, Utility};

pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn utility(u: Utility, c: f64) -> f64 {
    match u {
        Utility::Linear => c,
        Utility::Cara { risk_aversion: a } => -(-a * c).exp() / a,
    }
}

/// Reservation wages `(eligible, exhausted)` by value-function iteration on
/// a log-wage grid of `n` cells over `μ ± 8σ`.
///
/// The continuous-time Bellman system is uniformized at rate
/// `q = λ + γ + δ`, which turns it into an equivalent discrete fixed point
/// with modulus `q/(r+q)`. Iteration stops on the MacQueen–Porteus span.
pub fn vfi_reservation_wages(p: &ModelParams, n: usize) -> (f64, f64) {
    let (mu, sigma) = (p.offers.mu, p.offers.sigma);
    let (z_lo, z_hi) = (-8.0, 8.0);
    let dz = (z_hi - z_lo) / n as f64;
    let mut wage = Vec::with_capacity(n);
    let mut mass = Vec::with_capacity(n);
    for i in 0..n {
        let a = z_lo + dz * i as f64;
        let lo = if i == 0 { 0.0 } else { phi_cdf(a) };
        let hi = if i == n - 1 { 1.0 } else { phi_cdf(a + dz) };
        wage.push((mu + sigma * (a + 0.5 * dz)).exp());
        mass.push(hi - lo);
    }
    let flow: Vec<f64> = wage.iter().map(|w| utility(p.utility, w - p.tau)).collect();
    let (lam, gam, del, r) = (p.lambda_offer, p.gamma, p.delta, p.r);
    let q = lam + gam + del;
    let beta = q / (r + q);
    let fu = utility(p.utility, p.b + p.y);
    let fs = utility(p.utility, p.b_a + p.y);

    let mut u_val = fu / r;
    let mut s_val = fs / r;
    let mut v: Vec<f64> = flow.iter().map(|f| (f + del * u_val) / (r + del)).collect();
    for _ in 0..200_000 {
        let (mut eu, mut es) = (0.0, 0.0);
        for (vi, mi) in v.iter().zip(&mass) {
            eu += mi * vi.max(u_val);
            es += mi * vi.max(s_val);
        }
        let u_new = (fu + lam * eu + gam * s_val + (q - lam - gam) * u_val) / (r + q);
        let s_new = (fs + lam * es + (q - lam) * s_val) / (r + q);
        let (mut dmin, mut dmax) = ((u_new - u_val).min(s_new - s_val), (u_new - u_val).max(s_new - s_val));
        for (vi, fi) in v.iter_mut().zip(&flow) {
            let nv = (fi + del * u_val + (q - del) * *vi) / (r + q);
            let d = nv - *vi;
            dmin = dmin.min(d);
            dmax = dmax.max(d);
            *vi = nv;
        }
        u_val = u_new;
        s_val = s_new;
        let k = beta / (1.0 - beta);
        if k * (dmax - dmin) < 1e-9 * u_val.abs().max(1.0) {
            let shift = k * 0.5 * (dmin + dmax);
            u_val += shift;
            s_val += shift;
            v.iter_mut().for_each(|vi| *vi += shift);
            break;
        }
    }
    let crossing = |target: f64| -> f64 {
        // V is increasing in the wage
        match v.iter().position(|&vi| vi >= target) {
            Some(0) => wage[0],
            None => wage[n - 1],
            Some(i) => {
                let t = (target - v[i - 1]) / (v[i] - v[i - 1]);
                wage[i - 1] + t * (wage[i] - wage[i - 1])
            }
        }
    };
    (crossing(u_val), crossing(s_val))
}

/// Monte Carlo moments of `log w | log w >= cut` for `log w ~ N(mu, sigma²)`.
#[derive(Debug, Clone, Copy)]
pub struct McMoments {
    pub mean: f64,
    pub se_mean: f64,
    pub var: f64,
    pub se_var: f64,
    pub kept: usize,
}

pub fn mc_truncated_moments(mu: f64, sigma: f64, cut: f64, draws: usize, seed: u64) -> McMoments {
    let mut g = rng(seed);
    let (mut n, mut s1) = (0usize, 0.0);
    let mut kept = Vec::new();
    for _ in 0..draws {
        let z: f64 = g.sample(StandardNormal);
        let x = mu + sigma * z;
        if x >= cut {
            n += 1;
            s1 += x;
            kept.push(x);
        }
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let m2 = kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m4 = kept.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    McMoments {
        mean,
        se_mean: (m2 / nf).sqrt(),
        var: m2 * nf / (nf - 1.0),
        se_var: ((m4 - m2 * m2) / nf).sqrt(),
        kept: n,
    }
}

/// Time in UI from competing continuous clocks: eligibility loss at rate
/// `γ`, offers at rate `λ` accepted when at or above `w_star`.
pub fn simulate_ui_duration(p: &ModelParams, w_star: f64, spells: usize, seed: u64) -> (f64, f64) {
    let mut g = rng(seed);
    let offers = Exp::new(p.lambda_offer).unwrap();
    let loss = (p.gamma > 0.0).then(|| Exp::new(p.gamma).unwrap());
    let durations: Vec<f64> = (0..spells)
        .map(|_| {
            let t_loss = loss.map_or(f64::INFINITY, |d| d.sample(&mut g));
            let mut t = 0.0;
            loop {
                t += offers.sample(&mut g);
                if t >= t_loss {
                    return t_loss;
                }
                let z: f64 = g.sample(StandardNormal);
                if (p.offers.mu + p.offers.sigma * z).exp() >= w_star {
                    return t;
                }
            }
        })
        .collect();
    mean_se(&durations)
}

/// Benefits paid month by month: the month-`d` payment is made when the
/// spell is still in UI at the start of month `d`; within each month the
/// spell ends on eligibility loss or on the first acceptable offer.
pub fn simulate_total_benefits(
    rule: &BenefitRule,
    p: &ModelParams,
    w_star: f64,
    net: f64,
    potential: u32,
    spells: usize,
    seed: u64,
) -> (f64, f64) {
    let mut g = rng(seed);
    let offers = (p.lambda_offer > 0.0).then(|| Exp::new(p.lambda_offer).unwrap());
    let loss = (p.gamma > 0.0).then(|| Exp::new(p.gamma).unwrap());
    let path: Vec<f64> = (1..=potential).map(|d| rule.monthly_benefit(net, d).unwrap()).collect();
    let totals: Vec<f64> = (0..spells)
        .map(|_| {
            let mut paid = 0.0;
            for b in &path {
                paid += b;
                let t_loss = loss.map_or(f64::INFINITY, |d| d.sample(&mut g));
                let mut exit = t_loss < 1.0;
                if let Some(offers) = &offers {
                    let mut t = offers.sample(&mut g);
                    while !exit && t < t_loss.min(1.0) {
                        let z: f64 = g.sample(StandardNormal);
                        exit = (p.offers.mu + p.offers.sigma * z).exp() >= w_star;
                        t += offers.sample(&mut g);
                    }
                }
                if exit {
                    break;
                }
            }
            paid
        })
        .collect();
    mean_se(&totals)
}

/// Net-wage schedule `min{b_H, max{b_L, β w}}` written out directly.
pub fn schedule(w: f64, b_low: f64, b_high: f64, beta: f64) -> f64 {
    (beta * w).clamp(b_low, b_high)
}

/// Constructed fuzzy design around the post-reform top kink in net wages:
/// `b = schedule(w) + N(0, 10²)`, `Y = effect·b + 0.4·w + N(0, 60²)`,
/// with `w ~ U(500, 1100)`.
pub fn fuzzy_dgp(n: usize, effect: f64, seed: u64) -> RkdData {
    let mut g = rng(seed);
    let mut w = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let wi: f64 = g.random_range(500.0..1100.0);
        let e1: f64 = g.sample(StandardNormal);
        let e2: f64 = g.sample(StandardNormal);
        let bi = schedule(wi, 250.0, 400.0, 0.5) + 10.0 * e1;
        w.push(wi);
        b.push(bi);
        y.push(effect * bi + 0.4 * wi + 60.0 * e2);
    }
    RkdData::new(w, y).with_treatment(b)
}

/// Two regimes with top kinks at 600 (pre) and 800 (post) in net wages and
/// a common effect; the post regime adds a level shift of 150 to `Y`.
pub fn pooled_dgp(n: usize, effect: f64, seed: u64) -> RkdData {
    let mut g = rng(seed);
    let (mut w, mut b, mut y, mut post) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let t = g.random_bool(0.5);
        let (lo, hi) = if t { (250.0, 400.0) } else { (150.0, 300.0) };
        let wi: f64 = g.random_range(350.0..1100.0);
        let e1: f64 = g.sample(StandardNormal);
        let e2: f64 = g.sample(StandardNormal);
        let bi = schedule(wi, lo, hi, 0.5) + 8.0 * e1;
        w.push(wi);
        b.push(bi);
        y.push(effect * bi + 0.3 * wi + if t { 150.0 } else { 0.0 } + 50.0 * e2);
        post.push(t);
    }
    RkdData::new(w, y).with_treatment(b).with_regime(post)
}

/// One published calibration cell: inputs and the reported outputs.
#[derive(Debug, Clone, Copy)]
pub struct PublishedCell {
    pub label: &'static str,
    pub eta: f64,
    pub dr_db: f64,
    pub r_over_b: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub gains: f64,
}

const fn cell(label: &'static str, eta: f64, dr_db: f64, r_over_b: f64, rhs: f64, gains: f64) -> PublishedCell {
    PublishedCell { label, eta, dr_db, r_over_b, lhs: eta, rhs, gains }
}

/// Welfare panels of the calibration tables (δ = 0.03 throughout).
pub const PUBLISHED: [PublishedCell; 23] = [
    cell("post kink, no controls", 0.37, 6.53, 6.46, 0.16, 0.21),
    cell("post kink, controls", 0.23, 6.20, 6.46, 0.16, 0.07),
    cell("pre kink, no controls", 0.36, 5.69, 6.65, 0.14, 0.21),
    cell("pre kink, controls", 0.27, 5.08, 6.65, 0.13, 0.14),
    cell("under 45", 0.32, 6.61, 5.67, 0.17, 0.15),
    cell("under 45, controls", 0.30, 5.78, 5.58, 0.15, 0.15),
    cell("45 and over", 0.92, 10.76, 9.79, 0.25, 0.67),
    cell("45 and over, controls", 0.40, 9.36, 8.90, 0.22, 0.18),
    cell("bandwidths, sharp", -0.09, 6.70, 6.46, 0.17, -0.26),
    cell("bandwidths, linear MSE-optimal", -0.27, 7.97, 6.46, 0.20, -0.47),
    cell("bandwidths, linear", 0.17, 6.85, 6.46, 0.17, 0.00),
    cell("bandwidths, linear, controls", 0.35, 6.71, 6.46, 0.17, 0.19),
    cell("bandwidths, quadratic FG", 0.99, 8.27, 6.46, 0.21, 0.79),
    cell("bandwidths, quadratic", 0.55, 8.15, 6.46, 0.20, 0.34),
    cell("bandwidths, quadratic, controls", 1.33, 8.50, 6.46, 0.21, 1.11),
    cell("both kinks, sharp", 0.57, 5.50, 6.46, 0.14, 0.43),
    cell("both kinks, linear MSE-optimal", 0.48, 6.07, 6.46, 0.15, 0.33),
    cell("both kinks, linear FG", 0.40, 5.93, 6.46, 0.15, 0.25),
    cell("both kinks, linear 200", 0.43, 6.94, 6.46, 0.17, 0.25),
    cell("both kinks, linear 200, controls", 0.39, 5.99, 6.46, 0.15, 0.24),
    cell("both kinks, quadratic FG", 0.97, 6.81, 6.46, 0.17, 0.80),
    cell("both kinks, quadratic 200", 1.42, 5.71, 6.46, 0.14, 1.27),
    cell("both kinks, quadratic 200, controls", 1.77, 6.82, 6.46, 0.17, 1.60),
];

/// Parameter points for the value-iteration comparison: a factorial over
/// benefit, offer rate, eligibility loss and utility, plus edge cases.
pub fn vfi_grid() -> Vec<ModelParams> {
    let base = ModelParams::calibrated();
    let mut out = Vec::new();
    for b in [250.0, 400.0] {
        for lambda_offer in [0.15, 0.6] {
            for gamma in [0.0, 1.0 / 6.0] {
                for utility in [Utility::Linear, base.utility] {
                    out.push(ModelParams { b, lambda_offer, gamma, utility, ..base });
                }
            }
        }
    }
    out.push(ModelParams { b_a: 120.0, ..base });
    out.push(ModelParams { delta: 0.1, r: 0.01, ..base });
    out.push(ModelParams { tau: 0.0, y: 0.0, utility: Utility::Linear, ..base });
    out.push(ModelParams { offers: ui_rkd::search_model::LogNormalOffers { mu: 900f64.ln(), sigma: 0.8 }, ..base });
    out
}

/// Eligibility cells as `(contributions range, months under 45, months 45+)`.
pub const ELIGIBILITY_CELLS: [((u32, u32), u32, u32); 4] =
    [((6, 11), 2, 8), ((12, 23), 4, 10), ((24, 35), 8, 14), ((36, 36), 12, 18)];

/// Gross reference wages at the pre low, pre high, post low and post high kinks.
pub const GROSS_KINKS: [f64; 4] = [361.0, 722.0, 602.0, 963.0];
pub const NET_KINKS: [f64; 4] = [300.0, 600.0, 500.0, 800.0];

/// Noiseless post-reform schedule on an even grid of net wages with
/// `Y = 2·b(w) + 0.1·w`; the effect is 2 and the slope change of `b` at the
/// top kink (800) is `-0.5`.
pub fn noiseless_sharp_data(n: usize) -> RkdData {
    let w: Vec<f64> = (0..n).map(|i| 550.0 + 600.0 * (i as f64 + 0.5) / n as f64).collect();
    let b: Vec<f64> = w.iter().map(|&x| schedule(x, 250.0, 400.0, 0.5)).collect();
    let y = w.iter().zip(&b).map(|(x, b)| 2.0 * b + 0.1 * x).collect();
    RkdData::new(w, y).with_treatment(b)
}

/// Gross reference wages on a grid around the post top kink, with the
/// scheduled benefit computed from net wages at a fixed net/gross ratio.
pub fn noiseless_gross_first_stage(n: usize, net_over_gross: f64) -> RkdData {
    let w: Vec<f64> = (0..n).map(|i| 700.0 + 560.0 * (i as f64 + 0.5) / n as f64).collect();
    let b: Vec<f64> = w.iter().map(|&x| schedule(net_over_gross * x, 250.0, 400.0, 0.5)).collect();
    let y = b.iter().zip(&w).map(|(b, x)| 6.0 * b + 0.2 * x).collect();
    RkdData::new(w, y).with_treatment(b)
}

/// Share of `reps` fuzzy fits on [`fuzzy_dgp`] whose 95% interval covers
/// the true effect.
pub fn fuzzy_coverage(reps: usize, n: usize, seed0: u64) -> f64 {
    use ui_rkd::rkd::{estimate, Bandwidth, Method, RkdSpec};
    let effect = 5.0;
    let spec = RkdSpec::new(800.0, Method::Fuzzy, Bandwidth::Fixed(200.0));
    let hits = (0..reps)
        .filter(|&r| {
            let fit = estimate(&fuzzy_dgp(n, effect, seed0 + r as u64), &spec).unwrap();
            (fit.alpha - effect).abs() <= 1.959964 * fit.se_alpha
        })
        .count();
    hits as f64 / reps as f64
}

/// Simulate → estimate → calibrate at the post-reform top kink.
#[derive(Debug, Clone, Copy)]
pub struct EndToEnd {
    pub gains: f64,
    pub se_gains: f64,
    pub truth: f64,
    pub ui_alpha: f64,
    pub ui_truth: f64,
    pub wage_alpha: f64,
    pub wage_truth: f64,
}

/// The bandwidth stays below the distance (about 104) from the top kink to
/// the point where the decayed benefit reaches the floor, where total UI
/// paid has a second kink.
pub const END_TO_END_BANDWIDTH: f64 = 100.0;

pub fn end_to_end(n: u64, seed: u64) -> EndToEnd {
    use ui_rkd::rkd::{estimate, spell_data, Bandwidth, Method, RkdSpec, SpellOutcome};
    use ui_rkd::schedule::{Policy, Regime};
    use ui_rkd::synth::{model_implied_gains, simulate_population, RegimeAssignment, SimConfig};
    use ui_rkd::welfare::calibrate_from_fits;

    let policy = Policy::default();
    let base = ModelParams::calibrated();
    let cfg = SimConfig { n_workers: n, seed, regime: RegimeAssignment::Post, ..SimConfig::default() };
    let recs = simulate_population(&cfg, &policy, &base).unwrap();
    let truth = model_implied_gains(&cfg, &policy, &base, Regime::Post, 0.03).unwrap();
    let mut spec = RkdSpec::new(truth.ui.gross_kink, Method::Fuzzy, Bandwidth::Fixed(END_TO_END_BANDWIDTH));
    let (ui_data, _) = spell_data(&recs, SpellOutcome::TotalUiPaid, &policy, Some(Regime::Post), false).unwrap();
    let ui = estimate(&ui_data, &spec).unwrap();
    let (wage_data, _) = spell_data(&recs, SpellOutcome::LogReemploymentWage, &policy, Some(Regime::Post), true).unwrap();
    spec.log_outcome = true;
    let wage = estimate(&wage_data, &spec).unwrap();
    let r = calibrate_from_fits(&wage, &ui, 0.03).unwrap();
    EndToEnd {
        gains: r.gains,
        se_gains: r.se_gains.unwrap(),
        truth: truth.result.gains,
        ui_alpha: ui.alpha,
        ui_truth: truth.ui.effect,
        wage_alpha: wage.alpha,
        wage_truth: truth.wage.effect,
    }
}
