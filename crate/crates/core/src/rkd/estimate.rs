use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bandwidth::{fg_bandwidth, mse_optimal_bandwidth};
use super::ols::{robust_ls, two_sls, weighted_ls, RobustFit};
use super::{elasticity, Bandwidth, Coefficient, Method, PolyOrder, RkdData, RkdFit, RkdSpec};
use crate::error::{domain, Error, Result};

/// Position of the `v·D` column in the outcome design.
const KINK_COL: usize = 2;

fn resolve_bandwidth(data: &RkdData, spec: &RkdSpec) -> Result<f64> {
    match spec.bandwidth {
        Bandwidth::Fixed(h) => Ok(h),
        Bandwidth::Fg => fg_bandwidth(data, spec),
        Bandwidth::Mse => mse_optimal_bandwidth(data, spec),
    }
}

/// Rows entering one fit, with kernel weights.
struct Window {
    data: RkdData,
    v: Vec<f64>,
    w: Vec<f64>,
    h: f64,
    singletons: usize,
}

fn select_window(data: &RkdData, spec: &RkdSpec) -> Result<Window> {
    data.validate()?;
    spec.validate()?;
    for name in &spec.controls {
        data.control(name)?;
    }
    for name in &spec.fixed_effects {
        data.fixed_effect(name)?;
    }
    let h = resolve_bandwidth(data, spec)?;
    let mut rows: Vec<usize> = (0..data.len())
        .filter(|&i| {
            let x = data.running[i];
            let in_sample = spec.sample_window.is_none_or(|(lo, hi)| x >= lo && x <= hi);
            in_sample && spec.kernel.weight((x - spec.kink_point).abs() / h) > 0.0
        })
        .collect();
    let before = rows.len();
    loop {
        let mut dropped = false;
        for name in &spec.fixed_effects {
            let codes = data.fixed_effect(name)?;
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for &i in &rows {
                *counts.entry(codes[i]).or_default() += 1;
            }
            let n0 = rows.len();
            rows.retain(|&i| counts[&codes[i]] > 1);
            dropped |= rows.len() != n0;
        }
        if !dropped {
            break;
        }
    }
    let singletons = before - rows.len();
    if singletons > 0 {
        log::warn!("dropped {singletons} rows with singleton fixed-effect levels inside the bandwidth");
    }
    if rows.is_empty() {
        return Err(Error::EmptyWindow(format!(
            "no observations within h = {h} of the kink at {}",
            spec.kink_point
        )));
    }
    let sub = data.subset(&rows);
    let v: Vec<f64> = sub.running.iter().map(|x| x - spec.kink_point).collect();
    let w = v.iter().map(|vi| spec.kernel.weight(vi.abs() / h)).collect();
    Ok(Window { data: sub, v, w, h, singletons })
}

/// Outcome design `[1, v, vD, (v², v²D), controls, dummies]` and column names.
fn design(win: &Window, spec: &RkdSpec) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = win.v.len();
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    let d: Vec<f64> = win.v.iter().map(|&v| if v >= 0.0 { 1.0 } else { 0.0 }).collect();
    cols.push(("intercept".into(), vec![1.0; n]));
    cols.push(("v".into(), win.v.clone()));
    cols.push(("v_d".into(), win.v.iter().zip(&d).map(|(v, d)| v * d).collect()));
    if spec.poly_order == PolyOrder::Quadratic {
        cols.push(("v2".into(), win.v.iter().map(|v| v * v).collect()));
        cols.push(("v2_d".into(), win.v.iter().zip(&d).map(|(v, d)| v * v * d).collect()));
    }
    for name in &spec.controls {
        cols.push((name.clone(), win.data.control(name)?.to_vec()));
    }
    for name in &spec.fixed_effects {
        let codes = win.data.fixed_effect(name)?;
        let mut levels: Vec<i64> = codes.to_vec();
        levels.sort_unstable();
        levels.dedup();
        for &level in levels.iter().skip(1) {
            let col = codes.iter().map(|&c| if c == level { 1.0 } else { 0.0 }).collect();
            cols.push((format!("{name}={level}"), col));
        }
    }
    let k = cols.len();
    let x = DMatrix::from_fn(n, k, |i, j| cols[j].1[i]);
    Ok((x, cols.into_iter().map(|(n, _)| n).collect()))
}

fn without_column(x: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    x.clone().remove_column(j)
}

fn centered(v: &[f64]) -> DVector<f64> {
    let v0 = v[0];
    DVector::from_iterator(v.len(), v.iter().map(|x| x - v0))
}

fn coefficients(names: &[String], fit: &RobustFit) -> Vec<Coefficient> {
    names
        .iter()
        .enumerate()
        .map(|(j, n)| Coefficient { name: n.clone(), estimate: fit.beta[j], se: fit.se(j) })
        .collect()
}

fn finish(mut fit: RkdFit, spec: &RkdSpec) -> RkdFit {
    fit.b_at_kink = spec.benefit_at_kink.or(fit.b_at_kink);
    fit.elasticity = fit
        .b_at_kink
        .and_then(|b| elasticity(fit.alpha, b, Some(fit.mean_outcome), spec.log_outcome).ok());
    fit
}

/// Known slope change of the treatment: `α = ν₁ / π₁`.
pub fn sharp_rkd(data: &RkdData, spec: &RkdSpec) -> Result<RkdFit> {
    let Method::Sharp { slope_change } = spec.method else {
        return domain("sharp_rkd needs a spec with a known slope change");
    };
    let win = select_window(data, spec)?;
    let (x, names) = design(&win, spec)?;
    let y = centered(&win.data.outcome);
    let fit = robust_ls(&x, &y, &win.w, "outcome equation")?;
    let nu1 = fit.beta[KINK_COL];
    let se_nu1 = fit.se(KINK_COL);
    let mut coefs = coefficients(&names, &fit);
    coefs[0].estimate += win.data.outcome[0];
    let n = win.v.len();
    Ok(finish(
        RkdFit {
            kink_point: spec.kink_point,
            poly_order: spec.poly_order,
            kernel: spec.kernel,
            fuzzy: false,
            nu1,
            se_nu1,
            pi1: slope_change,
            se_pi1: None,
            alpha: nu1 / slope_change,
            se_alpha: se_nu1 / slope_change.abs(),
            n_used: n,
            h_used: win.h,
            mean_outcome: win.data.outcome.iter().sum::<f64>() / n as f64,
            first_stage_f: None,
            weak_instrument: false,
            b_at_kink: None,
            log_outcome: spec.log_outcome,
            elasticity: None,
            n_singletons_dropped: win.singletons,
            n_censored_excluded: win.data.censored_excluded,
            coefficients: coefs,
        },
        spec,
    ))
}

/// Two-stage least squares with `v·D` as the excluded instrument for the
/// observed treatment.
pub fn fuzzy_rkd(data: &RkdData, spec: &RkdSpec) -> Result<RkdFit> {
    if data.treatment.is_none() {
        return Err(Error::Schema("fuzzy RKD needs an observed treatment column".into()));
    }
    let win = select_window(data, spec)?;
    let treatment = win.data.treatment.as_deref().expect("checked above");
    let (x, names) = design(&win, spec)?;
    let y = centered(&win.data.outcome);
    let b = centered(treatment);
    let reduced = robust_ls(&x, &y, &win.w, "reduced form")?;
    let exog = without_column(&x, KINK_COL);
    let instrument = x.column(KINK_COL).into_owned();
    let iv = two_sls(&exog, &instrument, &b, &y, &win.w)?;

    let k0 = exog.ncols();
    let pi1 = iv.first_stage.beta[k0];
    if pi1 == 0.0 {
        return Err(Error::Singular("first-stage slope change is exactly zero".into()));
    }
    let se_pi1 = iv.first_stage.se(k0);
    let first_stage_f = (se_pi1 > 0.0).then(|| (pi1 / se_pi1).powi(2));
    let weak = first_stage_f.is_some_and(|f| f < spec.weak_f_threshold);
    if weak {
        log::warn!(
            "weak first stage at kink {}: F = {:.2} below {}",
            spec.kink_point,
            first_stage_f.unwrap_or(f64::NAN),
            spec.weak_f_threshold
        );
    }
    let mut second_names: Vec<String> = names.iter().enumerate().filter(|&(j, _)| j != KINK_COL).map(|(_, n)| n.clone()).collect();
    second_names.push("treatment".into());
    let mut coefs: Vec<Coefficient> = second_names
        .iter()
        .enumerate()
        .map(|(j, n)| Coefficient {
            name: n.clone(),
            estimate: iv.beta[j],
            se: iv.vcov[(j, j)].max(0.0).sqrt(),
        })
        .collect();
    coefs[0].estimate += win.data.outcome[0] - iv.beta[k0] * treatment[0];
    let b_at_kink = spec.controls.is_empty() && spec.fixed_effects.is_empty();
    let b_at_kink = b_at_kink.then(|| iv.first_stage.beta[0] + treatment[0]);
    let n = win.v.len();
    Ok(finish(
        RkdFit {
            kink_point: spec.kink_point,
            poly_order: spec.poly_order,
            kernel: spec.kernel,
            fuzzy: true,
            nu1: reduced.beta[KINK_COL],
            se_nu1: reduced.se(KINK_COL),
            pi1,
            se_pi1: Some(se_pi1),
            alpha: iv.beta[k0],
            se_alpha: iv.vcov[(k0, k0)].max(0.0).sqrt(),
            n_used: n,
            h_used: win.h,
            mean_outcome: win.data.outcome.iter().sum::<f64>() / n as f64,
            first_stage_f,
            weak_instrument: weak,
            b_at_kink,
            log_outcome: spec.log_outcome,
            elasticity: None,
            n_singletons_dropped: win.singletons,
            n_censored_excluded: win.data.censored_excluded,
            coefficients: coefs,
        },
        spec,
    ))
}

/// Dispatches on the spec's method.
pub fn estimate(data: &RkdData, spec: &RkdSpec) -> Result<RkdFit> {
    match spec.method {
        Method::Sharp { .. } => sharp_rkd(data, spec),
        Method::Fuzzy => fuzzy_rkd(data, spec),
    }
}

/// Kink locations of the two regimes in running-variable units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledKinks {
    pub pre: f64,
    pub post: f64,
}

/// Running variable normalized to zero at the kink of its own regime.
pub fn pooled_running(w: f64, post: bool, kinks: &PooledKinks) -> f64 {
    if post {
        w - kinks.post
    } else {
        w - kinks.pre
    }
}

/// Kink regression on data from both regimes, each centered at its own kink,
/// with a regime dummy when both regimes are present. The spec's kink point
/// is ignored (the normalized kink is zero) and its sample window applies to
/// the normalized running variable.
pub fn pooled_two_kink_rkd(data: &RkdData, kinks: &PooledKinks, spec: &RkdSpec) -> Result<RkdFit> {
    data.validate()?;
    let regime = data
        .regime_post
        .as_ref()
        .ok_or_else(|| Error::Schema("pooled RKD needs a regime column".into()))?;
    let running = data.running.iter().zip(regime).map(|(&w, &t)| pooled_running(w, t, kinks)).collect();
    let mut pooled = RkdData { running, ..data.clone() };
    let mut spec = RkdSpec { kink_point: 0.0, ..spec.clone() };
    let varies = regime.iter().any(|&t| t) && regime.iter().any(|&t| !t);
    if varies {
        let name = "regime_post".to_string();
        pooled.controls.retain(|(n, _)| *n != name);
        pooled.controls.push((name.clone(), regime.iter().map(|&t| f64::from(u8::from(t))).collect()));
        if !spec.controls.contains(&name) {
            spec.controls.push(name);
        }
    }
    estimate(&pooled, &spec)
}

/// Projects the outcome linearly on the named covariates and estimates the
/// kink in the projection. Controls and fixed effects in the spec are ignored.
pub fn covariate_smoothness(data: &RkdData, covariates: &[&str], spec: &RkdSpec) -> Result<RkdFit> {
    data.validate()?;
    let rows: Vec<usize> = (0..data.len())
        .filter(|&i| spec.sample_window.is_none_or(|(lo, hi)| data.running[i] >= lo && data.running[i] <= hi))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyWindow("no observations inside the sample window".into()));
    }
    let cols: Vec<&[f64]> = covariates.iter().map(|c| data.control(c)).collect::<Result<_>>()?;
    let n = data.len();
    let fitted: Vec<f64> = if cols.is_empty() {
        let mean = rows.iter().map(|&i| data.outcome[i]).sum::<f64>() / rows.len() as f64;
        vec![mean; n]
    } else {
        let k = cols.len() + 1;
        let design_row = |i: usize, j: usize| if j == 0 { 1.0 } else { cols[j - 1][i] };
        let x = DMatrix::from_fn(rows.len(), k, |r, j| design_row(rows[r], j));
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.outcome[i]));
        let fit = weighted_ls(&x, &y, &vec![1.0; rows.len()], "covariate projection")?;
        (0..n).map(|i| (0..k).map(|j| design_row(i, j) * fit.beta[j]).sum()).collect()
    };
    let projected = data.with_outcome(fitted);
    let spec = RkdSpec { controls: vec![], fixed_effects: vec![], ..spec.clone() };
    estimate(&projected, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rkd::Kernel;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_outcome_gives_zero_exactly() {
        let w = grid(201, 700.0, 1200.0);
        let data = RkdData::new(w.clone(), vec![3.25; 201]);
        let spec = RkdSpec::new(963.0, Method::Sharp { slope_change: -0.5 }, Bandwidth::Fixed(200.0));
        let f = sharp_rkd(&data, &spec).unwrap();
        assert_eq!(f.alpha, 0.0);
        assert_eq!(f.se_alpha, 0.0);
    }

    #[test]
    fn empty_window_is_an_error() {
        let data = RkdData::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]);
        let spec = RkdSpec::new(100.0, Method::Sharp { slope_change: 1.0 }, Bandwidth::Fixed(5.0));
        assert!(matches!(sharp_rkd(&data, &spec), Err(Error::EmptyWindow(_))));
    }

    #[test]
    fn singleton_levels_are_dropped() {
        let w = grid(100, -1.0, 1.0);
        let y: Vec<f64> = w.iter().map(|x| x.abs()).collect();
        let mut codes = vec![0i64; 100];
        codes[10] = 7;
        let data = RkdData::new(w, y).with_fixed_effect("region", codes);
        let mut spec = RkdSpec::new(0.0, Method::Sharp { slope_change: 1.0 }, Bandwidth::Fixed(2.0));
        spec.fixed_effects.push("region".into());
        spec.kernel = Kernel::Uniform;
        let f = sharp_rkd(&data, &spec).unwrap();
        assert_eq!(f.n_singletons_dropped, 1);
        assert_eq!(f.n_used, 99);
        assert!((f.alpha - 2.0).abs() < 1e-10);
    }
}
