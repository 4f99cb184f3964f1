use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ols::robust_ls;
use crate::error::{domain, Error, Result};
use nalgebra::{DMatrix, DVector};

/// Mean of `y` over an equal-width bin of `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub bin_center: f64,
    pub mean: f64,
    pub count: usize,
}

/// Equal-width bins with edges at `anchor + j·bin_width`; empty bins are
/// omitted. Bins are returned in increasing order.
pub fn binned_means(x: &[f64], y: &[f64], bin_width: f64, anchor: f64) -> Result<Vec<Bin>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return domain(format!("bin width must be positive, got {bin_width}"));
    }
    if x.len() != y.len() {
        return Err(Error::Mismatch(format!("x has {} rows, y has {}", x.len(), y.len())));
    }
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (&xi, &yi) in x.iter().zip(y) {
        let j = ((xi - anchor) / bin_width).floor() as i64;
        let e = acc.entry(j).or_default();
        e.0 += yi;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(j, (sum, count))| Bin {
            bin_center: anchor + (j as f64 + 0.5) * bin_width,
            mean: sum / count as f64,
            count,
        })
        .collect())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mask keeping values within the `[lo_pct, hi_pct]` percentile range.
pub fn trim_percentiles(values: &[f64], lo_pct: f64, hi_pct: f64) -> Result<Vec<bool>> {
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
        return domain("need 0 <= lo_pct < hi_pct <= 100");
    }
    if values.is_empty() {
        return Ok(vec![]);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile(&sorted, lo_pct / 100.0);
    let hi = quantile(&sorted, hi_pct / 100.0);
    Ok(values.iter().map(|&v| v >= lo && v <= hi).collect())
}

/// Slope change of binned counts at the kink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityCheck {
    pub slope_change: f64,
    pub se: f64,
    pub n_bins: usize,
}

impl DensityCheck {
    pub fn t_stat(&self) -> f64 {
        if self.se > 0.0 {
            self.slope_change / self.se
        } else {
            0.0
        }
    }
}

/// Local-linear fit of bin counts on each side of the kink over
/// `[kink - h, kink + h]`, including empty bins.
pub fn density_kink_check(running: &[f64], kink: f64, bin_width: f64, h: f64) -> Result<DensityCheck> {
    if !(h >= 2.0 * bin_width) || !(bin_width > 0.0) {
        return domain("need bin_width > 0 and h at least two bins");
    }
    let per_side = (h / bin_width).floor() as i64;
    let mut counts: BTreeMap<i64, f64> = (-per_side..per_side).map(|j| (j, 0.0)).collect();
    for &x in running {
        let j = ((x - kink) / bin_width).floor() as i64;
        if let Some(c) = counts.get_mut(&j) {
            *c += 1.0;
        }
    }
    let n = counts.len();
    let v: Vec<f64> = counts.keys().map(|&j| (j as f64 + 0.5) * bin_width).collect();
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => v[i],
        _ => v[i].max(0.0),
    });
    let y = DVector::from_iterator(n, counts.values().copied());
    let fit = robust_ls(&x, &y, &vec![1.0; n], "density check")?;
    Ok(DensityCheck { slope_change: fit.beta[2], se: fit.se(2), n_bins: n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_single_bin() {
        let b = binned_means(&[3.3], &[7.0], 25.0, 0.0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].mean, 7.0);
        assert_eq!(b[0].bin_center, 12.5);
    }

    #[test]
    fn trimming_keeps_the_middle() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let keep = trim_percentiles(&v, 1.0, 99.0).unwrap();
        assert_eq!(keep.iter().filter(|&&k| k).count(), 99);
        assert!(!keep[0] && !keep[100]);
    }
}
