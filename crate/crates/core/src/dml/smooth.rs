//! Display smoothing of the per-time effect estimates: tricube-weighted
//! local linear regression over time with pointwise normal bands. Output
//! is presentation-layer only and feeds no estimation step.

use super::inference::normal_quantile;
use super::TvHteFit;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct SmoothedPoint<F: Scalar> {
    /// 1-based time index.
    pub time: usize,
    pub value: F,
    pub lower: F,
    pub upper: F,
}

#[derive(Debug, Clone)]
pub struct SmoothedCurve<F: Scalar> {
    pub coefficient: String,
    pub points: Vec<SmoothedPoint<F>>,
}

/// Smooth each coefficient's effect series with span `bandwidth` (fraction
/// of the time points in each local window). Errors when the span is
/// outside (0, 1] or leaves fewer than three points in a window.
pub fn smooth_effects<F: Scalar>(fit: &TvHteFit<F>, bandwidth: F) -> Result<Vec<SmoothedCurve<F>>> {
    let beta: Vec<Vec<F>> = fit.beta.iter().map(|b| b.iter().copied().collect()).collect();
    smooth_series(&beta, &fit.coefficient_names, bandwidth)
}

/// As [`smooth_effects`], but on a raw T×d table of per-time estimates
/// (one row per time point).
pub fn smooth_series<F: Scalar>(
    beta: &[Vec<F>],
    coefficient_names: &[String],
    bandwidth: F,
) -> Result<Vec<SmoothedCurve<F>>> {
    let b = bandwidth.to64();
    if !(b > 0.0 && b <= 1.0) {
        return Err(Error::config("smoothing bandwidth must lie in (0, 1]"));
    }
    let t_len = beta.len();
    let d = beta.first().map_or(0, Vec::len);
    if coefficient_names.len() != d {
        return Err(Error::config("coefficient name count does not match the table"));
    }
    let window = ((b * t_len as f64).ceil() as usize).min(t_len);
    if window < 3 {
        return Err(Error::config(format!(
            "smoothing window holds {window} points; at least 3 required"
        )));
    }
    let z95 = normal_quantile(0.975);

    let mut curves = Vec::with_capacity(d);
    for k in 0..d {
        let series: Vec<f64> = (0..t_len).map(|t| beta[t][k].to64()).collect();
        let mut points = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (value, se) = local_linear(&series, t, window);
            points.push(SmoothedPoint {
                time: t + 1,
                value: F::cast(value),
                lower: F::cast(value - z95 * se),
                upper: F::cast(value + z95 * se),
            });
        }
        curves.push(SmoothedCurve { coefficient: coefficient_names[k].clone(), points });
    }
    Ok(curves)
}

/// Tricube-weighted local linear fit at index `at`, over the `window`
/// nearest points. Returns the smoothed value and a pointwise standard
/// error from the weighted residual variance.
fn local_linear(series: &[f64], at: usize, window: usize) -> (f64, f64) {
    let t_len = series.len();
    let mut idx: Vec<usize> = (0..t_len).collect();
    idx.sort_by_key(|&j| (j.abs_diff(at), j));
    let local = &idx[..window];
    let h = local.iter().map(|&j| j.abs_diff(at)).max().unwrap() as f64;

    // Tricube weights; the farthest point gets weight zero when h > 0.
    let weights: Vec<f64> = local
        .iter()
        .map(|&j| {
            if h == 0.0 {
                1.0
            } else {
                let u = j.abs_diff(at) as f64 / h;
                let w = (1.0 - u * u * u).max(0.0);
                w * w * w
            }
        })
        .collect();

    // Weighted least squares on (1, t - at).
    let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (pos, &j) in local.iter().enumerate() {
        let w = weights[pos];
        let x = j as f64 - at as f64;
        let y = series[j];
        sw += w;
        swx += w * x;
        swxx += w * x * x;
        swy += w * y;
        swxy += w * x * y;
    }
    let det = sw * swxx - swx * swx;
    let (intercept, slope) = if det.abs() > 1e-300 {
        ((swxx * swy - swx * swxy) / det, (sw * swxy - swx * swy) / det)
    } else {
        (swy / sw, 0.0)
    };

    // Weighted residual variance and the variance of the local estimate
    // through its equivalent smoother weights l_j.
    let mut wrss = 0.0;
    let mut l2 = 0.0;
    for (pos, &j) in local.iter().enumerate() {
        let w = weights[pos];
        let x = j as f64 - at as f64;
        let r = series[j] - intercept - slope * x;
        wrss += w * r * r;
        let l = if det.abs() > 1e-300 { w * (swxx - swx * x) / det } else { w / sw };
        l2 += l * l;
    }
    let sigma2 = if sw > 0.0 { wrss / sw } else { 0.0 };
    (intercept, (sigma2 * l2).sqrt())
}
