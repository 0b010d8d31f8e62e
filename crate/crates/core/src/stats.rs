//! Rank correlation, log-linear scaling fits with extrapolation, and count
//! rescaling for simulated corpus sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average ranks (1-based); tied values share the mean of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean of ranks i+1..=j+1.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mean_x) * (b - mean_y);
        var_x += (a - mean_x) * (a - mean_x);
        var_y += (b - mean_y) * (b - mean_y);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::invalid("correlation undefined for a constant vector"));
    }
    Ok(cov / (var_x * var_y).sqrt())
}

/// Spearman rank correlation with average-rank tie handling: the Pearson
/// correlation of the two rank vectors.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {} values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("need at least 2 paired values"));
    }
    if x.iter().any(|v| v.is_nan()) || y.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN value in correlation input"));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Ordinary least-squares fit of accuracy against log10(parameter count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Accuracy gained per decade of parameters.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// The fitted sample as (log10 params, accuracy).
    pub points: Vec<(f64, f64)>,
}

impl ScalingFit {
    /// Fitted accuracy at a parameter count.
    pub fn accuracy_at(&self, params: f64) -> f64 {
        self.slope * params.log10() + self.intercept
    }
}

/// Fit accuracy = slope * log10(params) + intercept by least squares.
pub fn fit_log_linear(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least 2 points to fit"));
    }
    for &(params, accuracy) in points {
        if params < 1.0 || !params.is_finite() {
            return Err(Error::invalid(format!("parameter count {params} must be >= 1")));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::invalid(format!("accuracy {accuracy} outside [0,1]")));
        }
    }
    let xs: Vec<f64> = points.iter().map(|&(p, _)| p.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, a)| a).collect();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::invalid("all parameter counts identical, fit undefined"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        let fitted = slope * x + intercept;
        ss_res += (y - fitted) * (y - fitted);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        points: xs.into_iter().zip(ys).collect(),
    })
}

/// Parameter count at which the fitted line reaches `target_accuracy`:
/// 10^((target - intercept) / slope). Requires a positive slope.
pub fn extrapolate_size(fit: &ScalingFit, target_accuracy: f64) -> Result<f64> {
    if fit.slope <= 0.0 {
        return Err(Error::invalid(format!(
            "extrapolation undefined for non-positive slope {}",
            fit.slope
        )));
    }
    if !(target_accuracy > 0.0 && target_accuracy <= 1.0) {
        return Err(Error::invalid(format!(
            "target accuracy {target_accuracy} outside (0,1]"
        )));
    }
    Ok(10f64.powf((target_accuracy - fit.intercept) / fit.slope))
}

/// Multiply counts by a factor, rounding half-up; zero stays zero. Models a
/// corpus scaled to a different size. Strictly order-preserving for factors
/// >= 1; smaller factors can merge neighboring counts by rounding.
pub fn scale_counts(counts: &[u64], factor: f64) -> Result<Vec<u64>> {
    if !factor.is_finite() || factor <= 0.0 {
        return Err(Error::invalid(format!("scale factor {factor} must be > 0")));
    }
    Ok(counts.iter().map(|&c| (c as f64 * factor).round() as u64).collect())
}
