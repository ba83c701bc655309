//! Least-squares fit of `e_k ≈ q₁·q₀^k`.

use nalgebra::DVector;

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub q0: f64,
    pub q1: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `ln e_k = ln q₁ + k ln q₀` over `errors[k]`, `k = 0, 1, …`.
pub fn fit_linear_rate(errors: &[f64]) -> Result<RateFit, AnalysisError> {
    let ks: Vec<f64> = (0..errors.len()).map(|k| k as f64).collect();
    fit_rate_points(&ks, errors)
}

/// Same fit over explicit iteration indices.
pub fn fit_rate_points(ks: &[f64], errors: &[f64]) -> Result<RateFit, AnalysisError> {
    assert_eq!(ks.len(), errors.len(), "one index per error");
    if errors.len() < 3 {
        return Err(AnalysisError::InsufficientData(errors.len()));
    }
    if let Some(i) = errors.iter().position(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(AnalysisError::NonPositiveError(i));
    }
    let n = errors.len() as f64;
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k_mean = ks.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = ks.iter().map(|k| (k - k_mean).powi(2)).sum();
    let sxy: f64 = ks.iter().zip(&ys).map(|(k, y)| (k - k_mean) * (y - y_mean)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = y_mean - slope * k_mean;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let ss_res: f64 = ks
        .iter()
        .zip(&ys)
        .map(|(k, y)| (y - intercept - slope * k).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit {
        q0: slope.exp(),
        q1: intercept.exp(),
        r_squared,
        points: errors.len(),
    })
}

/// Distances `‖x_k − x_last‖` with their indices, dropping exact zeros.
pub fn errors_to_last(xs: &[DVector<f64>]) -> (Vec<f64>, Vec<f64>) {
    let Some(last) = xs.last() else {
        return (Vec::new(), Vec::new());
    };
    xs.iter()
        .enumerate()
        .map(|(k, x)| (k as f64, (x - last).norm()))
        .filter(|(_, e)| *e > 0.0)
        .unzip()
}

/// Rate of `x_k → x_last`, the final iterate standing in for the limit.
pub fn fit_trace_rate(xs: &[DVector<f64>]) -> Result<RateFit, AnalysisError> {
    let (ks, errors) = errors_to_last(xs);
    fit_rate_points(&ks, &errors)
}
