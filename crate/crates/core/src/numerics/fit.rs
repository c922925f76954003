//! Small least-squares helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope estimated from the residuals.
    pub slope_std_error: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 paired points, got {} x and {} y",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - xm).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_std_error = (rss / (n - 2.0) / sxx).sqrt();
    Ok(LineFit {
        slope,
        intercept,
        slope_std_error,
    })
}

/// Least-squares polynomial coefficients (lowest order first) and the RMS residual.
pub fn fit_polynomial(x: &[f64], y: &[f64], degree: usize) -> Result<(Vec<f64>, f64)> {
    if x.len() != y.len() || x.len() <= degree {
        return Err(Error::Fit(format!(
            "degree {degree} fit needs more than {degree} points, got {}",
            x.len()
        )));
    }
    let a = DMatrix::from_fn(x.len(), degree + 1, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let coef = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let resid = &a * &coef - &b;
    let rms = (resid.norm_squared() / x.len() as f64).sqrt();
    Ok((coef.iter().copied().collect(), rms))
}

/// Slope of `ln y` against `ln x`, i.e. the exponent of a power law.
pub fn power_law_exponent(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return Err(Error::Fit("power-law fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    if lx.len() == 2 {
        return Ok((ly[1] - ly[0]) / (lx[1] - lx[0]));
    }
    Ok(fit_line(&lx, &ly)?.slope)
}

fn sinusoid_residual(t: &[f64], y: &[f64], omega: f64) -> f64 {
    let a = DMatrix::from_fn(t.len(), 3, |i, j| match j {
        0 => (omega * t[i]).cos(),
        1 => (omega * t[i]).sin(),
        _ => 1.0,
    });
    let b = DVector::from_column_slice(y);
    match a.clone().svd(true, true).solve(&b, 1e-14) {
        Ok(c) => (&a * c - b).norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

/// Angular frequency in `[omega_lo, omega_hi]` of the least-squares fit
/// `y ≈ a cos ωt + b sin ωt + c`. Samples need not be uniform.
pub fn fit_sinusoid_frequency(t: &[f64], y: &[f64], omega_lo: f64, omega_hi: f64) -> Result<f64> {
    if t.len() != y.len() || t.len() < 4 {
        return Err(Error::Fit("need at least 4 paired samples".into()));
    }
    if !(omega_hi > omega_lo && omega_lo > 0.0) {
        return Err(Error::Fit("frequency bracket must be positive and ordered".into()));
    }
    let scan = 400;
    let grid: Vec<f64> = (0..=scan).map(|k| omega_lo + (omega_hi - omega_lo) * k as f64 / scan as f64).collect();
    let res: Vec<f64> = grid.iter().map(|&w| sinusoid_residual(t, y, w)).collect();
    let best = (0..=scan).min_by(|&i, &j| res[i].total_cmp(&res[j])).unwrap();
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(scan)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (sinusoid_residual(t, y, x1), sinusoid_residual(t, y, x2));
    for _ in 0..100 {
        if hi - lo <= 1e-13 * hi {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = sinusoid_residual(t, y, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = sinusoid_residual(t, y, x2);
        }
    }
    Ok(0.5 * (lo + hi))
}
