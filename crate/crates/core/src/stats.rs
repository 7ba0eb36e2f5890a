//! Small estimators shared by the Monte Carlo modules.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MeanSe { mean, se: (var / n as f64).sqrt(), n }
}

/// Two-sided t quantile for a `level` interval with `dof` degrees of freedom.
pub fn t_quantile(level: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::invalid("a t interval needs at least two observations"));
    }
    let t = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(t.inverse_cdf(0.5 + level / 2.0))
}

/// Mean ± t·SE.
pub fn t_interval(xs: &[f64], level: f64) -> Result<(f64, f64)> {
    let m = mean_se(xs);
    let q = t_quantile(level, xs.len().saturating_sub(1))?;
    Ok((m.mean - q * m.se, m.mean + q * m.se))
}

/// X̄/Ȳ per component with delta-method standard errors from paired
/// samples (x_i, y_i): Var ≈ Var(x − R y)/(n Ȳ²).
pub fn ratio_estimate(num: &[Vec<f64>], den: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = den.len();
    if n == 0 || num.len() != n {
        return Err(Error::invalid("ratio estimate needs matching non-empty samples"));
    }
    let d = mean_se(den);
    if !(d.mean > 0.0) || (n > 1 && d.mean <= 2.0 * d.se) {
        return Err(Error::DegenerateEstimate(format!(
            "denominator {:.3e} ± {:.3e} is consistent with 0",
            d.mean, d.se
        )));
    }
    let k = num[0].len();
    let mut ratio = vec![0.0; k];
    let mut se = vec![0.0; k];
    for c in 0..k {
        let mx = num.iter().map(|v| v[c]).sum::<f64>() / n as f64;
        let r = mx / d.mean;
        let resid: Vec<f64> = num.iter().zip(den).map(|(v, y)| v[c] - r * y).collect();
        let var = if n > 1 {
            resid.iter().map(|u| u * u).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        ratio[c] = r;
        se[c] = (var / n as f64).sqrt() / d.mean;
    }
    Ok((ratio, se))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
}

/// Weighted least squares y = a + b x with weights 1/σ². Standard errors
/// come from the weights alone (known variances).
pub fn wls_line(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<LineFit> {
    if x.len() < 2 || x.len() != y.len() || x.len() != sigma.len() {
        return Err(Error::invalid("a line fit needs at least two matched points"));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("every point needs a positive standard error"));
    }
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let s: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = s * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::invalid("line fit needs at least two distinct x values"));
    }
    Ok(LineFit {
        intercept: (sxx * sy - sx * sxy) / det,
        slope: (s * sxy - sx * sy) / det,
        intercept_se: (sxx / det).sqrt(),
        slope_se: (s / det).sqrt(),
    })
}

/// Weighted least squares for y = a + b x + c x², returning (a, b, c) and
/// the standard error of c.
pub fn wls_quadratic(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<([f64; 3], f64)> {
    if x.len() < 3 || x.len() != y.len() || x.len() != sigma.len() {
        return Err(Error::invalid("a quadratic fit needs at least three matched points"));
    }
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut b = nalgebra::Vector3::<f64>::zeros();
    for ((x, y), s) in x.iter().zip(y).zip(sigma) {
        let w = 1.0 / (s * s);
        let phi = [1.0, *x, x * x];
        for i in 0..3 {
            b[i] += w * phi[i] * y;
            for j in 0..3 {
                a[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::invalid("quadratic fit needs three distinct x values"))?;
    let c = inv * b;
    Ok(([c[0], c[1], c[2]], inv[(2, 2)].sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wls_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|x| 3.0 - 0.5 * x).collect();
        let f = wls_line(&x, &y, &[0.1, 0.2, 0.1, 0.3]).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 3.0).abs() < 1e-12);
        // Unweighted slope SE for σ = 1: 1/√Sxx.
        let g = wls_line(&x, &y, &[1.0; 4]).unwrap();
        let mx = 7.0 / 4.0;
        let sxx: f64 = x.iter().map(|x| (x - mx) * (x - mx)).sum();
        assert!((g.slope_se - 1.0 / sxx.sqrt()).abs() < 1e-12);
        let (c, _) = wls_quadratic(&x, &y, &[1.0; 4]).unwrap();
        assert!(c[2].abs() < 1e-10);
    }

    #[test]
    fn ratio_of_proportional_samples_is_exact() {
        let den = [1.0, 2.0, 3.0];
        let num: Vec<Vec<f64>> = den.iter().map(|y| vec![0.25 * y]).collect();
        let (r, se) = ratio_estimate(&num, &den).unwrap();
        assert!((r[0] - 0.25).abs() < 1e-15 && se[0] < 1e-15);
        assert!(ratio_estimate(&vec![vec![1.0]; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn t_quantile_large_dof_is_normal() {
        assert!((t_quantile(0.95, 100_000).unwrap() - 1.959964).abs() < 1e-4);
        assert!((t_quantile(0.95, 7).unwrap() - 2.364624).abs() < 1e-5);
    }
}
