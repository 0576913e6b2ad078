//! Simple linear regression with an exact Student-t p-value for the slope.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub slope: f64,
    pub intercept: f64,
    #[serde(rename = "r2")]
    pub r_squared: f64,
    /// Two-sided p-value for the null hypothesis `slope == 0`.
    #[serde(rename = "p")]
    pub p_value: f64,
    pub n: usize,
}

/// Two-sided tail `P(|T| >= |t|)` of Student's t with `df` degrees of freedom.
pub fn t_tail(t: f64, df: u32) -> Result<f64> {
    if df < 1 {
        return Err(Error::InvalidConfig("t distribution needs df >= 1".into()));
    }
    if t.is_nan() {
        return Err(Error::InvalidConfig("t statistic is NaN".into()));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let df = f64::from(df);
    let x = df / (df + t * t);
    Ok(beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0))
}

/// Ordinary least squares fit of `y = slope * x + intercept`.
///
/// Constant `y` is reported as no relationship (slope 0, R² 0, p 1).
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<RegressionReport> {
    if x.len() != y.len() {
        return Err(Error::InvalidConfig(format!("{} x values for {} y values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("regression needs at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("regression inputs must be finite".into()));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mean_x, yi - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("x is constant, slope is undefined".into()));
    }
    if syy == 0.0 {
        return Ok(RegressionReport {
            slope: 0.0,
            intercept: mean_y,
            r_squared: 0.0,
            p_value: 1.0,
            n,
        });
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let e = yi - (slope * xi + intercept);
            e * e
        })
        .sum();
    let r_squared = (1.0 - ss_res / syy).clamp(0.0, 1.0);
    let df = n - 2;
    let se = (ss_res / df as f64 / sxx).sqrt();
    let p_value = if se == 0.0 {
        0.0
    } else {
        t_tail(slope / se, df as u32)?
    };
    Ok(RegressionReport {
        slope,
        intercept,
        r_squared,
        p_value,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-sided tail by Simpson integration of the t density over [0, |t|].
    fn tail_by_quadrature(t: f64, df: u32) -> f64 {
        let nu = f64::from(df);
        let ln_c = statrs::function::gamma::ln_gamma((nu + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln();
        let density = |x: f64| (ln_c - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln()).exp();
        let steps = 20_000;
        let h = t.abs() / steps as f64;
        let mut sum = density(0.0) + density(t.abs());
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * density(i as f64 * h);
        }
        1.0 - 2.0 * sum * h / 3.0
    }

    #[test]
    fn t_tail_examples() {
        assert_eq!(t_tail(0.0, 7).unwrap(), 1.0);
        assert!((t_tail(1.0, 1).unwrap() - 0.5).abs() < 1e-8);
        assert!(t_tail(1e6, 3).unwrap() < 1e-12);
        assert_eq!(t_tail(f64::INFINITY, 3).unwrap(), 0.0);
        assert!(t_tail(1.0, 0).is_err());
        assert_eq!(t_tail(-2.0, 5).unwrap(), t_tail(2.0, 5).unwrap());
    }

    #[test]
    fn t_tail_matches_quadrature_grid() {
        for &df in &[1u32, 2, 5, 30] {
            let mut last = 1.0;
            for k in 1..=5 {
                let t = k as f64 * 0.8;
                let p = t_tail(t, df).unwrap();
                assert!((p - tail_by_quadrature(t, df)).abs() < 1e-8, "df={df} t={t}");
                assert!(p < last);
                last = p;
            }
        }
    }

    #[test]
    fn perfect_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let r = ols_fit(&x, &y).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!((r.intercept - 1.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!(r.p_value < 1e-9);
    }

    #[test]
    fn constant_inputs() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let r = ols_fit(&x, &[3.0; 10]).unwrap();
        assert_eq!((r.slope, r.r_squared, r.p_value), (0.0, 0.0, 1.0));
        assert!(ols_fit(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]).is_err());
        assert!(ols_fit(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(ols_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn four_point_fixture() {
        // reference values from scipy.stats.linregress
        let r = ols_fit(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r.slope - 0.6).abs() < 1e-12);
        assert!((r.intercept - 1.0).abs() < 1e-12);
        assert!((r.r_squared - 0.36).abs() < 1e-12);
        assert!((r.p_value - 0.4).abs() < 1e-9);
    }

    #[test]
    fn json_keys() {
        let r = ols_fit(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        let v = serde_json::to_value(r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["intercept", "n", "p", "r2", "slope"]);
    }
}
