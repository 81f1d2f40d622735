//! Ordinary least squares in log-log coordinates.

use serde::Serialize;

use crate::error::{Error, Result};

/// `y ≈ prefactor · x^slope`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerLaw {
    pub slope: f64,
    pub prefactor: f64,
}

impl PowerLaw {
    pub fn eval(&self, x: f64) -> f64 {
        self.prefactor * x.powf(self.slope)
    }
}

/// Fits `log y = log c + s·log x` over all pairs. Every sample must be
/// positive and at least three are needed.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLaw> {
    let got = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .count();
    if got < 3 || got != xs.len() || xs.len() != ys.len() {
        return Err(Error::InsufficientData {
            needed: 3.max(xs.len()),
            got,
        });
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("x", "fit needs at least two distinct abscissae"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(PowerLaw {
        slope,
        prefactor: (my - slope * mx).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let xs = [0.1, 0.03, 0.01, 0.003];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 2.5 * x.powf(1.7)).collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert!((f.slope - 1.7).abs() < 1e-12);
        assert!((f.prefactor - 2.5).abs() < 1e-12);
        assert!((f.eval(0.5) - 2.5 * 0.5f64.powf(1.7)).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_or_nonpositive_data() {
        assert!(matches!(
            fit_power_law(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(fit_power_law(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
        assert!(fit_power_law(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
