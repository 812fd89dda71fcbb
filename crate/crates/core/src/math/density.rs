use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `log N(x | mean, diag(var))`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    if x.len() != mean.len() || x.len() != var.len() {
        return Err(Error::Shape(format!(
            "lengths {} / {} / {} differ",
            x.len(),
            mean.len(),
            var.len()
        )));
    }
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("variance {v} is not strictly positive")));
    }
    let mut acc = 0.0;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
        let r = xi - mi;
        acc += r * r / vi + vi.ln() + (2.0 * PI).ln();
    }
    Ok(-0.5 * acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_mean() {
        let d = 4.0;
        let got = gaussian_log_density(&[1.0; 4], &[1.0; 4], &[1.0; 4]).unwrap();
        assert!((got + d / 2.0 * (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn unit_residual_in_one_dimension() {
        let got = gaussian_log_density(&[1.0], &[0.0], &[1.0]).unwrap();
        assert!((got - (-0.5 - 0.5 * (2.0 * PI).ln())).abs() < 1e-15);
    }

    #[test]
    fn matches_product_of_univariate_densities() {
        let x: [f64; 3] = [0.3, -1.2, 2.0];
        let m = [0.0, -1.0, 2.5];
        let v = [0.5, 2.0, 0.1];
        let mut density = 1.0f64;
        for i in 0..3 {
            density *= (-(x[i] - m[i]) * (x[i] - m[i]) / (2.0 * v[i])).exp() / (2.0 * PI * v[i]).sqrt();
        }
        let got = gaussian_log_density(&x, &m, &v).unwrap();
        assert!((got - density.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_variance() {
        assert!(matches!(
            gaussian_log_density(&[0.0], &[0.0], &[0.0]),
            Err(Error::Domain(_))
        ));
        assert!(gaussian_log_density(&[0.0, 1.0], &[0.0], &[1.0]).is_err());
    }
}
