use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest kernel width returned by [`adaptive_sigma`].
pub const SIGMA_MIN: f64 = 1e-2;

const JITTER_STEPS: usize = 3;

/// Kernel width `tau * ln(tau^3 / len)`, floored at [`SIGMA_MIN`]. Shorter
/// trajectories are smoothed harder.
pub fn adaptive_sigma(traj_len: usize, tau: f64) -> f64 {
    let len = traj_len.max(1) as f64;
    (tau * (tau.powi(3) / len).ln()).max(SIGMA_MIN)
}

pub fn rbf_kernel(t: &[f64], sigma: f64) -> DMatrix<f64> {
    let two_s2 = 2.0 * sigma * sigma;
    DMatrix::from_fn(t.len(), t.len(), |i, j| {
        let d = t[i] - t[j];
        (-(d * d) / two_s2).exp()
    })
}

/// Least-squares line `a + b t` through `(t, y)`, evaluated at `t`.
pub fn linear_trend(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|ti| (ti - tm) * (ti - tm)).sum();
    let sty: f64 = t.iter().zip(y).map(|(ti, yi)| (ti - tm) * (yi - ym)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    t.iter().map(|ti| ym + slope * (ti - tm)).collect()
}

/// Posterior mean at the training inputs of a GP with an RBF kernel of
/// width `sigma`, noise variance `noise`, and a least-squares linear trend as
/// the prior mean. The Cholesky factorization is retried with growing jitter
/// before giving up.
pub fn gp_posterior_mean(t: &[f64], y: &[f64], sigma: f64, noise: f64) -> Result<Vec<f64>> {
    if t.len() != y.len() {
        return Err(Error::invalid("time and value lengths differ"));
    }
    if t.len() < 2 {
        return Ok(y.to_vec());
    }
    let trend = linear_trend(t, y);
    let resid = DVector::from_iterator(y.len(), y.iter().zip(&trend).map(|(a, b)| a - b));
    let k = rbf_kernel(t, sigma);

    let mut jitter = 0.0;
    for attempt in 0..=JITTER_STEPS {
        let mut a = k.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += noise + jitter;
        }
        if let Some(chol) = a.cholesky() {
            let alpha = chol.solve(&resid);
            let fit = &k * alpha;
            return Ok(trend.iter().zip(fit.iter()).map(|(m, f)| m + f).collect());
        }
        jitter = if attempt == 0 { noise.max(1e-12) * 10.0 } else { jitter * 10.0 };
    }
    Err(Error::Numerical(format!(
        "kernel matrix not positive definite after {JITTER_STEPS} jitter increases"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_examples() {
        assert!((adaptive_sigma(10, 5.5) - 5.5 * (5.5f64.powi(3) / 10.0).ln()).abs() < 1e-12);
        assert!((adaptive_sigma(10, 5.5) - 15.4641).abs() < 1e-3);
        // 5.5 * ln(166.375 / 166) is about 0.0124, just above the floor.
        assert!((adaptive_sigma(166, 5.5) - 0.012411).abs() < 1e-5);
        assert_eq!(adaptive_sigma(167, 5.5), SIGMA_MIN);
        assert_eq!(adaptive_sigma(10_000, 5.5), SIGMA_MIN);
        assert!(adaptive_sigma(20, 5.5) > adaptive_sigma(40, 5.5));
    }

    #[test]
    fn linear_data_is_a_fixed_point() {
        let t: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = t.iter().map(|x| 3.0 - 0.7 * x).collect();
        let m = gp_posterior_mean(&t, &y, 12.0, 0.01).unwrap();
        for (a, b) in m.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn two_points_stay_close() {
        let m = gp_posterior_mean(&[0.0, 1.0], &[1.0, 4.0], 15.0, 0.01).unwrap();
        assert!((m[0] - 1.0).abs() < 0.1 && (m[1] - 4.0).abs() < 0.1);
    }
}
