//! Numerical oracles: central finite differences and the conjugate
//! normal-mean model, whose ELBO and posterior have closed forms.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;

use crate::estimators::Model;
use crate::{Error, Result};

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain {
            what: "finite-difference step",
            value: step,
        });
    }
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let hi = f(&probe)?;
            probe[i] = x[i] - step;
            let lo = f(&probe)?;
            probe[i] = x[i];
            if !(hi.is_finite() && lo.is_finite()) {
                return Err(Error::NonFinite {
                    what: "finite-difference evaluation",
                });
            }
            Ok((hi - lo) / (2.0 * step))
        })
        .collect()
}

/// Prior `θ ~ N(0, τ²)`, likelihood `yᵢ ~ N(θ, σ²)`, summarised by `(N, Σy, Σy²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateOracle {
    pub prior_var: f64,
    pub lik_var: f64,
    pub n: usize,
    pub sum_y: f64,
    pub sum_y2: f64,
}

impl ConjugateOracle {
    pub fn new(prior_var: f64, lik_var: f64, ys: &[f64]) -> Self {
        ConjugateOracle {
            prior_var,
            lik_var,
            n: ys.len(),
            sum_y: ys.iter().sum(),
            sum_y2: ys.iter().map(|y| y * y).sum(),
        }
    }

    pub fn posterior_precision(&self) -> f64 {
        1.0 / self.prior_var + self.n as f64 / self.lik_var
    }

    pub fn posterior_mean(&self) -> f64 {
        (self.sum_y / self.lik_var) / self.posterior_precision()
    }

    pub fn posterior_sd(&self) -> f64 {
        self.posterior_precision().sqrt().recip()
    }

    /// `log p(y)` from the marginal `y ~ N(0, σ²I + τ²11ᵀ)`.
    pub fn log_marginal(&self) -> f64 {
        let (t2, s2, n) = (self.prior_var, self.lik_var, self.n as f64);
        let log_det = (n - 1.0) * s2.ln() + (s2 + n * t2).ln();
        let quad = self.sum_y2 / s2 - t2 * self.sum_y * self.sum_y / (s2 * (s2 + n * t2));
        -0.5 * (n * (2.0 * PI).ln() + log_det + quad)
    }

    /// Exact ELBO of `q = N(m, s²)` and its gradient in `(m, log s)`.
    pub fn closed_form_elbo(&self, m: f64, s: f64) -> Result<(f64, [f64; 2])> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain {
                what: "variational standard deviation",
                value: s,
            });
        }
        let (t2, s2, n) = (self.prior_var, self.lik_var, self.n as f64);
        let v = s * s;
        let sq_resid = self.sum_y2 - 2.0 * m * self.sum_y + n * (m * m + v);
        let expected_lik = -0.5 * n * (2.0 * PI * s2).ln() - sq_resid / (2.0 * s2);
        let expected_prior = -0.5 * (2.0 * PI * t2).ln() - (m * m + v) / (2.0 * t2);
        let entropy = 0.5 * (2.0 * PI * std::f64::consts::E * v).ln();
        let elbo = expected_lik + expected_prior + entropy;
        let d_m = (self.sum_y - n * m) / s2 - m / t2;
        let d_log_s = 1.0 - v * (n / s2 + 1.0 / t2);
        Ok((elbo, [d_m, d_log_s]))
    }
}

/// The conjugate model as a [`Model`] over `θ` directly (identity transform).
#[derive(Debug, Clone)]
pub struct ConjugateNormalModel {
    pub prior_var: f64,
    pub lik_var: f64,
    pub ys: Vec<f64>,
}

impl ConjugateNormalModel {
    pub fn new(prior_var: f64, lik_var: f64, ys: &[f64]) -> Self {
        ConjugateNormalModel {
            prior_var,
            lik_var,
            ys: ys.to_vec(),
        }
    }

    pub fn oracle(&self) -> ConjugateOracle {
        ConjugateOracle::new(self.prior_var, self.lik_var, &self.ys)
    }
}

impl Model for ConjugateNormalModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, z: &[f64]) -> Result<f64> {
        let theta = z[0];
        let lp = -0.5 * (2.0 * PI * self.prior_var).ln() - theta * theta / (2.0 * self.prior_var);
        let ll: f64 = self
            .ys
            .iter()
            .map(|y| -0.5 * (2.0 * PI * self.lik_var).ln() - (y - theta).powi(2) / (2.0 * self.lik_var))
            .sum();
        let v = lp + ll;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { what: "log joint" })
        }
    }
}

/// Counts `log_density` calls on the wrapped model.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M: Model> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        CountingModel {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<M: Model> Model for CountingModel<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, z: &[f64]) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.log_density(z)
    }

    fn initial_location(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inner.initial_location(rng)
    }

    fn dic(&self, draws: &[Vec<f64>]) -> Option<Result<f64>> {
        self.inner.dic(draws)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff(|x| Ok(x[0] * x[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        assert_eq!(finite_diff(|_| Ok(4.2), &[1.0, 2.0], 1e-5).unwrap(), vec![0.0, 0.0]);
        let g = finite_diff(|x| Ok(x.iter().sum()), &[1.0, -2.0, 7.5], 1e-5).unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(finite_diff(|x| Ok(x[0]), &[0.0], 0.0).is_err());
        assert!(finite_diff(|x| Ok(1.0 / x[0].abs().min(0.0)), &[0.0], 1e-3).is_err());
    }

    fn oracle() -> ConjugateOracle {
        ConjugateOracle::new(2.0, 0.7, &[0.3, 1.1, -0.4, 2.2, 0.9])
    }

    #[test]
    fn elbo_at_posterior_is_log_marginal() {
        let o = oracle();
        let (elbo, grad) = o.closed_form_elbo(o.posterior_mean(), o.posterior_sd()).unwrap();
        assert!((elbo - o.log_marginal()).abs() < 1e-10);
        assert!(grad.iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn standard_conjugate_posterior() {
        let ys = [0.5, 1.5, 1.0];
        let o = ConjugateOracle::new(1.0, 1.0, &ys);
        assert!((o.posterior_mean() - 3.0 / 4.0).abs() < 1e-15);
        assert!((o.posterior_sd() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let o = oracle();
        for (m, ls) in [(0.0, 0.0), (1.3, -1.2), (-2.0, 0.8), (0.4, -0.3)] {
            let (_, g) = o.closed_form_elbo(m, f64::exp(ls)).unwrap();
            let fd = finite_diff(|x| Ok(o.closed_form_elbo(x[0], x[1].exp())?.0), &[m, ls], 1e-5).unwrap();
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() / a.abs().max(1e-3) < 1e-6, "{a} vs {b}");
            }
        }
        assert!(o.closed_form_elbo(0.0, 0.0).is_err());
    }

    #[test]
    fn elbo_never_exceeds_log_marginal() {
        let o = oracle();
        let lm = o.log_marginal();
        for i in 0..20 {
            for j in 0..20 {
                let m = -3.0 + 6.0 * i as f64 / 19.0;
                let s = 0.05 + 3.0 * j as f64 / 19.0;
                assert!(o.closed_form_elbo(m, s).unwrap().0 <= lm + 1e-12);
            }
        }
    }

    #[test]
    fn model_density_matches_oracle_normalisation() {
        // ∫ p(y, θ) dθ by the trapezoid rule equals the closed-form marginal.
        let model = ConjugateNormalModel::new(2.0, 0.7, &[0.3, 1.1, -0.4, 2.2, 0.9]);
        let h = 1e-3;
        let total: f64 = (-20_000..=20_000)
            .map(|i| model.log_density(&[i as f64 * h]).unwrap().exp() * h)
            .sum();
        assert!((total.ln() - model.oracle().log_marginal()).abs() < 1e-8);
    }
}
