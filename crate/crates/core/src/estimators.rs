//! Score-function gradient and ELBO estimates from a shared set of draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::family::{self, VariationalParams};
use crate::par::{self, Execution};
use crate::sequences::SequenceSource;
use crate::{Error, Result};

/// A target density over an unconstrained parameter vector.
pub trait Model: Sync {
    /// Length of the unconstrained vector.
    fn dim(&self) -> usize;

    /// `log p(y, constrain(z)) + log |det J(z)|`.
    fn log_density(&self, z: &[f64]) -> Result<f64>;

    /// Starting location for the variational mean.
    fn initial_location(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let init = Normal::new(0.0, 0.1).expect("valid sd");
        (0..self.dim()).map(|_| init.sample(rng)).collect()
    }

    /// DIC from unconstrained posterior draws, when the model defines one.
    fn dic(&self, _draws: &[Vec<f64>]) -> Option<Result<f64>> {
        None
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, z: &[f64]) -> Result<f64> {
        (**self).log_density(z)
    }
    fn initial_location(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (**self).initial_location(rng)
    }
    fn dic(&self, draws: &[Vec<f64>]) -> Option<Result<f64>> {
        (**self).dic(draws)
    }
}

/// Gradient and ELBO estimates computed from the same `draws_used` draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    /// Estimate of `∇_λ L`, laid out as `[∂/∂m | ∂/∂log s]`.
    pub grad: Vec<f64>,
    pub elbo: f64,
    pub draws_used: usize,
}

/// Averages `score(λ, z)·w(z)` and `w(z)` over `s` draws, where
/// `w(z) = log p(y, θ(z)) + log|J(z)| - log q(z|λ)`.
///
/// Points are pulled from `src` in order; density evaluations may run in
/// parallel but the reduction is always sequential.
pub fn estimate<M: Model + ?Sized>(
    lambda: &VariationalParams,
    model: &M,
    src: &mut SequenceSource,
    s: usize,
    exec: Execution,
) -> Result<GradientSample> {
    if s == 0 {
        return Err(Error::Shape {
            what: "draws per estimate",
            expected: 1,
            got: 0,
        });
    }
    let d = lambda.dim();
    if src.dim() != d || model.dim() != d {
        return Err(Error::Shape {
            what: "sequence / model dimension",
            expected: d,
            got: if src.dim() != d { src.dim() } else { model.dim() },
        });
    }
    let points: Vec<Vec<f64>> = (0..s).map(|_| src.next_point()).collect();
    let evaluated = par::map(exec, &points, |u| -> Result<(Vec<f64>, f64)> {
        let z = family::sample_z(lambda, u)?;
        let w = match model.log_density(&z) {
            Ok(lp) => lp - family::log_q(lambda, &z)?,
            Err(Error::NonFinite { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        if !w.is_finite() {
            return Err(Error::NonFiniteDraw { value: w, z });
        }
        Ok((z, w))
    });

    let mut grad = vec![0.0; 2 * d];
    let mut elbo = 0.0;
    for item in evaluated {
        let (z, w) = item?;
        for (g, sc) in grad.iter_mut().zip(family::score(lambda, &z)?) {
            *g += sc * w;
        }
        elbo += w;
    }
    let inv = 1.0 / s as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    elbo *= inv;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient estimate",
        });
    }
    Ok(GradientSample {
        grad,
        elbo,
        draws_used: s,
    })
}

/// `λ + ρ·grad`.
pub fn update_step(lambda: &VariationalParams, grad: &[f64], rho: f64) -> Result<VariationalParams> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Domain {
            what: "learning rate",
            value: rho,
        });
    }
    let flat = lambda.to_flat();
    if grad.len() != flat.len() {
        return Err(Error::Shape {
            what: "gradient",
            expected: flat.len(),
            got: grad.len(),
        });
    }
    let next: Vec<f64> = flat.iter().zip(grad).map(|(x, g)| x + rho * g).collect();
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "updated variational parameters",
        });
    }
    VariationalParams::from_flat(&next)
}

/// Seeds a fresh ChaCha stream; `stream` separates independent uses of one seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
