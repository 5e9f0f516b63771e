//! Mean-field Gaussian variational family over unconstrained parameters.
//!
//! For the mixture model the unconstrained vector is laid out as
//! `[logits (K-1) | means (K·p) | log-sds (K·p)]`. Weights are a softmax of
//! the logits against a reference category pinned at zero, standard
//! deviations are exponentials, and means pass through unchanged.

use rand_chacha::ChaCha8Rng;

use crate::estimators::Model;
use crate::model::{GmmParams, GmmSpec};
use crate::sequences::normal::ppnd16;
use crate::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Initial log standard deviation of every coordinate.
pub const INIT_LOG_S: f64 = -1.0;

/// Variational parameters `λ = (m, log s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    m: Vec<f64>,
    log_s: Vec<f64>,
}

impl VariationalParams {
    pub fn new(m: Vec<f64>, log_s: Vec<f64>) -> Result<Self> {
        if m.len() != log_s.len() {
            return Err(Error::Shape {
                what: "variational log_s",
                expected: m.len(),
                got: log_s.len(),
            });
        }
        if m.iter().chain(&log_s).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "variational parameters",
            });
        }
        Ok(VariationalParams { m, log_s })
    }

    /// `m` from the model's initial location, every `log s` at [`INIT_LOG_S`].
    pub fn init<M: Model + ?Sized>(model: &M, rng: &mut ChaCha8Rng) -> Self {
        let m = model.initial_location(rng);
        let d = m.len();
        VariationalParams {
            m,
            log_s: vec![INIT_LOG_S; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.m
    }

    pub fn log_sd(&self) -> &[f64] {
        &self.log_s
    }

    /// `(m, log s)` concatenated, the layout used by gradients.
    pub fn to_flat(&self) -> Vec<f64> {
        self.m.iter().chain(&self.log_s).copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Shape {
                what: "flat variational vector",
                expected: flat.len() + 1,
                got: flat.len(),
            });
        }
        let d = flat.len() / 2;
        Self::new(flat[..d].to_vec(), flat[d..].to_vec())
    }

    fn check(&self, what: &'static str, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::Shape {
                what,
                expected: self.dim(),
                got: len,
            })
        }
    }
}

/// `z = m + exp(log s) ⊙ Φ⁻¹(u)`.
pub fn sample_z(lambda: &VariationalParams, u: &[f64]) -> Result<Vec<f64>> {
    lambda.check("unit point", u.len())?;
    u.iter()
        .zip(lambda.m.iter().zip(&lambda.log_s))
        .map(|(&ui, (&m, &ls))| {
            if ui > 0.0 && ui < 1.0 {
                Ok(m + ls.exp() * ppnd16(ui))
            } else {
                Err(Error::Domain {
                    what: "unit point coordinate",
                    value: ui,
                })
            }
        })
        .collect()
}

/// One draw from `q(·|λ)` for the mixture model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDraw {
    pub z: Vec<f64>,
    pub theta: GmmParams,
    pub log_det_jacobian: f64,
}

pub fn sample(spec: &GmmSpec, lambda: &VariationalParams, u: &[f64]) -> Result<ParamDraw> {
    let z = sample_z(lambda, u)?;
    let (theta, log_det_jacobian) = constrain(spec, &z)?;
    Ok(ParamDraw {
        z,
        theta,
        log_det_jacobian,
    })
}

/// `Σᵢ log N(zᵢ | mᵢ, sᵢ²)`.
pub fn log_q(lambda: &VariationalParams, z: &[f64]) -> Result<f64> {
    lambda.check("log_q point", z.len())?;
    let v: f64 = z
        .iter()
        .zip(lambda.m.iter().zip(&lambda.log_s))
        .map(|(&zi, (&m, &ls))| {
            let e = (zi - m) * (-ls).exp();
            -HALF_LN_2PI - ls - 0.5 * e * e
        })
        .sum();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what: "log_q" })
    }
}

/// `∇_λ log q(z|λ)` as `[∂/∂m | ∂/∂log s]`.
pub fn score(lambda: &VariationalParams, z: &[f64]) -> Result<Vec<f64>> {
    lambda.check("score point", z.len())?;
    let d = lambda.dim();
    let mut out = vec![0.0; 2 * d];
    for i in 0..d {
        let inv_var = (-2.0 * lambda.log_s[i]).exp();
        let diff = z[i] - lambda.m[i];
        out[i] = diff * inv_var;
        out[d + i] = diff * diff * inv_var - 1.0;
    }
    Ok(out)
}

/// Offset of component `c`'s mean block in the unconstrained vector.
pub fn mean_offset(spec: &GmmSpec, c: usize) -> usize {
    spec.k - 1 + c * spec.p
}

/// Offset of component `c`'s log-sd block in the unconstrained vector.
pub fn log_sd_offset(spec: &GmmSpec, c: usize) -> usize {
    spec.k - 1 + spec.k * spec.p + c * spec.p
}

/// Maps an unconstrained vector to mixture parameters and `log |det J|`.
pub fn constrain(spec: &GmmSpec, z: &[f64]) -> Result<(GmmParams, f64)> {
    let d = spec.unconstrained_dim();
    if z.len() != d {
        return Err(Error::Shape {
            what: "unconstrained vector",
            expected: d,
            got: z.len(),
        });
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "unconstrained vector",
        });
    }
    let (k, p) = (spec.k, spec.p);
    let logits = &z[..k - 1];
    let max = logits.iter().copied().fold(0.0, f64::max);
    let norm = max + ((-max).exp() + logits.iter().map(|l| (l - max).exp()).sum::<f64>()).ln();
    let log_w: Vec<f64> = logits.iter().map(|l| l - norm).chain(std::iter::once(-norm)).collect();
    let weights: Vec<f64> = log_w.iter().map(|l| l.exp()).collect();

    let means = (0..k)
        .map(|c| z[mean_offset(spec, c)..mean_offset(spec, c) + p].to_vec())
        .collect();
    let log_sds = &z[log_sd_offset(spec, 0)..];
    let sds: Vec<Vec<f64>> = log_sds
        .chunks_exact(p)
        .map(|c| c.iter().map(|x| x.exp()).collect())
        .collect();

    // Additive-logistic inverse: |J| = ∏ wₖ over all K weights.
    let log_det = log_w.iter().sum::<f64>() + log_sds.iter().sum::<f64>();
    if !log_det.is_finite() || sds.iter().flatten().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::NonFinite {
            what: "constrained parameters",
        });
    }
    Ok((GmmParams { weights, means, sds }, log_det))
}

/// Inverse of [`constrain`].
pub fn unconstrain(spec: &GmmSpec, theta: &GmmParams) -> Result<Vec<f64>> {
    theta.validate(spec)?;
    let k = spec.k;
    let last = theta.weights[k - 1].ln();
    let mut z: Vec<f64> = theta.weights[..k - 1].iter().map(|w| w.ln() - last).collect();
    z.extend(theta.means.iter().flatten());
    z.extend(theta.sds.iter().flatten().map(|s| s.ln()));
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "unconstrained image",
        });
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{SequenceKind, SequenceSource};
    use crate::validation::finite_diff;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_logits_give_uniform_weights() {
        let spec = GmmSpec::new(4, 1);
        let z = vec![0.0; spec.unconstrained_dim()];
        let (theta, _) = constrain(&spec, &z).unwrap();
        for w in theta.weights {
            assert!((w - 0.25).abs() < 1e-15);
        }
        assert!(theta.sds.iter().flatten().all(|&s| s == 1.0));
    }

    #[test]
    fn constrain_errors() {
        let spec = GmmSpec::new(2, 1);
        assert!(matches!(constrain(&spec, &[0.0; 3]), Err(Error::Shape { .. })));
        assert!(matches!(
            constrain(&spec, &[0.0, f64::NAN, 0.0, 0.0, 0.0]),
            Err(Error::NonFinite { .. })
        ));
    }

    fn log_abs_det(m: &[Vec<f64>]) -> f64 {
        // Gaussian elimination with partial pivoting.
        let n = m.len();
        let mut a = m.to_vec();
        let mut acc = 0.0;
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            acc += a[c][c].abs().ln();
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for j in c..n {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
        acc
    }

    #[test]
    fn log_det_matches_numerical_jacobian() {
        // Free coordinates of θ: first K-1 weights, means, sds.
        let spec = GmmSpec::new(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let z: Vec<f64> = (0..spec.unconstrained_dim())
                .map(|_| rng.random_range(-1.5..1.5))
                .collect();
            let flat = |z: &[f64]| {
                let (t, _) = constrain(&spec, z).unwrap();
                let mut v = t.weights[..2].to_vec();
                v.extend(t.means.iter().flatten());
                v.extend(t.sds.iter().flatten());
                v
            };
            let d = z.len();
            let h = 1e-6;
            let jac: Vec<Vec<f64>> = (0..d)
                .map(|row| {
                    (0..d)
                        .map(|col| {
                            let (mut a, mut b) = (z.clone(), z.clone());
                            a[col] += h;
                            b[col] -= h;
                            (flat(&a)[row] - flat(&b)[row]) / (2.0 * h)
                        })
                        .collect()
                })
                .collect();
            let (_, ld) = constrain(&spec, &z).unwrap();
            assert!((ld - log_abs_det(&jac)).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn round_trip_k3_p2(z in prop::collection::vec(-5.0f64..5.0, 14)) {
            let spec = GmmSpec::new(3, 2);
            let (theta, _) = constrain(&spec, &z).unwrap();
            let back = unconstrain(&spec, &theta).unwrap();
            let (again, _) = constrain(&spec, &back).unwrap();
            for (a, b) in back.iter().zip(&z) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((theta.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in again.weights.iter().zip(&theta.weights) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn lambda(m: &[f64], ls: &[f64]) -> VariationalParams {
        VariationalParams::new(m.to_vec(), ls.to_vec()).unwrap()
    }

    #[test]
    fn sample_examples() {
        let l = lambda(&[1.0, -2.0, 0.5], &[0.3, -0.2, 0.0]);
        assert_eq!(sample_z(&l, &[0.5; 3]).unwrap(), vec![1.0, -2.0, 0.5]);
        let tight = lambda(&[1.0, -2.0], &[-40.0, -40.0]);
        let z = sample_z(&tight, &[0.01, 0.99]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] + 2.0).abs() < 1e-15);
        assert!(matches!(sample_z(&l, &[0.5; 2]), Err(Error::Shape { .. })));

        let spec = GmmSpec::new(2, 1);
        let l = lambda(&[0.0; 5], &[-1.0; 5]);
        let draw = sample(&spec, &l, &[0.5; 5]).unwrap();
        assert_eq!(draw.theta.weights, vec![0.5, 0.5]);
        assert_eq!(constrain(&spec, &draw.z).unwrap().0, draw.theta);
    }

    #[test]
    fn sample_moments() {
        let l = lambda(&[1.0, -3.0], &[0.5, -1.0]);
        let n = 100_000;
        let mut src = SequenceSource::new(SequenceKind::PseudoRandom, 2, 10).unwrap();
        let zs: Vec<Vec<f64>> = (0..n).map(|_| sample_z(&l, &src.next_point()).unwrap()).collect();
        for i in 0..2 {
            let mean = zs.iter().map(|z| z[i]).sum::<f64>() / n as f64;
            let var = zs.iter().map(|z| (z[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let s2 = (2.0 * l.log_sd()[i]).exp();
            assert!((mean - l.mean()[i]).abs() < 4.0 * (s2 / n as f64).sqrt());
            // Var of the sample variance is about 2σ⁴/n.
            assert!((var - s2).abs() < 4.0 * s2 * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn standardized_draws_pass_ks() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let l = lambda(&[2.0], &[0.7]);
        let mut src = SequenceSource::new(SequenceKind::PseudoRandom, 1, 77).unwrap();
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| (sample_z(&l, &src.next_point()).unwrap()[0] - 2.0) / 0.7f64.exp())
            .collect();
        xs.sort_by(f64::total_cmp);
        let phi = Normal::new(0.0, 1.0).unwrap();
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = phi.cdf(x);
                (f - i as f64 / n as f64)
                    .abs()
                    .max((((i + 1) as f64) / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic KS critical value at α = 0.001.
        assert!(d < 1.9495 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn log_q_examples() {
        let l = lambda(&[0.0], &[0.0]);
        assert!((log_q(&l, &[0.0]).unwrap() + 0.918_938_5).abs() < 1e-7);
        let a = log_q(&lambda(&[1.0, 2.0], &[0.3, -0.5]), &[1.7, 1.1]).unwrap();
        let b = log_q(&lambda(&[11.0, -8.0], &[0.3, -0.5]), &[11.7, -8.9]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn log_q_factorizes() {
        use statrs::distribution::{Continuous, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let d = rng.random_range(1..8);
            let m: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ls: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..1.0)).collect();
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let want: f64 = (0..d)
                .map(|i| Normal::new(m[i], ls[i].exp()).unwrap().ln_pdf(z[i]))
                .sum();
            assert!((log_q(&lambda(&m, &ls), &z).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn centred_score() {
        let l = lambda(&[0.4, -1.0], &[0.2, 0.9]);
        assert_eq!(score(&l, &[0.4, -1.0]).unwrap(), vec![0.0, 0.0, -1.0, -1.0]);
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let d = rng.random_range(1..6);
            let m: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let ls: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let flat: Vec<f64> = m.iter().chain(&ls).copied().collect();
            let fd = finite_diff(
                |x| log_q(&VariationalParams::from_flat(x).unwrap(), &z).map_err(Into::into),
                &flat,
                1e-5,
            )
            .unwrap();
            let an = score(&lambda(&m, &ls), &z).unwrap();
            for (a, f) in an.iter().zip(&fd) {
                worst = worst.max((a - f).abs() / a.abs().max(1.0));
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn flat_round_trip_and_validation() {
        let l = lambda(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(VariationalParams::from_flat(&l.to_flat()).unwrap(), l);
        assert!(VariationalParams::new(vec![1.0], vec![f64::INFINITY]).is_err());
        assert!(VariationalParams::new(vec![1.0], vec![]).is_err());
    }
}
