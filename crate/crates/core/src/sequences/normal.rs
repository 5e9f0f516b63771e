use crate::{Error, Result};

/// Standard normal quantile function.
///
/// Wichura's AS 241 (PPND16) rational approximation, accurate to about
/// 1e-16 relative over the whole open interval.
pub fn inverse_normal_cdf(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            what: "inverse normal cdf",
            value: u,
        });
    }
    Ok(ppnd16(u))
}

pub(crate) fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r + 6.726_577_092_700_87e4) * r
                + 4.592_195_393_154_987e4)
                * r
                + 1.373_169_376_550_946e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_854e3 * r + 2.872_908_573_572_194_3e4) * r + 3.930_789_580_009_271e4) * r
                + 2.121_379_430_158_659_7e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r + 2.417_807_251_774_506e-1) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_8e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r + 1.242_660_947_388_078_4e-3) * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_88e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// An upper-triangular Cholesky factor `R` (covariance `RᵀR`), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperFactor {
    n: usize,
    data: Vec<f64>,
}

impl UpperFactor {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape {
                    what: "cholesky factor row",
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() || (j < i && x != 0.0) || (j == i && x <= 0.0) {
                    return Err(Error::Domain {
                        what: "upper-triangular factor with positive diagonal",
                        value: x,
                    });
                }
            }
            data.extend_from_slice(row);
        }
        Ok(UpperFactor { n, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n]).expect("unit diagonal")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = diag[i];
                r
            })
            .collect();
        Self::new(&rows)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Maps a unit-hypercube point to `Φ⁻¹(u)·R + mean`.
pub fn gaussian_transform(u: &[f64], mean: &[f64], factor: &UpperFactor) -> Result<Vec<f64>> {
    let n = factor.dim();
    for (what, len) in [
        ("gaussian transform point", u.len()),
        ("gaussian transform mean", mean.len()),
    ] {
        if len != n {
            return Err(Error::Shape {
                what,
                expected: n,
                got: len,
            });
        }
    }
    let x = u
        .iter()
        .map(|&ui| inverse_normal_cdf(ui))
        .collect::<Result<Vec<f64>>>()?;
    // Row vector times an upper-triangular matrix: column j only sees x[..=j].
    Ok((0..n)
        .map(|j| mean[j] + (0..=j).map(|i| x[i] * factor.get(i, j)).sum::<f64>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{SequenceKind, SequenceSource};
    use statrs::function::erf::erfc;

    // Independent route: bisection on the lower tail Φ(x) = erfc(-x/√2)/2,
    // using the reflected upper tail above one half to keep precision.
    fn quantile_by_bisection(u: f64) -> f64 {
        if u > 0.5 {
            return -quantile_by_bisection(1.0 - u);
        }
        let cdf = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
        let (mut lo, mut hi) = (-40.0, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_fixed_points() {
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
        let z = inverse_normal_cdf(0.975).unwrap();
        assert!((z - quantile_by_bisection(0.975)).abs() < 1e-9);
        assert!((z - 1.959_963_984_540_054).abs() < 1e-9);
        for u in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(inverse_normal_cdf(u).is_err());
        }
    }

    #[test]
    fn quantile_matches_bisection_across_the_range() {
        let mut us = vec![
            1e-300,
            1e-20,
            1e-10,
            1e-5,
            0.001,
            0.02425,
            0.07,
            0.3,
            0.5,
            0.6,
            0.92,
            0.999,
            1.0 - 1e-12,
        ];
        us.extend((1..200).map(|i| i as f64 / 200.0));
        for u in us {
            let got = inverse_normal_cdf(u).unwrap();
            let want = quantile_by_bisection(u);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "u={u}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn quantile_is_odd_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..2000 {
            let u = i as f64 / 2000.0;
            let z = inverse_normal_cdf(u).unwrap();
            assert!(z > prev);
            prev = z;
            let w = inverse_normal_cdf(1.0 - u).unwrap();
            assert!((z + w).abs() < 1e-12);
        }
    }

    #[test]
    fn transform_examples() {
        let id = UpperFactor::identity(2);
        assert_eq!(
            gaussian_transform(&[0.5, 0.5], &[0.0, 0.0], &id).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            gaussian_transform(&[0.5, 0.5], &[3.0, -2.0], &id).unwrap(),
            vec![3.0, -2.0]
        );
        let d = UpperFactor::diagonal(&[2.0, 3.0]).unwrap();
        let z = gaussian_transform(&[0.975, 0.5], &[0.0, 0.0], &d).unwrap();
        assert!((z[0] - 2.0 * quantile_by_bisection(0.975)).abs() < 1e-9);
        assert!((z[0] - 3.919_928).abs() < 1e-6);
        assert_eq!(z[1], 0.0);
        assert!(matches!(
            gaussian_transform(&[0.5], &[0.0, 0.0], &id),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn factor_validation() {
        assert!(UpperFactor::new(&[vec![1.0, 0.0], vec![0.5, 1.0]]).is_err());
        assert!(UpperFactor::new(&[vec![1.0, 0.5], vec![0.0, -1.0]]).is_err());
        assert!(UpperFactor::new(&[vec![1.0, 0.5]]).is_err());
    }

    #[test]
    fn transform_covariance_converges_to_rtr() {
        let r = UpperFactor::new(&[vec![1.0, 0.5, -0.3], vec![0.0, 0.8, 0.2], vec![0.0, 0.0, 1.5]]).unwrap();
        let n = 100_000;
        let mut src = SequenceSource::new(SequenceKind::PseudoRandom, 3, 2024).unwrap();
        let mean = [1.0, -1.0, 0.0];
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| gaussian_transform(&src.next_point(), &mean, &r).unwrap())
            .collect();
        let mu: Vec<f64> = (0..3)
            .map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / n as f64)
            .collect();
        let mut err = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let emp = draws.iter().map(|d| (d[a] - mu[a]) * (d[b] - mu[b])).sum::<f64>() / (n - 1) as f64;
                let exact: f64 = (0..3).map(|k| r.get(k, a) * r.get(k, b)).sum();
                err += (emp - exact).powi(2);
            }
        }
        assert!(err.sqrt() < 0.05, "frobenius error {}", err.sqrt());
    }
}
