//! Uniform point streams on the open unit hypercube and their Gaussian
//! transforms.
//!
//! A [`SequenceSource`] emits points one at a time. Pseudo-random streams come
//! from ChaCha8; Sobol points use the Joe & Kuo direction numbers in Gray-code
//! order, optionally with a seed-keyed random digital (XOR) shift; Halton
//! points are radical inverses in the first `dim` prime bases. Every point is
//! clamped to `[EPS, 1 - EPS]` so that [`inverse_normal_cdf`] stays finite.

mod joe_kuo;
pub(crate) mod normal;

pub use normal::{gaussian_transform, inverse_normal_cdf, UpperFactor};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clamp margin applied to every emitted coordinate.
pub const EPS: f64 = 1.0 / (1u64 << 43) as f64;

const SOBOL_BITS: usize = 32;

/// Largest dimension with tabulated Sobol direction numbers.
pub const MAX_SOBOL_DIM: usize = joe_kuo::JOE_KUO.len() + 1;

/// Largest Halton dimension (one prime base per coordinate).
pub const MAX_HALTON_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    PseudoRandom,
    /// Plain Sobol, skipping the origin.
    Sobol,
    /// Sobol with a random digital shift keyed by the seed.
    SobolScrambled,
    Halton,
}

impl SequenceKind {
    pub fn is_low_discrepancy(self) -> bool {
        !matches!(self, SequenceKind::PseudoRandom)
    }
}

#[derive(Debug, Clone)]
enum State {
    Random(ChaCha8Rng),
    Sobol {
        directions: Vec<[u32; SOBOL_BITS]>,
        shift: Vec<u32>,
        current: Vec<u32>,
        index: u64,
    },
    Halton {
        bases: Vec<u64>,
        index: u64,
    },
}

/// A single-owner stream of points in `(0,1)^dim`.
#[derive(Debug, Clone)]
pub struct SequenceSource {
    kind: SequenceKind,
    dim: usize,
    seed: u64,
    counter: u64,
    state: State,
}

impl SequenceSource {
    pub fn new(kind: SequenceKind, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape {
                what: "sequence dimension",
                expected: 1,
                got: 0,
            });
        }
        let state = match kind {
            SequenceKind::PseudoRandom => State::Random(ChaCha8Rng::seed_from_u64(seed)),
            SequenceKind::Sobol | SequenceKind::SobolScrambled => {
                if dim > MAX_SOBOL_DIM {
                    return Err(Error::UnsupportedDimension {
                        kind: "sobol",
                        dim,
                        max: MAX_SOBOL_DIM,
                    });
                }
                let directions = (0..dim).map(sobol_directions).collect();
                let shift = if kind == SequenceKind::SobolScrambled {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..dim).map(|_| rng.random::<u32>()).collect()
                } else {
                    vec![0; dim]
                };
                let mut state = State::Sobol {
                    directions,
                    shift,
                    current: vec![0; dim],
                    index: 0,
                };
                // The unshifted origin is not in (0,1)^d.
                if kind == SequenceKind::Sobol {
                    advance_sobol(&mut state);
                }
                state
            }
            SequenceKind::Halton => {
                if dim > MAX_HALTON_DIM {
                    return Err(Error::UnsupportedDimension {
                        kind: "halton",
                        dim,
                        max: MAX_HALTON_DIM,
                    });
                }
                State::Halton {
                    bases: first_primes(dim),
                    index: 1,
                }
            }
        };
        Ok(SequenceSource {
            kind,
            dim,
            seed,
            counter: 0,
            state,
        })
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of points emitted so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.fill_next(&mut out);
        out
    }

    /// Writes the next point into `out`, which must have length `dim`.
    pub fn fill_next(&mut self, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim, "point buffer has wrong dimension");
        match &mut self.state {
            State::Random(rng) => {
                for x in out.iter_mut() {
                    *x = rng.random::<f64>();
                }
            }
            State::Sobol { shift, current, .. } => {
                const SCALE: f64 = 1.0 / 4_294_967_296.0;
                for ((x, &c), &s) in out.iter_mut().zip(current.iter()).zip(shift.iter()) {
                    *x = (c ^ s) as f64 * SCALE;
                }
            }
            State::Halton { bases, index } => {
                for (x, &b) in out.iter_mut().zip(bases.iter()) {
                    *x = radical_inverse(*index, b);
                }
                *index += 1;
            }
        }
        if matches!(self.state, State::Sobol { .. }) {
            advance_sobol(&mut self.state);
        }
        for x in out.iter_mut() {
            *x = x.clamp(EPS, 1.0 - EPS);
        }
        self.counter += 1;
    }
}

fn advance_sobol(state: &mut State) {
    if let State::Sobol {
        directions,
        current,
        index,
        ..
    } = state
    {
        *index += 1;
        let bit = index.trailing_zeros() as usize;
        debug_assert!(bit < SOBOL_BITS, "sobol stream exhausted");
        for (c, v) in current.iter_mut().zip(directions.iter()) {
            *c ^= v[bit.min(SOBOL_BITS - 1)];
        }
    }
}

/// Direction numbers for coordinate `j` (0-based), scaled to 32 bits.
fn sobol_directions(j: usize) -> [u32; SOBOL_BITS] {
    let mut v = [0u32; SOBOL_BITS];
    if j == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1u32 << (31 - k);
        }
        return v;
    }
    let (s, a, m) = joe_kuo::JOE_KUO[j - 1];
    let s = s as usize;
    for k in 0..s.min(SOBOL_BITS) {
        v[k] = m[k] << (31 - k);
    }
    for k in s..SOBOL_BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for l in 1..s {
            if (a >> (s - 1 - l)) & 1 == 1 {
                x ^= v[k - l];
            }
        }
        v[k] = x;
    }
    v
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while n > 0 {
        r += (n % base) as f64 * f;
        n /= base;
        f *= inv;
    }
    r
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}
