//! Shared numerical kernels: dense linear solves, covariance factorization,
//! and reproducible random sampling.
//!
//! Everything here is deterministic given its inputs. Random sampling is
//! driven by [`RngStream`] values, which name a `(seed, stream)` pair of a
//! counter-based generator: the same pair yields the same sequence on every
//! platform and under any thread schedule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative tolerance for declaring an elimination pivot singular.
const SINGULAR_TOL: f64 = 1e-12;

/// Pivots in `[-PSD_TOL, 0)` are clamped to zero so that exactly singular
/// covariance matrices still factor; anything below errors out.
const PSD_TOL: f64 = 1e-10;

/// Dense square matrix, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// Build from row-major entries; `data.len()` must equal `n * n` and all
    /// entries must be finite.
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("matrix dimension must be at least 1".into()));
        }
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("matrix entries must be finite".into()));
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// `L * L^T` for a lower-triangular factor, used to check reconstructions.
    pub fn lower_times_transpose(&self) -> SquareMatrix {
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let k_max = i.min(j) + 1;
                let mut s = 0.0;
                for k in 0..k_max {
                    s += self.get(i, k) * self.get(j, k);
                }
                out.set(i, j, s);
            }
        }
        out
    }
}

/// Solve `A x = b` by LU factorization with partial pivoting.
///
/// Errors with the offending pivot index when the system is singular to
/// working tolerance.
pub fn solve_linear_system(a: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rhs has length {}, matrix is {n}x{n}",
            b.len()
        )));
    }
    let mut lu = a.data.clone();
    let mut x = b.to_vec();
    let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);

    for k in 0..n {
        // Partial pivot: largest magnitude in column k at or below the diagonal.
        let mut pivot_row = k;
        let mut pivot_mag = lu[k * n + k].abs();
        for r in (k + 1)..n {
            let mag = lu[r * n + k].abs();
            if mag > pivot_mag {
                pivot_row = r;
                pivot_mag = mag;
            }
        }
        if pivot_mag <= SINGULAR_TOL * scale {
            return Err(Error::SingularSystem { pivot: k, magnitude: pivot_mag });
        }
        if pivot_row != k {
            for c in 0..n {
                lu.swap(k * n + c, pivot_row * n + c);
            }
            x.swap(k, pivot_row);
        }
        let inv_pivot = 1.0 / lu[k * n + k];
        for r in (k + 1)..n {
            let factor = lu[r * n + k] * inv_pivot;
            if factor != 0.0 {
                for c in (k + 1)..n {
                    lu[r * n + c] -= factor * lu[k * n + c];
                }
                x[r] -= factor * x[k];
            }
            lu[r * n + k] = 0.0;
        }
    }
    // Back substitution.
    for k in (0..n).rev() {
        let mut s = x[k];
        for c in (k + 1)..n {
            s -= lu[k * n + c] * x[c];
        }
        x[k] = s / lu[k * n + k];
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor of a symmetric positive semidefinite
/// matrix.
///
/// Slightly negative pivots (rounding noise on a singular matrix) are
/// clamped to zero and the corresponding column is zeroed; genuinely
/// negative pivots produce a "not PSD" error.
pub fn cholesky_factor(s: &SquareMatrix) -> Result<SquareMatrix> {
    let n = s.dim();
    let mut l = SquareMatrix::zeros(n);
    for j in 0..n {
        let mut pivot = s.get(j, j);
        for k in 0..j {
            pivot -= l.get(j, k) * l.get(j, k);
        }
        if pivot < -PSD_TOL {
            return Err(Error::NotPositiveSemidefinite { pivot: j, value: pivot });
        }
        let diag = if pivot > 0.0 { pivot.sqrt() } else { 0.0 };
        l.set(j, j, diag);
        if diag == 0.0 {
            continue;
        }
        let inv = 1.0 / diag;
        for i in (j + 1)..n {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v * inv);
        }
    }
    Ok(l)
}

/// Name of a reproducible random sequence.
///
/// Two streams with the same `(seed, stream)` produce identical draws on
/// every platform; distinct pairs are independent for all practical
/// purposes. Streams are plain values and can be handed across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// Instantiate the generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Derive the `k`-th child stream. Children of distinct parents do not
    /// collide: the parent pair is folded into the child's seed.
    pub fn child(&self, k: u64) -> RngStream {
        RngStream { seed: mix64(self.seed ^ mix64(self.stream)), stream: k }
    }
}

/// Derive an independent seed from a base seed and a salt; gives each
/// configuration in a batch its own stream family.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt))
}

/// SplitMix64 finalizer; a cheap bijective mixer for deriving seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// One standard normal draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw `mu + L z` with `z` i.i.d. standard normal and `L` a lower-triangular
/// covariance factor.
pub fn multivariate_normal<R: Rng + ?Sized>(
    mu: &[f64],
    chol_lower: &SquareMatrix,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = mu.len();
    if chol_lower.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "mean has length {n}, factor is {0}x{0}",
            chol_lower.dim()
        )));
    }
    let z: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
    let mut out = mu.to_vec();
    for (i, value) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (k, zk) in z.iter().enumerate().take(i + 1) {
            s += chol_lower.get(i, k) * zk;
        }
        *value += s;
    }
    Ok(out)
}

/// Uniform random permutation of `values` (Fisher-Yates).
pub fn shuffle_multiset<T: Clone, R: Rng + ?Sized>(values: &[T], rng: &mut R) -> Vec<T> {
    let mut out = values.to_vec();
    out.shuffle(rng);
    out
}
