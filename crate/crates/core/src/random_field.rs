//! Gaussian random fields with the squared-exponential kernel.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Kernel length scale and sensor layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec<T> {
    pub length_scale: T,
    pub sensors: Vec<[T; 2]>,
    pub jitter: T,
}

impl<T: Real> GrfSpec<T> {
    pub fn new(length_scale: T, sensors: Vec<[T; 2]>) -> Self {
        GrfSpec { length_scale, sensors, jitter: T::lit(JITTER_START) }
    }

    /// Sensors at `n` equispaced points of `[lo, hi]`, endpoints included.
    pub fn uniform_1d(length_scale: T, lo: T, hi: T, n: usize) -> Self {
        let step = (hi - lo) / T::count(n.max(2) - 1);
        Self::new(length_scale, (0..n).map(|i| [lo + step * T::count(i), T::zero()]).collect())
    }

    pub fn kernel(&self, a: [T; 2], b: [T; 2]) -> T {
        kernel(self.length_scale, a, b)
    }
}

pub fn kernel<T: Real>(l: T, a: [T; 2], b: [T; 2]) -> T {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    (-d2 / (T::lit(2.0) * l * l)).exp()
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Real> SymMatrix<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }
}

/// `K[i][j] = k(x_i, x_j) + jitter δ_ij`.
pub fn build_covariance<T: Real>(spec: &GrfSpec<T>) -> Result<SymMatrix<T>> {
    let n = spec.sensors.len();
    let mut data = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let (a, b) = (spec.sensors[i], spec.sensors[j]);
            if i != j && a[0] == b[0] && a[1] == b[1] {
                return Err(Error::DuplicateSensors);
            }
            let mut k = spec.kernel(a, b);
            if i == j {
                k += spec.jitter;
            }
            data[i * n + j] = k;
            data[j * n + i] = k;
        }
    }
    Ok(SymMatrix { n, data })
}

/// Lower-triangular Cholesky factor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T> {
    pub n: usize,
    pub lower: Vec<T>,
    /// Jitter that made the factorization succeed.
    pub jitter: T,
}

impl<T: Real> CholeskyFactor<T> {
    /// `L z` for a standard-normal vector `z`.
    pub fn apply(&self, z: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| (0..=i).fold(T::zero(), |acc, k| acc + self.lower[i * self.n + k] * z[k]))
            .collect()
    }

    pub fn min_pivot(&self) -> T {
        (0..self.n).map(|i| self.lower[i * self.n + i]).fold(T::infinity(), T::min)
    }
}

fn cholesky<T: Real>(m: &SymMatrix<T>, shift: T) -> Option<Vec<T>> {
    let n = m.n;
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            if i == j {
                s += shift;
            }
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Factors the covariance, escalating the jitter ×10 up to 1e-6.
pub fn factorize<T: Real>(spec: &GrfSpec<T>) -> Result<CholeskyFactor<T>> {
    let base = build_covariance(&GrfSpec { jitter: T::zero(), ..spec.clone() })?;
    let mut jitter = spec.jitter.max(T::lit(JITTER_START));
    loop {
        if let Some(lower) = cholesky(&base, jitter) {
            if jitter > spec.jitter.max(T::lit(JITTER_START)) {
                warn!("covariance factorized with escalated jitter {:e}", jitter.as_f64());
            }
            return Ok(CholeskyFactor { n: base.n, lower, jitter });
        }
        jitter *= T::lit(10.0);
        if jitter > T::lit(JITTER_MAX * 1.000001) {
            return Err(Error::FactorizationFailure(JITTER_MAX));
        }
    }
}

fn normals<T: Real>(rng: &mut impl Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// One zero-mean draw at the sensors.
pub fn sample_field<T: Real>(factor: &CholeskyFactor<T>, rng: &mut impl Rng) -> Vec<T> {
    factor.apply(&normals(rng, factor.n))
}

/// Convenience: factor then sample once.
pub fn sample_once<T: Real>(spec: &GrfSpec<T>, rng: &mut impl Rng) -> Result<Vec<T>> {
    Ok(sample_field(&factorize(spec)?, rng))
}

/// Deterministic per-sample generator derived from a base seed.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sampler on a tensor grid using the separable structure of the kernel:
/// `K = K_y ⊗ K_x`, so a draw is `L_x Z L_yᵀ`. With jitter the diagonal
/// of the effective covariance is `(1 + jitter)²`.
#[derive(Debug, Clone)]
pub struct SeparableSampler<T> {
    pub x: CholeskyFactor<T>,
    pub y: CholeskyFactor<T>,
}

impl<T: Real> SeparableSampler<T> {
    pub fn new(length_scale: T, xs: &[T], ys: &[T]) -> Result<Self> {
        let axis = |v: &[T]| factorize(&GrfSpec::new(length_scale, v.iter().map(|&t| [t, T::zero()]).collect()));
        Ok(SeparableSampler { x: axis(xs)?, y: axis(ys)? })
    }

    /// Row-major draw (x fastest) of shape `ny × nx`.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<T> {
        let (nx, ny) = (self.x.n, self.y.n);
        let z: Vec<T> = normals(rng, nx * ny);
        // w[j][i] = Σ_k Lx[i][k] z[j][k]
        let mut w = vec![T::zero(); nx * ny];
        for j in 0..ny {
            let row = self.x.apply(&z[j * nx..(j + 1) * nx]);
            w[j * nx..(j + 1) * nx].copy_from_slice(&row);
        }
        let mut out = vec![T::zero(); nx * ny];
        for j in 0..ny {
            for k in 0..=j {
                let l = self.y.lower[j * ny + k];
                for i in 0..nx {
                    out[j * nx + i] += l * w[k * nx + i];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let s = GrfSpec::new(0.2, vec![[0.1, 0.0], [0.3, 0.0]]);
        assert_eq!(s.kernel([0.4, 0.0], [0.4, 0.0]), 1.0);
        assert!((s.kernel([0.1, 0.0], [0.3, 0.0]) - (-0.5f64).exp()).abs() < 1e-15);
        let k = build_covariance(&GrfSpec::new(1e6f64, vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])).unwrap();
        assert!(k.data.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn covariance_symmetric_with_jitter_diagonal() {
        let s = GrfSpec::<f64>::uniform_1d(0.2, 0.0, 1.0, 32);
        let k = build_covariance(&s).unwrap();
        for i in 0..32 {
            assert_eq!(k.get(i, i), 1.0 + 1e-10);
            for j in 0..32 {
                assert_eq!(k.get(i, j), k.get(j, i));
            }
        }
    }

    #[test]
    fn duplicate_sensors_rejected() {
        let s = GrfSpec::new(0.2, vec![[0.1, 0.0], [0.1, 0.0]]);
        assert!(matches!(build_covariance(&s), Err(Error::DuplicateSensors)));
    }

    #[test]
    fn jitter_escalates_for_dense_sensors() {
        let s = GrfSpec::<f64>::uniform_1d(0.2, 0.0, 1.0, 257);
        let f = factorize(&s).unwrap();
        assert!(f.jitter >= 1e-10 && f.jitter <= 1e-6);
        assert!(f.min_pivot() > 0.0);
    }

    #[test]
    fn factorization_fails_past_cap() {
        let s = GrfSpec::<f64>::uniform_1d(f64::NAN, 0.0, 1.0, 4);
        assert!(matches!(factorize(&s), Err(Error::FactorizationFailure(_))));
    }

    #[test]
    fn seeded_samples_repeat() {
        let f = factorize(&GrfSpec::<f64>::uniform_1d(0.2, 0.0, 1.0, 16)).unwrap();
        let a = sample_field(&f, &mut sample_rng(7, 3));
        let b = sample_field(&f, &mut sample_rng(7, 3));
        let c = sample_field(&f, &mut sample_rng(7, 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn separable_matches_kernel_statistics() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let s = SeparableSampler::new(0.3, &xs, &xs).unwrap();
        let n = 4000;
        let (mut c00, mut c01) = (0.0, 0.0);
        for k in 0..n {
            let v = s.sample(&mut sample_rng(11, k));
            c00 += v[0] * v[0];
            c01 += v[0] * v[6];
        }
        let want = kernel(0.3, [0.0, 0.0], [0.25, 0.25]);
        assert!((c00 / n as f64 - 1.0).abs() < 0.08);
        assert!((c01 / n as f64 - want).abs() < 0.08);
    }

    #[test]
    fn single_precision_sampling() {
        let f = factorize(&GrfSpec::<f32>::uniform_1d(0.3, 0.0, 1.0, 8)).unwrap();
        let v = sample_field(&f, &mut sample_rng(1, 0));
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
