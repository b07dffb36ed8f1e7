//! Dense complex linear algebra helpers shared by the solver, codes and simulator.
//!
//! Matrices are `nalgebra` dynamic matrices over `Complex64`. Everything here is a pure
//! function except [`GaussianSampler::sample`], which draws from a caller-owned RNG so that
//! each Monte Carlo trial can hold its own stream.

use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;
pub type CRow = RowDVector<Complex64>;

/// Eigenvalues above this (but below zero) are treated as roundoff and clamped.
pub const PSD_CLAMP_LIMIT: f64 = -1e-6;
/// Largest tolerated `|K - K'|` entry for a matrix to count as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (max |K - K'| = {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("covariance has eigenvalue {value:e} below the clamp limit")]
    NegativeEigenvalue { value: f64 },
    #[error("eigensolver did not converge")]
    EigenSolverFailed,
    #[error("real noise requested for a covariance with imaginary entries (max |Im| = {imag:e})")]
    ComplexCovariance { imag: f64 },
}

fn ensure_square(m: &CMatrix) -> Result<(), NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Largest entry modulus of `m - m'`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// `(m + m') / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(
        values.len(),
        values.iter().map(|&v| Complex64::new(v, 0.0)),
    ))
}

pub fn diag_complex(values: &[Complex64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_column_slice(values))
}

pub fn ones(k: usize) -> CVector {
    CVector::from_element(k, Complex64::new(1.0, 0.0))
}

/// Real part of the trace.
pub fn trace_re(m: &CMatrix) -> f64 {
    m.trace().re
}

/// Unitary k-point DFT matrix, `F[j][l] = exp(-2πi·j·l/k) / √k` (zero-based indices).
pub fn dft_matrix(k: usize) -> CMatrix {
    let scale = 1.0 / (k as f64).sqrt();
    CMatrix::from_fn(k, k, |j, l| {
        // Reduce the exponent mod k before scaling so large j·l keeps full precision.
        let phase = -2.0 * std::f64::consts::PI * ((j * l) % k) as f64 / k as f64;
        Complex64::from_polar(scale, phase)
    })
}

/// Circulant matrix `F·diag(λ)·F'` with the unitary DFT matrix `F`.
pub fn circulant_from_eigenvalues(eigenvalues: &[f64]) -> CMatrix {
    let f = dft_matrix(eigenvalues.len());
    &f * diag_real(eigenvalues) * f.adjoint()
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues sorted ascending with matching
/// eigenvector columns.
pub fn hermitian_eigen(m: &CMatrix) -> Result<(Vec<f64>, CMatrix), NumericsError> {
    ensure_square(m)?;
    let deviation = hermitian_deviation(m);
    if deviation > HERMITIAN_TOL {
        return Err(NumericsError::NotHermitian { deviation });
    }
    let eig = SymmetricEigen::try_new(hermitian_part(m), f64::EPSILON, 0)
        .ok_or(NumericsError::EigenSolverFailed)?;
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Principal square root `L = U·diag(√λ)·U'` of a Hermitian PSD matrix, so that `L·L' = K`.
///
/// Works for singular covariances; eigenvalues in `[-1e-6, 0)` are clamped to zero.
pub fn hermitian_psd_sqrt(k: &CMatrix) -> Result<CMatrix, NumericsError> {
    let (values, vectors) = hermitian_eigen(k)?;
    if let Some(&worst) = values.first() {
        if worst < PSD_CLAMP_LIMIT {
            return Err(NumericsError::NegativeEigenvalue { value: worst });
        }
    }
    let roots: Vec<f64> = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(&vectors * diag_real(&roots) * vectors.adjoint())
}

/// Number of eigenvalues of a Hermitian matrix whose modulus exceeds `threshold`.
pub fn numerical_rank(m: &CMatrix, threshold: f64) -> Result<usize, NumericsError> {
    let (values, _) = hermitian_eigen(m)?;
    Ok(values.iter().filter(|v| v.abs() > threshold).count())
}

/// Eigenvalues of a general complex square matrix, read off the complex Schur form.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<Complex64>, NumericsError> {
    ensure_square(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 100_000)
        .ok_or(NumericsError::EigenSolverFailed)?;
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &CMatrix) -> Result<f64, NumericsError> {
    Ok(eigenvalues(m)?.iter().fold(0.0, |acc, z| acc.max(z.norm())))
}

/// Seeded ChaCha stream; `stream` selects one of 2^64 independent sequences for the seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How noise vectors are drawn from the covariance factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Circularly symmetric complex Gaussian: real and imaginary parts each carry half the
    /// variance, so `E[Z Z'] = K`.
    Circular,
    /// Real Gaussian with `E[Z Zᵀ] = K`; requires a real covariance.
    Real,
    /// Always zero. Used to check the noiseless loop.
    Silent,
}

/// Draws `Z = L·w ~ N(0, K)` where `L` is the principal square root of `K`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: CMatrix,
    kind: NoiseKind,
}

impl GaussianSampler {
    pub fn new(covariance: &CMatrix, kind: NoiseKind) -> Result<Self, NumericsError> {
        let mut factor = hermitian_psd_sqrt(covariance)?;
        if kind == NoiseKind::Real {
            let imag = covariance
                .iter()
                .fold(0.0_f64, |acc, z| acc.max(z.im.abs()));
            if imag > HERMITIAN_TOL {
                return Err(NumericsError::ComplexCovariance { imag });
            }
            // The principal root of a real symmetric matrix is real; drop roundoff.
            factor.iter_mut().for_each(|z| z.im = 0.0);
        }
        Ok(Self { factor, kind })
    }

    pub fn silent(dim: usize) -> Self {
        Self {
            factor: CMatrix::zeros(dim, dim),
            kind: NoiseKind::Silent,
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn factor(&self) -> &CMatrix {
        &self.factor
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        let k = self.dim();
        let white = match self.kind {
            NoiseKind::Silent => return CVector::zeros(k),
            NoiseKind::Circular => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                CVector::from_fn(k, |_, _| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * s, im * s)
                })
            }
            NoiseKind::Real => {
                CVector::from_fn(k, |_, _| Complex64::new(rng.sample(StandardNormal), 0.0))
            }
        };
        &self.factor * white
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn dft_is_unitary_up_to_64() {
        for k in 1..=64 {
            let f = dft_matrix(k);
            let err = max_abs(&(&f * f.adjoint() - CMatrix::identity(k, k)));
            assert!(err <= 1e-12, "k={k} err={err:e}");
        }
    }

    #[test]
    fn adjoint_is_an_involution() {
        let m = CMatrix::from_fn(3, 2, |r, c| Complex64::new(r as f64 + 0.1, c as f64 - 0.7));
        assert_eq!(m.adjoint().adjoint(), m);
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let id = CMatrix::identity(3, 3);
        assert_abs_diff_eq!(
            max_abs(&(hermitian_psd_sqrt(&id).unwrap() - &id)),
            0.0,
            epsilon = 1e-14
        );
        let l = hermitian_psd_sqrt(&diag_real(&[4.0, 0.0])).unwrap();
        assert_abs_diff_eq!(max_abs(&(l - diag_real(&[2.0, 0.0]))), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sqrt_of_rank_one_circulant() {
        let k = 3;
        let mut lambda = vec![0.0; k];
        lambda[k - 1] = k as f64;
        let cov = circulant_from_eigenvalues(&lambda);
        let l = hermitian_psd_sqrt(&cov).unwrap();
        assert!(max_abs(&(&l * l.adjoint() - &cov)) <= 1e-10);
        assert_eq!(numerical_rank(&(&l * l.adjoint()), 1e-8).unwrap(), 1);
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let skew =
            CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            hermitian_psd_sqrt(&skew),
            Err(NumericsError::NotHermitian { .. })
        ));
        let indefinite = diag_real(&[1.0, -0.1]);
        assert!(matches!(
            hermitian_psd_sqrt(&indefinite),
            Err(NumericsError::NegativeEigenvalue { .. })
        ));
        // Roundoff-level negatives are clamped.
        assert!(hermitian_psd_sqrt(&diag_real(&[1.0, -1e-12])).is_ok());
    }

    #[test]
    fn circulant_examples() {
        let id = circulant_from_eigenvalues(&[1.0, 1.0]);
        assert!(max_abs(&(id - CMatrix::identity(2, 2))) <= 1e-15);

        let m = circulant_from_eigenvalues(&[2.0, 0.0]);
        let expected = CMatrix::from_element(2, 2, c(1.0, 0.0));
        assert!(max_abs(&(m - expected)) <= 1e-15);

        let m = circulant_from_eigenvalues(&[0.0, 0.0, 3.0]);
        assert!(hermitian_deviation(&m) <= 1e-15);
        for j in 0..3 {
            assert_abs_diff_eq!(m[(j, j)].re, 1.0, epsilon = 1e-14);
        }
        assert_eq!(numerical_rank(&m, 1e-8).unwrap(), 1);
    }

    #[test]
    fn spectral_radius_examples() {
        assert_abs_diff_eq!(
            spectral_radius(&diag_real(&[0.5, -0.5])).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let a = 2.0_f64;
        let closed_loop = diag_real(&[a - (a * a - 1.0) / a]);
        assert_abs_diff_eq!(spectral_radius(&closed_loop).unwrap(), 0.5, epsilon = 1e-15);
        // Non-normal matrix: eigenvalues are the diagonal of the triangle.
        let m =
            CMatrix::from_row_slice(2, 2, &[c(0.3, 0.0), c(5.0, 0.0), c(0.0, 0.0), c(0.0, -0.4)]);
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 0.4, epsilon = 1e-12);
        assert!(matches!(
            spectral_radius(&CMatrix::zeros(2, 3)),
            Err(NumericsError::NotSquare { .. })
        ));
    }

    #[test]
    fn sampler_covariance_matches() {
        let k = 3;
        let cov = CMatrix::from_row_slice(
            3,
            3,
            &[
                c(1.0, 0.0),
                c(0.3, 0.2),
                c(-0.1, 0.0),
                c(0.3, -0.2),
                c(1.0, 0.0),
                c(0.25, 0.1),
                c(-0.1, 0.0),
                c(0.25, -0.1),
                c(1.0, 0.0),
            ],
        );
        let sampler = GaussianSampler::new(&cov, NoiseKind::Circular).unwrap();
        assert!(max_abs(&(sampler.factor() * sampler.factor().adjoint() - &cov)) <= 1e-10);
        let mut rng = stream_rng(7, 0);
        let trials = 100_000;
        let mut acc = CMatrix::zeros(k, k);
        let mut mean = CVector::zeros(k);
        for _ in 0..trials {
            let z = sampler.sample(&mut rng);
            acc += &z * z.adjoint();
            mean += z;
        }
        acc /= Complex64::new(trials as f64, 0.0);
        mean /= Complex64::new(trials as f64, 0.0);
        let band = 5.0 * k as f64 / (trials as f64).sqrt();
        assert!(max_abs(&(acc - &cov)) <= band);
        assert!(mean.iter().all(|z| z.norm() <= band));
    }

    #[test]
    fn real_sampler_is_real_and_matches() {
        let cov =
            CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(1.0, 0.0)]);
        let sampler = GaussianSampler::new(&cov, NoiseKind::Real).unwrap();
        let mut rng = stream_rng(3, 1);
        let mut acc = [0.0; 3];
        let trials = 100_000;
        for _ in 0..trials {
            let z = sampler.sample(&mut rng);
            assert!(z.iter().all(|v| v.im == 0.0));
            acc[0] += z[0].re * z[0].re;
            acc[1] += z[0].re * z[1].re;
            acc[2] += z[1].re * z[1].re;
        }
        let band = 5.0 * 2.0 / (trials as f64).sqrt();
        assert!((acc[0] / trials as f64 - 1.0).abs() <= band);
        assert!((acc[1] / trials as f64 - 0.5).abs() <= band);
        assert!((acc[2] / trials as f64 - 1.0).abs() <= band);

        let complex_cov =
            CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.5), c(0.0, -0.5), c(1.0, 0.0)]);
        assert!(matches!(
            GaussianSampler::new(&complex_cov, NoiseKind::Real),
            Err(NumericsError::ComplexCovariance { .. })
        ));
    }

    #[test]
    fn silent_sampler_is_zero() {
        let mut rng = stream_rng(0, 0);
        assert!(GaussianSampler::silent(4)
            .sample(&mut rng)
            .iter()
            .all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4)
            .map({
                let mut r = stream_rng(11, 5);
                move |_| rand::RngCore::next_u64(&mut r)
            })
            .collect();
        let b: Vec<u64> = (0..4)
            .map({
                let mut r = stream_rng(11, 5);
                move |_| rand::RngCore::next_u64(&mut r)
            })
            .collect();
        let other: Vec<u64> = (0..4)
            .map({
                let mut r = stream_rng(11, 6);
                move |_| rand::RngCore::next_u64(&mut r)
            })
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    proptest! {
        #[test]
        fn circulant_round_trip_recovers_eigenvalues(lambda in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let m = circulant_from_eigenvalues(&lambda);
            let (mut got, _) = hermitian_eigen(&m).unwrap();
            let mut want = lambda.clone();
            want.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-9);
            }
        }

        #[test]
        fn psd_sqrt_reconstructs(entries in prop::collection::vec(-1.0f64..1.0, 32), k in 1usize..5, rank in 1usize..5) {
            // K = M M' with M k×rank, possibly rank-deficient.
            let rank = rank.min(k);
            let m = CMatrix::from_fn(k, rank, |r, c| Complex64::new(entries[2 * (r * 4 + c)], entries[2 * (r * 4 + c) + 1]));
            let cov = &m * m.adjoint();
            let l = hermitian_psd_sqrt(&cov).unwrap();
            prop_assert!(max_abs(&(&l * l.adjoint() - &cov)) <= 1e-10);
        }
    }
}
