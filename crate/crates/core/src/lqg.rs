//! Cost-free LQG problem behind the broadcast feedback code.
//!
//! The open-loop matrix is `A = diag(a_1..a_k)` with `|a_j| > 1`, the input map is the
//! all-ones column, and the control `X_i = -C·S_i` minimises the stationary input power.
//! The optimal gain comes from the stabilising solution of
//!
//! ```text
//! G = A'GA - A'GB (B'GB + 1)^{-1} B'GA,      C = (B'GB + 1)^{-1} B'GA
//! ```
//!
//! and the resulting power is `tr(G K_z) = C K_s C'`, where `K_s` solves the Lyapunov
//! equation `K_s = (A - BC) K_s (A - BC)' + K_z`.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::numerics::{
    self, diag_complex, hermitian_eigen, hermitian_part, max_abs, ones, trace_re, CMatrix, CRow,
    CVector, NumericsError,
};

/// Relative max-norm step at which the Riccati iteration counts as converged.
pub const DARE_STEP_TOL: f64 = 1e-12;
/// Relative max-norm residual accepted for a Riccati solution.
pub const DARE_RESIDUAL_TOL: f64 = 1e-9;
pub const DARE_MAX_ITER: usize = 100_000;
/// Relative max-norm step at which the Lyapunov iteration stops.
pub const DALE_STEP_TOL: f64 = 1e-13;
pub const DALE_MAX_ITER: usize = 1_000_000;
/// Relative tolerance between `tr(G K_z)` and `C K_s C'`.
pub const POWER_AGREEMENT_TOL: f64 = 1e-8;

const MODE_SEPARATION: f64 = 1e-9;
const UNIT_DIAG_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
/// Iterations without a new minimum step before the Riccati iteration is considered stalled
/// at the roundoff floor.
const STALL_WINDOW: usize = 500;
const POLISH_LIMIT: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqgError {
    #[error("system needs at least one receiver")]
    Empty,
    #[error("mode a_{index} has modulus {modulus}, must lie outside the unit circle")]
    StableMode { index: usize, modulus: f64 },
    #[error("modes a_{first} and a_{second} coincide")]
    DuplicateModes { first: usize, second: usize },
    #[error("noise covariance is {rows}x{cols}, expected {k}x{k}")]
    CovarianceShape { rows: usize, cols: usize, k: usize },
    #[error("noise covariance diagonal entry {index} is {value}, expected 1")]
    CovarianceDiagonal { index: usize, value: Complex64 },
    #[error("noise covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    CovarianceNotPsd { min_eigenvalue: f64 },
    #[error(
        "Riccati iteration did not converge after {iterations} iterations (last step {step:e})"
    )]
    NonConvergence { iterations: usize, step: f64 },
    #[error("Riccati residual {residual:e} exceeds tolerance")]
    Residual { residual: f64 },
    #[error("closed loop has spectral radius {radius}, expected < 1")]
    UnstableClosedLoop { radius: f64 },
    #[error("tr(G K_z) = {trace} disagrees with C K_s C' = {quadratic}")]
    PowerMismatch { trace: f64, quadratic: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One broadcast instance: open-loop modes plus receiver noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    modes: Vec<Complex64>,
    noise_cov: CMatrix,
}

impl SystemSpec {
    pub fn new(modes: Vec<Complex64>, noise_cov: CMatrix) -> Result<Self, LqgError> {
        let k = modes.len();
        if k == 0 {
            return Err(LqgError::Empty);
        }
        for (index, a) in modes.iter().enumerate() {
            if !(a.norm() > 1.0) {
                return Err(LqgError::StableMode {
                    index: index + 1,
                    modulus: a.norm(),
                });
            }
        }
        for i in 0..k {
            for j in i + 1..k {
                if (modes[i] - modes[j]).norm() <= MODE_SEPARATION {
                    return Err(LqgError::DuplicateModes {
                        first: i + 1,
                        second: j + 1,
                    });
                }
            }
        }
        validate_covariance(&noise_cov, k)?;
        Ok(Self { modes, noise_cov })
    }

    /// Modes `a·exp(-2πi(j-1)/k)` on a circle of radius `a`.
    ///
    /// Receivers are indexed with the negative phase so that the Riccati solution is
    /// `F·diag(λ_1..λ_k)·F'` for the DFT matrix `F` of [`numerics::dft_matrix`]; the mode
    /// set is the same as with the positive phase.
    pub fn symmetric_modes(k: usize, a: f64) -> Vec<Complex64> {
        (0..k)
            .map(|j| Complex64::from_polar(a, -2.0 * PI * j as f64 / k as f64))
            .collect()
    }

    pub fn symmetric(k: usize, a: f64, noise_cov: CMatrix) -> Result<Self, LqgError> {
        Self::new(Self::symmetric_modes(k, a), noise_cov)
    }

    pub fn k(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Complex64] {
        &self.modes
    }

    pub fn noise_cov(&self) -> &CMatrix {
        &self.noise_cov
    }

    pub fn open_loop(&self) -> CMatrix {
        diag_complex(&self.modes)
    }

    pub fn input_map(&self) -> CVector {
        ones(self.k())
    }
}

/// Checks that `cov` is a k×k Hermitian PSD matrix with unit diagonal.
pub fn validate_covariance(cov: &CMatrix, k: usize) -> Result<(), LqgError> {
    if cov.nrows() != k || cov.ncols() != k {
        return Err(LqgError::CovarianceShape {
            rows: cov.nrows(),
            cols: cov.ncols(),
            k,
        });
    }
    for index in 0..k {
        let value = cov[(index, index)];
        if (value - Complex64::new(1.0, 0.0)).norm() > UNIT_DIAG_TOL {
            return Err(LqgError::CovarianceDiagonal {
                index: index + 1,
                value,
            });
        }
    }
    let (values, _) = hermitian_eigen(cov)?;
    let min_eigenvalue = values[0];
    if min_eigenvalue < -PSD_TOL {
        return Err(LqgError::CovarianceNotPsd { min_eigenvalue });
    }
    Ok(())
}

/// One application of the Riccati map `G ↦ A'GA - A'GB(B'GB+1)^{-1}B'GA`.
pub fn riccati_map(g: &CMatrix, a: &CMatrix, b: &CVector) -> CMatrix {
    let ga = g * a;
    let bh_ga: CRow = b.adjoint() * &ga;
    let scale = (b.adjoint() * g * b)[(0, 0)] + 1.0;
    a.adjoint() * &ga - bh_ga.adjoint() * (bh_ga / scale)
}

/// The same map written as `(A - BC)'G(A - BC) + C'C` with `C` the gain of `G`.
///
/// Algebraically identical to [`riccati_map`], but a sum of two Hermitian PSD terms: it avoids
/// the cancellation between `A'GA` and the correction term, which costs several digits in the
/// weak eigen-directions of `G` when `|a|^{2k}` is large.
pub fn riccati_map_stabilized(g: &CMatrix, a: &CMatrix, b: &CVector) -> CMatrix {
    let c = gain(g, a, b);
    let closed = a - b * &c;
    closed.adjoint() * g * &closed + c.adjoint() * c
}

/// Max-norm residual of the Riccati equation.
pub fn dare_residual(g: &CMatrix, a: &CMatrix, b: &CVector) -> f64 {
    max_abs(&(g - riccati_map(g, a, b)))
}

fn relative(value: f64, m: &CMatrix) -> f64 {
    value / max_abs(m).max(1.0)
}

/// Stabilising solution of the Riccati equation for a general open loop `a` and input map `b`,
/// by fixed-point iteration from the identity.
///
/// The iteration stops once the relative step drops below [`DARE_STEP_TOL`] and then keeps
/// going while the step still shrinks, which takes well-conditioned instances down to
/// roundoff. Instances whose roundoff floor sits above the step tolerance (large `|a|^{2k}`)
/// are accepted once the step has stalled and the relative residual is within
/// [`DARE_RESIDUAL_TOL`].
pub fn solve_riccati(a: &CMatrix, b: &CVector) -> Result<CMatrix, LqgError> {
    let k = a.nrows();
    let mut g = CMatrix::identity(k, k);
    let mut prev_step = f64::INFINITY;
    let mut best_step = f64::INFINITY;
    let mut since_best = 0;
    let mut polish = None;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next = hermitian_part(&riccati_map_stabilized(&g, a, b));
        let step = relative(max_abs(&(&next - &g)), &next);
        if !step.is_finite() {
            return Err(LqgError::NonConvergence { iterations, step });
        }
        g = next;
        if let Some(extra) = polish.as_mut() {
            *extra += 1;
            if step == 0.0 || step >= prev_step || *extra >= POLISH_LIMIT {
                break;
            }
        } else if step <= DARE_STEP_TOL {
            if step == 0.0 {
                break;
            }
            polish = Some(0);
        } else {
            if step < best_step {
                best_step = step;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if since_best >= STALL_WINDOW
                && relative(dare_residual(&g, a, b), &g) <= DARE_RESIDUAL_TOL
            {
                break;
            }
            if iterations >= DARE_MAX_ITER {
                return Err(LqgError::NonConvergence { iterations, step });
            }
        }
        prev_step = step;
    }
    let residual = relative(dare_residual(&g, a, b), &g);
    if residual > DARE_RESIDUAL_TOL {
        return Err(LqgError::Residual { residual });
    }
    let radius = numerics::spectral_radius(&(a - b * gain(&g, a, b)))?;
    if radius >= 1.0 {
        return Err(LqgError::UnstableClosedLoop { radius });
    }
    Ok(g)
}

/// Riccati solution for a broadcast instance.
pub fn solve_dare(spec: &SystemSpec) -> Result<CMatrix, LqgError> {
    solve_riccati(&spec.open_loop(), &spec.input_map())
}

/// Optimal gain row `C = (B'GB + 1)^{-1} B'GA`.
pub fn gain(g: &CMatrix, a: &CMatrix, b: &CVector) -> CRow {
    let scale = (b.adjoint() * g * b)[(0, 0)] + 1.0;
    (b.adjoint() * g * a) / scale
}

/// Fixed point of `K ↦ F K F' + K_z` for a stable `F`, iterated from `K_z`.
///
/// Stops when the relative step reaches [`DALE_STEP_TOL`], or when the step has stalled at
/// the roundoff floor below [`DARE_RESIDUAL_TOL`].
pub fn solve_dale(closed_loop: &CMatrix, noise_cov: &CMatrix) -> Result<CMatrix, LqgError> {
    let radius = numerics::spectral_radius(closed_loop)?;
    if radius >= 1.0 {
        return Err(LqgError::UnstableClosedLoop { radius });
    }
    let f_adj = closed_loop.adjoint();
    let mut cov = noise_cov.clone();
    let mut best_step = f64::INFINITY;
    let mut since_best = 0;
    for iterations in 1..=DALE_MAX_ITER {
        let next = hermitian_part(&(closed_loop * &cov * &f_adj + noise_cov));
        let step = relative(max_abs(&(&next - &cov)), &next);
        cov = next;
        if step <= DALE_STEP_TOL {
            return Ok(cov);
        }
        if !step.is_finite() {
            return Err(LqgError::NonConvergence { iterations, step });
        }
        if step < best_step {
            best_step = step;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_WINDOW && best_step <= DARE_RESIDUAL_TOL {
                return Ok(cov);
            }
        }
    }
    Err(LqgError::NonConvergence {
        iterations: DALE_MAX_ITER,
        step: best_step,
    })
}

/// Everything the code needs from the control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgSolution {
    /// Stabilising Riccati solution `G`.
    pub riccati: CMatrix,
    /// Gain row `C`; the encoder sends `-C·S_i`.
    pub gain: CRow,
    /// Steady-state state covariance `K_s`.
    pub steady_cov: CMatrix,
    /// Asymptotic input power `tr(G K_z)`.
    pub power: f64,
    /// Spectral radius of `A - BC`.
    pub closed_loop_radius: f64,
}

impl LqgSolution {
    pub fn solve(spec: &SystemSpec) -> Result<Self, LqgError> {
        Self::solve_with(&spec.open_loop(), &spec.input_map(), spec.noise_cov())
    }

    /// General input map and noise covariance; used for the rescaled two-receiver form.
    pub fn solve_with(a: &CMatrix, b: &CVector, noise_cov: &CMatrix) -> Result<Self, LqgError> {
        let riccati = solve_riccati(a, b)?;
        let gain = gain(&riccati, a, b);
        let closed_loop = a - b * &gain;
        let closed_loop_radius = numerics::spectral_radius(&closed_loop)?;
        let steady_cov = solve_dale(&closed_loop, noise_cov)?;
        let mut solution = Self {
            riccati,
            gain,
            steady_cov,
            power: 0.0,
            closed_loop_radius,
        };
        solution.power = asymptotic_power(&solution, noise_cov)?;
        Ok(solution)
    }

    pub fn closed_loop(&self, a: &CMatrix, b: &CVector) -> CMatrix {
        a - b * &self.gain
    }
}

/// `tr(G K_z)`, cross-checked against `C K_s C'`.
pub fn asymptotic_power(solution: &LqgSolution, noise_cov: &CMatrix) -> Result<f64, LqgError> {
    let trace = trace_re(&(&solution.riccati * noise_cov));
    let quadratic = (&solution.gain * &solution.steady_cov * solution.gain.adjoint())[(0, 0)].re;
    if (trace - quadratic).abs() > POWER_AGREEMENT_TOL * (1.0 + trace.abs()) {
        return Err(LqgError::PowerMismatch { trace, quadratic });
    }
    Ok(trace)
}

/// Spectrum of the circulant Riccati solution for modes on a circle of radius `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantSpectrum {
    /// `λ_1 > λ_2 > … > λ_k > 0`, with `λ_i = λ_{i-1} / a²`.
    pub eigenvalues: Vec<f64>,
    /// Common diagonal entry `G_jj = Σλ_i / k`.
    pub diag_value: f64,
}

impl CirculantSpectrum {
    pub fn largest(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn smallest(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Closed-form Riccati solution for [`SystemSpec::symmetric_modes`]:
/// `λ_1 = (a^{2k} - 1)/k`, `λ_i = λ_1 a^{-2(i-1)}`, `G = F·diag(λ)·F'`.
pub fn solve_symmetric(k: usize, a: f64) -> Result<(CirculantSpectrum, CMatrix), LqgError> {
    if k == 0 {
        return Err(LqgError::Empty);
    }
    if !(a > 1.0) {
        return Err(LqgError::InvalidParameter(format!("a = {a} must exceed 1")));
    }
    let largest = (a.powi(2 * k as i32) - 1.0) / k as f64;
    let eigenvalues: Vec<f64> = (0..k).map(|i| largest * a.powi(-2 * i as i32)).collect();
    let diag_value = eigenvalues.iter().sum::<f64>() / k as f64;
    let g = numerics::circulant_from_eigenvalues(&eigenvalues);
    Ok((
        CirculantSpectrum {
            eigenvalues,
            diag_value,
        },
        g,
    ))
}

/// Closed-form power `tr(G K_z)` for two receivers with modes `a1, a2` and noise
/// correlation `rho`:
///
/// ```text
/// (|a1 conj(a2) - 1|² (|a1|² + |a2|² - 2) - ρ (|a1|² - 1)(|a2|² - 1)(2 Re(a1 conj(a2)) - 2)) / |a1 - a2|²
/// ```
pub fn two_receiver_power(a1: Complex64, a2: Complex64, rho: f64) -> Result<f64, LqgError> {
    if !(a1.norm() > 1.0) {
        return Err(LqgError::StableMode {
            index: 1,
            modulus: a1.norm(),
        });
    }
    if !(a2.norm() > 1.0) {
        return Err(LqgError::StableMode {
            index: 2,
            modulus: a2.norm(),
        });
    }
    if (a1 - a2).norm() <= MODE_SEPARATION {
        return Err(LqgError::DuplicateModes {
            first: 1,
            second: 2,
        });
    }
    if !(rho > -1.0 && rho < 1.0) {
        return Err(LqgError::InvalidParameter(format!(
            "rho = {rho} must lie in (-1, 1)"
        )));
    }
    let m1 = a1.norm_sqr();
    let m2 = a2.norm_sqr();
    let cross = (a1 * a2.conj()).re;
    let value = (a1 * a2.conj() - 1.0).norm_sqr() * (m1 + m2 - 2.0)
        - rho * (m1 - 1.0) * (m2 - 1.0) * (2.0 * cross - 2.0);
    Ok(value / (a1 - a2).norm_sqr())
}

/// Two-receiver covariance with unit diagonal and correlation `rho`.
pub fn correlated_pair(rho: f64) -> CMatrix {
    let one = Complex64::new(1.0, 0.0);
    let r = Complex64::new(rho, 0.0);
    CMatrix::from_row_slice(2, 2, &[one, r, r, one])
}
