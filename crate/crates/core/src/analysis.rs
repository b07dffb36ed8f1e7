//! Sum-rate power gain, MAC duality and pre-log experiments.
//!
//! Rates are in nats per channel use.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::lqg::{asymptotic_power, LqgError, LqgSolution, SystemSpec};
use crate::numerics::{ones, CMatrix};

/// Width at which the bisection for φ stops.
pub const PHI_TOL: f64 = 1e-12;
/// Relative agreement required between solver and closed-form pre-log power.
pub const PRELOG_POWER_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("k must be at least 1")]
    ZeroReceivers,
    #[error("power must be positive and finite, got {0}")]
    InvalidPower(f64),
    #[error("no sign change of the defining equation on [1, {k}] at P = {power}")]
    NoSignChange { k: usize, power: f64 },
    #[error("rank {r} must lie in 1..={k}")]
    InvalidRank { k: usize, r: usize },
    #[error("a = {0} must exceed 1")]
    InvalidMode(f64),
    #[error("power grid must be positive and strictly ascending")]
    InvalidGrid,
    #[error("at a = {a}: solver power {solver} disagrees with closed form {closed_form}")]
    PowerMismatch {
        a: f64,
        solver: f64,
        closed_form: f64,
    },
    #[error("covariance is singular or not positive definite")]
    Singular,
    #[error(transparent)]
    Lqg(#[from] LqgError),
}

fn check_args(k: usize, power: f64) -> Result<(), AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::ZeroReceivers);
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(AnalysisError::InvalidPower(power));
    }
    Ok(())
}

/// Root of `g` on `[1, k]` by bisection, given `g(1) ≤ 0 ≤ g(k)`.
fn bisect(k: usize, power: f64, g: impl Fn(f64) -> f64) -> Result<f64, AnalysisError> {
    let (mut lo, mut hi) = (1.0, k as f64);
    if k == 1 {
        return Ok(1.0);
    }
    if !(g(lo) <= 0.0 && g(hi) >= 0.0) {
        return Err(AnalysisError::NoSignChange { k, power });
    }
    while hi - lo > PHI_TOL {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Power gain `φ(k, P) ∈ [1, k]`: the root of
/// `(1 + Pφ)^{k-1} = (1 + (P/k) φ (k - φ))^k`, found on the log scale.
pub fn phi(k: usize, power: f64) -> Result<f64, AnalysisError> {
    check_args(k, power)?;
    let kf = k as f64;
    bisect(k, power, |f| {
        (kf - 1.0) * (power * f).ln_1p() - kf * (power / kf * f * (kf - f)).ln_1p()
    })
}

/// Feedback sum rate `½ log(1 + P φ(k, P))` of the symmetric broadcast channel.
pub fn sum_rate(k: usize, power: f64) -> Result<f64, AnalysisError> {
    Ok(0.5 * (power * phi(k, power)?).ln_1p())
}

/// φ of the k-user MAC: root of `(1 + kPφ)^{k-1} = (1 + Pφ(k - φ))^k`.
pub fn mac_phi(k: usize, power: f64) -> Result<f64, AnalysisError> {
    check_args(k, power)?;
    let kf = k as f64;
    bisect(k, power, |f| {
        (kf - 1.0) * (kf * power * f).ln_1p() - kf * (power * f * (kf - f)).ln_1p()
    })
}

/// MAC sum rate `½ log(1 + kPφ)` with per-user power `P`.
pub fn mac_sum_rate(k: usize, power: f64) -> Result<f64, AnalysisError> {
    Ok(0.5 * (k as f64 * power * mac_phi(k, power)?).ln_1p())
}

/// `|R_BC(k, P) - R_MAC(k, P/k)|`.
pub fn duality_check(k: usize, power: f64) -> Result<f64, AnalysisError> {
    Ok((sum_rate(k, power)? - mac_sum_rate(k, power / k as f64)?).abs())
}

/// Relative residual of the defining equation, evaluated on the raw polynomial.
pub fn phi_residual(k: usize, power: f64, phi: f64) -> f64 {
    let kf = k as f64;
    let lhs = (1.0 + power * phi).powi(k as i32 - 1);
    let rhs = (1.0 + power / kf * phi * (kf - phi)).powi(k as i32);
    (lhs - rhs).abs() / lhs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumRatePoint {
    pub k: usize,
    pub power: f64,
    pub phi: f64,
    pub rate: f64,
    /// `½ log(1 + P)`, the sum capacity without feedback.
    pub rate_no_feedback: f64,
}

impl SumRatePoint {
    pub fn new(k: usize, power: f64) -> Result<Self, AnalysisError> {
        let phi = phi(k, power)?;
        Ok(Self {
            k,
            power,
            phi,
            rate: 0.5 * (power * phi).ln_1p(),
            rate_no_feedback: 0.5 * power.ln_1p(),
        })
    }
}

/// One point per power; the grid must be positive and strictly ascending.
pub fn sweep(k: usize, powers: &[f64]) -> Result<Vec<SumRatePoint>, AnalysisError> {
    if powers.is_empty()
        || powers.iter().any(|p| !(*p > 0.0 && p.is_finite()))
        || powers.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(AnalysisError::InvalidGrid);
    }
    powers
        .par_iter()
        .map(|&p| SumRatePoint::new(k, p))
        .collect()
}

/// Rank-one circulant covariance `F·diag(0,…,0,k)·F'` with entries `exp(2πi(j-l)/k)`.
pub fn rank_one_circulant_cov(k: usize) -> CMatrix {
    CMatrix::from_fn(k, k, |j, l| {
        let shift = (j + k - l) % k;
        Complex64::from_polar(1.0, 2.0 * PI * shift as f64 / k as f64)
    })
}

/// Block-diagonal covariance of rank `r`: a rank-one circulant block of size `k - r + 1`
/// followed by an identity block of size `r - 1`.
pub fn rank_r_cov(k: usize, r: usize) -> Result<CMatrix, AnalysisError> {
    if r == 0 || r > k {
        return Err(AnalysisError::InvalidRank { k, r });
    }
    let block = k - r + 1;
    let mut cov = CMatrix::identity(k, k);
    cov.view_mut((0, 0), (block, block))
        .copy_from(&rank_one_circulant_cov(block));
    Ok(cov)
}

/// Closed-form power `(a^{2k} - 1)/a^{2(k-1)}` of the symmetric code under the rank-one
/// circulant covariance.
pub fn prelog_power(k: usize, a: f64) -> f64 {
    (a.powi(2 * k as i32) - 1.0) / a.powi(2 * (k as i32 - 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrelogPoint {
    pub a: f64,
    /// Sum rate `k' log a`.
    pub rate: f64,
    /// Power from the numeric solver.
    pub power: f64,
    pub closed_form_power: f64,
    /// `rate / (½ log(1 + power))`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrelogExperiment {
    pub k: usize,
    pub r: usize,
    pub covariance: CMatrix,
    pub points: Vec<PrelogPoint>,
}

impl PrelogExperiment {
    /// Receivers that share the rank-one block, `k - r + 1`; the pre-log limit.
    pub fn effective_k(&self) -> usize {
        self.k - self.r + 1
    }
}

/// Sum rate and power of the symmetric code on the rank-one block of [`rank_r_cov`]; the
/// receivers of the identity block are left silent.
pub fn prelog_achieved(
    k: usize,
    r: usize,
    a_grid: &[f64],
) -> Result<PrelogExperiment, AnalysisError> {
    let covariance = rank_r_cov(k, r)?;
    let kb = k - r + 1;
    let block = rank_one_circulant_cov(kb);
    let points = a_grid
        .iter()
        .map(|&a| {
            if !(a > 1.0 && a.is_finite()) {
                return Err(AnalysisError::InvalidMode(a));
            }
            let spec = SystemSpec::symmetric(kb, a, block.clone())?;
            let solution = LqgSolution::solve(&spec)?;
            let power = asymptotic_power(&solution, &block)?;
            let closed_form_power = prelog_power(kb, a);
            if (power - closed_form_power).abs() > PRELOG_POWER_TOL * closed_form_power {
                return Err(AnalysisError::PowerMismatch {
                    a,
                    solver: power,
                    closed_form: closed_form_power,
                });
            }
            let rate = kb as f64 * a.ln();
            Ok(PrelogPoint {
                a,
                rate,
                power,
                closed_form_power,
                ratio: rate / (0.5 * power.ln_1p()),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PrelogExperiment {
        k,
        r,
        covariance,
        points,
    })
}

/// Cooperative-receiver bound `½ log(1 + P·1'K^{-1}1)` for a positive definite `K`.
pub fn simo_upper_bound(cov: &CMatrix, power: f64) -> Result<f64, AnalysisError> {
    check_args(cov.nrows().max(1), power)?;
    let chol = cov.clone().cholesky().ok_or(AnalysisError::Singular)?;
    let one = ones(cov.nrows());
    let gain = (one.adjoint() * chol.solve(&one))[(0, 0)].re;
    if !(gain.is_finite() && gain > 0.0) {
        return Err(AnalysisError::Singular);
    }
    Ok(0.5 * (power * gain).ln_1p())
}
