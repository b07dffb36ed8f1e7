//! Closed-loop simulation of the broadcast code and seeded Monte Carlo ensembles.
//!
//! Trial `t` of an ensemble draws all of its randomness from `stream_rng(base_seed, t)`, so a
//! trial's result depends only on `(base_seed, t)`. Ensembles collect trial results in index
//! order and reduce them sequentially, which makes the output independent of the thread count.

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::codes::{BcDecoder, BcEncoder, CodeError, MessageGrid, OlCode, P2pCode, P2pTrace};
use crate::lqg::{LqgError, LqgSolution, SystemSpec};
use crate::numerics::{stream_rng, CMatrix, CVector, GaussianSampler, NoiseKind, NumericsError};

/// Largest allowed `n·log|a_j|`; keeps `|a_j|^{-2n}` well inside double range.
pub const HORIZON_LOG_LIMIT: f64 = 300.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon {n} too long for receiver {receiver}: n·log|a| = {value:.1} exceeds {HORIZON_LOG_LIMIT}")]
    HorizonTooLong {
        receiver: usize,
        n: usize,
        value: f64,
    },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("non-finite encoder state at time {time}")]
    NonFinite { time: usize },
    #[error("expected {expected} grid rates, got {got}")]
    GridCount { expected: usize, got: usize },
    #[error("noise covariance is {got}×{got}, expected {expected}×{expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error("trial {index}: {source}")]
    Trial {
        index: u64,
        #[source]
        source: Box<SimError>,
    },
    #[error(transparent)]
    Lqg(#[from] LqgError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Code(#[from] CodeError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 2 points in the fitted window, series has {len}")]
    TooShort { len: usize },
    #[error("non-positive or non-finite value {value} at index {index}")]
    NonPositive { index: usize, value: f64 },
}

/// First index (zero-based) of the second half of a length-`n` horizon.
pub fn tail_start(n: usize) -> usize {
    n / 2
}

/// Least-squares slope of `-log D_i` against `2i` over the last half of the series, where
/// `d[i - 1] = D^{(i)}`.
pub fn mse_exponent_fit(d: &[f64]) -> Result<f64, FitError> {
    let start = tail_start(d.len());
    if d.len() - start < 2 {
        return Err(FitError::TooShort { len: d.len() });
    }
    let mut xs = Vec::with_capacity(d.len() - start);
    let mut ys = Vec::with_capacity(d.len() - start);
    for (index, &value) in d.iter().enumerate().skip(start) {
        if !(value > 0.0 && value.is_finite()) {
            return Err(FitError::NonPositive { index, value });
        }
        xs.push(2.0 * (index + 1) as f64);
        ys.push(-value.ln());
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Summation by recursive halving; the order is fixed by the slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let (left, right) = values.split_at(values.len() / 2);
    pairwise_sum(left) + pairwise_sum(right)
}

/// Sample mean and standard error of the mean. The standard error is NaN for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = pairwise_sum(values) / n;
        let stderr = if values.len() < 2 {
            f64::NAN
        } else {
            let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
            (pairwise_sum(&dev) / (n - 1.0) / n).sqrt()
        };
        Self { mean, stderr }
    }
}

/// Additive noise channel `Y = 1·X + Z`.
#[derive(Debug, Clone)]
pub struct ChannelInstance {
    noise_cov: CMatrix,
    sampler: GaussianSampler,
}

impl ChannelInstance {
    pub fn new(noise_cov: &CMatrix, kind: NoiseKind) -> Result<Self, SimError> {
        let sampler = match kind {
            NoiseKind::Silent => GaussianSampler::silent(noise_cov.nrows()),
            _ => GaussianSampler::new(noise_cov, kind)?,
        };
        Ok(Self {
            noise_cov: noise_cov.clone(),
            sampler,
        })
    }

    pub fn k(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn noise_cov(&self) -> &CMatrix {
        &self.noise_cov
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.sampler.kind()
    }

    pub fn output<R: Rng + ?Sized>(&self, x: Complex64, rng: &mut R) -> CVector {
        self.sampler.sample(rng).add_scalar(x)
    }
}

/// Message distribution: uniform on the unit square (or unit interval when `real`),
/// optionally shifted to be zero-mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageSupport {
    pub real: bool,
    pub centered: bool,
}

impl MessageSupport {
    pub const UNIT_SQUARE: Self = Self {
        real: false,
        centered: false,
    };
    pub const UNIT_INTERVAL: Self = Self {
        real: true,
        centered: false,
    };

    fn offset(&self) -> Complex64 {
        match (self.centered, self.real) {
            (false, _) => Complex64::new(0.0, 0.0),
            (true, true) => Complex64::new(0.5, 0.0),
            (true, false) => Complex64::new(0.5, 0.5),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let re: f64 = rng.random();
        let im: f64 = if self.real { 0.0 } else { rng.random() };
        Complex64::new(re, im) - self.offset()
    }
}

/// Everything a trial needs besides its seed.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub spec: SystemSpec,
    pub solution: LqgSolution,
    pub channel: ChannelInstance,
    pub horizon: usize,
    pub messages: MessageSupport,
    pub grids: Option<Vec<MessageGrid>>,
}

impl TrialConfig {
    /// Solves the control problem for `spec` and uses circular noise with messages on the
    /// unit square.
    pub fn new(spec: SystemSpec, horizon: usize) -> Result<Self, SimError> {
        let solution = LqgSolution::solve(&spec)?;
        Self::with_solution(spec, solution, horizon)
    }

    pub fn with_solution(
        spec: SystemSpec,
        solution: LqgSolution,
        horizon: usize,
    ) -> Result<Self, SimError> {
        check_horizon(spec.modes(), horizon)?;
        let channel = ChannelInstance::new(spec.noise_cov(), NoiseKind::Circular)?;
        Ok(Self {
            spec,
            solution,
            channel,
            horizon,
            messages: MessageSupport::UNIT_SQUARE,
            grids: None,
        })
    }

    pub fn with_noise(mut self, kind: NoiseKind) -> Result<Self, SimError> {
        self.channel = ChannelInstance::new(self.spec.noise_cov(), kind)?;
        Ok(self)
    }

    pub fn with_messages(mut self, messages: MessageSupport) -> Self {
        self.messages = messages;
        self
    }

    /// Draws messages from per-receiver grids at the given rates (nats per channel use) and
    /// decodes them at the horizon.
    pub fn with_grid_rates(mut self, rates: &[f64]) -> Result<Self, SimError> {
        if rates.len() != self.spec.k() {
            return Err(SimError::GridCount {
                expected: self.spec.k(),
                got: rates.len(),
            });
        }
        let grids = rates
            .iter()
            .map(|&r| MessageGrid::build(r, self.horizon))
            .collect::<Result<Vec<_>, _>>()?;
        self.grids = Some(grids);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.spec.k()
    }
}

fn check_horizon(modes: &[Complex64], n: usize) -> Result<(), SimError> {
    if n == 0 {
        return Err(SimError::ZeroHorizon);
    }
    for (receiver, a) in modes.iter().enumerate() {
        let value = n as f64 * a.norm().ln();
        if value > HORIZON_LOG_LIMIT {
            return Err(SimError::HorizonTooLong { receiver, n, value });
        }
    }
    Ok(())
}

/// Outcome of one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    /// `|Θ_j - Θ̂_{j,n}|²` per receiver.
    pub final_sq_error: Vec<f64>,
    /// `error_path[j][i - 1] = |Θ_j - Θ̂_{j,i}|²`.
    pub error_path: Vec<Vec<f64>>,
    /// `(1/n) Σ |X_i|²`.
    pub avg_power: f64,
    /// Average of `|X_i|²` over the second half of the horizon.
    pub tail_power: f64,
    /// Per-receiver decoding failures, when messages come from grids.
    pub grid_errors: Option<Vec<bool>>,
    /// Per-receiver slope fit of this trial's error path.
    pub exponent_est: Vec<Option<f64>>,
    /// Largest `|(Θ_j - Θ̂_{j,i}) - a_j^{-i} S_{j,i+1}|` seen in the run.
    pub identity_residual: f64,
}

pub fn run_trial(config: &TrialConfig, seed: u64, index: u64) -> Result<TrialMetrics, SimError> {
    let k = config.k();
    let n = config.horizon;
    check_horizon(config.spec.modes(), n)?;
    if config.channel.k() != k {
        return Err(SimError::DimensionMismatch {
            expected: k,
            got: config.channel.k(),
        });
    }
    let mut rng: ChaCha8Rng = stream_rng(seed, index);
    let offset = config.messages.offset();

    let mut sent = Vec::new();
    let theta: Vec<Complex64> = match &config.grids {
        Some(grids) => grids
            .iter()
            .map(|g| {
                let idx = g.random_index(&mut rng);
                sent.push(idx);
                g.point(idx) - offset
            })
            .collect(),
        None => (0..k).map(|_| config.messages.draw(&mut rng)).collect(),
    };

    let modes = config.spec.modes();
    let mut encoder = BcEncoder::new(modes, &config.solution, CVector::from_column_slice(&theta));
    let mut decoders: Vec<BcDecoder> = modes.iter().map(|&a| BcDecoder::new(a)).collect();
    let mut error_path = vec![Vec::with_capacity(n); k];
    let mut powers = Vec::with_capacity(n);
    let mut identity_residual = 0.0_f64;
    let mut estimates = vec![Complex64::new(0.0, 0.0); k];

    let mut x = encoder.symbol();
    for i in 1..=n {
        powers.push(x.norm_sqr());
        let y = config.channel.output(x, &mut rng);
        x = encoder.step(&y);
        let state = encoder.state();
        if !(x.re.is_finite() && x.im.is_finite())
            || state.iter().any(|s| !s.re.is_finite() || !s.im.is_finite())
        {
            return Err(SimError::NonFinite { time: i });
        }
        for j in 0..k {
            estimates[j] = decoders[j].step(y[j]);
            let err = theta[j] - estimates[j];
            let scaled = modes[j].powi(-(i as i32)) * state[j];
            let residual = (err - scaled).norm();
            debug_assert!(
                residual <= 1e-9 * (1.0 + scaled.norm()),
                "error identity broken at receiver {j}, time {i}: {residual}"
            );
            identity_residual = identity_residual.max(residual);
            error_path[j].push(err.norm_sqr());
        }
    }

    let tail = &powers[tail_start(n)..];
    let grid_errors = config.grids.as_ref().map(|grids| {
        grids
            .iter()
            .zip(&sent)
            .zip(&estimates)
            .map(|((g, &idx), est)| g.decode(est + offset) != idx)
            .collect()
    });
    Ok(TrialMetrics {
        final_sq_error: error_path.iter().map(|p| p[n - 1]).collect(),
        exponent_est: error_path
            .iter()
            .map(|p| mse_exponent_fit(p).ok())
            .collect(),
        error_path,
        avg_power: pairwise_sum(&powers) / n as f64,
        tail_power: pairwise_sum(tail) / tail.len() as f64,
        grid_errors,
        identity_residual,
    })
}

/// Aggregate over an ensemble of trials.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub trials: usize,
    pub base_seed: u64,
    pub horizon: usize,
    pub avg_power: Stat,
    pub tail_power: Stat,
    /// Per receiver, `D_j^{(n)}` across trials.
    pub final_mse: Vec<Stat>,
    /// Per receiver, the empirical `D_j^{(i)}` for `i = 1..=n`.
    pub mse_path: Vec<Vec<f64>>,
    /// Slope fit of each receiver's `mse_path`.
    pub ensemble_exponent: Vec<Option<f64>>,
    /// Per receiver, trial-level slope fits (trials whose fit failed are skipped).
    pub trial_exponent: Vec<Stat>,
    /// Per receiver, fraction of trials decoded to the wrong grid point.
    pub grid_error_rate: Option<Vec<f64>>,
    pub max_identity_residual: f64,
}

impl EnsembleResult {
    pub fn from_trials(metrics: &[TrialMetrics], base_seed: u64) -> Self {
        let trials = metrics.len();
        let k = metrics[0].final_sq_error.len();
        let horizon = metrics[0].error_path[0].len();
        let column =
            |f: &dyn Fn(&TrialMetrics) -> f64| -> Vec<f64> { metrics.iter().map(f).collect() };

        let final_mse = (0..k)
            .map(|j| Stat::from_samples(&column(&|m| m.final_sq_error[j])))
            .collect();
        let mse_path: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                (0..horizon)
                    .map(|i| pairwise_sum(&column(&|m| m.error_path[j][i])) / trials as f64)
                    .collect()
            })
            .collect();
        let ensemble_exponent = mse_path.iter().map(|p| mse_exponent_fit(p).ok()).collect();
        let trial_exponent = (0..k)
            .map(|j| {
                let fits: Vec<f64> = metrics.iter().filter_map(|m| m.exponent_est[j]).collect();
                Stat::from_samples(&fits)
            })
            .collect();
        let grid_error_rate = metrics[0].grid_errors.as_ref().map(|_| {
            (0..k)
                .map(|j| {
                    let fails = metrics
                        .iter()
                        .filter(|m| m.grid_errors.as_ref().is_some_and(|g| g[j]))
                        .count();
                    fails as f64 / trials as f64
                })
                .collect()
        });
        Self {
            trials,
            base_seed,
            horizon,
            avg_power: Stat::from_samples(&column(&|m| m.avg_power)),
            tail_power: Stat::from_samples(&column(&|m| m.tail_power)),
            final_mse,
            mse_path,
            ensemble_exponent,
            trial_exponent,
            grid_error_rate,
            max_identity_residual: metrics
                .iter()
                .map(|m| m.identity_residual)
                .fold(0.0, f64::max),
        }
    }
}

/// Runs `trials` trials on at most `jobs` threads (`0` picks the rayon default).
pub fn run_ensemble(
    config: &TrialConfig,
    trials: usize,
    base_seed: u64,
    jobs: usize,
) -> Result<EnsembleResult, SimError> {
    let metrics = parallel_trials(trials, jobs, |t| run_trial(config, base_seed, t))?;
    Ok(EnsembleResult::from_trials(&metrics, base_seed))
}

/// Evaluates `trial(t)` for `t in 0..trials` in parallel and returns results in index order.
/// The first failing trial (by index) is reported.
pub fn parallel_trials<T, F>(trials: usize, jobs: usize, trial: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(u64) -> Result<T, SimError> + Sync,
{
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    let results: Vec<Result<T, SimError>> =
        pool.install(|| (0..trials as u64).into_par_iter().map(&trial).collect());
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|source| SimError::Trial {
                index: index as u64,
                source: Box::new(source),
            })
        })
        .collect()
}

/// Point-to-point run over the real channel with unit noise and `Θ ~ U(0,1)`.
pub fn run_p2p_trial(a: f64, n: usize, seed: u64, index: u64) -> P2pTrace {
    let mut rng = stream_rng(seed, index);
    let mut code = P2pCode::new(a, rng.random());
    let mut trace = P2pTrace {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
    };
    let mut x = code.symbol();
    for _ in 0..n {
        let y = x + rng.sample::<f64, _>(StandardNormal);
        trace.x.push(x);
        trace.y.push(y);
        x = code.step(y);
    }
    trace
}

pub fn run_p2p_ensemble(
    a: f64,
    n: usize,
    trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<P2pTrace>, SimError> {
    check_horizon(&[Complex64::new(a, 0.0)], n)?;
    parallel_trials(trials, jobs, |t| Ok(run_p2p_trial(a, n, seed, t)))
}

/// Tail-averaged transmit power of the LQG and OL codes driven by the same messages and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct OlComparison {
    pub trials: usize,
    pub horizon: usize,
    pub base_seed: u64,
    pub lqg_power: Stat,
    pub ol_power: Stat,
    /// Per-trial `OL - LQG`.
    pub difference: Stat,
    /// Analytic LQG power `tr(G K_z)`.
    pub lqg_asymptotic: f64,
}

impl OlComparison {
    /// Mean paired difference in units of its standard error.
    pub fn separation(&self) -> f64 {
        self.difference.mean / self.difference.stderr
    }
}

/// Two receivers with modes `(a, -a)` and independent unit noises on the real channel, both
/// codes fed the same zero-mean messages on `(-½,½)²` and the same noise sequence.
pub fn compare_ol(
    a: f64,
    n: usize,
    trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<OlComparison, SimError> {
    let modes = [Complex64::new(a, 0.0), Complex64::new(-a, 0.0)];
    check_horizon(&modes, n)?;
    let spec = SystemSpec::new(modes.to_vec(), CMatrix::identity(2, 2))?;
    let solution = LqgSolution::solve(&spec)?;
    let moments = OlCode::uniform_moments(true);
    let start = tail_start(n);

    let pairs = parallel_trials(trials, jobs, |t| {
        let mut rng = stream_rng(seed, t);
        let theta = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
        let message = CVector::from_iterator(2, theta.iter().map(|&v| Complex64::new(v, 0.0)));
        let mut lqg = BcEncoder::new(&modes, &solution, message);
        let mut ol = OlCode::new(a, theta, moments);
        let (mut lqg_energy, mut ol_energy) =
            (Vec::with_capacity(n - start), Vec::with_capacity(n - start));
        let (mut xl, mut xo) = (lqg.symbol(), ol.symbol());
        for i in 0..n {
            let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            if i >= start {
                lqg_energy.push(xl.norm_sqr());
                ol_energy.push(xo * xo);
            }
            let y = CVector::from_iterator(2, z.iter().map(|&zj| xl + zj));
            xl = lqg.step(&y);
            xo = ol.step([xo + z[0], xo + z[1]])?;
            if !xl.re.is_finite() || !xo.is_finite() {
                return Err(SimError::NonFinite { time: i + 1 });
            }
        }
        let len = lqg_energy.len() as f64;
        Ok((
            pairwise_sum(&lqg_energy) / len,
            pairwise_sum(&ol_energy) / len,
        ))
    })?;

    let lqg: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ol: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.1 - p.0).collect();
    Ok(OlComparison {
        trials,
        horizon: n,
        base_seed: seed,
        lqg_power: Stat::from_samples(&lqg),
        ol_power: Stat::from_samples(&ol),
        difference: Stat::from_samples(&diff),
        lqg_asymptotic: solution.power,
    })
}

/// Steady-state power of the OL code from its exact second-moment recursion.
pub fn ol_asymptotic_power(a: f64, steps: usize) -> Result<f64, SimError> {
    let mut code = OlCode::new(a, [0.0, 0.0], Matrix2::identity() / 12.0);
    for _ in 0..steps {
        code.step([0.0, 0.0])?;
    }
    Ok(code.moments().sum())
}
