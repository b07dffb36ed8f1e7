//! Encoder and decoder recursions.
//!
//! All codes follow the same timing: the symbol sent at time `i` is computed from the state
//! `S_i`, the channel output `Y_i` is fed back, and the state moves to `S_{i+1}`. The first
//! symbol uses `S_1 = Θ`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::lqg::LqgSolution;
use crate::numerics::{CRow, CVector};

/// Point-to-point code over the real AWGN channel with feedback.
///
/// Encoder `S_{i+1} = a S_i + Y_i`, decoder `Ŝ_{i+1} = a Ŝ_i + Y_i` with `Ŝ_1 = 0`, and the
/// estimate after `i` outputs is `Θ̂_i = -a^{-i} Ŝ_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct P2pCode {
    a: f64,
    c: f64,
    message: f64,
    state: f64,
    decoder_state: f64,
    time: usize,
}

impl P2pCode {
    /// Code with the power-optimal gain `c = (a² - 1)/a`.
    pub fn new(a: f64, message: f64) -> Self {
        Self::with_gain(a, (a * a - 1.0) / a, message)
    }

    pub fn with_gain(a: f64, c: f64, message: f64) -> Self {
        Self {
            a,
            c,
            message,
            state: message,
            decoder_state: 0.0,
            time: 0,
        }
    }

    pub fn gain(&self) -> f64 {
        self.c
    }

    /// Outputs consumed so far.
    pub fn time(&self) -> usize {
        self.time
    }

    /// Encoder state `S_{i+1}` after `i` outputs.
    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn decoder_state(&self) -> f64 {
        self.decoder_state
    }

    /// Symbol for the current state, `-c S`.
    pub fn symbol(&self) -> f64 {
        -self.c * self.state
    }

    /// Feeds back the output of the current symbol and returns the next symbol.
    pub fn step(&mut self, y: f64) -> f64 {
        self.state = self.a * self.state + y;
        self.decoder_state = self.a * self.decoder_state + y;
        self.time += 1;
        self.symbol()
    }

    /// `Θ̂_i = -a^{-i} Ŝ_{i+1}`.
    pub fn estimate(&self) -> f64 {
        -self.a.powi(-(self.time as i32)) * self.decoder_state
    }

    /// `|(Θ - Θ̂_i) - a^{-i} S_{i+1}|`; zero up to roundoff for any noise realisation.
    pub fn identity_residual(&self) -> f64 {
        let error = self.message - self.estimate();
        (error - self.a.powi(-(self.time as i32)) * self.state).abs()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodeError {
    #[error("SK coefficient tracking needs at least {min} traces, got {got}")]
    TooFewTraces { got: usize, min: usize },
    #[error("traces have unequal lengths")]
    RaggedTraces,
    #[error("OL second-moment recursion lost positive semidefiniteness at time {time}")]
    NotPsd { time: usize },
    #[error("message rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("block length must be at least 1")]
    ZeroLength,
    #[error("grid would hold e^{nats:.3} points, above the 2^24 cap")]
    CardinalityCap { nats: f64 },
}

/// Input/output record of one point-to-point run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct P2pTrace {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub const MIN_SK_TRACES: usize = 100;

/// Empirical `E[X_i Y_i] / E[Y_i²]` at every time index across an ensemble of traces.
///
/// For the optimal gain this tends to `c/a = (a² - 1)/a²`, the coefficient of the
/// Schalkwijk–Kailath recursion.
pub fn sk_coefficient_track(traces: &[P2pTrace]) -> Result<Vec<f64>, CodeError> {
    if traces.len() < MIN_SK_TRACES {
        return Err(CodeError::TooFewTraces {
            got: traces.len(),
            min: MIN_SK_TRACES,
        });
    }
    let n = traces[0].x.len();
    if traces.iter().any(|t| t.x.len() != n || t.y.len() != n) {
        return Err(CodeError::RaggedTraces);
    }
    Ok((0..n)
        .map(|i| {
            let cross: f64 = traces.iter().map(|t| t.x[i] * t.y[i]).sum();
            let energy: f64 = traces.iter().map(|t| t.y[i] * t.y[i]).sum();
            cross / energy
        })
        .collect())
}

/// Encoder of the broadcast LQG code: `S_{i+1} = A S_i + Y_i`, sending `X_i = -C S_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BcEncoder {
    modes: Vec<Complex64>,
    gain: CRow,
    state: CVector,
    time: usize,
}

impl BcEncoder {
    pub fn new(modes: &[Complex64], solution: &LqgSolution, message: CVector) -> Self {
        Self::with_gain(modes, solution.gain.clone(), message)
    }

    pub fn with_gain(modes: &[Complex64], gain: CRow, message: CVector) -> Self {
        assert_eq!(modes.len(), message.len(), "one message per receiver");
        assert_eq!(
            modes.len(),
            gain.len(),
            "gain width must match receiver count"
        );
        Self {
            modes: modes.to_vec(),
            gain,
            state: message,
            time: 0,
        }
    }

    pub fn state(&self) -> &CVector {
        &self.state
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn symbol(&self) -> Complex64 {
        -(&self.gain * &self.state)[(0, 0)]
    }

    /// Absorbs the full output vector for the current symbol and returns the next symbol.
    pub fn step(&mut self, y: &CVector) -> Complex64 {
        for ((s, a), y) in self.state.iter_mut().zip(&self.modes).zip(y.iter()) {
            *s = *a * *s + *y;
        }
        self.time += 1;
        self.symbol()
    }
}

/// Decoder `j`: `Ŝ_{j,i+1} = a_j Ŝ_{j,i} + Y_{j,i}` and `Θ̂_{j,i} = -a_j^{-i} Ŝ_{j,i+1}`.
/// Sees only its own output stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BcDecoder {
    mode: Complex64,
    state: Complex64,
    time: usize,
}

impl BcDecoder {
    pub fn new(mode: Complex64) -> Self {
        Self {
            mode,
            state: Complex64::new(0.0, 0.0),
            time: 0,
        }
    }

    pub fn mode(&self) -> Complex64 {
        self.mode
    }

    pub fn time(&self) -> usize {
        self.time
    }

    /// Consumes `Y_{j,i}` and returns `Θ̂_{j,i}`.
    pub fn step(&mut self, y: Complex64) -> Complex64 {
        self.state = self.mode * self.state + y;
        self.time += 1;
        self.estimate()
    }

    pub fn estimate(&self) -> Complex64 {
        -self.mode.powi(-(self.time as i32)) * self.state
    }
}

/// `b = (a⁴ - 1)/(2a³)`: the input-map scale that turns the two-receiver LQG control into
/// `X = S_1 + S_2`.
pub fn ol_input_scale(a: f64) -> f64 {
    (a.powi(4) - 1.0) / (2.0 * a.powi(3))
}

/// Steady-state `E[S_j Y_j]/E[Y_j²]` of the two-receiver LQG code written in the rescaled
/// form, `b a³(a² - 1)/(a⁶ + a⁴ + a² - 1)`. Always below the LQG coefficient `b/a`.
pub fn lqg_form_coefficient(a: f64, b: f64) -> f64 {
    b * a.powi(3) * (a * a - 1.0) / (a.powi(6) + a.powi(4) + a * a - 1.0)
}

/// Ozarow–Leung code for two receivers with independent unit noises over the real channel.
///
/// Sends `X_i = S_{1,i} + S_{2,i}` and updates
/// `S_{j,i+1} = ±a (S_{j,i} - β_{j,i} Y_{j,i})` with `β_{j,i} = E[S_j Y_j]/E[Y_j²]` taken from an
/// exact propagation of the state second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OlCode {
    a: f64,
    state: Vector2<f64>,
    moments: Matrix2<f64>,
    time: usize,
}

impl OlCode {
    /// `moments` is `E[S_1 S_1ᵀ]` for the message distribution.
    pub fn new(a: f64, message: [f64; 2], moments: Matrix2<f64>) -> Self {
        Self {
            a,
            state: Vector2::from(message),
            moments,
            time: 0,
        }
    }

    /// Second moments of two independent uniform messages on `(0,1)`, or on `(-½,½)` when
    /// `centered`.
    pub fn uniform_moments(centered: bool) -> Matrix2<f64> {
        if centered {
            Matrix2::identity() / 12.0
        } else {
            Matrix2::new(1.0 / 3.0, 0.25, 0.25, 1.0 / 3.0)
        }
    }

    pub fn symbol(&self) -> f64 {
        self.state.sum()
    }

    pub fn state(&self) -> [f64; 2] {
        [self.state[0], self.state[1]]
    }

    pub fn moments(&self) -> &Matrix2<f64> {
        &self.moments
    }

    /// Current MMSE coefficients `E[S_j Y_j]/E[Y_j²]`.
    pub fn coefficients(&self) -> [f64; 2] {
        let ones = Vector2::new(1.0, 1.0);
        let cross = self.moments * ones;
        let energy = ones.dot(&cross) + 1.0;
        [cross[0] / energy, cross[1] / energy]
    }

    /// Feeds back `(Y_1, Y_2)` and returns the next symbol.
    pub fn step(&mut self, y: [f64; 2]) -> Result<f64, CodeError> {
        let [b1, b2] = self.coefficients();
        let open = Matrix2::new(self.a, 0.0, 0.0, -self.a);
        let gains = Vector2::new(b1, b2);
        self.state = open * (self.state - gains.component_mul(&Vector2::from(y)));

        let transition = open * (Matrix2::identity() - gains * Vector2::new(1.0, 1.0).transpose());
        let noise = open * Matrix2::from_diagonal(&gains.component_mul(&gains)) * open.transpose();
        let next = transition * self.moments * transition.transpose() + noise;
        self.time += 1;
        let det = next.determinant();
        if !(next[(0, 0)] >= 0.0 && next[(1, 1)] >= 0.0)
            || det < -1e-12 * next[(0, 0)] * next[(1, 1)]
            || !det.is_finite()
        {
            return Err(CodeError::NotPsd { time: self.time });
        }
        self.moments = next;
        Ok(self.symbol())
    }
}

/// Desk-scale cap on grid size.
pub const MAX_GRID_POINTS: f64 = 16_777_216.0;

/// Message points on a uniform `m × m` grid inside the unit square.
///
/// The `e^{nR}` messages of a rate-`R` (nats per complex use) block are split evenly over the
/// two real dimensions: `m = ⌊e^{nR/2}⌋` points per dimension at `(l + ½)/m`, so neighbouring
/// points are `1/m ≥ e^{-nR/2}` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGrid {
    rate: f64,
    block_length: usize,
    per_dim: usize,
}

impl MessageGrid {
    pub fn build(rate: f64, block_length: usize) -> Result<Self, CodeError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(CodeError::InvalidRate(rate));
        }
        if block_length == 0 {
            return Err(CodeError::ZeroLength);
        }
        let nats = rate * block_length as f64;
        if nats > MAX_GRID_POINTS.ln() + 1e-12 {
            return Err(CodeError::CardinalityCap { nats });
        }
        // The nudge keeps exact powers (e.g. R = ln 4, n = 1) from rounding down.
        let per_dim = ((nats / 2.0).exp() * (1.0 + 1e-12)).floor().max(1.0) as usize;
        Ok(Self {
            rate,
            block_length,
            per_dim,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    pub fn per_dim(&self) -> usize {
        self.per_dim
    }

    pub fn len(&self) -> usize {
        self.per_dim * self.per_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distance between neighbouring points along each real axis.
    pub fn spacing(&self) -> f64 {
        1.0 / self.per_dim as f64
    }

    /// Point `index`, with the real-axis coordinate as the major index.
    pub fn point(&self, index: usize) -> Complex64 {
        let m = self.per_dim as f64;
        let (re, im) = (index / self.per_dim, index % self.per_dim);
        Complex64::new((re as f64 + 0.5) / m, (im as f64 + 0.5) / m)
    }

    pub fn points(&self) -> impl Iterator<Item = Complex64> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    pub fn random_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.len())
    }

    /// Index of the nearest point; ties go to the lower index.
    pub fn decode(&self, estimate: Complex64) -> usize {
        self.axis_index(estimate.re) * self.per_dim + self.axis_index(estimate.im)
    }

    fn axis_index(&self, x: f64) -> usize {
        let m = self.per_dim as f64;
        // ceil(x m) - 1 equals floor(x m) except on cell boundaries, where it picks the lower cell.
        let cell = (x * m).ceil() - 1.0;
        if cell.is_nan() || cell < 0.0 {
            0
        } else {
            (cell as usize).min(self.per_dim - 1)
        }
    }
}

/// Reproduces complex channel uses over a real channel: each complex symbol becomes two
/// consecutive real transmissions (real part, then imaginary part).
pub fn complex_to_real_uses(symbols: &[Complex64]) -> Vec<f64> {
    symbols.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Average power per real transmission of [`complex_to_real_uses`].
pub fn power_per_real_use(symbols: &[Complex64]) -> f64 {
    let real = complex_to_real_uses(symbols);
    if real.is_empty() {
        return 0.0;
    }
    real.iter().map(|x| x * x).sum::<f64>() / real.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg::SystemSpec;
    use crate::numerics::{stream_rng, CMatrix};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn p2p_first_symbol_by_hand() {
        let code = P2pCode::with_gain(2.0, 1.5, 0.5);
        assert_eq!(code.symbol(), -0.75);
        assert_eq!(P2pCode::new(2.0, 0.5).gain(), 1.5);
    }

    #[test]
    fn p2p_zero_message_zero_noise_stays_silent() {
        let mut code = P2pCode::new(2.0, 0.0);
        let mut x = code.symbol();
        for _ in 0..50 {
            assert_eq!(x, 0.0);
            x = code.step(x);
        }
    }

    #[test]
    fn p2p_noiseless_error_decays_as_a_to_minus_2i() {
        // Without noise S_{i+1} = (a - c) S_i = S_i / a, so Θ - Θ̂_i = a^{-2i} Θ.
        for theta in [0.1, 0.37, 0.9] {
            let mut code = P2pCode::new(2.0, theta);
            let mut x = code.symbol();
            for i in 1..=30 {
                x = code.step(x);
                let expected = 4f64.powi(-i) * theta;
                assert!((theta - code.estimate() - expected).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn p2p_state_gap_is_scaled_message() {
        let mut rng = stream_rng(5, 0);
        let (a, theta) = (1.7, 0.42);
        let mut code = P2pCode::new(a, theta);
        let mut x = code.symbol();
        for i in 1..=40 {
            let z: f64 = rng.sample(StandardNormal);
            x = code.step(x + z);
            let gap = code.state() - code.decoder_state();
            let expected = a.powi(i) * theta;
            assert!((gap - expected).abs() <= 1e-9 * expected.abs());
            assert!(code.identity_residual() <= 1e-12);
        }
    }

    #[test]
    fn sk_track_rejects_small_ensembles() {
        let traces = vec![
            P2pTrace {
                x: vec![1.0],
                y: vec![1.0]
            };
            99
        ];
        assert_eq!(
            sk_coefficient_track(&traces),
            Err(CodeError::TooFewTraces { got: 99, min: 100 })
        );
    }

    #[test]
    fn sk_track_limit_from_second_moments() {
        // Exact moment propagation: E[S²] evolves as s ↦ (a - c)² s + 1, and the ratio is
        // c² s / (c² s + 1) since X = -cS is independent of the fresh noise.
        for (a, limit) in [(2f64.sqrt(), 0.5), (2.0, 0.75)] {
            let c = (a * a - 1.0) / a;
            let mut s = 1.0 / 3.0;
            let mut ratio = 0.0;
            for _ in 0..200 {
                ratio = c * c * s / (c * c * s + 1.0);
                s = (a - c).powi(2) * s + 1.0;
            }
            assert!((ratio - limit).abs() <= 1e-12);
            assert!((limit - c / a).abs() <= 1e-15);
        }
    }

    #[test]
    fn sk_track_matches_simulation() {
        let a = 2.0;
        let mut traces = Vec::new();
        for t in 0..20_000 {
            let mut rng = stream_rng(17, t);
            let mut code = P2pCode::new(a, rng.random::<f64>());
            let mut trace = P2pTrace::default();
            let mut x = code.symbol();
            for _ in 0..60 {
                let y = x + rng.sample::<f64, _>(StandardNormal);
                trace.x.push(x);
                trace.y.push(y);
                x = code.step(y);
            }
            traces.push(trace);
        }
        let track = sk_coefficient_track(&traces).unwrap();
        assert!((track[59] - 0.75).abs() <= 0.01 * 0.75);
    }

    fn two_receiver(a: f64) -> (Vec<Complex64>, LqgSolution) {
        let spec = SystemSpec::symmetric(2, a, CMatrix::identity(2, 2)).unwrap();
        (spec.modes().to_vec(), LqgSolution::solve(&spec).unwrap())
    }

    #[test]
    fn bc_zero_message_zero_noise() {
        let (modes, sol) = two_receiver(2f64.sqrt());
        let mut enc = BcEncoder::new(&modes, &sol, CVector::zeros(2));
        for _ in 0..20 {
            let x = enc.symbol();
            assert_eq!(x, Complex64::new(0.0, 0.0));
            enc.step(&CVector::from_element(2, x));
        }
    }

    #[test]
    fn bc_first_symbol_by_hand() {
        let (modes, sol) = two_receiver(2f64.sqrt());
        let message =
            CVector::from_column_slice(&[Complex64::new(0.5, 0.0), Complex64::new(0.0, 0.5)]);
        let enc = BcEncoder::new(&modes, &sol, message);
        let expected =
            -(sol.gain[0] * Complex64::new(0.5, 0.0) + sol.gain[1] * Complex64::new(0.0, 0.5));
        assert!((enc.symbol() - expected).norm() <= 1e-15);
    }

    #[test]
    fn bc_noiseless_errors_match_scaled_state() {
        let (modes, sol) = two_receiver(1.5);
        let theta = [Complex64::new(0.3, 0.8), Complex64::new(0.6, 0.1)];
        let mut enc = BcEncoder::new(&modes, &sol, CVector::from_column_slice(&theta));
        let mut decs: Vec<BcDecoder> = modes.iter().map(|&m| BcDecoder::new(m)).collect();
        let mut x = enc.symbol();
        for _ in 0..25 {
            let y = CVector::from_element(2, x);
            x = enc.step(&y);
            for (j, dec) in decs.iter_mut().enumerate() {
                let est = dec.step(y[j]);
                let scaled = modes[j].powi(-(dec.time() as i32)) * enc.state()[j];
                assert!((theta[j] - est - scaled).norm() <= 1e-12);
            }
        }
        let last = decs[0].estimate();
        assert!((last - theta[0]).norm() <= 1e-6);
    }

    #[test]
    fn ol_zero_message_zero_noise() {
        let mut code = OlCode::new(2f64.sqrt(), [0.0, 0.0], OlCode::uniform_moments(true));
        for _ in 0..30 {
            let x = code.symbol();
            assert_eq!(x, 0.0);
            code.step([x, x]).unwrap();
            assert_eq!(code.state(), [0.0, 0.0]);
        }
    }

    #[test]
    fn ol_coefficients_follow_moments() {
        let mut code = OlCode::new(2f64.sqrt(), [0.1, -0.2], OlCode::uniform_moments(true));
        let [b1, b2] = code.coefficients();
        // E[S_j Y_j] = 1/12, E[Y_j²] = 2/12 + 1.
        assert!((b1 - (1.0 / 12.0) / (2.0 / 12.0 + 1.0)).abs() <= 1e-15);
        assert_eq!(b1, b2);
        for _ in 0..500 {
            code.step([0.0, 0.0]).unwrap();
        }
        // Steady state: the transmitted power E[X²] = 1ᵀK1 settles above the LQG power 2.25.
        let power = code.moments().sum();
        assert!(power > 2.25 && power < 2.4, "{power}");
    }

    #[test]
    fn lqg_form_coefficient_is_below_b_over_a() {
        for a in [1.1, 2f64.sqrt(), 2.0] {
            let b = ol_input_scale(a);
            assert!(lqg_form_coefficient(a, b) < b / a);
        }
    }

    #[test]
    fn grid_examples() {
        let grid = MessageGrid::build(4f64.ln(), 1).unwrap();
        assert_eq!(grid.len(), 4);
        let pts: Vec<Complex64> = grid.points().collect();
        for (p, (re, im)) in
            pts.iter()
                .zip([(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)])
        {
            assert_eq!(*p, Complex64::new(re, im));
        }
        let single = MessageGrid::build(0.1, 1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.point(0), Complex64::new(0.5, 0.5));
        assert!(matches!(
            MessageGrid::build(1.0, 17),
            Err(CodeError::CardinalityCap { .. })
        ));
        assert!(matches!(
            MessageGrid::build(0.0, 3),
            Err(CodeError::InvalidRate(_))
        ));
        assert!(matches!(
            MessageGrid::build(1.0, 0),
            Err(CodeError::ZeroLength)
        ));
    }

    #[test]
    fn grid_decode_is_exhaustively_correct_on_small_grids() {
        for (rate, n) in [(4f64.ln(), 1), (9f64.ln(), 1), (0.5, 5)] {
            let grid = MessageGrid::build(rate, n).unwrap();
            let half = grid.spacing() / 2.0;
            for idx in 0..grid.len() {
                let p = grid.point(idx);
                assert_eq!(grid.decode(p), idx);
                for (dr, di) in [
                    (0.99, 0.0),
                    (-0.99, 0.0),
                    (0.0, 0.99),
                    (0.0, -0.99),
                    (0.6, -0.6),
                ] {
                    let moved = p + Complex64::new(dr * half, di * half);
                    assert_eq!(grid.decode(moved), idx);
                }
            }
        }
    }

    #[test]
    fn grid_decode_ties_go_low() {
        let grid = MessageGrid::build(4f64.ln(), 1).unwrap();
        assert_eq!(grid.decode(Complex64::new(0.5, 0.5)), 0);
        assert_eq!(grid.decode(Complex64::new(-3.0, 7.0)), 1);
    }

    #[test]
    fn real_uses_split_power() {
        let symbols = [Complex64::new(1.0, 2.0), Complex64::new(-3.0, 0.0)];
        assert_eq!(complex_to_real_uses(&symbols), vec![1.0, 2.0, -3.0, 0.0]);
        assert_eq!(power_per_real_use(&symbols), 14.0 / 4.0);
    }

    fn brute_force_nearest(grid: &MessageGrid, z: Complex64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in grid.points().enumerate() {
            let d = (p - z).norm();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    proptest! {
        #[test]
        fn grid_spacing_and_cardinality(rate in 0.01f64..3.0, n in 1usize..40) {
            prop_assume!(rate * n as f64 <= MAX_GRID_POINTS.ln());
            let grid = MessageGrid::build(rate, n).unwrap();
            let bound = (-(rate * n as f64) / 2.0).exp();
            prop_assert!(grid.spacing() >= bound * (1.0 - 1e-12));
            prop_assert!(grid.len() as f64 <= (rate * n as f64).exp() * (1.0 + 1e-9));
        }

        #[test]
        fn grid_decode_matches_brute_force(rate in 0.2f64..1.5, n in 1usize..5, re in -0.2f64..1.2, im in -0.2f64..1.2) {
            let grid = MessageGrid::build(rate, n).unwrap();
            let z = Complex64::new(re, im);
            let got = grid.decode(z);
            let want = brute_force_nearest(&grid, z);
            prop_assert!(((grid.point(got) - z).norm() - (grid.point(want) - z).norm()).abs() <= 1e-12);
        }
    }
}
