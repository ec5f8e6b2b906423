//! Successive-interference-cancellation stage detectors.
//!
//! Symbols are split into `S` interlaced stages. Stage 1 is memoryless.
//! Later stages run Gaussian message passing along the AR(1) phase chain,
//! using phase observations from the symbols decoded in earlier stages, and
//! turn the resulting phase message into a symbol posterior.
//!
//! Indices are zero-based: index `i` belongs to stage `i % S + 1`.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::constellation::RingConstellation;
use crate::cpan::PhaseNoiseParams;
use crate::error::{Error, Result};
use crate::math::{log_bessel_i0e, log_sum_exp, product, wrap, ComplexGaussianMoments, GaussianMessage, UNINFORMATIVE_VARIANCE};

/// Observations whose small-angle variance exceeds this are counted as
/// outside the validity domain of the Gaussian phase approximation.
pub const VALIDITY_THRESHOLD: f64 = 0.1;

/// Magnitudes below this fraction of the RMS received amplitude carry no
/// usable phase information.
pub const MIN_RELATIVE_MAGNITUDE: f64 = 1e-12;

/// Interlaced stage partition of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SicSchedule {
    n: usize,
    stages: usize,
}

impl SicSchedule {
    pub fn new(n: usize, stages: usize) -> Result<Self> {
        if n == 0 || stages == 0 {
            return Err(Error::invalid("block length and stage count must be positive"));
        }
        if !n.is_multiple_of(stages) {
            return Err(Error::invalid(format!("stage count {stages} does not divide block length {n}")));
        }
        Ok(Self { n, stages })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Symbols per stage, `n / S`.
    pub fn stage_len(&self) -> usize {
        self.n / self.stages
    }

    /// Stage (1-based) that decodes index `i`.
    pub fn stage_of(&self, i: usize) -> usize {
        i % self.stages + 1
    }

    /// Indices decoded in stage `s`.
    pub fn indices(&self, s: usize) -> impl Iterator<Item = usize> {
        (s - 1..self.n).step_by(self.stages)
    }

    /// Whether index `i` is decoded before stage `s`.
    pub fn is_decoded_before(&self, i: usize, s: usize) -> bool {
        self.stage_of(i) < s
    }

    /// `|I_s| = (s - 1) n / S`.
    pub fn decoded_count(&self, s: usize) -> usize {
        (s - 1) * self.stage_len()
    }

    /// Largest index decoded before stage `s`, if any.
    pub fn last_decoded(&self, s: usize) -> Option<usize> {
        (s >= 2).then(|| self.n - self.stages + s - 2)
    }

    fn check_stage(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.stages {
            return Err(Error::invalid(format!("stage {s} outside 1..={}", self.stages)));
        }
        Ok(())
    }
}

/// Counts of the situations where a Gaussian approximation was applied
/// outside its accuracy domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApproximationStats {
    pub checked: u64,
    pub violations: u64,
}

impl ApproximationStats {
    pub fn record(&mut self, variance: f64) {
        self.checked += 1;
        if variance > VALIDITY_THRESHOLD {
            self.violations += 1;
        }
    }

    pub fn merge(&mut self, other: ApproximationStats) {
        self.checked += other.checked;
        self.violations += other.violations;
    }

    pub fn violation_rate(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }
}

/// Messages touched by one stage of the detector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageCount {
    /// Two messages per rightward iteration.
    pub rightward: usize,
    /// Two messages per leftward iteration.
    pub leftward: usize,
    pub downward: usize,
    pub posteriors: usize,
    /// Observation messages on `I_s`, the rightward start and the leftward start.
    pub inputs: usize,
}

impl MessageCount {
    pub fn total(&self) -> usize {
        self.rightward + self.leftward + self.downward + self.posteriors + self.inputs
    }
}

/// Small-angle Gaussian approximation of the phase likelihood of a decoded
/// symbol. `None` for magnitudes that carry no phase information.
pub fn observation_message(y: Complex64, x: Complex64, sigma_n2: f64) -> Option<GaussianMessage> {
    let (ay, ax) = (y.norm(), x.norm());
    if ay == 0.0 || ax == 0.0 || !ay.is_finite() || !ax.is_finite() {
        return None;
    }
    let variance = sigma_n2 / (2.0 * ay * ax);
    if variance >= UNINFORMATIVE_VARIANCE {
        return None;
    }
    Some(GaussianMessage {
        mean: wrap(y.arg() - x.arg()),
        variance,
    })
}

#[inline]
fn forward_step(m: GaussianMessage, p: &PhaseNoiseParams) -> GaussianMessage {
    if m.is_flat() {
        // a flat message stays flat through the AR prediction
        return GaussianMessage::flat();
    }
    GaussianMessage {
        mean: p.mu_delta * m.mean,
        variance: p.mu_delta * p.mu_delta * m.variance + p.sigma_delta2,
    }
}

#[inline]
fn backward_step(m: GaussianMessage, p: &PhaseNoiseParams) -> GaussianMessage {
    if m.is_flat() || p.mu_delta == 0.0 {
        return GaussianMessage::flat();
    }
    let variance = (m.variance + p.sigma_delta2) / (p.mu_delta * p.mu_delta);
    if !(variance < UNINFORMATIVE_VARIANCE) {
        return GaussianMessage::flat();
    }
    GaussianMessage {
        mean: m.mean / p.mu_delta,
        variance,
    }
}

/// Output of one message-passing stage.
#[derive(Debug, Clone)]
pub struct StageMessages {
    /// Stage-`s` indices with their downward phase messages.
    pub downward: Vec<(usize, GaussianMessage)>,
    pub count: MessageCount,
}

/// Rightward, leftward and downward passes for stage `s >= 2`.
///
/// `observations[i]` is the upward phase message of index `i`; it must be
/// `None` for every index not decoded before stage `s`, and may be `None`
/// for a decoded index without usable phase information.
pub fn smooth_stage(
    observations: &[Option<GaussianMessage>],
    sched: &SicSchedule,
    s: usize,
    phase: &PhaseNoiseParams,
) -> Result<StageMessages> {
    sched.check_stage(s)?;
    let n = sched.n();
    if s < 2 {
        return Err(Error::Contract("stage 1 does not use message passing".into()));
    }
    if observations.len() != n {
        return Err(Error::Contract(format!(
            "{} observations for a block of {n}",
            observations.len()
        )));
    }
    if let Some(i) = (0..n).find(|&i| observations[i].is_some() && !sched.is_decoded_before(i, s)) {
        return Err(Error::Contract(format!(
            "observation at index {i} of stage {} before stage {s}",
            sched.stage_of(i)
        )));
    }
    let ip = sched.last_decoded(s).expect("s >= 2");

    // rightward
    let mut forward = vec![GaussianMessage::flat(); n];
    forward[0] = GaussianMessage {
        mean: 0.0,
        variance: phase.sigma_theta2,
    };
    for i in 0..n - 1 {
        let out = match observations[i] {
            Some(obs) => product(forward[i], obs),
            None => forward[i],
        };
        forward[i + 1] = forward_step(out, phase);
    }

    // leftward, started at the last decoded index; everything to its right
    // is flat
    let mut backward_pp = vec![GaussianMessage::flat(); n];
    let mut leftward_iterations = 0;
    if ip >= 1 {
        let start = observations[ip].unwrap_or(GaussianMessage::flat());
        backward_pp[ip - 1] = backward_step(start, phase);
        for i in (1..ip).rev() {
            let b = match observations[i] {
                Some(obs) => product(backward_pp[i], obs),
                None => backward_pp[i],
            };
            backward_pp[i - 1] = backward_step(b, phase);
            leftward_iterations += 1;
        }
    }

    let downward: Vec<_> = sched
        .indices(s)
        .map(|i| (i, product(forward[i], backward_pp[i])))
        .collect();
    let count = MessageCount {
        rightward: 2 * (n - 1),
        leftward: 2 * leftward_iterations,
        downward: downward.len(),
        posteriors: downward.len(),
        inputs: sched.decoded_count(s) + 2,
    };
    Ok(StageMessages { downward, count })
}

/// Runs stage `s >= 2` from the received block and the symbols decoded
/// in earlier stages.
///
/// `decoded[i]` must be `Some` exactly on the indices of stages `1..s`.
pub fn run_stage(
    y: &[Complex64],
    decoded: &[Option<Complex64>],
    sched: &SicSchedule,
    s: usize,
    phase: &PhaseNoiseParams,
    sigma_n2: f64,
    stats: &mut ApproximationStats,
) -> Result<StageMessages> {
    sched.check_stage(s)?;
    if y.len() != sched.n() || decoded.len() != sched.n() {
        return Err(Error::Contract(format!(
            "block lengths {} and {} do not match the schedule length {}",
            y.len(),
            decoded.len(),
            sched.n()
        )));
    }
    if let Some(i) = (0..sched.n()).find(|&i| decoded[i].is_some() != sched.is_decoded_before(i, s)) {
        return Err(Error::Contract(format!(
            "decoded set does not match I_{s} at index {i} (stage {})",
            sched.stage_of(i)
        )));
    }
    let floor = MIN_RELATIVE_MAGNITUDE * rms(y);
    let observations: Vec<Option<GaussianMessage>> = y
        .iter()
        .zip(decoded)
        .map(|(&yi, xi)| {
            let xi = (*xi)?;
            if yi.norm() < floor || xi.norm() < floor {
                return None;
            }
            let m = observation_message(yi, xi, sigma_n2)?;
            stats.record(m.variance);
            Some(m)
        })
        .collect();
    smooth_stage(&observations, sched, s, phase)
}

fn rms(y: &[Complex64]) -> f64 {
    (y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len().max(1) as f64).sqrt()
}

/// Full posterior moments of a Gaussian symbol given its received sample and
/// a Gaussian phase message.
///
/// Factorises into the phase characteristic function
/// `a_k = exp(-j k mu - k^2 sigma^2 / 2)` and the moments of the linear
/// estimator at zero phase.
pub fn posterior_moments(y: Complex64, fwd: GaussianMessage, sigma_x2: f64, sigma_n2: f64) -> ComplexGaussianMoments {
    let sigma_y2 = sigma_x2 + sigma_n2;
    let gain = sigma_x2 / sigma_y2;
    let m1 = y * gain;
    let m2_abs = gain * (sigma_n2 + y.norm_sqr() * gain);
    let m2 = y * y * gain * gain;
    let (mu, var) = (fwd.mean, fwd.variance);
    let a1 = Complex64::from_polar((-0.5 * var).exp(), -mu);
    let mean = a1 * m1;
    // a_2 - a_1^2 is written out so that the pseudo-variance is exactly zero
    // for a known phase
    let spread = (-2.0 * var).exp() - (-var).exp();
    let pseudo = m2 * Complex64::from_polar(spread, -2.0 * mu);
    let variance = m2_abs - m1.norm_sqr() * (-var).exp();
    ComplexGaussianMoments {
        mean,
        variance,
        pseudo_variance: pseudo,
    }
}

/// Stage-`s >= 2` posterior, reported as circularly symmetric.
pub fn posterior_cscg(y: Complex64, fwd: GaussianMessage, sigma_x2: f64, sigma_n2: f64) -> ComplexGaussianMoments {
    let m = posterior_moments(y, fwd, sigma_x2, sigma_n2);
    ComplexGaussianMoments::circular(m.mean, m.variance)
}

/// Memoryless first-stage posterior under the stationary phase prior.
pub fn detect_stage1_cscg(y: Complex64, sigma_x2: f64, sigma_theta2: f64, sigma_n2: f64) -> ComplexGaussianMoments {
    posterior_moments(
        y,
        GaussianMessage {
            mean: 0.0,
            variance: sigma_theta2,
        },
        sigma_x2,
        sigma_n2,
    )
}

/// Posterior over the rings of a ring constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudePosterior {
    pub probs: Vec<f64>,
    /// Natural logarithms of `probs`, finite even where `probs` underflows.
    pub log_probs: Vec<f64>,
}

/// Ring posterior from `|y|` alone: the received phase is uninformative
/// about the amplitude, so no decoded information enters.
pub fn detect_amplitudes(y: Complex64, rings: &RingConstellation, sigma_n2: f64) -> AmplitudePosterior {
    let a = y.norm();
    let logs: Vec<f64> = rings
        .radii()
        .zip(rings.weights())
        .map(|(r, w)| {
            // log(w exp(-r^2/s) I0(2ar/s)) up to terms constant in r
            let d = a - r;
            w.ln() - d * d / sigma_n2 + log_bessel_i0e(2.0 * a * r / sigma_n2)
        })
        .collect();
    let norm = log_sum_exp(&logs);
    let log_probs: Vec<f64> = logs.iter().map(|l| l - norm).collect();
    let probs = log_probs.iter().map(|l| l.exp()).collect();
    AmplitudePosterior { probs, log_probs }
}

/// Wrapped-Gaussian phase posterior `N(wrap(mean_offset - gamma); 0, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrappedPhasePosterior {
    pub mean_offset: f64,
    pub variance: f64,
}

impl WrappedPhasePosterior {
    /// Unnormalised log-density at transmit phase `gamma`.
    pub fn log_density(&self, gamma: f64) -> f64 {
        let d = wrap(self.mean_offset - gamma);
        -0.5 * (TAU * self.variance).ln() - 0.5 * d * d / self.variance
    }
}

/// Phase posterior of a symbol on ring radius `r` given the phase message.
pub fn posterior_phase(y: Complex64, r: f64, fwd: GaussianMessage, sigma_n2: f64) -> Result<WrappedPhasePosterior> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("ring radius must be positive, got {r}")));
    }
    let a = y.norm();
    if !(a > 0.0) {
        return Err(Error::invalid("received sample has zero magnitude"));
    }
    Ok(WrappedPhasePosterior {
        mean_offset: wrap(y.arg() - fwd.mean),
        variance: fwd.variance + sigma_n2 / (2.0 * a * r),
    })
}
