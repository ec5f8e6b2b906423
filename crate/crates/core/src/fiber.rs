//! WDM fiber link: sinc-pulse waveform synthesis, symmetric split-step
//! integration of the NLSE with distributed Raman (lossless) amplification,
//! and the coherent receiver front end.
//!
//! All waveforms are periodic with the block length, so sinc pulses and
//! brick-wall filters are exact operations on DFT bins.

use std::f64::consts::{LOG10_E, PI};
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{complex_normal, StreamKey};

/// Planck constant in J s.
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Physical link parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    pub length_m: f64,
    /// Group-velocity dispersion in s^2/m.
    pub beta2: f64,
    /// Kerr coefficient in 1/(W m).
    pub gamma: f64,
    pub alpha_db_per_km: f64,
    pub center_freq_hz: f64,
    /// Phonon occupancy factor.
    pub eta: f64,
    /// Number of WDM channels, `2C + 1`.
    pub n_wdm: usize,
    pub baud_hz: f64,
    pub spacing_hz: f64,
}

impl FiberParams {
    /// 1000 km standard single-mode fiber, five 50 GBd channels.
    pub fn reference() -> Self {
        Self {
            length_m: 1000e3,
            beta2: -21.7e-27,
            gamma: 1.27e-3,
            alpha_db_per_km: 0.2,
            center_freq_hz: 193.414e12,
            eta: 1.0,
            n_wdm: 5,
            baud_hz: 50e9,
            spacing_hz: 50e9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_wdm == 0 || self.n_wdm.is_multiple_of(2) {
            return Err(Error::config(format!("n_wdm must be odd and positive, got {}", self.n_wdm)));
        }
        let positive = [
            ("length_m", self.length_m),
            ("baud_hz", self.baud_hz),
            ("spacing_hz", self.spacing_hz),
            ("center_freq_hz", self.center_freq_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("alpha_db_per_km", self.alpha_db_per_km), ("eta", self.eta)];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !self.beta2.is_finite() || !self.gamma.is_finite() {
            return Err(Error::config("beta2 and gamma must be finite"));
        }
        Ok(())
    }

    /// Number of interfering channel pairs `C`.
    pub fn n_pairs(&self) -> usize {
        self.n_wdm / 2
    }

    /// Signed channel indices `-C..=C`.
    pub fn channel_indices(&self) -> impl Iterator<Item = i32> {
        let c = self.n_pairs() as i32;
        -c..=c
    }

    pub fn symbol_period(&self) -> f64 {
        1.0 / self.baud_hz
    }

    /// Attenuation in 1/m.
    pub fn alpha_per_m(&self) -> f64 {
        self.alpha_db_per_km * 1e-3 / (10.0 * LOG10_E)
    }

    /// ASE spectral density `alpha L h f eta` in W/Hz.
    pub fn n_ase(&self) -> f64 {
        self.alpha_per_m() * self.length_m * PLANCK * self.center_freq_hz * self.eta
    }

    /// Matched-filtered ASE variance per symbol, `N_ASE * B_ch`.
    pub fn sigma_ase2(&self) -> f64 {
        self.n_ase() * self.baud_hz
    }
}

/// A sampled complex baseband field.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub center_freq_offset_hz: f64,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean `|s|^2`.
    pub fn power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    /// `sum |s|^2`, without the sample-period factor.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Writes the raw dump: sample rate (f64), length (u64), then
    /// interleaved real/imaginary f64 values, all little endian.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.sample_rate_hz.to_le_bytes())?;
        out.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(16 * self.samples.len());
        for s in &self.samples {
            buf.extend_from_slice(&s.re.to_le_bytes());
            buf.extend_from_slice(&s.im.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let sample_rate_hz = f64::from_le_bytes(word);
        input.read_exact(&mut word)?;
        let len = u64::from_le_bytes(word) as usize;
        let mut buf = vec![0u8; 16 * len];
        input.read_exact(&mut buf)?;
        let samples = buf
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        Ok(Self {
            samples,
            sample_rate_hz,
            center_freq_offset_hz: 0.0,
        })
    }
}

/// Forward/inverse FFT pair for one length. The inverse is unnormalised,
/// as in `rustfft`.
struct FftPair {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    fn inverse_normalised(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Signed frequency index of DFT bin `b` of an `len`-point transform.
fn signed_bin(b: usize, len: usize) -> i64 {
    if b < len.div_ceil(2) {
        b as i64
    } else {
        b as i64 - len as i64
    }
}

/// DFT bin of signed index `k`.
fn bin_index(k: i64, len: usize) -> usize {
    k.rem_euclid(len as i64) as usize
}

/// Signed bins `[-floor(n/2), n - floor(n/2))` occupied by an `n`-symbol channel.
fn channel_band(n: usize) -> std::ops::Range<i64> {
    let lo = -((n / 2) as i64);
    lo..lo + n as i64
}

/// Bin shift between neighbouring channels for an `n`-symbol block.
fn channel_bin_offset(p: &FiberParams, n: usize) -> Result<i64> {
    let exact = p.spacing_hz * n as f64 / p.baud_hz;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-6 * exact.max(1.0) {
        return Err(Error::config(format!(
            "channel spacing is {exact} DFT bins for n={n}; it must be an integer"
        )));
    }
    Ok(rounded as i64)
}

/// Synthesises the WDM field: sinc pulses at the baud rate on every channel,
/// channel `k` shifted by `k * spacing_hz`.
///
/// `interferers` are ordered by channel index `-C..-1, 1..C`. The symbols are
/// interpreted as field amplitudes in sqrt(W), so each channel's average
/// waveform power equals its mean `|x|^2`.
pub fn modulate_wdm(
    coi: &[Complex64],
    interferers: &[Vec<Complex64>],
    p: &FiberParams,
    osf: usize,
) -> Result<Waveform> {
    p.validate()?;
    let n = coi.len();
    if n == 0 {
        return Err(Error::invalid("empty symbol block"));
    }
    if interferers.len() + 1 != p.n_wdm {
        return Err(Error::config(format!(
            "{} interferer blocks given for {} WDM channels",
            interferers.len(),
            p.n_wdm
        )));
    }
    if let Some(bad) = interferers.iter().find(|x| x.len() != n) {
        return Err(Error::invalid(format!(
            "interferer block length {} differs from {n}",
            bad.len()
        )));
    }
    if osf == 0 {
        return Err(Error::config("oversampling factor must be positive"));
    }
    let len = n * osf;
    let offset = channel_bin_offset(p, n)?;
    let c = p.n_pairs() as i64;
    let band = channel_band(n);
    let half = (len / 2) as i64;
    if -c * offset + band.start < -half || c * offset + band.end > len as i64 - half {
        return Err(Error::config(format!(
            "oversampling factor {osf} cannot hold {} channels spaced {} Hz at {} Bd",
            p.n_wdm, p.spacing_hz, p.baud_hz
        )));
    }

    let small = FftPair::new(n);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); len];
    let mut blocks = interferers.iter();
    for k in p.channel_indices() {
        let symbols = if k == 0 { coi } else { blocks.next().expect("counted above") };
        let mut x = symbols.to_vec();
        small.forward(&mut x);
        for s in band.clone() {
            let target = bin_index(s + k as i64 * offset, len);
            spectrum[target] += x[bin_index(s, n)] * osf as f64;
        }
    }
    FftPair::new(len).inverse_normalised(&mut spectrum);
    Ok(Waveform {
        samples: spectrum,
        sample_rate_hz: osf as f64 * p.baud_hz,
        center_freq_offset_hz: 0.0,
    })
}

/// Symmetric split-step integrator over a lossless span.
struct SplitStep<'a> {
    fft: &'a FftPair,
    half_step: Vec<Complex64>,
    full_step: Vec<Complex64>,
    kerr: f64,
}

impl<'a> SplitStep<'a> {
    fn new(fft: &'a FftPair, sample_rate: f64, beta2: f64, gamma: f64, h: f64) -> Self {
        let len = fft.len;
        let phase = |b: usize, dz: f64| {
            let omega = 2.0 * PI * sample_rate * signed_bin(b, len) as f64 / len as f64;
            Complex64::from_polar(1.0, 0.5 * beta2 * omega * omega * dz)
        };
        Self {
            fft,
            half_step: (0..len).map(|b| phase(b, 0.5 * h)).collect(),
            full_step: (0..len).map(|b| phase(b, h)).collect(),
            kerr: gamma * h,
        }
    }

    /// Runs `n_steps` steps in place. `noise` gives the ASE stream and the
    /// per-sample variance added in each step.
    fn run(&self, field: &mut [Complex64], n_steps: usize, noise: Option<(StreamKey, f64)>) -> Result<()> {
        let len = self.fft.len;
        self.fft.forward(field);
        mul_assign(field, &self.half_step);
        for step in 0..n_steps {
            self.fft.inverse_normalised(field);
            let mut energy = 0.0;
            for v in field.iter_mut() {
                let p = v.norm_sqr();
                energy += p;
                *v *= Complex64::from_polar(1.0, self.kerr * p);
            }
            if !energy.is_finite() {
                return Err(Error::Numerical(format!(
                    "split-step field became non-finite at step {step} of {n_steps}"
                )));
            }
            self.fft.forward(field);
            if let Some((key, variance)) = noise {
                // per-bin variance of white noise under the unnormalised DFT
                let bin_variance = variance * len as f64;
                let mut rng = key.rng(step as u64);
                field.iter_mut().for_each(|v| *v += complex_normal(&mut rng, bin_variance));
            }
            let linear = if step + 1 == n_steps { &self.half_step } else { &self.full_step };
            mul_assign(field, linear);
        }
        self.fft.inverse_normalised(field);
        Ok(())
    }
}

fn mul_assign(a: &mut [Complex64], b: &[Complex64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x *= y);
}

fn propagate(
    w: &Waveform,
    length: f64,
    beta2: f64,
    gamma: f64,
    n_steps: usize,
    noise: Option<(StreamKey, f64)>,
) -> Result<Waveform> {
    if n_steps == 0 {
        return Err(Error::invalid("split-step integration needs at least one step"));
    }
    if w.is_empty() {
        return Err(Error::invalid("empty waveform"));
    }
    let fft = FftPair::new(w.len());
    let h = length / n_steps as f64;
    let stepper = SplitStep::new(&fft, w.sample_rate_hz, beta2, gamma, h);
    let mut out = w.clone();
    stepper.run(&mut out.samples, n_steps, noise)?;
    Ok(out)
}

/// Integrates the NLSE over the link with `n_steps` uniform symmetric steps.
///
/// With `ase` set, each step adds white circular Gaussian noise with
/// spectral density `N_ASE * dz / L` over the whole simulation band; the
/// step index is the stream counter, so output is schedule independent.
pub fn ssfm_propagate(w: &Waveform, p: &FiberParams, n_steps: usize, ase: Option<StreamKey>) -> Result<Waveform> {
    p.validate()?;
    let noise = ase.map(|key| {
        let variance = p.n_ase() / n_steps as f64 * w.sample_rate_hz;
        (key, variance)
    });
    propagate(w, p.length_m, p.beta2, p.gamma, n_steps, noise)
}

/// Single-channel digital backpropagation: the noiseless NLSE with negated
/// dispersion and nonlinearity.
pub fn dbp_single_channel(w: &Waveform, p: &FiberParams, n_steps: usize) -> Result<Waveform> {
    p.validate()?;
    propagate(w, p.length_m, -p.beta2, -p.gamma, n_steps, None)
}

/// Number of symbols carried by `w` at the link baud rate.
fn symbols_in(w: &Waveform, p: &FiberParams) -> Result<usize> {
    let exact = w.len() as f64 * p.baud_hz / w.sample_rate_hz;
    let n = exact.round();
    if n < 1.0 || (exact - n).abs() > 1e-6 * exact {
        return Err(Error::Framing(format!(
            "{} samples at {} Hz do not hold an integer number of {} Bd symbols",
            w.len(),
            w.sample_rate_hz,
            p.baud_hz
        )));
    }
    Ok(n as usize)
}

/// Keeps only the bins of the channel of interest.
fn bandpass(spectrum: &mut [Complex64], n: usize) {
    let len = spectrum.len();
    let band = channel_band(n);
    for (b, v) in spectrum.iter_mut().enumerate() {
        if !band.contains(&signed_bin(b, len)) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}

/// Receiver DSP: bandpass to the channel of interest, single-channel DBP
/// with `n_steps` steps (skipped when zero), sinc matched filter, sampling at
/// the symbol instants and derotation by `theta_hat`.
pub fn receiver_frontend(w: &Waveform, p: &FiberParams, theta_hat: f64, n_steps: usize) -> Result<Vec<Complex64>> {
    p.validate()?;
    let n = symbols_in(w, p)?;
    let len = w.len();
    let big = FftPair::new(len);

    let mut field = w.samples.clone();
    big.forward(&mut field);
    bandpass(&mut field, n);
    if n_steps > 0 {
        big.inverse_normalised(&mut field);
        let filtered = Waveform {
            samples: field,
            sample_rate_hz: w.sample_rate_hz,
            center_freq_offset_hz: w.center_freq_offset_hz,
        };
        field = dbp_single_channel(&filtered, p, n_steps)?.samples;
        big.forward(&mut field);
    }

    // matched filter and decimation: keep the channel bins and return to an
    // n-point grid, undoing the oversampling gain of the synthesis step
    let osf = len as f64 / n as f64;
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for s in channel_band(n) {
        y[bin_index(s, n)] = field[bin_index(s, len)] / osf;
    }
    FftPair::new(n).inverse_normalised(&mut y);
    if y.len() != n {
        return Err(Error::Framing(format!("decimated to {} symbols, expected {n}", y.len())));
    }
    let derotate = Complex64::from_polar(1.0, -theta_hat);
    y.iter_mut().for_each(|v| *v *= derotate);
    Ok(y)
}
