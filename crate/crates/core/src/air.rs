//! Monte-Carlo achievable information rates of the SIC receivers.
//!
//! Every rate is a cross-entropy bound: the surrogate posterior of each
//! detector is evaluated at the transmitted symbol and averaged over
//! independent sequences. Entropies are accumulated in nats and converted to
//! bits once per report.

use std::f64::consts::{LN_2, PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::constellation::{amplitude_entropy, sample_symbols, ConstellationSpec, RingConstellation};
use crate::cpan::{simulate_cpan, CpanParams};
use crate::error::{Error, Result};
use crate::math::{complex_gaussian_log_pdf, CompensatedSum, GaussianMessage};
use crate::rng::{StreamKey, StreamRole};
use crate::sic::{
    detect_amplitudes, detect_stage1_cscg, posterior_cscg, posterior_phase, run_stage, ApproximationStats, SicSchedule,
};

/// Two-sided normal quantile used for the confidence half-widths.
pub const CI_QUANTILE: f64 = 1.96;

/// Sequence indices at and above this value are reserved for training data.
pub const TRAINING_OFFSET: u64 = 1 << 40;

/// One transmitted block and what the receiver sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    /// The true phase process, where the channel exposes it.
    pub theta: Option<Vec<f64>>,
}

/// A source of independent test and training sequences.
pub trait Channel: Sync {
    fn constellation(&self) -> &ConstellationSpec;

    /// Test sequence `index` of length `n`.
    fn sequence(&self, index: u64, n: usize) -> Result<Sequence>;

    /// Training sequence `index`, independent of every test sequence.
    fn training(&self, index: u64, n: usize) -> Result<Sequence>;
}

/// The surrogate channel itself; zero phase noise gives AWGN.
#[derive(Debug, Clone)]
pub struct CpanChannel {
    pub params: CpanParams,
    pub spec: ConstellationSpec,
    pub seed: u64,
}

impl CpanChannel {
    pub fn new(params: CpanParams, spec: ConstellationSpec, seed: u64) -> Self {
        Self { params, spec, seed }
    }

    pub fn awgn(sigma_n2: f64, spec: ConstellationSpec, seed: u64) -> Result<Self> {
        Ok(Self::new(CpanParams::awgn(sigma_n2)?, spec, seed))
    }

    fn draw(&self, index: u64, n: usize) -> Result<Sequence> {
        let x = sample_symbols(&self.spec, n, &mut StreamKey::new(self.seed, StreamRole::Symbols, index).rng(0));
        let mut rng = StreamKey::new(self.seed, StreamRole::PhaseNoise, index).rng(0);
        let (y, theta) = simulate_cpan(&self.params, &x, &mut rng)?;
        Ok(Sequence { x, y, theta: Some(theta) })
    }
}

impl Channel for CpanChannel {
    fn constellation(&self) -> &ConstellationSpec {
        &self.spec
    }

    fn sequence(&self, index: u64, n: usize) -> Result<Sequence> {
        self.draw(index, n)
    }

    fn training(&self, index: u64, n: usize) -> Result<Sequence> {
        self.draw(TRAINING_OFFSET + index, n)
    }
}

/// Precomputed sequences, e.g. from the fiber simulator.
#[derive(Debug, Clone)]
pub struct RecordedChannel {
    pub spec: ConstellationSpec,
    pub test: Vec<Sequence>,
    pub train: Vec<Sequence>,
}

impl RecordedChannel {
    fn fetch(set: &[Sequence], what: &str, index: u64, n: usize) -> Result<Sequence> {
        let seq = set
            .get(index as usize)
            .ok_or_else(|| Error::invalid(format!("{what} sequence {index} not recorded ({} available)", set.len())))?;
        if seq.x.len() != n {
            return Err(Error::invalid(format!(
                "{what} sequence {index} has {} symbols, {n} requested",
                seq.x.len()
            )));
        }
        Ok(seq.clone())
    }
}

impl Channel for RecordedChannel {
    fn constellation(&self) -> &ConstellationSpec {
        &self.spec
    }

    fn sequence(&self, index: u64, n: usize) -> Result<Sequence> {
        Self::fetch(&self.test, "test", index, n)
    }

    fn training(&self, index: u64, n: usize) -> Result<Sequence> {
        Self::fetch(&self.train, "training", index, n)
    }
}

/// Derotates by the true phase, giving the genie-aided receiver its input.
struct Derotated<'a>(&'a dyn Channel);

impl Derotated<'_> {
    fn apply(seq: Sequence, index: u64) -> Result<Sequence> {
        let theta = seq
            .theta
            .ok_or_else(|| Error::Contract(format!("sequence {index} carries no phase for the genie receiver")))?;
        let y = seq.y.iter().zip(&theta).map(|(y, t)| y * Complex64::from_polar(1.0, -t)).collect();
        Ok(Sequence {
            x: seq.x,
            y,
            theta: Some(vec![0.0; theta.len()]),
        })
    }
}

impl Channel for Derotated<'_> {
    fn constellation(&self) -> &ConstellationSpec {
        self.0.constellation()
    }

    fn sequence(&self, index: u64, n: usize) -> Result<Sequence> {
        Self::apply(self.0.sequence(index, n)?, index)
    }

    fn training(&self, index: u64, n: usize) -> Result<Sequence> {
        Self::apply(self.0.training(index, n)?, index)
    }
}

/// Estimator settings shared by all receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AirOptions {
    /// Symbols dropped from each end of every block before averaging.
    pub edge_exclusion: usize,
}

/// The receiver a report belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    /// SIC with the given number of stages.
    Sic(usize),
    /// Memoryless AWGN detector on the derotated samples.
    Genie,
    /// Memoryless AWGN detector with the noise variance fitted to `|y - x|^2`.
    Memoryless,
}

impl Receiver {
    pub fn label(&self) -> String {
        match self {
            Receiver::Sic(s) => s.to_string(),
            Receiver::Genie => "genie".into(),
            Receiver::Memoryless => "memoryless".into(),
        }
    }
}

/// Estimated rate of one receiver at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct AirReport {
    pub power_dbm: f64,
    pub receiver: Receiver,
    pub constellation: &'static str,
    /// Zero for Gaussian signalling.
    pub n_rings: usize,
    /// Contribution of each stage to the total, already divided by `S`.
    pub per_stage_bits: Vec<f64>,
    pub per_stage_ci: Vec<f64>,
    /// Ring-amplitude term; zero for Gaussian signalling.
    pub amplitude_bits: f64,
    pub amplitude_ci: f64,
    pub total_bpcu: f64,
    pub ci_halfwidth: f64,
    pub n_sequences: usize,
    pub n_symbols: usize,
    pub approximation: ApproximationStats,
}

impl AirReport {
    pub fn stages(&self) -> usize {
        self.per_stage_bits.len()
    }

    /// TSV rows: one per stage, the amplitude term for rings, and the total.
    pub fn tsv_rows(&self, seed: u64) -> Vec<String> {
        let row = |stage: &str, air: f64, ci: f64| {
            format!(
                "{}\t{}\t{}\t{}\t{stage}\t{air:.6}\t{ci:.6}\t{}\t{}\t{seed}",
                fmt_power(self.power_dbm),
                self.constellation,
                self.n_rings,
                self.receiver.label(),
                self.n_sequences,
                self.n_symbols
            )
        };
        let mut rows: Vec<String> = self
            .per_stage_bits
            .iter()
            .zip(&self.per_stage_ci)
            .enumerate()
            .map(|(s, (&b, &c))| row(&(s + 1).to_string(), b, c))
            .collect();
        if self.n_rings > 0 {
            rows.push(row("amplitude", self.amplitude_bits, self.amplitude_ci));
        }
        rows.push(row("total", self.total_bpcu, self.ci_halfwidth));
        rows
    }
}

/// Header of the rate TSV.
pub const AIR_TSV_HEADER: &str = "power_dbm\tconstellation\tn_rings\tS\tstage\tair_bpcu\tci\tn_seq\tn_sym\tseed";

/// TSV row of the AWGN capacity bound.
pub fn bound_tsv_row(power_dbm: f64, constellation: &str, n_rings: usize, bound: f64, seed: u64) -> String {
    format!(
        "{}\t{constellation}\t{n_rings}\tbound\ttotal\t{bound:.6}\t0.000000\t0\t0\t{seed}",
        fmt_power(power_dbm)
    )
}

fn fmt_power(p: f64) -> String {
    format!("{p:.2}")
}

/// `log2(1 + power / sigma_ase2)`.
pub fn awgn_capacity_bound(power: f64, sigma_ase2: f64) -> Result<f64> {
    if !(power >= 0.0) || !(sigma_ase2 > 0.0) {
        return Err(Error::invalid(format!(
            "capacity bound needs power >= 0 and positive noise, got {power:e} and {sigma_ase2:e}"
        )));
    }
    Ok((power / sigma_ase2).ln_1p() / LN_2)
}

/// Detection metric.
#[derive(Clone, Copy)]
enum Metric<'a> {
    Cscg,
    Rings(&'a RingConstellation),
}

/// Log-posterior sums of one sequence, in nats.
#[derive(Debug, Clone)]
struct Tally {
    stage_sum: Vec<f64>,
    stage_count: Vec<usize>,
    amp_sum: f64,
    amp_count: usize,
    stats: ApproximationStats,
}

fn numerical(seq: u64, i: usize, e: Error) -> Error {
    Error::Numerical(format!("sequence {seq}, symbol {i}: {e}"))
}

fn tally_sequence(
    seq: &Sequence,
    index: u64,
    params: &CpanParams,
    sched: &SicSchedule,
    metric: Metric,
    sigma_x2: f64,
    opts: &AirOptions,
) -> Result<Tally> {
    let n = sched.n();
    let stages = sched.stages();
    let (x, y) = (&seq.x, &seq.y);
    if x.len() != n || y.len() != n {
        return Err(Error::Contract(format!(
            "sequence {index} has {} / {} samples, schedule expects {n}",
            x.len(),
            y.len()
        )));
    }
    let kept = |i: usize| i >= opts.edge_exclusion && i + opts.edge_exclusion < n;
    let phase = params.phase();
    let prior = GaussianMessage {
        mean: 0.0,
        variance: params.sigma_theta2,
    };
    let mut tally = Tally {
        stage_sum: vec![0.0; stages],
        stage_count: vec![0; stages],
        amp_sum: 0.0,
        amp_count: 0,
        stats: ApproximationStats::default(),
    };

    if let Metric::Rings(rings) = metric {
        let mut acc = CompensatedSum::default();
        for i in (0..n).filter(|&i| kept(i)) {
            let ring = rings.nearest_ring(x[i].norm());
            acc.add(detect_amplitudes(y[i], rings, params.sigma_n2).log_probs[ring]);
            tally.amp_count += 1;
        }
        tally.amp_sum = acc.value();
    }

    let mut decoded: Vec<Option<Complex64>> = vec![None; n];
    for s in 1..=stages {
        let messages: Vec<(usize, GaussianMessage)> = if s == 1 {
            sched.indices(1).map(|i| (i, prior)).collect()
        } else {
            // genie-aided decoding: the previous stage is known exactly
            for i in sched.indices(s - 1) {
                decoded[i] = Some(x[i]);
            }
            run_stage(y, &decoded, sched, s, &phase, params.sigma_n2, &mut tally.stats)?.downward
        };
        let mut acc = CompensatedSum::default();
        for (i, fwd) in messages.into_iter().filter(|&(i, _)| kept(i)) {
            let lq = match metric {
                Metric::Cscg => {
                    let m = if s == 1 {
                        detect_stage1_cscg(y[i], sigma_x2, params.sigma_theta2, params.sigma_n2)
                    } else {
                        posterior_cscg(y[i], fwd, sigma_x2, params.sigma_n2)
                    };
                    complex_gaussian_log_pdf(x[i], &m).map_err(|e| numerical(index, i, e))?
                }
                Metric::Rings(rings) => {
                    let r = rings.radius(rings.nearest_ring(x[i].norm()));
                    posterior_phase(y[i], r, fwd, params.sigma_n2)
                        .map_err(|e| numerical(index, i, e))?
                        .log_density(x[i].arg())
                }
            };
            if !lq.is_finite() {
                return Err(numerical(index, i, Error::Numerical(format!("log-posterior {lq}"))));
            }
            acc.add(lq);
            tally.stage_count[s - 1] += 1;
        }
        tally.stage_sum[s - 1] = acc.value();
    }
    Ok(tally)
}

/// Differential entropy terms, in nats, that the cross-entropies are
/// subtracted from.
struct Baseline {
    stage: f64,
    amplitude: f64,
}

/// Per-stage and amplitude rates, in nats.
type Rates = (Vec<f64>, f64);

/// Rate components in nats from a set of tallies.
fn rates(tallies: &[&Tally], base: &Baseline, stages: usize, rings: bool) -> Rates {
    let per_stage = (0..stages)
        .map(|s| {
            let sum: CompensatedSum = tallies.iter().map(|t| t.stage_sum[s]).collect();
            let count: usize = tallies.iter().map(|t| t.stage_count[s]).sum();
            (base.stage + sum.value() / count as f64) / stages as f64
        })
        .collect();
    let amplitude = if rings {
        let sum: CompensatedSum = tallies.iter().map(|t| t.amp_sum).collect();
        let count: usize = tallies.iter().map(|t| t.amp_count).sum();
        base.amplitude + sum.value() / count as f64
    } else {
        0.0
    };
    (per_stage, amplitude)
}

/// Jackknife 95% half-width of a statistic over leave-one-out replicates.
fn jackknife_ci(replicates: &[f64]) -> f64 {
    let k = replicates.len() as f64;
    if replicates.len() < 2 {
        return f64::INFINITY;
    }
    let mean = replicates.iter().sum::<f64>() / k;
    let ss: f64 = replicates.iter().map(|r| (r - mean).powi(2)).sum();
    CI_QUANTILE * ((k - 1.0) / k * ss).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    channel: &dyn Channel,
    params: &CpanParams,
    sched: &SicSchedule,
    metric: Metric,
    receiver: Receiver,
    power_dbm: f64,
    n_seq: usize,
    opts: &AirOptions,
) -> Result<AirReport> {
    params.validate()?;
    if n_seq == 0 {
        return Err(Error::invalid("at least one sequence is needed"));
    }
    if 2 * opts.edge_exclusion >= sched.stage_len() * sched.stages() {
        return Err(Error::invalid(format!(
            "edge exclusion {} leaves no symbols of {}",
            opts.edge_exclusion,
            sched.n()
        )));
    }
    let spec = channel.constellation();
    let sigma_x2 = spec.power();
    let n = sched.n();
    let stages = sched.stages();
    let tallies: Vec<Tally> = (0..n_seq as u64)
        .into_par_iter()
        .map(|k| {
            let seq = channel.sequence(k, n)?;
            tally_sequence(&seq, k, params, sched, metric, sigma_x2, opts)
        })
        .collect::<Result<_>>()?;

    let (base, is_rings, n_rings) = match metric {
        Metric::Cscg => (
            Baseline {
                stage: (PI * std::f64::consts::E * sigma_x2).ln(),
                amplitude: 0.0,
            },
            false,
            0,
        ),
        Metric::Rings(r) => (
            Baseline {
                stage: TAU.ln(),
                amplitude: amplitude_entropy(r) * LN_2,
            },
            true,
            r.n_rings(),
        ),
    };
    let all: Vec<&Tally> = tallies.iter().collect();
    let (per_stage, amplitude) = rates(&all, &base, stages, is_rings);
    let total = amplitude + per_stage.iter().sum::<f64>();

    // leave-one-sequence-out replicates
    let replicates: Vec<Rates> = (0..tallies.len())
        .map(|skip| {
            let subset: Vec<&Tally> = tallies.iter().enumerate().filter(|(k, _)| *k != skip).map(|(_, t)| t).collect();
            rates(&subset, &base, stages, is_rings)
        })
        .collect();
    let column = |f: &dyn Fn(&Rates) -> f64| jackknife_ci(&replicates.iter().map(f).collect::<Vec<_>>());
    let per_stage_ci: Vec<f64> = (0..stages).map(|s| column(&|r| r.0[s]) / LN_2).collect();
    let amplitude_ci = if is_rings { column(&|r| r.1) / LN_2 } else { 0.0 };
    let ci = column(&|r| r.1 + r.0.iter().sum::<f64>()) / LN_2;

    let mut approximation = ApproximationStats::default();
    tallies.iter().for_each(|t| approximation.merge(t.stats));
    let per_stage_bits: Vec<f64> = per_stage.iter().map(|v| v / LN_2).collect();
    let report = AirReport {
        power_dbm,
        receiver,
        constellation: spec.label(),
        n_rings,
        per_stage_bits,
        per_stage_ci,
        amplitude_bits: amplitude / LN_2,
        amplitude_ci,
        total_bpcu: total / LN_2,
        ci_halfwidth: ci,
        n_sequences: n_seq,
        n_symbols: tallies.iter().map(|t| t.stage_count.iter().sum::<usize>()).sum(),
        approximation,
    };
    if !report.total_bpcu.is_finite() || report.per_stage_bits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite rate in {report:?}")));
    }
    Ok(report)
}

/// Rate of the SIC receiver with Gaussian detection metrics.
pub fn air_cscg(
    channel: &dyn Channel,
    params: &CpanParams,
    sched: &SicSchedule,
    power_dbm: f64,
    n_seq: usize,
    opts: &AirOptions,
) -> Result<AirReport> {
    estimate(channel, params, sched, Metric::Cscg, Receiver::Sic(sched.stages()), power_dbm, n_seq, opts)
}

/// Rate of the SIC receiver for ring constellations: amplitude term plus
/// per-stage phase terms.
pub fn air_rings(
    channel: &dyn Channel,
    params: &CpanParams,
    rings: &RingConstellation,
    sched: &SicSchedule,
    power_dbm: f64,
    n_seq: usize,
    opts: &AirOptions,
) -> Result<AirReport> {
    estimate(channel, params, sched, Metric::Rings(rings), Receiver::Sic(sched.stages()), power_dbm, n_seq, opts)
}

fn memoryless_metric(spec: &ConstellationSpec) -> Metric<'_> {
    match spec {
        ConstellationSpec::Cscg { .. } => Metric::Cscg,
        ConstellationSpec::Rings(r) => Metric::Rings(r),
    }
}

/// Memoryless AWGN detector applied to `y e^{-j theta}` with the true phase.
pub fn air_genie(
    channel: &dyn Channel,
    sigma_n2: f64,
    n: usize,
    power_dbm: f64,
    n_seq: usize,
    opts: &AirOptions,
) -> Result<AirReport> {
    let derotated = Derotated(channel);
    let sched = SicSchedule::new(n, 1)?;
    let params = CpanParams::awgn(sigma_n2)?;
    let metric = memoryless_metric(channel.constellation());
    estimate(&derotated, &params, &sched, metric, Receiver::Genie, power_dbm, n_seq, opts)
}

/// `mean |y - x|^2` over the training sequences: the noise variance seen by
/// a receiver that ignores the phase noise.
pub fn effective_noise_variance(channel: &dyn Channel, n_train: usize, n: usize) -> Result<f64> {
    if n_train == 0 {
        return Err(Error::invalid("at least one training sequence is needed"));
    }
    let sums: Vec<f64> = (0..n_train as u64)
        .into_par_iter()
        .map(|k| {
            let seq = channel.training(k, n)?;
            Ok(seq.x.iter().zip(&seq.y).map(|(x, y)| (y - x).norm_sqr()).collect::<CompensatedSum>().value())
        })
        .collect::<Result<_>>()?;
    let total: CompensatedSum = sums.into_iter().collect();
    let v = total.value() / (n_train * n) as f64;
    if !(v > 0.0) {
        return Err(Error::Numerical(format!("effective noise variance {v:e}")));
    }
    Ok(v)
}

/// Memoryless AWGN receiver: the noise variance is fitted to the training
/// data and the phase noise is ignored.
pub fn air_memoryless(
    channel: &dyn Channel,
    n_train: usize,
    n: usize,
    power_dbm: f64,
    n_seq: usize,
    opts: &AirOptions,
) -> Result<AirReport> {
    let sigma_eff2 = effective_noise_variance(channel, n_train, n)?;
    let sched = SicSchedule::new(n, 1)?;
    let params = CpanParams::awgn(sigma_eff2)?;
    let metric = memoryless_metric(channel.constellation());
    estimate(channel, &params, &sched, metric, Receiver::Memoryless, power_dbm, n_seq, opts)
}
