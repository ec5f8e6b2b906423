//! Experiment configuration and the end-to-end simulation pipeline.
//!
//! A configuration names a channel (`awgn`, `cpan` or `fiber`), a
//! modulation, a launch-power grid and the SIC schedules to evaluate. The
//! fiber path propagates each block through the split-step solver, fits the
//! surrogate parameters on training blocks and then evaluates the
//! receivers on independent test blocks.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::air::{
    air_cscg, air_genie, air_memoryless, air_rings, awgn_capacity_bound, bound_tsv_row, AirOptions, AirReport, Channel,
    CpanChannel, RecordedChannel, Sequence, AIR_TSV_HEADER, TRAINING_OFFSET,
};
use crate::constellation::{sample_symbols, ConstellationSpec};
use crate::cpan::{cpan_params_from_link, CpanParams, ParamRow, ParamTable};
use crate::error::{Error, Result};
use crate::estimation::{estimate_mean_phase, estimate_sigma_n, TrainingSet};
use crate::fiber::{modulate_wdm, receiver_frontend, ssfm_propagate, FiberParams};
use crate::rng::{StreamKey, StreamRole};
use crate::sic::SicSchedule;

/// Which channel produces the received samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Cpan,
    Fiber,
}

/// Modulation family; the power is set per operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConstellationConfig {
    Cscg,
    Urr { n_rings: usize },
}

impl ConstellationConfig {
    pub fn at_power(&self, power_w: f64) -> Result<ConstellationSpec> {
        match *self {
            ConstellationConfig::Cscg => ConstellationSpec::cscg(power_w),
            ConstellationConfig::Urr { n_rings } => ConstellationSpec::urr(n_rings, power_w),
        }
    }

    pub fn n_rings(&self) -> usize {
        match *self {
            ConstellationConfig::Cscg => 0,
            ConstellationConfig::Urr { n_rings } => n_rings,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ConstellationConfig::Cscg => "cscg",
            ConstellationConfig::Urr { .. } => "urr",
        }
    }
}

/// Reference receivers evaluated alongside the SIC schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Genie,
    Memoryless,
    Bound,
}

/// Simulator numerics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// Samples per symbol of the WDM waveform.
    pub osf: usize,
    /// Split-step count for propagation and for back-propagation.
    pub n_steps: usize,
    #[serde(default)]
    pub edge_exclusion: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            osf: 16,
            n_steps: 1000,
            edge_exclusion: 0,
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelKind,
    pub constellation: ConstellationConfig,
    pub powers_dbm: Vec<f64>,
    pub stages: Vec<usize>,
    pub n: usize,
    pub n_seq: usize,
    pub n_train: usize,
    pub seed: u64,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    /// Fitted surrogate parameters used by the `cpan` channel. Without a
    /// table the phase parameters come from the link model and the additive
    /// noise is the ASE variance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_table: Option<PathBuf>,
    /// Noise variance of the `awgn` channel; defaults to the ASE variance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub awgn_sigma_n2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub fiber: FiberParams,
    #[serde(default)]
    pub numerics: Numerics,
}

/// `10^(dbm / 10)` mW in watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads a configuration file. A relative `param_table` path is taken
    /// relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(table), Some(dir)) = (&cfg.param_table, path.parent()) {
            if table.is_relative() {
                cfg.param_table = Some(dir.join(table));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.powers_dbm.is_empty() {
            return Err(Error::config("powers_dbm is empty"));
        }
        if let Some(p) = self.powers_dbm.iter().find(|p| !p.is_finite()) {
            return Err(Error::config(format!("launch power {p} is not finite")));
        }
        if self.stages.is_empty() {
            return Err(Error::config("stages is empty"));
        }
        if self.n == 0 || self.n_seq == 0 {
            return Err(Error::config("n and n_seq must be positive"));
        }
        if let Some(s) = self.stages.iter().find(|&&s| s == 0 || !self.n.is_multiple_of(s)) {
            return Err(Error::config(format!("stage count {s} does not divide n = {}", self.n)));
        }
        if self.n_train == 0 && (self.channel == ChannelKind::Fiber || self.baselines.contains(&Baseline::Memoryless)) {
            return Err(Error::config("n_train must be positive for the fiber channel and the memoryless receiver"));
        }
        if self.channel == ChannelKind::Fiber && self.baselines.contains(&Baseline::Genie) {
            return Err(Error::config("the fiber channel has no phase reference for the genie receiver"));
        }
        if let ConstellationConfig::Urr { n_rings } = self.constellation {
            if n_rings == 0 {
                return Err(Error::config("n_rings must be positive"));
            }
        }
        if let Some(v) = self.awgn_sigma_n2 {
            if !(v > 0.0) {
                return Err(Error::config(format!("awgn_sigma_n2 must be positive, got {v}")));
            }
        }
        if 2 * self.numerics.edge_exclusion >= self.n {
            return Err(Error::config(format!(
                "edge_exclusion {} leaves no symbols of n = {}",
                self.numerics.edge_exclusion, self.n
            )));
        }
        self.fiber.validate().map_err(|e| Error::config(format!("fiber: {e}")))?;
        if self.numerics.osf == 0 {
            return Err(Error::config("osf must be positive"));
        }
        Ok(())
    }

    fn air_options(&self) -> AirOptions {
        AirOptions {
            edge_exclusion: self.numerics.edge_exclusion,
        }
    }
}

/// The split-step fiber link followed by the receiver front end.
#[derive(Debug, Clone)]
pub struct FiberChannel {
    pub link: FiberParams,
    pub spec: ConstellationSpec,
    pub seed: u64,
    pub osf: usize,
    pub n_steps: usize,
    /// Derotation applied at the end of the front end.
    pub theta_hat: f64,
}

impl FiberChannel {
    fn draw(&self, index: u64, n: usize) -> Result<Sequence> {
        let symbols = |role| sample_symbols(&self.spec, n, &mut StreamKey::new(self.seed, role, index).rng(0));
        let x = symbols(StreamRole::Symbols);
        let interferers: Vec<Vec<Complex64>> = self
            .link
            .channel_indices()
            .filter(|&k| k != 0)
            .map(|k| symbols(StreamRole::Interferer(k)))
            .collect();
        let tx = modulate_wdm(&x, &interferers, &self.link, self.osf)?;
        let ase = StreamKey::new(self.seed, StreamRole::Ase, index);
        let rx = ssfm_propagate(&tx, &self.link, self.n_steps, Some(ase))?;
        let y = receiver_frontend(&rx, &self.link, self.theta_hat, self.n_steps)?;
        Ok(Sequence { x, y, theta: None })
    }
}

impl Channel for FiberChannel {
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

/// Parameters fitted at one launch power of the fiber link, with the
/// recorded blocks they were fitted on.
struct FiberPoint {
    row: ParamRow,
    recorded: RecordedChannel,
}

fn record(channel: &dyn Channel, count: usize, n: usize, training: bool) -> Result<Vec<Sequence>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| if training { channel.training(k, n) } else { channel.sequence(k, n) })
        .collect()
}

fn fiber_point(cfg: &ExperimentConfig, power_dbm: f64, with_test: bool) -> Result<FiberPoint> {
    let power = dbm_to_watts(power_dbm);
    let spec = cfg.constellation.at_power(power)?;
    let mut channel = FiberChannel {
        link: cfg.fiber.clone(),
        spec: spec.clone(),
        seed: cfg.seed,
        osf: cfg.numerics.osf,
        n_steps: cfg.numerics.n_steps,
        theta_hat: 0.0,
    };
    let mut train = record(&channel, cfg.n_train, cfg.n, true)?;
    let set = TrainingSet::from_pairs(train.iter().map(|s| (s.x.clone(), s.y.clone())))?;
    let theta_hat = estimate_mean_phase(&set)?;
    let sigma_n2 = estimate_sigma_n(&set)?;
    let derotate = Complex64::from_polar(1.0, -theta_hat);
    for s in &mut train {
        s.y.iter_mut().for_each(|v| *v *= derotate);
    }
    channel.theta_hat = theta_hat;
    let test = if with_test { record(&channel, cfg.n_seq, cfg.n, false)? } else { Vec::new() };

    let phase = cpan_params_from_link(&cfg.fiber, &spec)?;
    Ok(FiberPoint {
        row: ParamRow {
            power_dbm,
            sigma_theta2: phase.sigma_theta2,
            sigma_delta2: phase.sigma_delta2,
            mu_delta: phase.mu_delta,
            sigma_n2,
            sigma_ase2: cfg.fiber.sigma_ase2(),
        },
        recorded: RecordedChannel { spec, test, train },
    })
}

/// Fits the surrogate parameters of the fiber link at every configured power.
pub fn emit_param_table(cfg: &ExperimentConfig) -> Result<ParamTable> {
    cfg.validate()?;
    if cfg.channel != ChannelKind::Fiber {
        return Err(Error::config("parameter fitting needs the fiber channel"));
    }
    let rows = cfg
        .powers_dbm
        .iter()
        .map(|&p| fiber_point(cfg, p, false).map(|pt| pt.row))
        .collect::<Result<_>>()?;
    Ok(ParamTable { rows })
}

/// Surrogate parameters of the `cpan` and `awgn` channels at one power.
fn surrogate_params(cfg: &ExperimentConfig, table: Option<&ParamTable>, power_dbm: f64) -> Result<CpanParams> {
    match cfg.channel {
        ChannelKind::Awgn => CpanParams::awgn(cfg.awgn_sigma_n2.unwrap_or_else(|| cfg.fiber.sigma_ase2())),
        ChannelKind::Cpan => match table {
            Some(t) => t
                .lookup(power_dbm)
                .ok_or_else(|| Error::config(format!("parameter table has no row for {power_dbm} dBm")))?
                .cpan(),
            None => {
                let spec = cfg.constellation.at_power(dbm_to_watts(power_dbm))?;
                CpanParams::from_phase(cpan_params_from_link(&cfg.fiber, &spec)?, cfg.fiber.sigma_ase2())
            }
        },
        ChannelKind::Fiber => unreachable!("fiber parameters are fitted"),
    }
}

/// Results of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub reports: Vec<AirReport>,
    /// `(power_dbm, bound)` for every power when the bound is requested.
    pub bounds: Vec<(f64, f64)>,
    /// Parameters used at each power.
    pub params: ParamTable,
}

impl ExperimentOutput {
    pub fn to_tsv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = String::from(AIR_TSV_HEADER);
        out.push('\n');
        for &power in &cfg.powers_dbm {
            for r in self.reports.iter().filter(|r| r.power_dbm == power) {
                for row in r.tsv_rows(cfg.seed) {
                    out.push_str(&row);
                    out.push('\n');
                }
            }
            for &(_, b) in self.bounds.iter().filter(|(p, _)| *p == power) {
                out.push_str(&bound_tsv_row(power, cfg.constellation.label(), cfg.constellation.n_rings(), b, cfg.seed));
                out.push('\n');
            }
        }
        out
    }
}

/// Runs every configured receiver at every configured power.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let table = match (&cfg.param_table, cfg.channel) {
        (Some(path), ChannelKind::Cpan) => Some(
            ParamTable::read(path).map_err(|e| Error::config(format!("parameter table {}: {e}", path.display())))?,
        ),
        _ => None,
    };
    let opts = cfg.air_options();
    let mut out = ExperimentOutput {
        reports: Vec::new(),
        bounds: Vec::new(),
        params: ParamTable::default(),
    };
    for &power_dbm in &cfg.powers_dbm {
        let power = dbm_to_watts(power_dbm);
        let (params, channel): (CpanParams, Box<dyn Channel>) = match cfg.channel {
            ChannelKind::Fiber => {
                let pt = fiber_point(cfg, power_dbm, true)?;
                out.params.rows.push(pt.row);
                (pt.row.cpan()?, Box::new(pt.recorded))
            }
            _ => {
                let p = surrogate_params(cfg, table.as_ref(), power_dbm)?;
                out.params.rows.push(ParamRow {
                    power_dbm,
                    sigma_theta2: p.sigma_theta2,
                    sigma_delta2: p.sigma_delta2,
                    mu_delta: p.mu_delta,
                    sigma_n2: p.sigma_n2,
                    sigma_ase2: cfg.fiber.sigma_ase2(),
                });
                let spec = cfg.constellation.at_power(power)?;
                (p, Box::new(CpanChannel::new(p, spec, cfg.seed)))
            }
        };
        let channel = channel.as_ref();
        for &s in &cfg.stages {
            let sched = SicSchedule::new(cfg.n, s)?;
            let report = match channel.constellation() {
                ConstellationSpec::Cscg { .. } => air_cscg(channel, &params, &sched, power_dbm, cfg.n_seq, &opts)?,
                ConstellationSpec::Rings(r) => air_rings(channel, &params, r, &sched, power_dbm, cfg.n_seq, &opts)?,
            };
            out.reports.push(report);
        }
        for b in &cfg.baselines {
            match b {
                Baseline::Genie => out
                    .reports
                    .push(air_genie(channel, params.sigma_n2, cfg.n, power_dbm, cfg.n_seq, &opts)?),
                Baseline::Memoryless => out
                    .reports
                    .push(air_memoryless(channel, cfg.n_train, cfg.n, power_dbm, cfg.n_seq, &opts)?),
                Baseline::Bound => {
                    let noise = match cfg.channel {
                        ChannelKind::Awgn => params.sigma_n2,
                        _ => cfg.fiber.sigma_ase2(),
                    };
                    out.bounds.push((power_dbm, awgn_capacity_bound(power, noise)?));
                }
            }
        }
    }
    Ok(out)
}

/// Received blocks of the first test sequence at every power, as TSV.
pub fn simulate_blocks(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let table = match (&cfg.param_table, cfg.channel) {
        (Some(path), ChannelKind::Cpan) => Some(ParamTable::read(path)?),
        _ => None,
    };
    let mut out = String::from("power_dbm\tindex\tx_re\tx_im\ty_re\ty_im\n");
    for &power_dbm in &cfg.powers_dbm {
        let spec = cfg.constellation.at_power(dbm_to_watts(power_dbm))?;
        let seq = match cfg.channel {
            ChannelKind::Fiber => FiberChannel {
                link: cfg.fiber.clone(),
                spec,
                seed: cfg.seed,
                osf: cfg.numerics.osf,
                n_steps: cfg.numerics.n_steps,
                theta_hat: 0.0,
            }
            .sequence(0, cfg.n)?,
            _ => CpanChannel::new(surrogate_params(cfg, table.as_ref(), power_dbm)?, spec, cfg.seed).sequence(0, cfg.n)?,
        };
        for (i, (x, y)) in seq.x.iter().zip(&seq.y).enumerate() {
            out.push_str(&format!("{power_dbm:.2}\t{i}\t{:e}\t{:e}\t{:e}\t{:e}\n", x.re, x.im, y.re, y.im));
        }
    }
    Ok(out)
}
