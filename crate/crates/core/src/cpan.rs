//! The correlated phase-and-additive-noise (CPAN) surrogate channel.
//!
//! `y_i = x_i exp(j theta_i) + n_i` where `theta` is a stationary AR(1)
//! process and `n_i` is circular white Gaussian noise.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::constellation::{kurtosis, ConstellationSpec};
use crate::error::{Error, Result};
use crate::fiber::FiberParams;
use crate::rng::complex_normal;

/// Tolerance of the stationarity relation `sigma_theta2 (1 - mu^2) = sigma_delta2`.
pub const STATIONARITY_TOLERANCE: f64 = 1e-12;

/// The AR(1) phase process alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseNoiseParams {
    pub sigma_theta2: f64,
    pub mu_delta: f64,
    pub sigma_delta2: f64,
}

/// Full surrogate-channel parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpanParams {
    pub mu_delta: f64,
    pub sigma_delta2: f64,
    pub sigma_theta2: f64,
    pub sigma_n2: f64,
}

impl CpanParams {
    pub fn new(mu_delta: f64, sigma_delta2: f64, sigma_theta2: f64, sigma_n2: f64) -> Result<Self> {
        let p = Self {
            mu_delta,
            sigma_delta2,
            sigma_theta2,
            sigma_n2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Stationary parameters from the phase variance and AR coefficient.
    pub fn stationary(sigma_theta2: f64, mu_delta: f64, sigma_n2: f64) -> Result<Self> {
        Self::new(mu_delta, sigma_theta2 * (1.0 - mu_delta * mu_delta), sigma_theta2, sigma_n2)
    }

    pub fn from_phase(phase: PhaseNoiseParams, sigma_n2: f64) -> Result<Self> {
        Self::new(phase.mu_delta, phase.sigma_delta2, phase.sigma_theta2, sigma_n2)
    }

    /// Additive noise only.
    pub fn awgn(sigma_n2: f64) -> Result<Self> {
        Self::new(0.0, 0.0, 0.0, sigma_n2)
    }

    pub fn phase(&self) -> PhaseNoiseParams {
        PhaseNoiseParams {
            sigma_theta2: self.sigma_theta2,
            mu_delta: self.mu_delta,
            sigma_delta2: self.sigma_delta2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mu_delta, self.sigma_delta2, self.sigma_theta2, self.sigma_n2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite CPAN parameters {self:?}")));
        }
        if !(0.0..1.0).contains(&self.mu_delta) {
            return Err(Error::invalid(format!("mu_delta must lie in [0, 1), got {}", self.mu_delta)));
        }
        if self.sigma_delta2 < 0.0 || self.sigma_theta2 < 0.0 {
            return Err(Error::invalid("phase variances must be non-negative"));
        }
        if !(self.sigma_n2 > 0.0) {
            return Err(Error::invalid(format!("sigma_n2 must be positive, got {}", self.sigma_n2)));
        }
        let implied = self.sigma_theta2 * (1.0 - self.mu_delta * self.mu_delta);
        if (implied - self.sigma_delta2).abs() > STATIONARITY_TOLERANCE {
            return Err(Error::invalid(format!(
                "phase process is not stationary: sigma_theta2 (1 - mu^2) = {implied:e}, sigma_delta2 = {:e}",
                self.sigma_delta2
            )));
        }
        Ok(())
    }
}

/// Phase-noise parameters predicted from the link and the modulation.
///
/// The per-channel sum runs over the interferers `k != 0`. Symbol energies
/// are `P T`, which gives the `T` factor in front of the sum.
pub fn cpan_params_from_link(link: &FiberParams, spec: &ConstellationSpec) -> Result<PhaseNoiseParams> {
    link.validate()?;
    if link.n_pairs() == 0 {
        return Err(Error::invalid("phase-noise model needs at least one interfering channel pair"));
    }
    if link.beta2 == 0.0 {
        return Err(Error::invalid("phase-noise model is undefined without dispersion (beta2 = 0)"));
    }
    let t = link.symbol_period();
    let sx4 = spec.power().powi(2);
    let excess = (kurtosis(spec) - sx4).max(0.0);
    let scale = 4.0 * link.gamma.powi(2) * link.length_m * t * excess;
    let (mut theta2, mut r) = (0.0, 0.0);
    for k in link.channel_indices().filter(|&k| k != 0) {
        let walk = (link.beta2 * 2.0 * PI * link.spacing_hz * k as f64).abs();
        let term = scale / walk;
        theta2 += term;
        r += term * (1.0 - t / (walk * link.length_m)).max(0.0);
    }
    if theta2 == 0.0 {
        return Ok(PhaseNoiseParams {
            sigma_theta2: 0.0,
            mu_delta: 0.0,
            sigma_delta2: 0.0,
        });
    }
    let mu_delta = r / theta2;
    Ok(PhaseNoiseParams {
        sigma_theta2: theta2,
        mu_delta,
        // the stationary form of theta2 - r^2/theta2, exact in floating point
        sigma_delta2: theta2 * (1.0 - mu_delta * mu_delta),
    })
}

/// Passes `x` through the surrogate channel. Returns `(y, theta)`.
pub fn simulate_cpan<R: Rng + ?Sized>(params: &CpanParams, x: &[Complex64], rng: &mut R) -> Result<(Vec<Complex64>, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::invalid("empty symbol block"));
    }
    let sd_theta = params.sigma_theta2.sqrt();
    let sd_delta = params.sigma_delta2.sqrt();
    let mut theta = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    let mut phase = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let d: f64 = rng.sample(StandardNormal);
        phase = if i == 0 { sd_theta * d } else { params.mu_delta * phase + sd_delta * d };
        let noise = if params.sigma_n2 > 0.0 {
            complex_normal(rng, params.sigma_n2)
        } else {
            Complex64::new(0.0, 0.0)
        };
        theta.push(phase);
        y.push(xi * Complex64::from_polar(1.0, phase) + noise);
    }
    Ok((y, theta))
}

/// One fitted operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRow {
    pub power_dbm: f64,
    pub sigma_theta2: f64,
    pub sigma_delta2: f64,
    pub mu_delta: f64,
    pub sigma_n2: f64,
    pub sigma_ase2: f64,
}

impl ParamRow {
    pub fn cpan(&self) -> Result<CpanParams> {
        CpanParams::new(self.mu_delta, self.sigma_delta2, self.sigma_theta2, self.sigma_n2)
    }
}

/// Power-indexed parameter table, stored as TSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTable {
    pub rows: Vec<ParamRow>,
}

impl ParamTable {
    pub const HEADER: &'static str = "power_dbm\tsigma_theta2\tsigma_delta2\tmu_delta\tsigma_n2\tsigma_ase2";

    /// Row at `power_dbm`, matched to 1e-6 dB.
    pub fn lookup(&self, power_dbm: f64) -> Option<&ParamRow> {
        self.rows.iter().find(|r| (r.power_dbm - power_dbm).abs() < 1e-6)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
                r.power_dbm, r.sigma_theta2, r.sigma_delta2, r.mu_delta, r.sigma_n2, r.sigma_ase2
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.trim() == Self::HEADER => {}
            Some((i, h)) => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected header `{}`, found `{h}`", Self::HEADER),
                })
            }
            None => return Err(Error::Parse { line: 0, msg: "empty parameter table".into() }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let v = line
                .split('\t')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: format!("{f}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if v.len() != 6 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 6 columns, found {}", v.len()),
                });
            }
            rows.push(ParamRow {
                power_dbm: v[0],
                sigma_theta2: v[1],
                sigma_delta2: v[2],
                mu_delta: v[3],
                sigma_n2: v[4],
                sigma_ase2: v[5],
            });
        }
        Ok(Self { rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::sample_symbols;
    use crate::rng::{StreamKey, StreamRole};
    use proptest::prelude::*;

    fn dbm(p: f64) -> f64 {
        1e-3 * 10f64.powf(p / 10.0)
    }

    fn rng(seq: u64) -> rand_chacha::ChaCha8Rng {
        StreamKey::new(3, StreamRole::PhaseNoise, seq).rng(0)
    }

    #[test]
    fn constant_modulus_has_no_phase_noise() {
        let spec = ConstellationSpec::urr(1, dbm(-6.5)).unwrap();
        let p = cpan_params_from_link(&FiberParams::reference(), &spec).unwrap();
        assert_eq!(p.sigma_theta2, 0.0);
        assert_eq!(p.mu_delta, 0.0);
        assert_eq!(p.sigma_delta2, 0.0);
    }

    #[test]
    fn short_link_has_white_phase_noise() {
        // the max(0, .) factor vanishes once L <= T / |beta2 omega_k|
        let link = FiberParams {
            length_m: 1.0,
            ..FiberParams::reference()
        };
        let p = cpan_params_from_link(&link, &ConstellationSpec::cscg(1e-3).unwrap()).unwrap();
        assert!(p.sigma_theta2 > 0.0);
        assert_eq!(p.mu_delta, 0.0);
        assert_eq!(p.sigma_delta2, p.sigma_theta2);
    }

    #[test]
    fn reference_parameters_at_minus_6p5_dbm() {
        let link = FiberParams::reference();
        let power = dbm(-6.5);
        let p = cpan_params_from_link(&link, &ConstellationSpec::cscg(power).unwrap()).unwrap();

        // direct evaluation of the closed form
        let t = 1.0 / link.baud_hz;
        let mut theta2 = 0.0;
        let mut r = 0.0;
        for k in [-2.0f64, -1.0, 1.0, 2.0] {
            let w = (link.beta2 * 2.0 * PI * 50e9 * k).abs();
            let e = 4.0 * 1.27e-3f64.powi(2) * 1e6 * t * power * power / w;
            theta2 += e;
            r += e * (1.0 - t / (w * 1e6));
        }
        assert!((p.sigma_theta2 - theta2).abs() < 1e-12 * theta2);
        assert!((p.mu_delta - r / theta2).abs() < 1e-12);
        assert!((1e-3..1e-2).contains(&p.sigma_theta2), "{:e}", p.sigma_theta2);
        assert!(p.sigma_delta2 < p.sigma_theta2);

        let higher = cpan_params_from_link(&link, &ConstellationSpec::cscg(dbm(-5.5)).unwrap()).unwrap();
        assert!(higher.sigma_theta2 > p.sigma_theta2);
        assert!(higher.sigma_delta2 > p.sigma_delta2);
    }

    #[test]
    fn link_model_errors() {
        let spec = ConstellationSpec::cscg(1e-3).unwrap();
        let single = FiberParams {
            n_wdm: 1,
            ..FiberParams::reference()
        };
        assert!(cpan_params_from_link(&single, &spec).is_err());
        let flat = FiberParams {
            beta2: 0.0,
            ..FiberParams::reference()
        };
        assert!(cpan_params_from_link(&flat, &spec).is_err());
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let params = CpanParams {
            mu_delta: 0.0,
            sigma_delta2: 0.0,
            sigma_theta2: 0.0,
            sigma_n2: 0.0,
        };
        let x = sample_symbols(&ConstellationSpec::cscg(1.0).unwrap(), 100, &mut rng(0));
        let (y, theta) = simulate_cpan(&params, &x, &mut rng(1)).unwrap();
        assert_eq!(y, x);
        assert!(theta.iter().all(|&t| t == 0.0));
    }

    fn lag1(theta: &[f64]) -> (f64, f64) {
        let n = theta.len() as f64;
        let mean = theta.iter().sum::<f64>() / n;
        let var = theta.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let cov = theta.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0);
        (var, cov / var)
    }

    #[test]
    fn white_phase_noise_is_uncorrelated() {
        let params = CpanParams::stationary(0.01, 0.0, 1e-3).unwrap();
        let x = vec![Complex64::new(1.0, 0.0); 100_000];
        let (_, theta) = simulate_cpan(&params, &x, &mut rng(2)).unwrap();
        let (var, rho) = lag1(&theta);
        assert!((var - 0.01).abs() < 4.0 * 0.01 * (2.0 / 1e5f64).sqrt());
        assert!(rho.abs() < 4.0 / 1e5f64.sqrt());
    }

    #[test]
    fn ar1_statistics_match() {
        let params = CpanParams::stationary(0.02, 0.9, 1e-3).unwrap();
        let n = 1_000_000;
        let x = vec![Complex64::new(1.0, 0.0); n];
        let (_, theta) = simulate_cpan(&params, &x, &mut rng(3)).unwrap();
        let (var, rho) = lag1(&theta);
        // effective sample size for an AR(1) variance estimate
        let n_eff = n as f64 * (1.0 - 0.81) / (1.0 + 0.81);
        assert!((var - 0.02).abs() < 4.0 * 0.02 * (2.0 / n_eff).sqrt(), "{var}");
        assert!((rho - 0.9).abs() < 4.0 * ((1.0 - 0.81) / n as f64).sqrt(), "{rho}");

        // sliding-window variance is flat across the block
        let block = 100_000;
        for chunk in theta.chunks(block) {
            let v = chunk.iter().map(|t| t * t).sum::<f64>() / block as f64;
            let n_eff = block as f64 * 0.19 / 1.81;
            assert!((v - 0.02).abs() < 5.0 * 0.02 * (2.0 / n_eff).sqrt(), "{v}");
        }
    }

    #[test]
    fn additive_noise_is_independent() {
        let params = CpanParams::stationary(0.02, 0.5, 0.1).unwrap();
        let n = 200_000;
        let x = sample_symbols(&ConstellationSpec::cscg(1.0).unwrap(), n, &mut rng(4));
        let (y, theta) = simulate_cpan(&params, &x, &mut rng(5)).unwrap();
        let noise: Vec<Complex64> = y
            .iter()
            .zip(&x)
            .zip(&theta)
            .map(|((y, x), t)| y - x * Complex64::from_polar(1.0, *t))
            .collect();
        let nx: Complex64 = noise.iter().zip(&x).map(|(a, b)| a * b.conj()).sum::<Complex64>() / n as f64;
        let nt: f64 = noise.iter().zip(&theta).map(|(a, t)| a.re * t).sum::<f64>() / n as f64;
        let sd_nx = (0.1f64 * 1.0 / n as f64).sqrt();
        let sd_nt = (0.05f64 * 0.02 / n as f64).sqrt();
        assert!(nx.norm() < 5.0 * sd_nx);
        assert!(nt.abs() < 5.0 * sd_nt);
    }

    #[test]
    fn parameter_validation() {
        assert!(CpanParams::new(0.5, 0.1, 0.1, 1.0).is_err());
        assert!(CpanParams::new(1.0, 0.0, 0.1, 1.0).is_err());
        assert!(CpanParams::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(CpanParams::stationary(0.1, 0.3, 1.0).is_ok());
    }

    #[test]
    fn table_tsv_round_trip_and_lookup() {
        let table = ParamTable {
            rows: vec![
                ParamRow {
                    power_dbm: -7.0,
                    sigma_theta2: 1e-3,
                    sigma_delta2: 1e-5,
                    mu_delta: 0.995,
                    sigma_n2: 3e-7,
                    sigma_ase2: 2.951e-7,
                },
                ParamRow {
                    power_dbm: -6.0,
                    sigma_theta2: 2e-3,
                    sigma_delta2: 2e-5,
                    mu_delta: 0.995,
                    sigma_n2: 4e-7,
                    sigma_ase2: 2.951e-7,
                },
            ],
        };
        let back = ParamTable::from_tsv(&table.to_tsv()).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.lookup(-6.0).unwrap().sigma_theta2, 2e-3);
        assert!(back.lookup(-5.0).is_none());
        assert!(ParamTable::from_tsv("nope\n1\t2").is_err());
    }

    proptest! {
        #[test]
        fn link_parameters_are_stationary(p_dbm in -16.0..0.0f64, n_wdm in prop::sample::select(vec![3usize, 5, 7]),
                                          n_r in 1usize..40, rings in any::<bool>()) {
            let link = FiberParams { n_wdm, ..FiberParams::reference() };
            let spec = if rings {
                ConstellationSpec::urr(n_r, dbm(p_dbm)).unwrap()
            } else {
                ConstellationSpec::cscg(dbm(p_dbm)).unwrap()
            };
            let phase = cpan_params_from_link(&link, &spec).unwrap();
            prop_assert!(CpanParams::from_phase(phase, 1e-7).is_ok());
        }
    }
}
