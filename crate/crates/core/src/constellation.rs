//! Transmit symbol sources: circular Gaussian modulation and uniform-ring
//! constellations with Rayleigh-profile ring probabilities.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::distr::Distribution;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::rng::complex_normal;

/// Relative tolerance on the ring power constraint.
pub const RING_POWER_TOLERANCE: f64 = 1e-10;

/// Equidistant rings with radii `l * delta_r`, `l = 1..=n_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RingConstellation {
    delta_r: f64,
    weights: Vec<f64>,
}

impl RingConstellation {
    pub fn new(delta_r: f64, weights: Vec<f64>) -> Result<Self> {
        if !(delta_r > 0.0) || !delta_r.is_finite() {
            return Err(Error::invalid(format!("ring spacing must be positive, got {delta_r}")));
        }
        if weights.is_empty() {
            return Err(Error::invalid("ring constellation needs at least one ring"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("ring probabilities must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("ring probabilities sum to {total}")));
        }
        Ok(Self { delta_r, weights })
    }

    pub fn n_rings(&self) -> usize {
        self.weights.len()
    }

    pub fn delta_r(&self) -> f64 {
        self.delta_r
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Radius of ring `index` (zero-based).
    pub fn radius(&self, index: usize) -> f64 {
        (index + 1) as f64 * self.delta_r
    }

    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rings()).map(|l| self.radius(l))
    }

    /// `E|X|^2`.
    pub fn power(&self) -> f64 {
        self.moment(2)
    }

    fn moment(&self, k: i32) -> f64 {
        self.radii().zip(&self.weights).map(|(r, w)| w * r.powi(k)).sum()
    }

    /// Ring index closest to `amplitude`.
    pub fn nearest_ring(&self, amplitude: f64) -> usize {
        let l = (amplitude / self.delta_r).round() as i64 - 1;
        l.clamp(0, self.n_rings() as i64 - 1) as usize
    }

    /// Plain-text form used in reproducibility manifests.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_r\t{}", self.n_rings());
        let _ = writeln!(out, "delta_r\t{:e}", self.delta_r);
        let _ = write!(out, "weights");
        for w in &self.weights {
            let _ = write!(out, "\t{w:e}");
        }
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n_r = None;
        let mut delta_r = None;
        let mut weights = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let key = fields.next().unwrap_or_default();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("{s}: {e}"),
                })
            };
            match key {
                "n_r" => {
                    let v = fields.next().ok_or(Error::Parse {
                        line: lineno + 1,
                        msg: "missing n_r value".into(),
                    })?;
                    n_r = Some(v.parse::<usize>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        msg: e.to_string(),
                    })?);
                }
                "delta_r" => {
                    delta_r = Some(parse(fields.next().unwrap_or_default())?);
                }
                "weights" => {
                    weights = Some(fields.map(parse).collect::<Result<Vec<_>>>()?);
                }
                other => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: format!("unknown key {other}"),
                    })
                }
            }
        }
        let (n_r, delta_r, weights) = match (n_r, delta_r, weights) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Parse {
                    line: 0,
                    msg: "ring constellation needs n_r, delta_r and weights".into(),
                })
            }
        };
        if weights.len() != n_r {
            return Err(Error::Parse {
                line: 0,
                msg: format!("n_r is {n_r} but {} weights given", weights.len()),
            });
        }
        RingConstellation::new(delta_r, weights)
    }
}

/// Normalised ring power `E|X|^2 / P` as a function of `u = delta_r / sqrt(P)`.
fn normalised_ring_power(n_r: usize, u: f64) -> f64 {
    let u2 = u * u;
    let logs1: Vec<f64> = (1..=n_r)
        .map(|l| {
            let l = l as f64;
            3.0 * l.ln() - l * l * u2
        })
        .collect();
    let logs0: Vec<f64> = (1..=n_r)
        .map(|l| {
            let l = l as f64;
            l.ln() - l * l * u2
        })
        .collect();
    u2 * (log_sum_exp(&logs1) - log_sum_exp(&logs0)).exp()
}

/// Designs the uniform-ring Rayleigh-weighted constellation with `n_r` rings
/// and average power `power`.
///
/// The ring spacing solves the power constraint by bisection; the power map
/// is increasing in the spacing.
pub fn urr_design(n_r: usize, power: f64) -> Result<RingConstellation> {
    if n_r == 0 {
        return Err(Error::invalid("n_r must be at least 1"));
    }
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::invalid(format!("power must be positive, got {power}")));
    }
    let f = |u: f64| normalised_ring_power(n_r, u) - 1.0;
    let mut lo = 1e-9_f64;
    let mut hi = n_r as f64;
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo < 0.0 && fhi >= 0.0) {
        return Err(Error::Numerical(format!(
            "ring spacing bracket [{lo}, {hi}] does not straddle the power constraint: \
             f(lo)={flo:e}, f(hi)={fhi:e}"
        )));
    }
    let mut iterations = 0;
    while hi - lo > 1e-16 * hi && iterations < 300 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let u = if f(hi).abs() <= f(lo).abs() { hi } else { lo };
    if f(u).abs() > RING_POWER_TOLERANCE {
        return Err(Error::Numerical(format!(
            "ring spacing bisection ended at u={u} with residual {:e}; bracket [{lo}, {hi}]",
            f(u)
        )));
    }
    // w_l ~ r_l exp(-r_l^2 / P), normalised in the log domain
    let u2 = u * u;
    let logw: Vec<f64> = (1..=n_r)
        .map(|l| {
            let l = l as f64;
            l.ln() - l * l * u2
        })
        .collect();
    let norm = log_sum_exp(&logw);
    let mut weights: Vec<f64> = logw.iter().map(|v| (v - norm).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    RingConstellation::new(u * power.sqrt(), weights)
}

/// Modulation used on every WDM channel.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstellationSpec {
    /// Circularly symmetric complex Gaussian with variance `power`.
    Cscg { power: f64 },
    /// Uniform rings with independent uniform phase.
    Rings(RingConstellation),
}

impl ConstellationSpec {
    pub fn cscg(power: f64) -> Result<Self> {
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::invalid(format!("power must be positive, got {power}")));
        }
        Ok(ConstellationSpec::Cscg { power })
    }

    pub fn urr(n_r: usize, power: f64) -> Result<Self> {
        urr_design(n_r, power).map(ConstellationSpec::Rings)
    }

    /// `E|X|^2`.
    pub fn power(&self) -> f64 {
        match self {
            ConstellationSpec::Cscg { power } => *power,
            ConstellationSpec::Rings(r) => r.power(),
        }
    }

    pub fn rings(&self) -> Option<&RingConstellation> {
        match self {
            ConstellationSpec::Rings(r) => Some(r),
            ConstellationSpec::Cscg { .. } => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ConstellationSpec::Cscg { .. } => "cscg",
            ConstellationSpec::Rings(_) => "urr",
        }
    }
}

/// Draws `n` i.i.d. symbols.
pub fn sample_symbols<R: Rng + ?Sized>(spec: &ConstellationSpec, n: usize, rng: &mut R) -> Vec<Complex64> {
    match spec {
        ConstellationSpec::Cscg { power } => (0..n).map(|_| complex_normal(rng, *power)).collect(),
        ConstellationSpec::Rings(rings) => {
            let pick = WeightedIndex::new(rings.weights()).expect("validated ring weights");
            (0..n)
                .map(|_| {
                    let r = rings.radius(pick.sample(rng));
                    let phase = rng.random_range(-PI..PI);
                    Complex64::from_polar(r, phase)
                })
                .collect()
        }
    }
}

/// Shannon entropy of the ring probabilities in bits.
pub fn amplitude_entropy(rings: &RingConstellation) -> f64 {
    -rings
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { w * w.log2() } else { 0.0 })
        .sum::<f64>()
}

/// Fourth absolute moment `E|X|^4`.
pub fn kurtosis(spec: &ConstellationSpec) -> f64 {
    match spec {
        ConstellationSpec::Cscg { power } => 2.0 * power * power,
        ConstellationSpec::Rings(r) => r.moment(4),
    }
}
