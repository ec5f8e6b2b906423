//! Fitting the free surrogate parameters from training data.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math::{rice_log_pdf_unchecked, wrap, CompensatedSum};

/// Estimate returned when the data carry no measurable noise.
pub const SIGMA_N2_FLOOR: f64 = 1e-15;

/// Search interval for the noise variance.
pub const SIGMA_N2_RANGE: (f64, f64) = (1e-12, 1e2);

/// Relative tolerance on the fitted noise variance.
pub const SIGMA_N2_RTOL: f64 = 1e-8;

/// Minimum number of symbol pairs for a noise fit.
pub const MIN_PAIRS: usize = 1000;

const GRID_POINTS: usize = 141;

/// Length-matched transmit/receive training blocks.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pairs: Vec<(Vec<Complex64>, Vec<Complex64>)>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: Vec<Complex64>, y: Vec<Complex64>) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "training pair lengths differ: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        if let Some((first, _)) = self.pairs.first() {
            if first.len() != x.len() {
                return Err(Error::invalid(format!(
                    "training block length {} differs from {}",
                    x.len(),
                    first.len()
                )));
            }
        }
        self.pairs.push((x, y));
        Ok(())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Vec<Complex64>, Vec<Complex64>)>) -> Result<Self> {
        let mut set = Self::new();
        for (x, y) in pairs {
            set.push(x, y)?;
        }
        Ok(set)
    }

    pub fn n_train(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.pairs.iter().map(|(x, _)| x.len()).sum()
    }

    fn symbols(&self) -> impl Iterator<Item = (Complex64, Complex64)> + '_ {
        self.pairs.iter().flat_map(|(x, y)| x.iter().copied().zip(y.iter().copied()))
    }
}

/// Rice log-likelihood of the magnitudes at noise variance `sigma2`.
fn rice_log_likelihood(amplitudes: &[(f64, f64)], sigma2: f64) -> f64 {
    amplitudes
        .iter()
        .filter(|(a, _)| *a > 0.0)
        .map(|&(a, b)| rice_log_pdf_unchecked(a, b, sigma2))
        .collect::<CompensatedSum>()
        .value()
}

/// Maximum-likelihood additive-noise variance from the Rice law of `|y|`
/// given `|x|`.
///
/// A logarithmic grid over [`SIGMA_N2_RANGE`] brackets the maximum, then a
/// golden-section search on `log sigma2` refines it. Noiseless data, whose
/// likelihood peaks at the lower end of the range, return [`SIGMA_N2_FLOOR`].
pub fn estimate_sigma_n(t: &TrainingSet) -> Result<f64> {
    if t.n_symbols() < MIN_PAIRS {
        return Err(Error::invalid(format!(
            "noise fit needs at least {MIN_PAIRS} symbol pairs, got {}",
            t.n_symbols()
        )));
    }
    let amplitudes: Vec<(f64, f64)> = t.symbols().map(|(x, y)| (y.norm(), x.norm())).collect();
    if amplitudes.iter().all(|(a, b)| a == b) {
        return Ok(SIGMA_N2_FLOOR);
    }
    let f = |log_s: f64| rice_log_likelihood(&amplitudes, log_s.exp());
    let (lo, hi) = (SIGMA_N2_RANGE.0.ln(), SIGMA_N2_RANGE.1.ln());
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let profile: Vec<(f64, f64)> = (0..GRID_POINTS)
        .map(|i| {
            let x = lo + i as f64 * step;
            (x, f(x))
        })
        .collect();
    let (best, _) = profile
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| v.is_finite())
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .ok_or_else(|| Error::Numerical(format!("Rice likelihood is nowhere finite; profile {profile:?}")))?;
    if best == 0 {
        return Ok(SIGMA_N2_FLOOR);
    }
    if best == GRID_POINTS - 1 {
        return Err(Error::Numerical(format!(
            "Rice likelihood still increasing at sigma2 = {:e}; profile {}",
            SIGMA_N2_RANGE.1,
            dump_profile(&profile)
        )));
    }

    // golden section on [x_{best-1}, x_{best+1}]
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (profile[best - 1].0, profile[best + 1].0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    // tolerance on log sigma2 is the relative tolerance on sigma2
    while b - a > SIGMA_N2_RTOL {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok((0.5 * (a + b)).exp())
}

fn dump_profile(profile: &[(f64, f64)]) -> String {
    profile
        .iter()
        .step_by(10)
        .map(|(x, v)| format!("{:.1e}:{v:.3e}", x.exp()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Mean phase rotation `arg(sum y x*)`.
pub fn estimate_mean_phase(t: &TrainingSet) -> Result<f64> {
    let (mut re, mut im) = (CompensatedSum::default(), CompensatedSum::default());
    for (x, y) in t.symbols() {
        let c = y * x.conj();
        re.add(c.re);
        im.add(c.im);
    }
    let sum = Complex64::new(re.value(), im.value());
    if sum.norm() == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    Ok(wrap(sum.arg()))
}
