//! Numerical kernels shared by the channel models and the receivers.
//!
//! Everything here is pure. Densities are returned in the log domain since
//! the information-rate estimators sum them over millions of symbols.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Variance used to represent a flat (uninformative) phase message.
///
/// Messages at or above this variance are treated as constants by
/// [`gaussian_product`], which keeps the product total without infinities.
pub const UNINFORMATIVE_VARIANCE: f64 = 1e12;

/// Switch point between the power series and the asymptotic expansion of `I0`.
const BESSEL_SERIES_LIMIT: f64 = 20.0;

/// Maps `x` onto `[-pi, pi)`.
pub fn wrap_phase(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("cannot wrap non-finite phase {x}")));
    }
    Ok(wrap(x))
}

/// Unchecked [`wrap_phase`] for hot loops over finite data.
#[inline]
pub(crate) fn wrap(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        return x;
    }
    let mut r = (x + PI).rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        r -= TAU;
    }
    r - PI
}

/// Mean and variance of a real Gaussian message on a phase edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMessage {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianMessage {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
            return Err(Error::invalid(format!(
                "gaussian message needs finite mean and variance >= 0, got [{mean}, {variance}]"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// The constant message.
    pub const fn flat() -> Self {
        Self {
            mean: 0.0,
            variance: UNINFORMATIVE_VARIANCE,
        }
    }

    pub fn is_flat(&self) -> bool {
        self.variance >= UNINFORMATIVE_VARIANCE
    }

    /// Log-density of the message evaluated at `x`.
    pub fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (TAU * self.variance).ln() - 0.5 * d * d / self.variance
    }
}

/// Parameters of the Gaussian proportional to the product of two Gaussians.
///
/// Flat messages are absorbed exactly. Two point masses multiply only if they
/// sit at the same mean.
pub fn gaussian_product(m1: GaussianMessage, m2: GaussianMessage) -> Result<GaussianMessage> {
    if m1.variance == 0.0 && m2.variance == 0.0 {
        return if m1.mean == m2.mean {
            Ok(m1)
        } else {
            Err(Error::DegenerateProduct(m1.mean, m2.mean))
        };
    }
    Ok(product(m1, m2))
}

/// [`gaussian_product`] without the degenerate check; two point masses
/// yield the first.
#[inline]
pub(crate) fn product(m1: GaussianMessage, m2: GaussianMessage) -> GaussianMessage {
    if m2.is_flat() {
        return m1;
    }
    if m1.is_flat() {
        return m2;
    }
    let sum = m1.variance + m2.variance;
    if sum == 0.0 {
        return m1;
    }
    GaussianMessage {
        mean: (m1.mean * m2.variance + m2.mean * m1.variance) / sum,
        variance: m1.variance * m2.variance / sum,
    }
}

/// Mean, variance and pseudo-variance of an (improper) complex Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexGaussianMoments {
    pub mean: Complex64,
    pub variance: f64,
    pub pseudo_variance: Complex64,
}

impl ComplexGaussianMoments {
    /// A circularly symmetric complex Gaussian.
    pub fn circular(mean: Complex64, variance: f64) -> Self {
        Self {
            mean,
            variance,
            pseudo_variance: Complex64::new(0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance >= 0.0) || !self.mean.is_finite() || !self.pseudo_variance.is_finite() {
            return Err(Error::invalid(format!("invalid complex gaussian moments {self:?}")));
        }
        if self.pseudo_variance.norm() > self.variance {
            return Err(Error::SingularCovariance {
                variance: self.variance,
                pseudo: self.pseudo_variance.norm(),
            });
        }
        Ok(())
    }
}

/// Log-density of a complex Gaussian with the given moments at `x`.
///
/// The quadratic form of the augmented covariance `[[s2, p2], [p2*, s2]]`
/// reduces to `(s2 |d|^2 - Re(conj(p2) d^2)) / (s2^2 - |p2|^2)` for
/// `d = x - mean`.
pub fn complex_gaussian_log_pdf(x: Complex64, m: &ComplexGaussianMoments) -> Result<f64> {
    let s2 = m.variance;
    let p2 = m.pseudo_variance;
    let d = x - m.mean;
    if p2 == Complex64::new(0.0, 0.0) {
        if !(s2 > 0.0) {
            return Err(Error::SingularCovariance {
                variance: s2,
                pseudo: 0.0,
            });
        }
        return Ok(-d.norm_sqr() / s2 - (PI * s2).ln());
    }
    let det = s2 * s2 - p2.norm_sqr();
    if !(det > 0.0) || !(s2 > 0.0) || det <= s2 * s2 * 1e-14 {
        return Err(Error::SingularCovariance {
            variance: s2,
            pseudo: p2.norm(),
        });
    }
    let quad = (s2 * d.norm_sqr() - (p2.conj() * d * d).re) / det;
    Ok(-quad - PI.ln() - 0.5 * det.ln())
}

/// `log I0(x)` for `x >= 0`.
pub fn log_bessel_i0(x: f64) -> Result<f64> {
    if !(x >= 0.0) || x.is_infinite() {
        return Err(Error::invalid(format!("log I0 needs a finite x >= 0, got {x}")));
    }
    Ok(log_bessel_i0e(x) + x)
}

/// `log(I0(x) e^{-x})`, finite for every finite `x >= 0`.
pub(crate) fn log_bessel_i0e(x: f64) -> f64 {
    if x < BESSEL_SERIES_LIMIT {
        // sum_k ((x/2)^k / k!)^2
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            k += 1.0;
        }
        sum.ln() - x
    } else {
        // e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! (8x)^k)
        let z = 8.0 * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0_f64;
        loop {
            let next = term * (2.0 * k - 1.0).powi(2) / (k * z);
            if next >= term || next < sum * 1e-17 {
                if next < term {
                    sum += next;
                }
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        sum.ln() - 0.5 * (TAU * x).ln()
    }
}

/// Log of the Rice density `(2a/s2) exp(-(a^2+b^2)/s2) I0(2ab/s2)`.
///
/// Returns `-inf` at `a == 0`, where the density vanishes.
pub fn rice_log_pdf(a: f64, b: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::invalid(format!("rice density needs sigma2 > 0, got {sigma2}")));
    }
    if !(a >= 0.0) || !(b >= 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!(
            "rice density needs finite a, b >= 0, got a={a}, b={b}"
        )));
    }
    Ok(rice_log_pdf_unchecked(a, b, sigma2))
}

#[inline]
pub(crate) fn rice_log_pdf_unchecked(a: f64, b: f64, sigma2: f64) -> f64 {
    if a == 0.0 {
        return f64::NEG_INFINITY;
    }
    let d = a - b;
    (2.0 * a / sigma2).ln() - d * d / sigma2 + log_bessel_i0e(2.0 * a * b / sigma2)
}

/// `log(sum(exp(v)))` without overflow.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}
