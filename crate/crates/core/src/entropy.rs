//! Numeric kernel: binary entropy, concentration-inequality deviation
//! functions and log-space binomial sums.
//!
//! Every function here is pure. Deviation functions take counts as `f64`
//! because the analytic pipeline feeds them expected (fractional) counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this length the binomial tail switches to the entropy-exponent bound.
pub const EXACT_TAIL_MAX_N: u64 = 10_000;

const INVERSE_TOL: f64 = 1e-12;
const INVERSE_MAX_ITER: usize = 200;

/// A real number validated to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!("probability {value} outside [0, 1]")))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 1 (the vacuous bound).
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Probability(1.0)
        } else {
            Probability(value.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Probability::new(v)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Base-2 logarithm of a nonnegative quantity, with an explicit zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProb {
    pub log2_value: f64,
    pub is_zero: bool,
}

#[allow(clippy::should_implement_trait)]
impl LogProb {
    pub const ZERO: LogProb = LogProb {
        log2_value: f64::NEG_INFINITY,
        is_zero: true,
    };

    pub fn from_log2(log2_value: f64) -> Self {
        if log2_value == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            LogProb {
                log2_value,
                is_zero: false,
            }
        }
    }

    pub fn from_linear(x: f64) -> Self {
        if x <= 0.0 {
            Self::ZERO
        } else {
            Self::from_log2(x.log2())
        }
    }

    /// Linear value; underflows to 0 and overflows to +inf.
    pub fn to_linear(self) -> f64 {
        if self.is_zero {
            0.0
        } else {
            self.log2_value.exp2()
        }
    }

    pub fn mul(self, other: LogProb) -> LogProb {
        if self.is_zero || other.is_zero {
            Self::ZERO
        } else {
            Self::from_log2(self.log2_value + other.log2_value)
        }
    }

    /// log2(2^a + 2^b) without leaving log space.
    pub fn add(self, other: LogProb) -> LogProb {
        match (self.is_zero, other.is_zero) {
            (true, _) => other,
            (_, true) => self,
            _ => {
                let (hi, lo) = if self.log2_value >= other.log2_value {
                    (self.log2_value, other.log2_value)
                } else {
                    (other.log2_value, self.log2_value)
                };
                Self::from_log2(hi + (lo - hi).exp2().ln_1p() / std::f64::consts::LN_2)
            }
        }
    }
}

/// Which route [`binomial_tail_log2`] took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailForm {
    Exact,
    EntropyBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialTail {
    pub value: LogProb,
    pub form: TailForm,
}

/// Shannon entropy of a Bernoulli(p) variable in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("binary entropy argument {p} outside [0, 1]")));
    }
    Ok(h2(p))
}

#[inline]
pub(crate) fn h2(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// The `p` in `[0, 1/2]` with `binary_entropy(p) = y`.
pub fn inverse_binary_entropy(y: f64) -> Result<Probability> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::domain(format!("entropy value {y} outside [0, 1]")));
    }
    if y == 0.0 {
        return Ok(Probability::ZERO);
    }
    if y == 1.0 {
        return Ok(Probability(0.5));
    }
    let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
    for _ in 0..INVERSE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if h2(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < INVERSE_TOL {
            break;
        }
    }
    Ok(Probability(0.5 * (lo + hi)))
}

/// Natural log of the binomial coefficient via log-gamma.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    let (n, k) = (n as f64, k as f64);
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// Exact log2 of `sum_{m=0}^{r} C(n, m)`, summed in log space.
pub fn binomial_tail_log2_exact(n: u64, r: u64) -> Result<LogProb> {
    if r > n {
        return Err(Error::domain(format!("tail index r = {r} exceeds n = {n}")));
    }
    let terms: Vec<f64> = (0..=r).map(|m| ln_binomial(n, m)).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok(LogProb::from_log2((max + sum.ln()) / std::f64::consts::LN_2))
}

/// Upper bound `n * h(r/n)` on log2 of the same sum (`n` once `r > n/2`).
pub fn binomial_tail_log2_bound(n: u64, r: u64) -> Result<LogProb> {
    if r > n {
        return Err(Error::domain(format!("tail index r = {r} exceeds n = {n}")));
    }
    let nf = n as f64;
    let v = if 2 * r <= n { nf * h2(r as f64 / nf) } else { nf };
    Ok(LogProb::from_log2(v))
}

/// log2 of `sum_{m<=r} C(n, m)`: exact up to [`EXACT_TAIL_MAX_N`], the
/// entropy-exponent bound beyond it.
pub fn binomial_tail_log2(n: u64, r: u64) -> Result<BinomialTail> {
    if n <= EXACT_TAIL_MAX_N {
        Ok(BinomialTail {
            value: binomial_tail_log2_exact(n, r)?,
            form: TailForm::Exact,
        })
    } else {
        Ok(BinomialTail {
            value: binomial_tail_log2_bound(n, r)?,
            form: TailForm::EntropyBound,
        })
    }
}

fn check_confidence(name: &str, z: f64) -> Result<()> {
    if z > 0.0 && z <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} confidence {z} outside (0, 1]")))
    }
}

/// Chernoff deviation `g(x, y) = sqrt(2 x ln(1/y))`.
pub fn chernoff_delta(x: f64, y: f64) -> Result<f64> {
    check_confidence("chernoff", y)?;
    if x < 0.0 {
        return Err(Error::domain(format!("chernoff count {x} is negative")));
    }
    Ok((2.0 * x * (1.0 / y).ln()).sqrt())
}

/// Serfling deviation `sqrt((x - y + 1) ln(1/z) / (2 x y))` for drawing `y`
/// items out of a population of `x`.
pub fn serfling_lambda(x: f64, y: f64, z: f64) -> Result<f64> {
    check_confidence("serfling", z)?;
    if !(y >= 1.0 && x >= y) {
        return Err(Error::domain(format!("serfling needs x >= y >= 1, got x = {x}, y = {y}")));
    }
    Ok(((x - y + 1.0) * (1.0 / z).ln() / (2.0 * x * y)).sqrt())
}

/// `sqrt((x + 1) ln(1/z) / (2 y (x + y)))`, the deviation used when moving a
/// rate estimated on `y` samples onto `x` others.
pub fn upsilon(x: f64, y: f64, z: f64) -> Result<f64> {
    check_confidence("upsilon", z)?;
    if !(x >= 0.0 && y >= 1.0) {
        return Err(Error::domain(format!("upsilon needs x >= 0, y >= 1, got x = {x}, y = {y}")));
    }
    Ok(((x + 1.0) * (1.0 / z).ln() / (2.0 * y * (x + y))).sqrt())
}

/// Sampling correction between the test sample of size `r_k` and the kept
/// half of length `n_half`: `sqrt((n_half - r_k + 1) ln(1/eps) / (r_k * 2 n_half))`.
///
/// The denominator carries the full code length `2 * n_half`.
pub fn mu_parameter(n_half: f64, r_k: f64, eps_pe: f64) -> Result<f64> {
    check_confidence("parameter-estimation", eps_pe)?;
    if !(r_k >= 1.0 && n_half >= r_k) {
        return Err(Error::domain(format!(
            "mu needs n_half >= R_k >= 1, got n_half = {n_half}, R_k = {r_k}"
        )));
    }
    let n_k = 2.0 * n_half;
    Ok(((n_half - r_k + 1.0) * (1.0 / eps_pe).ln() / (r_k * n_k)).sqrt())
}

/// Hoeffding tail `exp(-deviation^2 * trials)` clamped to `[0, 1]`.
pub fn hoeffding_tail(deviation: f64, trials: f64) -> Probability {
    Probability::clamped((-deviation * deviation * trials).exp())
}
