//! From decoy estimates to protocol security: min-entropy, the adversary's
//! error floor, thresholds, the abort/repudiation/forging bounds and the
//! MDI-QKD key-length comparison.

mod search;

use serde::{Deserialize, Serialize};

use crate::channel::BellState;
use crate::decoy::ErrorBudget;
use crate::entropy::{
    binomial_tail_log2_bound, binomial_tail_log2_exact, h2,
    inverse_binary_entropy, LogProb, Probability, TailForm, EXACT_TAIL_MAX_N,
};
use crate::error::{Error, Result};

pub use search::{
    analytic_kgp_bounds, analytic_report, signature_length_search, KgpSetup, SearchOptions,
    SearchResult, SecurityCriterion,
};

pub const DEFAULT_ZETA: f64 = 1.16;

/// `h(min(e, 1/2))`: an error-rate bound at or above one half carries no
/// information.
fn phase_entropy(e: Probability) -> f64 {
    h2(e.value().min(0.5))
}

/// `n_k0 + n_k1 (1 - h(e_k1)) - 2 log2(2/(ε' ε̂))`.
pub fn min_entropy_bound(
    n_k0: f64,
    n_k1: f64,
    e_k1: Probability,
    eps_prime: Probability,
    eps_hat: Probability,
) -> f64 {
    min_entropy_approx(n_k0, n_k1, e_k1) - min_entropy_penalty(eps_prime, eps_hat)
}

/// The same bound without the smoothing penalty.
pub fn min_entropy_approx(n_k0: f64, n_k1: f64, e_k1: Probability) -> f64 {
    n_k0 + n_k1 * (1.0 - phase_entropy(e_k1))
}

pub fn min_entropy_penalty(eps_prime: Probability, eps_hat: Probability) -> f64 {
    2.0 * (2.0 / (eps_prime.value() * eps_hat.value())).log2()
}

/// Bound on a forger guessing the kept half with at most `r` mistakes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgingTail {
    /// Markov level `g` on the average success probability.
    pub p_r_bound: Probability,
    #[serde(rename = "p_F")]
    pub p_f: Probability,
    /// Unclamped `log2 p_F`.
    pub log2_p_f: f64,
    pub form: TailForm,
}

/// `p_F = (1/g) (Σ_{m≤r} C(n_k/2, m) 2^{-H_min} + ε_k)`, in log space. Up to
/// `n_k = 10^4` the sum is exact, beyond that `2^{(n_k/2) h(2r/n_k)}` bounds it.
pub fn forging_tail(
    n_k: u64,
    r: u64,
    h_min: f64,
    eps_k: Probability,
    g: Probability,
) -> Result<ForgingTail> {
    let n_half = n_k / 2;
    if r > n_half {
        return Err(Error::domain(format!("r = {r} exceeds n_k/2 = {n_half}")));
    }
    if g.value() <= 0.0 {
        return Err(Error::domain("g must be positive"));
    }
    let (tail, form) = if n_k <= EXACT_TAIL_MAX_N {
        (binomial_tail_log2_exact(n_half, r)?, TailForm::Exact)
    } else {
        (binomial_tail_log2_bound(n_half, r)?, TailForm::EntropyBound)
    };
    Ok(forging_from_tail(tail, form, h_min, eps_k, g))
}

fn forging_from_tail(
    tail: LogProb,
    form: TailForm,
    h_min: f64,
    eps_k: Probability,
    g: Probability,
) -> ForgingTail {
    let guess = tail.mul(LogProb::from_log2(-h_min));
    let total = guess.add(LogProb::from_linear(eps_k.value()));
    let log2_p_f = if total.is_zero {
        f64::NEG_INFINITY
    } else {
        total.log2_value - g.value().log2()
    };
    ForgingTail {
        p_r_bound: g,
        p_f: Probability::clamped(log2_p_f.exp2()),
        log2_p_f,
        form,
    }
}

/// Adversary error floor `h^{-1}(c_k0 + c_k1 (1 - h(e_k1)))` on `[0, 1/2]`.
/// The flag reports whether the entropy argument had to be clamped into `[0, 1]`.
pub fn solve_p_e(c_k0: f64, c_k1: f64, e_k1: Probability) -> (Probability, bool) {
    let arg = c_k0 + c_k1 * (1.0 - phase_entropy(e_k1));
    let clamped = arg.clamp(0.0, 1.0);
    let p = inverse_binary_entropy(clamped).unwrap_or(Probability::ZERO);
    (p, clamped != arg)
}

/// Splits `(Ē, p_E)` into thirds: `(s_a, s_v)`.
pub fn choose_thresholds(e_bar: Probability, p_e: Probability) -> Result<(Probability, Probability)> {
    let gap = p_e.value() - e_bar.value();
    if !(gap > 1e-12) {
        return Err(Error::ProtocolInfeasible(format!(
            "error bound {:.6} does not lie below the adversary floor {:.6}",
            e_bar.value(),
            p_e.value()
        )));
    }
    Ok((
        Probability::clamped(e_bar.value() + gap / 3.0),
        Probability::clamped(e_bar.value() + 2.0 * gap / 3.0),
    ))
}

/// `2 ε_PE`.
pub fn honest_abort_bound(eps_pe: Probability) -> Probability {
    Probability::clamped(2.0 * eps_pe.value())
}

/// `2 exp(-(s_v - s_a)² n_k / 4)` as `(clamped, log2 of the raw value)`.
pub fn repudiation_bound(s_a: Probability, s_v: Probability, n_k: f64) -> (Probability, f64) {
    let d = s_v.value() - s_a.value();
    let log2 = 1.0 - d * d * n_k / 4.0 / std::f64::consts::LN_2;
    (Probability::clamped(log2.exp2()), log2)
}

/// `p_F + g + ε_PE + ε_k0 + ε_k1 + ε_ke`.
pub fn forge_bound(p_f: Probability, budget: &ErrorBudget) -> Probability {
    Probability::clamped(
        p_f.value()
            + budget.g.value()
            + budget.eps_pe.value()
            + budget.eps_k0()
            + budget.eps_k1()
            + budget.eps_ke(),
    )
}

/// Secret-key length comparison, both on the sifted length `n_k/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyLength {
    pub l_k_full: f64,
    pub l_k_asymptotic: f64,
    pub feasible: bool,
}

/// Correctness and privacy-amplification failure levels of the key-length
/// formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QkdEpsilons {
    pub eps_cor: Probability,
    pub eps_pa: Probability,
}

impl Default for QkdEpsilons {
    fn default() -> Self {
        QkdEpsilons {
            eps_cor: Probability::clamped(1e-10),
            eps_pa: Probability::clamped(1e-10),
        }
    }
}

/// MDI-QKD key length for code length `n_k`, with `c_k0`, `c_k1` in the
/// signature convention `2 n_{k,i} / n_k` and `leak_EC = (n_k/2) ζ h(Ē)`.
#[allow(clippy::too_many_arguments)]
pub fn mdi_qkd_key_length(
    n_k: f64,
    c_k0: f64,
    c_k1: f64,
    e_k1: Probability,
    e_bar: Probability,
    zeta: f64,
    budget: &ErrorBudget,
    qkd: &QkdEpsilons,
) -> Result<KeyLength> {
    if !(1.1..=1.2).contains(&zeta) {
        return Err(Error::domain(format!("leakage parameter {zeta} outside [1.1, 1.2]")));
    }
    let n_half = n_k / 2.0;
    let asymptotic = n_half * (c_k0 + c_k1 * (1.0 - phase_entropy(e_k1)) - zeta * phase_entropy(e_bar));
    let full = asymptotic
        - (8.0 / qkd.eps_cor.value()).log2()
        - min_entropy_penalty(budget.eps_k_prime, budget.eps_k_hat)
        - 2.0 * (1.0 / (2.0 * qkd.eps_pa.value())).log2();
    Ok(KeyLength {
        l_k_full: full,
        l_k_asymptotic: asymptotic,
        feasible: full > 0.0,
    })
}

/// Bounds coming out of one key generation (Alice with Bob, or with Charlie).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgpBounds {
    /// Kept half-length `n_k/2`.
    pub n_half: f64,
    pub n_k0: f64,
    pub n_k1: f64,
    pub e_k1: Probability,
    #[serde(rename = "E_bar")]
    pub e_bar: Probability,
    /// Bell state whose code string was selected, when known.
    pub bell: Option<BellState>,
}

impl KgpBounds {
    /// `c_{k,i} = 2 n_{k,i} / n_k`.
    pub fn c_rates(&self) -> (f64, f64) {
        (self.n_k0 / self.n_half, self.n_k1 / self.n_half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub h_min: f64,
    pub h_min_approx: f64,
    pub c_k0: f64,
    pub c_k1: f64,
    /// `n_{k,i} / n_k`, the key-rate convention.
    pub c_k0_qkd: f64,
    pub c_k1_qkd: f64,
    pub e_k1: Probability,
    #[serde(rename = "p_E")]
    pub p_e: Probability,
    pub p_e_clamped: bool,
    #[serde(rename = "E_bar")]
    pub e_bar: Probability,
    pub s_a: Probability,
    pub s_v: Probability,
    pub pr_honest_abort: Probability,
    pub pr_repudiation: Probability,
    pub pr_forge: Probability,
    #[serde(rename = "p_F")]
    pub p_f: Probability,
    pub log2_pr_repudiation: f64,
    pub log2_p_f: f64,
    pub tail_form: TailForm,
    /// `c_k0 + c_k1 (1 - h(e_k1)) - h(Ē) > 0`.
    pub feasible: bool,
    pub l_k: f64,
    pub l_k_asymptotic: f64,
    pub zeta: f64,
    pub n_k: f64,
    #[serde(rename = "N_sig", skip_serializing_if = "Option::is_none", default)]
    pub n_sig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t_r_seconds: Option<f64>,
    pub bell: Option<BellState>,
    /// Smoothing budget under the appendix decomposition
    /// `ϵ' + 2ϵ'' + ϵ̂ + 2ϵ̂' + ϵ̂''` with every term at `eps_k_prime`/`eps_k_hat`.
    pub eps_k_appendix: f64,
    /// Main-text composition `ε' + ε̂`.
    pub eps_k_main: f64,
}

impl SecurityReport {
    pub fn with_pulses(mut self, n_sig: f64, pulse_rate: f64) -> Self {
        self.n_sig = Some(n_sig);
        self.t_r_seconds = Some(n_sig / pulse_rate);
        self
    }

    /// Largest of the three protocol failure probabilities.
    pub fn worst_bound(&self) -> f64 {
        self.pr_honest_abort
            .value()
            .max(self.pr_repudiation.value())
            .max(self.pr_forge.value())
    }
}

/// Full report for one or two key generations, aggregated as Ē = max,
/// p_E = min and H_min = min.
pub fn evaluate_security(
    kgps: &[KgpBounds],
    budget: &ErrorBudget,
    zeta: f64,
) -> Result<SecurityReport> {
    if kgps.is_empty() {
        return Err(Error::domain("no key generation supplied"));
    }
    budget.validate()?;
    let n_half = kgps.iter().map(|k| k.n_half).fold(f64::INFINITY, f64::min).floor();
    if !(n_half >= 1.0) {
        return Err(Error::Degenerate("empty code string".into()));
    }
    let n_k = 2.0 * n_half;
    // The KGP with the smallest min-entropy is the forging target.
    let weakest = kgps
        .iter()
        .min_by(|a, b| {
            let ha = min_entropy_approx(a.n_k0, a.n_k1, a.e_k1);
            let hb = min_entropy_approx(b.n_k0, b.n_k1, b.e_k1);
            ha.total_cmp(&hb)
        })
        .expect("nonempty");
    let h_min = min_entropy_bound(weakest.n_k0, weakest.n_k1, weakest.e_k1, budget.eps_k_prime, budget.eps_k_hat);
    let h_min_approx = min_entropy_approx(weakest.n_k0, weakest.n_k1, weakest.e_k1);
    let e_bar = kgps.iter().map(|k| k.e_bar).fold(Probability::ZERO, |a, b| if b > a { b } else { a });
    let mut p_e = Probability::ONE;
    let mut p_e_clamped = false;
    for k in kgps {
        let (c0, c1) = k.c_rates();
        let (p, cl) = solve_p_e(c0, c1, k.e_k1);
        if p < p_e {
            p_e = p;
        }
        p_e_clamped |= cl;
    }
    let (c_k0, c_k1) = weakest.c_rates();
    let margin = c_k0 + c_k1 * (1.0 - phase_entropy(weakest.e_k1)) - phase_entropy(e_bar);
    let key = mdi_qkd_key_length(n_k, c_k0, c_k1, weakest.e_k1, e_bar, zeta, budget, &QkdEpsilons::default())?;

    let base = SecurityReport {
        h_min,
        h_min_approx,
        c_k0,
        c_k1,
        c_k0_qkd: c_k0 / 2.0,
        c_k1_qkd: c_k1 / 2.0,
        e_k1: weakest.e_k1,
        p_e,
        p_e_clamped,
        e_bar,
        s_a: e_bar,
        s_v: e_bar,
        pr_honest_abort: honest_abort_bound(budget.eps_pe),
        pr_repudiation: Probability::ONE,
        pr_forge: Probability::ONE,
        p_f: Probability::ONE,
        log2_pr_repudiation: 0.0,
        log2_p_f: 0.0,
        tail_form: TailForm::EntropyBound,
        feasible: false,
        l_k: key.l_k_full,
        l_k_asymptotic: key.l_k_asymptotic,
        zeta,
        n_k,
        n_sig: None,
        t_r_seconds: None,
        bell: weakest.bell,
        eps_k_appendix: 3.0 * budget.eps_k_prime.value() + 4.0 * budget.eps_k_hat.value(),
        eps_k_main: budget.eps_k_prime.value() + budget.eps_k_hat.value(),
    };
    let Ok((s_a, s_v)) = choose_thresholds(e_bar, p_e) else {
        return Ok(base);
    };
    let (pr_rep, log2_rep) = repudiation_bound(s_a, s_v, n_k);
    // Charlie accepts below s_v n_k/2 mismatches: at most r = ⌈s_v n_half⌉ - 1.
    let threshold = (s_v.value() * n_half).ceil();
    let forging = if threshold < 1.0 {
        forging_from_tail(LogProb::ZERO, TailForm::Exact, h_min, budget.eps_k, budget.g)
    } else {
        forging_tail(n_k as u64, threshold as u64 - 1, h_min, budget.eps_k, budget.g)?
    };
    Ok(SecurityReport {
        s_a,
        s_v,
        pr_repudiation: pr_rep,
        log2_pr_repudiation: log2_rep,
        p_f: forging.p_f,
        log2_p_f: forging.log2_p_f,
        tail_form: forging.form,
        pr_forge: forge_bound(forging.p_f, budget),
        feasible: margin > 0.0,
        ..base
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use num_traits::{One, ToPrimitive, Zero};

    fn p(x: f64) -> Probability {
        Probability::new(x).unwrap()
    }

    #[test]
    fn min_entropy_examples() {
        let e = p(1e-10);
        let pen = 2.0 * (2.0f64 / 1e-20).log2();
        assert!((min_entropy_bound(0.0, 0.0, p(0.1), e, e) + pen).abs() < 1e-9);
        assert_eq!(min_entropy_approx(10.0, 20.0, Probability::ZERO), 30.0);
        let full = min_entropy_bound(1e5, 3e5, p(0.03), e, e);
        let approx = min_entropy_approx(1e5, 3e5, p(0.03));
        assert!((approx - full - pen).abs() < 1e-6);
    }

    #[test]
    fn p_e_examples() {
        let (pe, _) = solve_p_e(0.1954, 0.0, Probability::ZERO);
        assert!((pe.value() - 0.0302).abs() < 2e-4, "{pe:?}");
        assert!((solve_p_e(1.0, 0.0, Probability::ZERO).0.value() - 0.5).abs() < 1e-12);
        assert_eq!(solve_p_e(0.0, 0.0, Probability::ZERO).0.value(), 0.0);
        assert!(solve_p_e(0.9, 0.9, Probability::ZERO).1);
    }

    #[test]
    fn threshold_examples() {
        let (sa, sv) = choose_thresholds(p(0.0239), p(0.0302)).unwrap();
        assert!((sa.value() - 0.0260).abs() < 5e-5 && (sv.value() - 0.0281).abs() < 5e-5);
        let (sa, sv) = choose_thresholds(p(0.0), p(0.3)).unwrap();
        assert!((sa.value() - 0.1).abs() < 1e-15 && (sv.value() - 0.2).abs() < 1e-15);
        assert!(choose_thresholds(p(0.1), p(0.1)).is_err());
        assert!(choose_thresholds(p(0.1 - 1e-14), p(0.1)).is_err());
    }

    #[test]
    fn abort_repudiation_forge_examples() {
        assert_eq!(honest_abort_bound(p(1e-5)).value(), 2e-5);
        let (r, l) = repudiation_bound(p(0.1), p(0.1), 1e6);
        assert_eq!(r.value(), 1.0);
        assert!((l - 1.0).abs() < 1e-15);
        let f = forging_tail(8_900_000, 100, 1e6, p(1e-10), p(1e-5)).unwrap();
        assert!((f.p_f.value() - 1e-5).abs() < 1e-12);
        assert!(forging_tail(100, 51, 10.0, p(1e-10), p(1e-5)).is_err());
    }

    #[test]
    fn forging_tail_small_case_matches_big_integers() {
        // n_k = 20, r = 3, H_min = 10: sum_{m<=3} C(10, m) 2^-10.
        let f = forging_tail(20, 3, 10.0, p(1e-10), p(1e-5)).unwrap();
        let mut sum = BigUint::zero();
        let mut c = BigUint::one();
        for m in 0..=3u32 {
            if m > 0 {
                c = c * BigUint::from(10 - m + 1) / BigUint::from(m);
            }
            sum += &c;
        }
        let want = (sum.to_f64().unwrap() / 1024.0 + 1e-10) / 1e-5;
        assert_eq!(f.form, TailForm::Exact);
        assert!((f.log2_p_f - want.log2()).abs() < 1e-9);
    }

    #[test]
    fn tail_forms_agree_near_crossover() {
        for n_k in [1_000u64, 4_000, 10_000] {
            let n_half = n_k / 2;
            let r = n_half / 20;
            let exact = binomial_tail_log2_exact(n_half, r).unwrap().log2_value;
            let bound = binomial_tail_log2_bound(n_half, r).unwrap().log2_value;
            assert!(bound >= exact && bound <= 2.0 * exact, "{n_k}: {exact} {bound}");
        }
    }

    #[test]
    fn key_length_examples() {
        let b = ErrorBudget::standard();
        let k = mdi_qkd_key_length(1e6, 1.0, 0.0, Probability::ZERO, Probability::ZERO, 1.16, &b, &QkdEpsilons::default()).unwrap();
        assert_eq!(k.l_k_asymptotic, 5e5);
        let lo = mdi_qkd_key_length(1e6, 0.2, 0.1, p(0.02), p(0.02), 1.2, &b, &QkdEpsilons::default()).unwrap();
        let hi = mdi_qkd_key_length(1e6, 0.2, 0.1, p(0.02), p(0.02), 1.1, &b, &QkdEpsilons::default()).unwrap();
        assert!(lo.l_k_full < hi.l_k_full);
        assert!(mdi_qkd_key_length(1e6, 0.2, 0.1, p(0.02), p(0.02), 1.3, &b, &QkdEpsilons::default()).is_err());
    }

    fn worked_kgp() -> KgpBounds {
        // c_k1 recovered from H_min = 8.69e5 over n_k/2 = 4.45e6.
        KgpBounds {
            n_half: 4.45e6,
            n_k0: 0.0,
            n_k1: 8.69e5,
            e_k1: Probability::ZERO,
            e_bar: true_e_bar(),
            bell: None,
        }
    }

    fn true_e_bar() -> Probability {
        crate::decoy::true_error_upper_bound(p(0.0207), 4.45e6, 5.18e5, p(1e-5)).unwrap()
    }

    #[test]
    fn worked_example_replay() {
        let r = evaluate_security(&[worked_kgp(), worked_kgp()], &ErrorBudget::standard(), DEFAULT_ZETA).unwrap();
        assert!(r.feasible);
        assert!((r.e_bar.value() - 0.0239).abs() < 5e-4);
        assert!((r.h_min - 8.69e5).abs() < 0.02 * 8.69e5);
        assert!((r.p_e.value() - 0.0302).abs() < 5e-4);
        assert!((r.s_a.value() - 0.0260).abs() < 5e-4);
        assert!((r.s_v.value() - 0.0281).abs() < 5e-4);
        assert_eq!(r.pr_honest_abort.value(), 2e-5);
        assert!((r.pr_forge.value() - 3e-5).abs() < 1e-6, "{}", r.pr_forge.value());
        let rep = r.pr_repudiation.value();
        assert!(rep > 9.857e-5 / 2.0 && rep < 9.857e-5 * 2.0, "{rep}");
        assert!(r.e_bar < r.s_a && r.s_a < r.s_v && r.s_v < r.p_e);
    }

    #[test]
    fn bounds_shrink_with_code_length() {
        let mut last = (1.0, 1.0);
        for scale in [0.5, 1.0, 2.0, 4.0] {
            let mut k = worked_kgp();
            k.n_half *= scale;
            k.n_k1 *= scale;
            let r = evaluate_security(&[k], &ErrorBudget::standard(), DEFAULT_ZETA).unwrap();
            assert!(r.pr_repudiation.value() <= last.0 && r.pr_forge.value() <= last.1);
            last = (r.pr_repudiation.value(), r.pr_forge.value());
        }
    }

    #[test]
    fn infeasible_channel_reports_vacuous_bounds() {
        let mut k = worked_kgp();
        k.e_bar = p(0.2);
        let r = evaluate_security(&[k], &ErrorBudget::standard(), DEFAULT_ZETA).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.pr_forge.value(), 1.0);
    }

    #[test]
    fn report_json_field_names() {
        let r = evaluate_security(&[worked_kgp()], &ErrorBudget::standard(), DEFAULT_ZETA)
            .unwrap()
            .with_pulses(5.58e12, 1e9);
        let v = serde_json::to_value(&r).unwrap();
        for key in ["h_min", "c_k0", "c_k1", "p_E", "E_bar", "s_a", "s_v", "pr_honest_abort", "pr_repudiation", "pr_forge", "p_F", "feasible", "l_k", "zeta", "n_k", "N_sig", "t_r_seconds"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(r.t_r_seconds, Some(5580.0));
    }
}
