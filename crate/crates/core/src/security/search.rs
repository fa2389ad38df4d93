use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_security, KgpBounds, SecurityReport};
use crate::channel::{expected_rates, BellState, DecoySourceConfig, RateTable, SystemProfile};
use crate::decoy::{estimate_yields, true_error_upper_bound, ErrorBudget, PhotonPopulation};
use crate::entropy::Probability;
use crate::error::{Error, Result};

/// Sources and channel of one key generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgpSetup {
    pub alice: DecoySourceConfig,
    pub peer: DecoySourceConfig,
    pub profile: SystemProfile,
}

impl KgpSetup {
    pub fn standard() -> Self {
        KgpSetup {
            alice: DecoySourceConfig::standard(),
            peer: DecoySourceConfig::standard(),
            profile: SystemProfile::standard(),
        }
    }
}

struct Prepared {
    rates: RateTable,
    pop: PhotonPopulation,
}

fn prepare(setup: &KgpSetup) -> Result<Prepared> {
    Ok(Prepared {
        rates: expected_rates(&setup.alice, &setup.peer, &setup.profile)?,
        pop: PhotonPopulation::new(&setup.alice, &setup.peer),
    })
}

fn bounds_from_rates(
    prep: &Prepared,
    n_sig: f64,
    budget: &ErrorBudget,
    r_fraction: f64,
) -> Result<KgpBounds> {
    let counts = prep.rates.expected(n_sig);
    let mut best: Option<KgpBounds> = None;
    let mut first_err = None;
    for k in BellState::ALL {
        let c = counts.bell(k);
        let z = c.signal_z();
        let r_k = (r_fraction * z).ceil();
        let n_half = ((z - r_k) / 2.0).floor();
        if !(r_k >= 1.0 && n_half >= r_k) {
            first_err.get_or_insert(Error::InsufficientData(format!(
                "{}: {z:.1} expected signal events",
                k.label()
            )));
            continue;
        }
        let e_obs = Probability::clamped(c.z_errors[0][0] / z);
        let attempt = true_error_upper_bound(e_obs, n_half, r_k, budget.eps_pe)
            .and_then(|e_bar| Ok((e_bar, estimate_yields(c, &prep.pop, n_half, budget)?)));
        match attempt {
            Ok((e_bar, est)) => {
                let cand = KgpBounds {
                    n_half,
                    n_k0: est.n_k0,
                    n_k1: est.n_k1,
                    e_k1: est.e_k1,
                    e_bar,
                    bell: Some(k),
                };
                if best.is_none_or(|b| cand.e_k1 < b.e_k1) {
                    best = Some(cand);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("an error was recorded"))
}

/// Expected-count version of one key generation after `n_sig` pulses: the
/// Bell state with the smallest phase-error bound is kept.
pub fn analytic_kgp_bounds(
    setup: &KgpSetup,
    n_sig: f64,
    budget: &ErrorBudget,
    r_fraction: f64,
) -> Result<KgpBounds> {
    bounds_from_rates(&prepare(setup)?, n_sig, budget, r_fraction)
}

/// Security report for the key generations in `setups` (Alice-Bob and
/// Alice-Charlie), each sending `n_sig` pulses.
pub fn analytic_report(
    setups: &[KgpSetup],
    n_sig: f64,
    budget: &ErrorBudget,
    zeta: f64,
    r_fraction: f64,
) -> Result<SecurityReport> {
    let preps = setups.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    report_from(&preps, setups, n_sig, budget, zeta, r_fraction)
}

fn report_from(
    preps: &[Prepared],
    setups: &[KgpSetup],
    n_sig: f64,
    budget: &ErrorBudget,
    zeta: f64,
    r_fraction: f64,
) -> Result<SecurityReport> {
    let kgps = preps
        .iter()
        .map(|p| bounds_from_rates(p, n_sig, budget, r_fraction))
        .collect::<Result<Vec<_>>>()?;
    let rate = setups
        .first()
        .ok_or_else(|| Error::domain("no key generation supplied"))?
        .peer
        .pulse_rate;
    Ok(evaluate_security(&kgps, budget, zeta)?.with_pulses(n_sig, rate))
}

/// What "secure at level t" means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SecurityCriterion {
    /// Every bound at most `t`. Budget: ε_PE = g = t/4, estimation ε = t²/100.
    #[default]
    Strict,
    /// Every bound below `10 t`. Budget: ε_PE = g = t, estimation ε = t².
    OrderOf,
}

impl SecurityCriterion {
    pub fn budget(self, t: f64) -> Result<ErrorBudget> {
        match self {
            SecurityCriterion::Strict => {
                if !(t > 0.0 && t < 1.0) {
                    return Err(Error::domain(format!("security target {t} outside (0, 1)")));
                }
                ErrorBudget::uniform(t * t / 100.0, t / 4.0, t / 4.0)
            }
            SecurityCriterion::OrderOf => ErrorBudget::for_target(t),
        }
    }

    pub fn accepts(self, report: &SecurityReport, t: f64) -> bool {
        report.feasible
            && match self {
                SecurityCriterion::Strict => report.worst_bound() <= t,
                SecurityCriterion::OrderOf => report.worst_bound() < 10.0 * t,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub criterion: SecurityCriterion,
    pub r_fraction: f64,
    pub zeta: f64,
    pub n_min: f64,
    pub n_max: f64,
    /// Log-spaced candidates in the initial scan.
    pub scan_points: usize,
    /// Relative width at which bisection stops.
    pub rel_tol: f64,
    /// Per-set expected-count minima used when the target is vacuous.
    pub z_min: [[f64; 3]; 3],
    pub x_min: [[f64; 3]; 3],
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            criterion: SecurityCriterion::Strict,
            r_fraction: 0.055,
            zeta: super::DEFAULT_ZETA,
            n_min: 1e6,
            n_max: 1e17,
            scan_points: 89,
            rel_tol: 1e-3,
            z_min: [[1.0; 3]; 3],
            x_min: [[1.0; 3]; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    #[serde(rename = "N_sig")]
    pub n_sig: f64,
    pub n_k: f64,
    pub t_r_seconds: f64,
    pub report: Option<SecurityReport>,
}

/// Smallest pulse count per key generation for which the analytic pipeline
/// meets `target`. A target of 1 or more only asks for the expected set
/// sizes to reach the configured minima.
pub fn signature_length_search(
    setups: &[KgpSetup],
    target: f64,
    options: &SearchOptions,
) -> Result<SearchResult> {
    if setups.is_empty() {
        return Err(Error::domain("no key generation supplied"));
    }
    let preps = setups.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let rate = setups[0].peer.pulse_rate;

    if target >= 1.0 {
        let mut n = 0.0f64;
        for p in &preps {
            let unit = p.rates.expected(1.0);
            for bc in &unit.per_bell {
                for a in 0..3 {
                    for b in 0..3 {
                        for (prob, min) in [(bc.z_count[a][b], options.z_min[a][b]), (bc.x_count[a][b], options.x_min[a][b])] {
                            if min <= 0.0 {
                                continue;
                            }
                            if prob <= 0.0 {
                                return Err(Error::ProtocolInfeasible(
                                    "a required set has zero probability".into(),
                                ));
                            }
                            n = n.max((min / prob).ceil());
                        }
                    }
                }
            }
        }
        let report = report_from(&preps, setups, n, &ErrorBudget::standard(), options.zeta, options.r_fraction).ok();
        return Ok(SearchResult {
            n_sig: n,
            n_k: report.as_ref().map_or(0.0, |r| r.n_k),
            t_r_seconds: n / rate,
            report,
        });
    }

    let budget = options.criterion.budget(target)?;
    let eval = |n: f64| -> Option<SecurityReport> {
        report_from(&preps, setups, n, &budget, options.zeta, options.r_fraction)
            .ok()
            .filter(|r| options.criterion.accepts(r, target))
    };
    let asymptotic = report_from(&preps, setups, options.n_max, &budget, options.zeta, options.r_fraction);
    match asymptotic {
        Ok(r) if r.feasible => {}
        Ok(_) => {
            return Err(Error::ProtocolInfeasible(
                "error bound exceeds the adversary floor even at the largest budget".into(),
            ))
        }
        Err(e) => return Err(e),
    }

    let pts = options.scan_points.max(2);
    let (lo, hi) = (options.n_min.ln(), options.n_max.ln());
    let grid: Vec<f64> = (0..pts)
        .map(|i| (lo + (hi - lo) * i as f64 / (pts - 1) as f64).exp())
        .collect();
    let pass: Vec<bool> = grid.par_iter().map(|&n| eval(n).is_some()).collect();
    let Some(first) = pass.iter().position(|&p| p) else {
        return Err(Error::ProtocolInfeasible(format!(
            "target {target:e} not met below {:.3e} pulses",
            options.n_max
        )));
    };
    let (mut a, mut b) = if first == 0 {
        (grid[0], grid[0])
    } else {
        (grid[first - 1], grid[first])
    };
    while b / a - 1.0 > options.rel_tol {
        let mid = (a * b).sqrt();
        if eval(mid).is_some() {
            b = mid;
        } else {
            a = mid;
        }
    }
    let n_sig = b.ceil();
    let report = eval(n_sig).or_else(|| eval(b));
    Ok(SearchResult {
        n_sig,
        n_k: report.as_ref().map_or(0.0, |r| r.n_k),
        t_r_seconds: n_sig / rate,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_setup_yields_a_report() {
        let r = analytic_report(&[KgpSetup::standard()], 5.58e12, &ErrorBudget::standard(), 1.16, 0.055).unwrap();
        assert!(r.n_k > 1e6, "{}", r.n_k);
        assert!(r.e_bar.value() > 0.01 && r.e_bar.value() < 0.05, "{:?}", r.e_bar);
        assert_eq!(r.t_r_seconds, Some(5580.0));
    }

    #[test]
    fn vacuous_target_returns_minimal_session() {
        let res = signature_length_search(&[KgpSetup::standard()], 1.0, &SearchOptions::default()).unwrap();
        let rates = expected_rates(&DecoySourceConfig::standard(), &DecoySourceConfig::standard(), &SystemProfile::standard()).unwrap();
        let counts = rates.expected(res.n_sig);
        let min_set = counts
            .per_bell
            .iter()
            .flat_map(|b| b.z_count.iter().chain(b.x_count.iter()).flatten().copied().collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min);
        assert!(min_set >= 1.0 - 1e-9);
        let fewer = rates.expected(res.n_sig * 0.99);
        let min_fewer = fewer
            .per_bell
            .iter()
            .flat_map(|b| b.z_count.iter().chain(b.x_count.iter()).flatten().copied().collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min);
        assert!(min_fewer < 1.0);
    }

    #[test]
    fn search_meets_target_and_is_minimal_on_grid() {
        let mut setup = KgpSetup::standard();
        setup.profile.detector_efficiency = Probability::clamped(0.93);
        setup.profile.dark_count_prob = Probability::clamped(1e-6);
        let opts = SearchOptions {
            criterion: SecurityCriterion::OrderOf,
            scan_points: 40,
            rel_tol: 1e-2,
            ..SearchOptions::default()
        };
        let res = signature_length_search(&[setup], 1e-5, &opts).unwrap();
        let r = res.report.unwrap();
        assert!(r.worst_bound() < 1e-4);
        let budget = SecurityCriterion::OrderOf.budget(1e-5).unwrap();
        let below = analytic_report(&[setup], res.n_sig * 0.9, &budget, 1.16, 0.055);
        assert!(below.map_or(true, |r| !SecurityCriterion::OrderOf.accepts(&r, 1e-5)));
    }
}
