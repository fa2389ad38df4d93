use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lp::{solve, Constraint, LinearProgram, Sense};
use super::ErrorBudget;
use crate::channel::{BellCounts, DecoySourceConfig, PhotonTable, SiftedEvent, N_CUT};
use crate::entropy::{chernoff_delta, mu_parameter, serfling_lambda, upsilon, Probability};
use crate::error::{Error, Result};

const DIM: usize = N_CUT + 1;
const N_VARS: usize = DIM * DIM;
/// Conditional probabilities below this are treated as exact zeros.
const COEFF_FLOOR: f64 = 1e-15;

#[inline]
fn var(n: usize, m: usize) -> usize {
    n * DIM + m
}

/// Bayes conditionals `p_{a,b|nm}`: the probability that the intensity pair
/// was `(a, b)` given that Alice sent `n` and the peer `m` photons.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonPopulation {
    cond: [[Vec<f64>; 3]; 3],
}

impl PhotonPopulation {
    pub fn new(alice: &DecoySourceConfig, peer: &DecoySourceConfig) -> Self {
        let pa = alice.intensity_probs.as_array();
        let pb = peer.intensity_probs.as_array();
        let ta: Vec<PhotonTable> = alice.intensities.as_array().iter().map(|&x| PhotonTable::new(x)).collect();
        let tb: Vec<PhotonTable> = peer.intensities.as_array().iter().map(|&x| PhotonTable::new(x)).collect();
        let mut cond: [[Vec<f64>; 3]; 3] = Default::default();
        for row in cond.iter_mut() {
            for c in row.iter_mut() {
                *c = vec![0.0; N_VARS];
            }
        }
        for n in 0..DIM {
            for m in 0..DIM {
                let mut joint = [[0.0; 3]; 3];
                let mut total = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        joint[a][b] = pa[a] * pb[b] * ta[a].pmf()[n] * tb[b].pmf()[m];
                        total += joint[a][b];
                    }
                }
                if total <= 0.0 {
                    continue;
                }
                for a in 0..3 {
                    for b in 0..3 {
                        let p = joint[a][b] / total;
                        cond[a][b][var(n, m)] = if p < COEFF_FLOOR { 0.0 } else { p };
                    }
                }
            }
        }
        PhotonPopulation { cond }
    }

    /// `p_{a,b|nm}` with `a`, `b` as intensity indices.
    pub fn conditional(&self, a: usize, b: usize, n: usize, m: usize) -> f64 {
        self.cond[a][b][var(n, m)]
    }

    fn row(&self, a: usize, b: usize) -> &[f64] {
        &self.cond[a][b]
    }
}

/// Deviation interval `[-Δ, Δ̂]` for one observed set size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffInterval {
    pub delta: f64,
    pub delta_hat: f64,
}

pub fn chernoff_interval(observed: f64, budget: &ErrorBudget) -> Result<ChernoffInterval> {
    if observed < 0.0 {
        return Err(Error::domain(format!("observed count {observed} is negative")));
    }
    let eps = budget.eps_ab.value();
    let eps_hat = budget.eps_ab_hat.value();
    Ok(ChernoffInterval {
        delta: chernoff_delta(observed, eps.powi(4) / 16.0)?,
        delta_hat: chernoff_delta(observed, eps_hat.powf(1.5))?,
    })
}

/// `μ_{k,L}^{a,b} = |Z^{a,b}| - sqrt(Σ|Z| / 2 · ln(1/ϵ))` for every pair.
pub fn validity_mu(sets: &[[f64; 3]; 3], budget: &ErrorBudget) -> [[f64; 3]; 3] {
    let total: f64 = sets.iter().flatten().sum();
    let shift = (total / 2.0 * (1.0 / budget.eps_ab_mu.value()).ln()).sqrt();
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            out[a][b] = sets[a][b] - shift;
        }
    }
    out
}

/// Both preconditions of the multiplicative Chernoff statement, in log form:
/// `ln(2/ε)/μ ≤ (3/(4√2))²` and `ln(1/ε̂)/μ ≤ 1/3`.
pub fn check_validity(mu_kl: f64, budget: &ErrorBudget) -> bool {
    if !(mu_kl > 0.0) {
        return false;
    }
    let first = (2.0 / budget.eps_ab.value()).ln() / mu_kl <= 9.0 / 32.0;
    let second = (1.0 / budget.eps_ab_hat.value()).ln() / mu_kl <= 1.0 / 3.0;
    first && second
}

/// Interval constraints on the photon-number population of one basis.
/// Pairs failing the validity check contribute no constraint and are listed.
fn population_constraints(
    pop: &PhotonPopulation,
    sets: &[[f64; 3]; 3],
    budget: &ErrorBudget,
) -> Result<(Vec<Constraint>, Vec<[usize; 2]>)> {
    let mu = validity_mu(sets, budget);
    let mut cons = Vec::with_capacity(18);
    let mut dropped = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            if !check_validity(mu[a][b], budget) {
                dropped.push([a, b]);
                continue;
            }
            let iv = chernoff_interval(sets[a][b], budget)?;
            let coeffs = pop.row(a, b).to_vec();
            cons.push(Constraint {
                coeffs: coeffs.clone(),
                sense: Sense::Ge,
                rhs: sets[a][b] - iv.delta_hat,
            });
            cons.push(Constraint {
                coeffs,
                sense: Sense::Le,
                rhs: sets[a][b] + iv.delta,
            });
        }
    }
    Ok((cons, dropped))
}

/// Optimum of a decoy program together with the optimizing population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyBound {
    /// Bound after the final Chernoff correction, clamped at zero.
    pub value: f64,
    /// LP optimum before the correction.
    pub objective: f64,
    /// Optimizer `S_{nm}`, row-major in `(n, m)`.
    pub population: Vec<f64>,
    /// Intensity pairs whose constraint was dropped by the validity check.
    pub dropped_pairs: Vec<[usize; 2]>,
}

fn optimize(
    objective: Vec<f64>,
    maximize: bool,
    constraints: Vec<Constraint>,
) -> Result<(f64, Vec<f64>)> {
    if constraints.is_empty() {
        if maximize {
            return Err(Error::Degenerate("no valid decoy constraint to bound the maximum".into()));
        }
        // Nonnegative objective over the open orthant.
        return Ok((0.0, vec![0.0; N_VARS]));
    }
    let lp = LinearProgram {
        objective,
        maximize,
        constraints,
    };
    let s = solve(&lp)?;
    Ok((s.objective.max(0.0), s.x))
}

fn lower_bound(
    counts: &BellCounts,
    pop: &PhotonPopulation,
    budget: &ErrorBudget,
    objective: Vec<f64>,
    eps_final: f64,
) -> Result<DecoyBound> {
    let (cons, dropped) = population_constraints(pop, &counts.z_count, budget)?;
    let (obj, x) = optimize(objective, false, cons)?;
    let value = (obj - chernoff_delta(obj, eps_final)?).max(0.0);
    Ok(DecoyBound {
        value,
        objective: obj,
        population: x,
        dropped_pairs: dropped,
    })
}

/// Lower bound on the signal-signal Z events in which the peer sent vacuum.
pub fn lower_bound_m_k0(
    counts: &BellCounts,
    pop: &PhotonPopulation,
    budget: &ErrorBudget,
) -> Result<DecoyBound> {
    let mut objective = vec![0.0; N_VARS];
    for n in 0..DIM {
        objective[var(n, 0)] = pop.conditional(0, 0, n, 0);
    }
    lower_bound(counts, pop, budget, objective, budget.eps_0.value())
}

/// Lower bound on the signal-signal Z events with one photon from each side.
pub fn lower_bound_m_k1(
    counts: &BellCounts,
    pop: &PhotonPopulation,
    budget: &ErrorBudget,
) -> Result<DecoyBound> {
    let mut objective = vec![0.0; N_VARS];
    objective[var(1, 1)] = pop.conditional(0, 0, 1, 1);
    lower_bound(counts, pop, budget, objective, budget.eps_1.value())
}

/// X-basis single-photon population bounds: a lower bound `n̄` on the
/// number of such events and an upper bound `ē` on their errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XBasisAux {
    pub n_bar_k1: f64,
    pub e_bar_k1: f64,
}

pub fn x_basis_aux(
    counts: &BellCounts,
    pop: &PhotonPopulation,
    budget: &ErrorBudget,
) -> Result<XBasisAux> {
    let mut objective = vec![0.0; N_VARS];
    objective[var(1, 1)] = 1.0;
    let (cons, _) = population_constraints(pop, &counts.x_count, budget)?;
    let (n_bar, _) = optimize(objective.clone(), false, cons)?;
    let e_bar = max_single_photon_errors(counts, pop, budget)?;
    Ok(XBasisAux {
        n_bar_k1: n_bar,
        e_bar_k1: e_bar,
    })
}

/// Joint program over yields `S` and error yields `T`: both satisfy their
/// decoy intervals, `T ≤ S`, and events with a vacuum on either side err
/// with probability exactly one half.
fn max_single_photon_errors(
    counts: &BellCounts,
    pop: &PhotonPopulation,
    budget: &ErrorBudget,
) -> Result<f64> {
    let (s_cons, _) = population_constraints(pop, &counts.x_count, budget)?;
    let (t_cons, _) = population_constraints(pop, &counts.x_errors, budget)?;
    if t_cons.is_empty() {
        return Err(Error::Degenerate("no valid decoy constraint to bound the maximum".into()));
    }
    let widen = |c: Constraint, offset: usize| {
        let mut coeffs = vec![0.0; 2 * N_VARS];
        coeffs[offset..offset + N_VARS].copy_from_slice(&c.coeffs);
        Constraint { coeffs, ..c }
    };
    let mut cons: Vec<Constraint> = s_cons.into_iter().map(|c| widen(c, 0)).collect();
    cons.extend(t_cons.into_iter().map(|c| widen(c, N_VARS)));
    for n in 0..DIM {
        for m in 0..DIM {
            let mut coeffs = vec![0.0; 2 * N_VARS];
            coeffs[N_VARS + var(n, m)] = 1.0;
            if n == 0 || m == 0 {
                coeffs[var(n, m)] = -0.5;
                cons.push(Constraint { coeffs, sense: Sense::Eq, rhs: 0.0 });
            } else {
                coeffs[var(n, m)] = -1.0;
                cons.push(Constraint { coeffs, sense: Sense::Le, rhs: 0.0 });
            }
        }
    }
    let mut objective = vec![0.0; 2 * N_VARS];
    objective[N_VARS + var(1, 1)] = 1.0;
    let s = solve(&LinearProgram { objective, maximize: true, constraints: cons })?;
    Ok(s.objective.max(0.0))
}

/// `max(⌊n_half·m/|Z| − n_half·Λ(|Z|, n_half, ε)⌋, 0)`: moves a bound on the
/// whole signal-signal set onto a random subset of size `n_half`.
pub fn serfling_scale(m_bound: f64, z_size: f64, n_half: f64, eps: Probability) -> Result<f64> {
    if !(n_half >= 1.0 && z_size >= n_half) {
        return Err(Error::domain(format!(
            "serfling scaling needs |Z| >= n_half >= 1, got |Z| = {z_size}, n_half = {n_half}"
        )));
    }
    if m_bound < 0.0 {
        return Err(Error::domain("negative population bound"));
    }
    let lambda = serfling_lambda(z_size, n_half, eps.value())?;
    Ok((n_half * m_bound / z_size - n_half * lambda).floor().max(0.0))
}

/// Upper bound on the single-photon phase-error rate of the kept string.
pub fn upper_bound_e_k1(n_k1: f64, aux: &XBasisAux, eps: Probability) -> Result<Probability> {
    if n_k1 < 1.0 {
        return Err(Error::Degenerate("no single-photon events in the kept string".into()));
    }
    if aux.n_bar_k1 < 1.0 {
        return Err(Error::Degenerate("no single-photon events in the X basis".into()));
    }
    let n_bar = aux.n_bar_k1;
    let count = (n_k1 * aux.e_bar_k1 / n_bar + (n_k1 + n_bar) * upsilon(n_k1, n_bar, eps.value())?)
        .ceil()
        .min(n_k1);
    Ok(Probability::clamped(count / n_k1))
}

/// Test-sample outcome of parameter estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub e_obs: Probability,
    /// Indices into the signal-signal set left for the code string, ascending.
    pub code_indices: Vec<usize>,
}

/// Draws `r_k` events uniformly without replacement, returns their mismatch
/// fraction and the complementary indices.
pub fn observed_error_rate<R: Rng + ?Sized>(
    events: &[SiftedEvent],
    r_k: usize,
    rng: &mut R,
) -> Result<ErrorSample> {
    if r_k == 0 || r_k > events.len() {
        return Err(Error::InsufficientData(format!(
            "test sample of {r_k} from a set of {}",
            events.len()
        )));
    }
    let picked = rand::seq::index::sample(rng, events.len(), r_k);
    let mut in_test = vec![false; events.len()];
    let mut errors = 0usize;
    for i in picked.iter() {
        in_test[i] = true;
        errors += events[i].is_error() as usize;
    }
    let code_indices = (0..events.len()).filter(|&i| !in_test[i]).collect();
    Ok(ErrorSample {
        e_obs: Probability::clamped(errors as f64 / r_k as f64),
        code_indices,
    })
}

/// `Ē = E_obs + μ(n_half, R_k, ε_PE)`, capped at 1.
pub fn true_error_upper_bound(
    e_obs: Probability,
    n_half: f64,
    r_k: f64,
    eps_pe: Probability,
) -> Result<Probability> {
    Ok(Probability::clamped(e_obs.value() + mu_parameter(n_half, r_k, eps_pe.value())?))
}

/// Everything the min-entropy bound needs for one Bell state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldEstimate {
    pub m_k0: f64,
    pub m_k1: f64,
    pub n_k0: f64,
    pub n_k1: f64,
    pub e_k1: Probability,
    pub x_basis_aux: XBasisAux,
    /// Size of the signal-signal Z set.
    pub z_signal: f64,
    pub n_half: f64,
    /// Intensity pairs dropped from the Z-basis programs by the validity check.
    pub dropped_pairs: Vec<[usize; 2]>,
    pub eps_k0: f64,
    pub eps_k1: f64,
    pub eps_ke: f64,
    pub budget: ErrorBudget,
}

/// Runs the full decoy pipeline for one Bell state with a kept string of
/// length `n_half`.
pub fn estimate_yields(
    counts: &BellCounts,
    pop: &PhotonPopulation,
    n_half: f64,
    budget: &ErrorBudget,
) -> Result<YieldEstimate> {
    let z_signal = counts.signal_z();
    if z_signal < 1.0 {
        return Err(Error::Degenerate("empty signal-signal Z set".into()));
    }
    let m0 = lower_bound_m_k0(counts, pop, budget)?;
    let m1 = lower_bound_m_k1(counts, pop, budget)?;
    let n_k0 = serfling_scale(m0.value, z_signal, n_half, budget.eps_k0_serfling)?;
    let n_k1 = serfling_scale(m1.value, z_signal, n_half, budget.eps_k1_serfling)?;
    let aux = x_basis_aux(counts, pop, budget)?;
    let e_k1 = upper_bound_e_k1(n_k1, &aux, budget.eps_ke_sampling)?;
    Ok(YieldEstimate {
        m_k0: m0.value,
        m_k1: m1.value,
        n_k0,
        n_k1,
        e_k1,
        x_basis_aux: aux,
        z_signal,
        n_half,
        dropped_pairs: m0.dropped_pairs,
        eps_k0: budget.eps_k0(),
        eps_k1: budget.eps_k1(),
        eps_ke: budget.eps_ke(),
        budget: *budget,
    })
}
