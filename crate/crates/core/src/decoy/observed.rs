//! The estimation pipeline run on simulated session data, together with the
//! simulator's ground truth for the estimated quantities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{estimate_yields, observed_error_rate, true_error_upper_bound, ErrorBudget, PhotonPopulation, YieldEstimate};
use crate::channel::{Basis, BellState, IntensityLabel, SiftedData, SiftedEvent};
use crate::entropy::Probability;
use crate::error::{Error, Result};
use crate::security::KgpBounds;

/// Quantities the estimators bound, read off the simulated photon numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Kept events in which the peer sent vacuum.
    pub n_k0: u64,
    /// Kept events with exactly one photon from each side.
    pub n_k1: u64,
    /// Error rate of single-photon-pair X events over all intensity pairs.
    pub e_k1: Option<f64>,
    pub x_single_photon_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEstimate {
    pub bell: BellState,
    pub z_signal: u64,
    pub r_k: u64,
    pub n_half: u64,
    pub e_obs: Probability,
    #[serde(rename = "E_bar")]
    pub e_bar: Probability,
    pub yields: YieldEstimate,
    pub truth: GroundTruth,
}

impl SessionEstimate {
    pub fn kgp_bounds(&self) -> KgpBounds {
        KgpBounds {
            n_half: self.n_half as f64,
            n_k0: self.yields.n_k0,
            n_k1: self.yields.n_k1,
            e_k1: self.yields.e_k1,
            e_bar: self.e_bar,
            bell: Some(self.bell),
        }
    }

    /// Whether each bound holds against the ground truth:
    /// `(n_k0 lower, n_k1 lower, e_k1 upper)`.
    pub fn bounds_hold(&self) -> (bool, bool, bool) {
        (
            self.yields.n_k0 <= self.truth.n_k0 as f64,
            self.yields.n_k1 <= self.truth.n_k1 as f64,
            self.truth.e_k1.is_none_or(|e| e <= self.yields.e_k1.value()),
        )
    }
}

fn single_photon_truth(data: &SiftedData, bell: BellState) -> (u64, u64) {
    let mut count = 0u64;
    let mut errors = 0u64;
    for a in IntensityLabel::ALL {
        for b in IntensityLabel::ALL {
            for e in data.set(bell, Basis::X, a, b) {
                if e.alice_photons == 1 && e.peer_photons == 1 {
                    count += 1;
                    errors += e.is_error() as u64;
                }
            }
        }
    }
    (count, errors)
}

/// Splits the signal-signal Z set of `bell` into a test sample of
/// `⌈r_fraction·|Z|⌉` events and a kept half of `⌊(|Z| - r_k)/2⌋` events,
/// then runs the decoy estimators on the session's set counts.
pub fn estimate_from_session<R: Rng + ?Sized>(
    data: &SiftedData,
    pop: &PhotonPopulation,
    bell: BellState,
    budget: &ErrorBudget,
    r_fraction: f64,
    rng: &mut R,
) -> Result<SessionEstimate> {
    if !(r_fraction > 0.0 && r_fraction < 1.0) {
        return Err(Error::domain(format!("test fraction {r_fraction} outside (0, 1)")));
    }
    let events = data.signal_z(bell);
    let z = events.len();
    let r_k = ((r_fraction * z as f64).ceil() as usize).max(1);
    if z < r_k + 2 {
        return Err(Error::InsufficientData(format!(
            "{z} signal-signal events leave no kept string after a test sample of {r_k}"
        )));
    }
    let n_half = (z - r_k) / 2;
    let sample = observed_error_rate(events, r_k, rng)?;
    let kept_idx = rand::seq::index::sample(rng, sample.code_indices.len(), n_half);
    let kept: Vec<&SiftedEvent> = kept_idx.iter().map(|i| &events[sample.code_indices[i]]).collect();
    let yields = estimate_yields(data.counts().bell(bell), pop, n_half as f64, budget)?;
    let e_bar = true_error_upper_bound(sample.e_obs, n_half as f64, r_k as f64, budget.eps_pe)?;
    let (x11, x11_err) = single_photon_truth(data, bell);
    let truth = GroundTruth {
        n_k0: kept.iter().filter(|e| e.peer_photons == 0).count() as u64,
        n_k1: kept.iter().filter(|e| e.alice_photons == 1 && e.peer_photons == 1).count() as u64,
        e_k1: (x11 > 0).then(|| x11_err as f64 / x11 as f64),
        x_single_photon_events: x11,
    };
    Ok(SessionEstimate {
        bell,
        z_signal: z as u64,
        r_k: r_k as u64,
        n_half: n_half as u64,
        e_obs: sample.e_obs,
        e_bar,
        yields,
        truth,
    })
}
