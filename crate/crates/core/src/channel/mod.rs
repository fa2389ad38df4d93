//! Photon-number-level simulation of the key-generation quantum phase:
//! decoy-state sources, lossy links, the linear-optics Bell-state relay and
//! sifting, plus a closed-form expected-rates path over the same model.

mod rates;
mod relay;
mod session;
mod source;

use serde::{Deserialize, Serialize};

use crate::entropy::Probability;
use crate::error::{Error, Result};

pub use rates::{expected_rates, RateEntry, RateTable};
pub use relay::{
    click_distribution, outcome_for_mask, relay_bsm, BsmOutcome, BsmResult, Detector, FockInput,
};
pub use session::{
    run_kgp_session, run_kgp_session_with, sift_bit, SessionOptions, SiftedData, SiftedEvent, StopRule,
};
pub use source::{sample_pulse, transmit, Arrival, PhotonTable, PulseRecord};

/// Photon-number cutoff; Poisson mass above it is folded into this bucket.
pub const N_CUT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::Z => "Z",
            Basis::X => "X",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityLabel {
    Signal,
    Decoy1,
    Decoy2,
}

impl IntensityLabel {
    pub const ALL: [IntensityLabel; 3] =
        [IntensityLabel::Signal, IntensityLabel::Decoy1, IntensityLabel::Decoy2];

    pub fn index(self) -> usize {
        match self {
            IntensityLabel::Signal => 0,
            IntensityLabel::Decoy1 => 1,
            IntensityLabel::Decoy2 => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn label(self) -> &'static str {
        match self {
            IntensityLabel::Signal => "s",
            IntensityLabel::Decoy1 => "d1",
            IntensityLabel::Decoy2 => "d2",
        }
    }
}

/// The two Bell states a linear-optics relay can identify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellState {
    PsiMinus,
    PsiPlus,
}

impl BellState {
    pub const ALL: [BellState; 2] = [BellState::PsiMinus, BellState::PsiPlus];

    pub fn index(self) -> usize {
        match self {
            BellState::PsiMinus => 0,
            BellState::PsiPlus => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BellState::PsiMinus => "psi_minus",
            BellState::PsiPlus => "psi_plus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Alice,
    /// Bob or Charlie: whoever runs the key generation with Alice.
    Peer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub signal: f64,
    pub decoy1: f64,
    pub decoy2: f64,
}

impl Intensities {
    pub fn get(&self, label: IntensityLabel) -> f64 {
        match label {
            IntensityLabel::Signal => self.signal,
            IntensityLabel::Decoy1 => self.decoy1,
            IntensityLabel::Decoy2 => self.decoy2,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.signal, self.decoy1, self.decoy2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityProbs {
    pub signal: f64,
    pub decoy1: f64,
    pub decoy2: f64,
}

impl IntensityProbs {
    pub fn as_array(&self) -> [f64; 3] {
        [self.signal, self.decoy1, self.decoy2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisProbs {
    pub z: f64,
    pub x: f64,
}

impl BasisProbs {
    pub fn get(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.z,
            Basis::X => self.x,
        }
    }
}

/// One party's decoy-state transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoySourceConfig {
    pub intensities: Intensities,
    pub intensity_probs: IntensityProbs,
    pub basis_probs: BasisProbs,
    /// Pulses per second.
    pub pulse_rate: f64,
}

const NORM_TOL: f64 = 1e-9;

impl DecoySourceConfig {
    /// Weak-coherent source with three intensities (0.18, 0.09, 5e-4), biased
    /// basis choice p_Z = 0.625 and a 1 GHz pulse rate.
    pub fn standard() -> Self {
        DecoySourceConfig {
            intensities: Intensities {
                signal: 0.18,
                decoy1: 0.09,
                decoy2: 5e-4,
            },
            intensity_probs: IntensityProbs {
                signal: 0.5,
                decoy1: 0.25,
                decoy2: 0.25,
            },
            basis_probs: BasisProbs { z: 0.625, x: 0.375 },
            pulse_rate: 1e9,
        }
    }

    /// Brighter decoys and a balanced basis choice, so that sessions of a
    /// few 1e7 pulses leave enough single-photon pairs in both bases.
    pub fn short_session() -> Self {
        DecoySourceConfig {
            intensities: Intensities {
                signal: 0.4,
                decoy1: 0.1,
                decoy2: 0.01,
            },
            intensity_probs: IntensityProbs {
                signal: 0.3,
                decoy1: 0.3,
                decoy2: 0.4,
            },
            basis_probs: BasisProbs { z: 0.5, x: 0.5 },
            pulse_rate: 1e9,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let i = &self.intensities;
        if !(i.signal > i.decoy1 && i.decoy1 > i.decoy2 && i.decoy2 >= 0.0) {
            return Err(Error::config(
                format!("{path}.intensities"),
                "intensities must satisfy signal > decoy1 > decoy2 >= 0",
            ));
        }
        if i.signal > 5.0 {
            return Err(Error::config(
                format!("{path}.intensities.signal"),
                "mean photon number too large for the photon-number cutoff",
            ));
        }
        let ip = self.intensity_probs.as_array();
        check_distribution(&ip, &format!("{path}.intensity_probs"))?;
        check_distribution(
            &[self.basis_probs.z, self.basis_probs.x],
            &format!("{path}.basis_probs"),
        )?;
        if !(self.pulse_rate > 0.0 && self.pulse_rate.is_finite()) {
            return Err(Error::config(format!("{path}.pulse_rate"), "must be positive"));
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], path: &str) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::config(path, "entries must lie in [0, 1]"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::config(path, format!("entries sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Channel and relay characteristics shared by both links of one key generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemProfile {
    pub distance_km: f64,
    pub loss_coeff_db_per_km: f64,
    pub detector_efficiency: Probability,
    /// Dark-count probability per detector per gate.
    pub dark_count_prob: Probability,
    /// Overall misalignment `e_d`: the chance that a pair of photons arrives
    /// with the wrong relative polarization. Each photon flips independently
    /// with `q`, where `2q(1 - q) = e_d`.
    pub misalignment: Probability,
    /// Fraction of the distance on Alice's side of the relay.
    #[serde(default = "half")]
    pub alice_link_fraction: f64,
}

fn half() -> f64 {
    0.5
}

impl SystemProfile {
    /// 50 km of 0.2 dB/km fibre, 1% misalignment, relay detectors with
    /// 14.5% efficiency and a 6.02e-6 background rate.
    pub fn standard() -> Self {
        SystemProfile {
            distance_km: 50.0,
            loss_coeff_db_per_km: 0.2,
            detector_efficiency: Probability::clamped(0.145),
            dark_count_prob: Probability::clamped(6.02e-6),
            misalignment: Probability::clamped(0.01),
            alice_link_fraction: 0.5,
        }
    }

    /// Per-photon flip probability `q = (1 - sqrt(1 - 2 e_d)) / 2`.
    pub fn photon_flip_prob(&self) -> f64 {
        let e = self.misalignment.value().min(0.5);
        (1.0 - (1.0 - 2.0 * e).sqrt()) / 2.0
    }

    /// Noiseless, lossless relay.
    pub fn ideal() -> Self {
        SystemProfile {
            distance_km: 0.0,
            loss_coeff_db_per_km: 0.0,
            detector_efficiency: Probability::ONE,
            dark_count_prob: Probability::ZERO,
            misalignment: Probability::ZERO,
            alice_link_fraction: 0.5,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.distance_km >= 0.0 && self.distance_km.is_finite()) {
            return Err(Error::config(format!("{path}.distance_km"), "must be nonnegative"));
        }
        if !(self.loss_coeff_db_per_km >= 0.0 && self.loss_coeff_db_per_km.is_finite()) {
            return Err(Error::config(
                format!("{path}.loss_coeff_db_per_km"),
                "must be nonnegative",
            ));
        }
        if self.misalignment.value() > 0.5 {
            return Err(Error::config(format!("{path}.misalignment"), "must not exceed 0.5"));
        }
        if !(0.0..=1.0).contains(&self.alice_link_fraction) {
            return Err(Error::config(
                format!("{path}.alice_link_fraction"),
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Per-photon survival probability of the link between `party` and the relay.
    pub fn link_transmittance(&self, party: Party) -> f64 {
        let frac = match party {
            Party::Alice => self.alice_link_fraction,
            Party::Peer => 1.0 - self.alice_link_fraction,
        };
        10f64.powf(-self.loss_coeff_db_per_km * self.distance_km * frac / 10.0)
    }
}

/// Per-Bell-state set statistics: sizes and error counts of every
/// `Z_k^{a,b}` and `X_k^{a,b}`, indexed `[a][b]` by [`IntensityLabel::index`].
///
/// Counts are real so the analytic path can carry expectations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BellCounts {
    pub z_count: [[f64; 3]; 3],
    pub z_errors: [[f64; 3]; 3],
    pub x_count: [[f64; 3]; 3],
    pub x_errors: [[f64; 3]; 3],
    /// Pulses sent in the session, zero when unknown.
    #[serde(default)]
    pub pulses: f64,
}

impl BellCounts {
    pub fn count(&self, basis: Basis) -> &[[f64; 3]; 3] {
        match basis {
            Basis::Z => &self.z_count,
            Basis::X => &self.x_count,
        }
    }

    pub fn errors(&self, basis: Basis) -> &[[f64; 3]; 3] {
        match basis {
            Basis::Z => &self.z_errors,
            Basis::X => &self.x_errors,
        }
    }

    pub fn signal_z(&self) -> f64 {
        self.z_count[0][0]
    }
}

/// Everything the estimators need from one key-generation session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetCounts {
    pub per_bell: [BellCounts; 2],
    pub pulses: f64,
}

impl SetCounts {
    pub fn bell(&self, k: BellState) -> &BellCounts {
        &self.per_bell[k.index()]
    }
}
