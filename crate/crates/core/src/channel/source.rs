use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Basis, DecoySourceConfig, IntensityLabel, Party, SystemProfile, N_CUT};

/// Truncated Poisson photon-number distribution; mass above [`N_CUT`] sits in
/// the top bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonTable {
    pmf: [f64; N_CUT + 1],
    cdf: [f64; N_CUT + 1],
}

impl PhotonTable {
    pub fn new(mean: f64) -> Self {
        let mut pmf = [0.0; N_CUT + 1];
        let mut term = (-mean).exp();
        let mut acc = 0.0;
        for (n, slot) in pmf.iter_mut().enumerate().take(N_CUT) {
            *slot = term;
            acc += term;
            term *= mean / (n + 1) as f64;
        }
        pmf[N_CUT] = (1.0 - acc).max(0.0);
        let mut cdf = [0.0; N_CUT + 1];
        let mut run = 0.0;
        for n in 0..=N_CUT {
            run += pmf[n];
            cdf[n] = run;
        }
        cdf[N_CUT] = 1.0;
        PhotonTable { pmf, cdf }
    }

    pub fn pmf(&self) -> &[f64; N_CUT + 1] {
        &self.pmf
    }

    #[inline]
    pub fn sample(&self, u: f64) -> u32 {
        // Vacuum dominates at the intensities of interest.
        if u < self.cdf[0] {
            return 0;
        }
        self.cdf.iter().position(|&c| u < c).unwrap_or(N_CUT) as u32
    }
}

/// Photons reaching the relay, split by whether their polarization flipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct Arrival {
    pub aligned: u32,
    pub flipped: u32,
}

impl Arrival {
    pub fn total(&self) -> u32 {
        self.aligned + self.flipped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub party: Party,
    pub intensity: IntensityLabel,
    pub basis: Basis,
    pub bit: u8,
    /// Photons emitted by the source (ground truth).
    pub photon_number: u32,
    /// Photons currently in flight; equals the emission before [`transmit`].
    pub arriving: Arrival,
}

/// Draws intensity, basis, bit and photon number for one pulse.
pub fn sample_pulse<R: Rng + ?Sized>(
    config: &DecoySourceConfig,
    party: Party,
    rng: &mut R,
) -> PulseRecord {
    let probs = config.intensity_probs.as_array();
    let u: f64 = rng.gen();
    let intensity = if u < probs[0] {
        IntensityLabel::Signal
    } else if u < probs[0] + probs[1] {
        IntensityLabel::Decoy1
    } else {
        IntensityLabel::Decoy2
    };
    let basis = if rng.gen::<f64>() < config.basis_probs.z {
        Basis::Z
    } else {
        Basis::X
    };
    let bit = rng.gen::<bool>() as u8;
    let table = PhotonTable::new(config.intensities.get(intensity));
    let photon_number = table.sample(rng.gen());
    PulseRecord {
        party,
        intensity,
        basis,
        bit,
        photon_number,
        arriving: Arrival {
            aligned: photon_number,
            flipped: 0,
        },
    }
}

/// Sends a pulse down its half-link: independent per-photon loss, then an
/// an independent polarization flip with the per-photon flip probability.
pub fn transmit<R: Rng + ?Sized>(
    pulse: &PulseRecord,
    profile: &SystemProfile,
    rng: &mut R,
) -> PulseRecord {
    let survive = profile.link_transmittance(pulse.party);
    let flip = profile.photon_flip_prob();
    let mut arriving = Arrival::default();
    for (count, was_flipped) in [(pulse.arriving.aligned, false), (pulse.arriving.flipped, true)] {
        for _ in 0..count {
            if rng.gen::<f64>() >= survive {
                continue;
            }
            let flipped_now = rng.gen::<f64>() < flip;
            if was_flipped ^ flipped_now {
                arriving.flipped += 1;
            } else {
                arriving.aligned += 1;
            }
        }
    }
    PulseRecord { arriving, ..*pulse }
}
