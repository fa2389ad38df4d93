use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::relay::with_dark_counts;
use super::{
    click_distribution, sift_bit, Arrival, Basis, BellCounts, BellState, DecoySourceConfig,
    FockInput, IntensityLabel, Party, PhotonTable, SetCounts, SystemProfile, N_CUT,
};
use crate::error::Result;

/// Joint probabilities below this are dropped from the sums.
const PRUNE: f64 = 1e-20;

/// Expected statistics of one `Z_k^{a,b}` / `X_k^{a,b}` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub bell: BellState,
    pub basis: Basis,
    pub alice_intensity: IntensityLabel,
    pub peer_intensity: IntensityLabel,
    /// Probability of announcing `bell` given both parties chose this basis
    /// and these intensities.
    pub gain: f64,
    /// Fraction of those events whose sifted bits disagree.
    pub error_rate: f64,
    /// Probability that a single pulse pair ends up in the set.
    pub set_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub entries: Vec<RateEntry>,
}

fn idx(k: BellState, basis: Basis, a: IntensityLabel, b: IntensityLabel) -> usize {
    ((k.index() * 2 + basis.index()) * 3 + a.index()) * 3 + b.index()
}

impl RateTable {
    pub fn get(
        &self,
        k: BellState,
        basis: Basis,
        a: IntensityLabel,
        b: IntensityLabel,
    ) -> &RateEntry {
        &self.entries[idx(k, basis, a, b)]
    }

    /// Expected set sizes and error counts after `pulses` pulse pairs.
    pub fn expected(&self, pulses: f64) -> SetCounts {
        let mut per_bell = [BellCounts::default(); 2];
        for e in &self.entries {
            let bc = &mut per_bell[e.bell.index()];
            let (i, j) = (e.alice_intensity.index(), e.peer_intensity.index());
            let n = e.set_prob * pulses;
            match e.basis {
                Basis::Z => {
                    bc.z_count[i][j] = n;
                    bc.z_errors[i][j] = n * e.error_rate;
                }
                Basis::X => {
                    bc.x_count[i][j] = n;
                    bc.x_errors[i][j] = n * e.error_rate;
                }
            }
        }
        for bc in per_bell.iter_mut() {
            bc.pulses = pulses;
        }
        SetCounts { per_bell, pulses }
    }
}

/// Distribution of photons reaching the relay for one intensity:
/// Poisson emission, binomial survival, binomial polarization flips.
fn arrival_distribution(mean: f64, survive: f64, flip: f64) -> Vec<(Arrival, f64)> {
    let table = PhotonTable::new(mean);
    let mut acc: HashMap<Arrival, f64> = HashMap::new();
    for (n, &pn) in table.pmf().iter().enumerate() {
        if pn < PRUNE {
            continue;
        }
        for m in 0..=n {
            let pm = pn * binom_pmf(n, m, survive);
            if pm < PRUNE {
                continue;
            }
            for f in 0..=m {
                let p = pm * binom_pmf(m, f, flip);
                if p < PRUNE {
                    continue;
                }
                let key = Arrival {
                    aligned: (m - f) as u32,
                    flipped: f as u32,
                };
                *acc.entry(key).or_insert(0.0) += p;
            }
        }
    }
    let mut out: Vec<(Arrival, f64)> = acc.into_iter().collect();
    // Fixed order keeps the floating-point sums reproducible.
    out.sort_by_key(|(a, _)| (a.aligned, a.flipped));
    out
}

fn binom_pmf(n: usize, k: usize, p: f64) -> f64 {
    debug_assert!(n <= N_CUT);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Closed-form expected gains and error rates of every sifted set, summing
/// over the same photon-number model the Monte-Carlo session samples.
pub fn expected_rates(
    config_a: &DecoySourceConfig,
    config_b: &DecoySourceConfig,
    profile: &SystemProfile,
) -> Result<RateTable> {
    config_a.validate("alice")?;
    config_b.validate("peer")?;
    profile.validate("profile")?;
    let eta = profile.detector_efficiency.value();
    let flip = profile.photon_flip_prob();
    let y0 = profile.dark_count_prob.value();
    let s_a = profile.link_transmittance(Party::Alice) * eta;
    let s_b = profile.link_transmittance(Party::Peer) * eta;
    let arrivals_a: Vec<_> = config_a
        .intensities
        .as_array()
        .iter()
        .map(|&m| arrival_distribution(m, s_a, flip))
        .collect();
    let arrivals_b: Vec<_> = config_b
        .intensities
        .as_array()
        .iter()
        .map(|&m| arrival_distribution(m, s_b, flip))
        .collect();
    let pa = config_a.intensity_probs.as_array();
    let pb = config_b.intensity_probs.as_array();

    let mut cache: HashMap<FockInput, [f64; 16]> = HashMap::new();
    let mut entries = Vec::with_capacity(36);
    for k in BellState::ALL {
        for basis in Basis::ALL {
            for a in IntensityLabel::ALL {
                for b in IntensityLabel::ALL {
                    let (mut gain, mut err) = (0.0, 0.0);
                    for &(arr_a, p_a) in &arrivals_a[a.index()] {
                        for &(arr_b, p_b) in &arrivals_b[b.index()] {
                            let p = p_a * p_b;
                            if p < PRUNE {
                                continue;
                            }
                            for bits in 0..4u8 {
                                let (bit_a, bit_b) = (bits >> 1, bits & 1);
                                let input = FockInput {
                                    alice_basis: basis,
                                    alice_bit: bit_a,
                                    alice: arr_a,
                                    peer_basis: basis,
                                    peer_bit: bit_b,
                                    peer: arr_b,
                                };
                                let dist = cache.entry(input).or_insert_with(|| {
                                    let photon = if arr_a.total() + arr_b.total() == 0 {
                                        let mut d = [0.0; 16];
                                        d[0] = 1.0;
                                        d
                                    } else {
                                        click_distribution(&input)
                                    };
                                    with_dark_counts(&photon, y0)
                                });
                                let pk = match k {
                                    BellState::PsiMinus => dist[9] + dist[6],
                                    BellState::PsiPlus => dist[3] + dist[12],
                                };
                                let w = 0.25 * p * pk;
                                gain += w;
                                if sift_bit(basis, k, bit_b) != bit_a {
                                    err += w;
                                }
                            }
                        }
                    }
                    let settings = config_a.basis_probs.get(basis)
                        * config_b.basis_probs.get(basis)
                        * pa[a.index()]
                        * pb[b.index()];
                    entries.push(RateEntry {
                        bell: k,
                        basis,
                        alice_intensity: a,
                        peer_intensity: b,
                        gain,
                        error_rate: if gain > 0.0 { err / gain } else { 0.0 },
                        set_prob: settings * gain,
                    });
                }
            }
        }
    }
    Ok(RateTable { entries })
}
