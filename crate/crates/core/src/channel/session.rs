use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::relay::{ClickCache, DarkSampler};
use super::{
    outcome_for_mask, Arrival, Basis, BellCounts, BellState, BsmResult, DecoySourceConfig,
    FockInput, IntensityLabel, Party, PhotonTable, SetCounts, SystemProfile,
};
use crate::error::{Error, Result};

/// Bit the peer keeps after sifting. Z-basis coincidences of either
/// identified Bell state are anticorrelated; in X only `psi_minus` is.
pub fn sift_bit(basis: Basis, bell: BellState, peer_bit: u8) -> u8 {
    match (basis, bell) {
        (Basis::Z, _) | (Basis::X, BellState::PsiMinus) => peer_bit ^ 1,
        (Basis::X, BellState::PsiPlus) => peer_bit,
    }
}

/// One sifted coincidence. The photon numbers are source-side ground truth
/// and are never used by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedEvent {
    pub alice_bit: u8,
    /// Peer bit after the sifting flip.
    pub peer_bit: u8,
    pub alice_photons: u8,
    pub peer_photons: u8,
}

impl SiftedEvent {
    #[inline]
    pub fn is_error(&self) -> bool {
        self.alice_bit != self.peer_bit
    }
}

const N_SETS: usize = 36;

#[inline]
fn set_index(k: BellState, basis: Basis, a: IntensityLabel, b: IntensityLabel) -> usize {
    ((k.index() * 2 + basis.index()) * 3 + a.index()) * 3 + b.index()
}

/// Sifted output of one key-generation session: the event lists behind every
/// `Z_k^{a,b}` and `X_k^{a,b}` plus the number of pulses each party sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftedData {
    sets: Vec<Vec<SiftedEvent>>,
    pub n_sig: u64,
}

impl Default for SiftedData {
    fn default() -> Self {
        SiftedData {
            sets: vec![Vec::new(); N_SETS],
            n_sig: 0,
        }
    }
}

impl SiftedData {
    pub fn set(
        &self,
        k: BellState,
        basis: Basis,
        a: IntensityLabel,
        b: IntensityLabel,
    ) -> &[SiftedEvent] {
        &self.sets[set_index(k, basis, a, b)]
    }

    /// Signal-signal Z events for Bell state `k`: the raw key material.
    pub fn signal_z(&self, k: BellState) -> &[SiftedEvent] {
        self.set(k, Basis::Z, IntensityLabel::Signal, IntensityLabel::Signal)
    }

    pub fn set_size(&self, k: BellState, basis: Basis, a: IntensityLabel, b: IntensityLabel) -> u64 {
        self.set(k, basis, a, b).len() as u64
    }

    pub fn error_count(
        &self,
        k: BellState,
        basis: Basis,
        a: IntensityLabel,
        b: IntensityLabel,
    ) -> u64 {
        self.set(k, basis, a, b).iter().filter(|e| e.is_error()).count() as u64
    }

    pub fn total_events(&self) -> u64 {
        self.sets.iter().map(|s| s.len() as u64).sum()
    }

    pub fn counts(&self) -> SetCounts {
        let mut per_bell = [BellCounts::default(); 2];
        for k in BellState::ALL {
            let bc = &mut per_bell[k.index()];
            bc.pulses = self.n_sig as f64;
            for a in IntensityLabel::ALL {
                for b in IntensityLabel::ALL {
                    let (i, j) = (a.index(), b.index());
                    bc.z_count[i][j] = self.set_size(k, Basis::Z, a, b) as f64;
                    bc.z_errors[i][j] = self.error_count(k, Basis::Z, a, b) as f64;
                    bc.x_count[i][j] = self.set_size(k, Basis::X, a, b) as f64;
                    bc.x_errors[i][j] = self.error_count(k, Basis::X, a, b) as f64;
                }
            }
        }
        SetCounts {
            per_bell,
            pulses: self.n_sig as f64,
        }
    }

    fn append(&mut self, mut other: SiftedData) {
        for (mine, theirs) in self.sets.iter_mut().zip(other.sets.iter_mut()) {
            mine.append(theirs);
        }
        self.n_sig += other.n_sig;
    }

    fn meets(&self, rule: &StopRule) -> bool {
        match rule {
            StopRule::PulseBudget(_) => false,
            StopRule::Minima { z_min, x_min, .. } => BellState::ALL.into_iter().all(|k| {
                IntensityLabel::ALL.into_iter().all(|a| {
                    IntensityLabel::ALL.into_iter().all(|b| {
                        self.set_size(k, Basis::Z, a, b) >= z_min[a.index()][b.index()]
                            && self.set_size(k, Basis::X, a, b) >= x_min[a.index()][b.index()]
                    })
                })
            }),
        }
    }

    /// Columnar dump: `k,a,b,basis,alice_bit,bob_bit,alice_photons,bob_photons`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([
            "k",
            "a",
            "b",
            "basis",
            "alice_bit",
            "bob_bit",
            "alice_photons",
            "bob_photons",
        ])
        .map_err(io)?;
        for k in BellState::ALL {
            for basis in Basis::ALL {
                for a in IntensityLabel::ALL {
                    for b in IntensityLabel::ALL {
                        for e in self.set(k, basis, a, b) {
                            w.write_record([
                                k.label(),
                                a.label(),
                                b.label(),
                                basis.label(),
                                &e.alice_bit.to_string(),
                                &e.peer_bit.to_string(),
                                &e.alice_photons.to_string(),
                                &e.peer_photons.to_string(),
                            ])
                            .map_err(io)?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// When a session stops sending pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Send exactly this many pulses.
    PulseBudget(u64),
    /// Keep going until every `Z_k^{a,b}` and `X_k^{a,b}` reaches its minimum,
    /// failing once `max_pulses` is spent.
    Minima {
        z_min: [[u64; 3]; 3],
        x_min: [[u64; 3]; 3],
        max_pulses: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    /// Pulses per independent random stream.
    pub batch_size: u64,
    /// Batches launched between stop-rule checks.
    pub batches_per_round: u64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            batch_size: 1 << 20,
            batches_per_round: 16,
        }
    }
}

struct PartySampler {
    p_z: f64,
    cum_intensity: [f64; 2],
    tables: [PhotonTable; 3],
    /// Channel transmittance times detector efficiency.
    survive: f64,
}

impl PartySampler {
    fn new(cfg: &DecoySourceConfig, profile: &SystemProfile, party: Party) -> Self {
        let p = cfg.intensity_probs.as_array();
        let mean = cfg.intensities.as_array();
        PartySampler {
            p_z: cfg.basis_probs.z,
            cum_intensity: [p[0], p[0] + p[1]],
            tables: [
                PhotonTable::new(mean[0]),
                PhotonTable::new(mean[1]),
                PhotonTable::new(mean[2]),
            ],
            survive: profile.link_transmittance(party) * profile.detector_efficiency.value(),
        }
    }

    #[inline]
    fn basis<R: Rng>(&self, rng: &mut R) -> Basis {
        if rng.gen::<f64>() < self.p_z {
            Basis::Z
        } else {
            Basis::X
        }
    }

    #[inline]
    fn intensity<R: Rng>(&self, rng: &mut R) -> IntensityLabel {
        let u: f64 = rng.gen();
        if u < self.cum_intensity[0] {
            IntensityLabel::Signal
        } else if u < self.cum_intensity[1] {
            IntensityLabel::Decoy1
        } else {
            IntensityLabel::Decoy2
        }
    }

    #[inline]
    fn arrivals<R: Rng>(&self, sent: u32, misalignment: f64, rng: &mut R) -> Arrival {
        let mut out = Arrival::default();
        for _ in 0..sent {
            if rng.gen::<f64>() < self.survive {
                if misalignment > 0.0 && rng.gen::<f64>() < misalignment {
                    out.flipped += 1;
                } else {
                    out.aligned += 1;
                }
            }
        }
        out
    }
}

struct BatchContext {
    alice: PartySampler,
    peer: PartySampler,
    misalignment: f64,
    darks: DarkSampler,
}

fn simulate_batch(ctx: &BatchContext, seed: u64, batch: u64, pulses: u64) -> SiftedData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    let mut cache = ClickCache::default();
    let mut out = SiftedData {
        n_sig: pulses,
        ..SiftedData::default()
    };
    for _ in 0..pulses {
        let basis_a = ctx.alice.basis(&mut rng);
        let basis_b = ctx.peer.basis(&mut rng);
        // Mismatched bases are discarded at sifting whatever the relay says.
        if basis_a != basis_b {
            continue;
        }
        let ia = ctx.alice.intensity(&mut rng);
        let ib = ctx.peer.intensity(&mut rng);
        let na = ctx.alice.tables[ia.index()].sample(rng.gen());
        let nb = ctx.peer.tables[ib.index()].sample(rng.gen());
        let arr_a = ctx.alice.arrivals(na, ctx.misalignment, &mut rng);
        let arr_b = ctx.peer.arrivals(nb, ctx.misalignment, &mut rng);
        let bit_a = rng.gen::<bool>() as u8;
        let bit_b = rng.gen::<bool>() as u8;
        let photon_mask = if arr_a.total() + arr_b.total() == 0 {
            0
        } else {
            let input = FockInput {
                alice_basis: basis_a,
                alice_bit: bit_a,
                alice: arr_a,
                peer_basis: basis_b,
                peer_bit: bit_b,
                peer: arr_b,
            };
            cache.sample_mask(&input, &mut rng)
        };
        let mask = photon_mask | ctx.darks.sample(&mut rng);
        let bell = match outcome_for_mask(mask) {
            BsmResult::PsiMinus => BellState::PsiMinus,
            BsmResult::PsiPlus => BellState::PsiPlus,
            BsmResult::Failure => continue,
        };
        out.sets[set_index(bell, basis_a, ia, ib)].push(SiftedEvent {
            alice_bit: bit_a,
            peer_bit: sift_bit(basis_a, bell, bit_b),
            alice_photons: na as u8,
            peer_photons: nb as u8,
        });
    }
    out
}

/// Runs the quantum phase of one key generation between Alice (`config_a`)
/// and a peer (`config_b`) until the stop rule fires.
///
/// Pulses are split into fixed-size batches, each driven by its own ChaCha
/// stream derived from `(seed, batch index)` and merged in index order, so
/// the output depends only on the seed and the batch size.
pub fn run_kgp_session(
    config_a: &DecoySourceConfig,
    config_b: &DecoySourceConfig,
    profile: &SystemProfile,
    stop_rule: &StopRule,
    seed: u64,
) -> Result<SiftedData> {
    run_kgp_session_with(config_a, config_b, profile, stop_rule, seed, SessionOptions::default())
}

pub fn run_kgp_session_with(
    config_a: &DecoySourceConfig,
    config_b: &DecoySourceConfig,
    profile: &SystemProfile,
    stop_rule: &StopRule,
    seed: u64,
    options: SessionOptions,
) -> Result<SiftedData> {
    config_a.validate("alice")?;
    config_b.validate("peer")?;
    profile.validate("profile")?;
    if options.batch_size == 0 || options.batches_per_round == 0 {
        return Err(Error::domain("batch size and round length must be positive"));
    }
    let ctx = BatchContext {
        alice: PartySampler::new(config_a, profile, Party::Alice),
        peer: PartySampler::new(config_b, profile, Party::Peer),
        misalignment: profile.photon_flip_prob(),
        darks: DarkSampler::new(profile.dark_count_prob.value()),
    };
    let budget = match stop_rule {
        StopRule::PulseBudget(n) => *n,
        StopRule::Minima { max_pulses, .. } => *max_pulses,
    };
    let n_batches = budget.div_ceil(options.batch_size);
    let batch_len = |i: u64| (budget - i * options.batch_size).min(options.batch_size);

    let mut data = SiftedData::default();
    let mut next = 0u64;
    while next < n_batches {
        let end = (next + options.batches_per_round).min(n_batches);
        let results: Vec<SiftedData> = (next..end)
            .into_par_iter()
            .map(|i| simulate_batch(&ctx, seed, i, batch_len(i)))
            .collect();
        for r in results {
            data.append(r);
            if data.meets(stop_rule) {
                return Ok(data);
            }
        }
        next = end;
    }
    match stop_rule {
        StopRule::PulseBudget(_) => Ok(data),
        StopRule::Minima { .. } => Err(Error::BudgetExhausted { budget }),
    }
}
