//! Monte-Carlo runs of the protocol: honest parties, a repudiating Alice
//! planting errors, and a forging Bob guessing what he cannot see.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    sign, verify, Declaration, Origin, RawKeys, Recipient, SecretChannel, SignedKeyState,
    VerificationResult,
};
use crate::channel::{run_kgp_session, BellState, DecoySourceConfig, StopRule, SystemProfile};
use crate::entropy::Probability;
use crate::error::{Error, Result};

/// Where the recipients' strings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeySource {
    /// Each recipient bit disagrees with Alice's independently.
    Bsc { error_rate: Probability },
    /// Signal-signal Z events of a simulated key generation, one per recipient.
    Session {
        alice: DecoySourceConfig,
        peer: DecoySourceConfig,
        profile: SystemProfile,
        bell: BellState,
        max_pulses: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestRunParams {
    pub l: usize,
    pub s_a: Probability,
    pub s_v: Probability,
    pub message: u8,
    pub keys: KeySource,
}

impl HonestRunParams {
    fn validate(&self) -> Result<()> {
        check_length(self.l)?;
        check_thresholds(self.s_a, self.s_v)?;
        if self.message > 1 {
            return Err(Error::domain(format!("message {} is not a bit", self.message)));
        }
        Ok(())
    }
}

fn check_length(l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::domain("key length must be positive"));
    }
    if l % 2 == 1 {
        return Err(Error::OddLength(l));
    }
    Ok(())
}

fn check_thresholds(s_a: Probability, s_v: Probability) -> Result<()> {
    let (a, v) = (s_a.value(), s_v.value());
    if !(a > 0.0 && a < v && v < 0.5) {
        return Err(Error::domain(format!(
            "thresholds need 0 < s_a < s_v < 1/2, got s_a = {a}, s_v = {v}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageEvent {
    KeyGeneration {
        recipient: Recipient,
        message: u8,
        length: usize,
        mismatches: usize,
    },
    Symmetrization {
        message: u8,
        from: Recipient,
        forwarded: usize,
    },
    Declaration {
        message: u8,
        bits: usize,
    },
    Verification {
        party: Recipient,
        result: VerificationResult,
    },
    Forward {
        from: Recipient,
        to: Recipient,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HonestOutcome {
    AcceptAccept,
    BobRejected,
    CharlieRejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestTranscript {
    pub l: usize,
    pub s_a: Probability,
    pub s_v: Probability,
    pub message: u8,
    pub stages: Vec<StageEvent>,
    pub outcome: HonestOutcome,
}

fn random_bits<R: Rng + ?Sized>(rng: &mut R, l: usize) -> Vec<u8> {
    (0..l).map(|_| rng.gen_range(0..2u8)).collect()
}

fn mismatches(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// `(Alice's string, recipient's string)` for both messages.
fn recipient_strings<R: Rng + ?Sized>(
    source: &KeySource,
    l: usize,
    rng: &mut R,
) -> Result<[(Vec<u8>, Vec<u8>); 2]> {
    match source {
        KeySource::Bsc { error_rate } => Ok([(); 2].map(|_| {
            let a = random_bits(rng, l);
            let k = a
                .iter()
                .map(|&x| x ^ (rng.gen::<f64>() < error_rate.value()) as u8)
                .collect();
            (a, k)
        })),
        KeySource::Session { alice, peer, profile, bell, max_pulses } => {
            let mut z_min = [[0u64; 3]; 3];
            z_min[0][0] = 2 * l as u64;
            let rule = StopRule::Minima { z_min, x_min: [[0; 3]; 3], max_pulses: *max_pulses };
            let data = run_kgp_session(alice, peer, profile, &rule, rng.gen())?;
            let events = &data.signal_z(*bell)[..2 * l];
            let split = |m: usize| {
                let ev = &events[m * l..(m + 1) * l];
                (
                    ev.iter().map(|e| e.alice_bit).collect(),
                    ev.iter().map(|e| e.peer_bit).collect(),
                )
            };
            Ok([split(0), split(1)])
        }
    }
}

fn honest_run<R: Rng + ?Sized>(params: &HonestRunParams, rng: &mut R) -> Result<HonestTranscript> {
    let l = params.l;
    let to_bob = recipient_strings(&params.keys, l, rng)?;
    let to_charlie = recipient_strings(&params.keys, l, rng)?;
    let mut stages = Vec::new();
    let raw = [0usize, 1].map(|m| {
        for (who, (a, k)) in [(Recipient::Bob, &to_bob[m]), (Recipient::Charlie, &to_charlie[m])] {
            stages.push(StageEvent::KeyGeneration {
                recipient: who,
                message: m as u8,
                length: l,
                mismatches: mismatches(a, k),
            });
        }
        RawKeys {
            alice_b: to_bob[m].0.clone(),
            alice_c: to_charlie[m].0.clone(),
            bob: to_bob[m].1.clone(),
            charlie: to_charlie[m].1.clone(),
        }
    });
    let mut channel = SecretChannel::new();
    let state = SignedKeyState::distribute(raw, &mut channel, rng)?;
    for (i, t) in channel.transcript.iter().enumerate() {
        stages.push(StageEvent::Symmetrization {
            message: (i / 2) as u8,
            from: t.from,
            forwarded: t.bits.len(),
        });
    }

    let m = params.message;
    let decl = sign(&state, m)?;
    stages.push(StageEvent::Declaration { message: m, bits: decl.bit_len() });
    let bob = verify(&decl, state.key(Recipient::Bob, m), params.s_a, l)?;
    stages.push(StageEvent::Verification { party: Recipient::Bob, result: bob });
    let outcome = if !bob.accepted {
        HonestOutcome::BobRejected
    } else {
        stages.push(StageEvent::Forward { from: Recipient::Bob, to: Recipient::Charlie });
        let charlie = verify(&decl, state.key(Recipient::Charlie, m), params.s_v, l)?;
        stages.push(StageEvent::Verification { party: Recipient::Charlie, result: charlie });
        if charlie.accepted {
            HonestOutcome::AcceptAccept
        } else {
            HonestOutcome::CharlieRejected
        }
    };
    Ok(HonestTranscript {
        l,
        s_a: params.s_a,
        s_v: params.s_v,
        message: m,
        stages,
        outcome,
    })
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Key generation, distribution, signing, Bob's check at `s_a`, forwarding
/// and Charlie's check at `s_v`.
pub fn simulate_honest_run(params: &HonestRunParams, seed: u64) -> Result<HonestTranscript> {
    params.validate()?;
    honest_run(params, &mut trial_rng(seed, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HonestSummary {
    pub runs: u64,
    pub bob_rejections: u64,
    /// Runs Bob accepted and Charlie then rejected.
    pub charlie_rejections: u64,
    pub abort_rate: EmpiricalRate,
    pub transfer_failure_rate: EmpiricalRate,
}

/// `runs` independent honest runs, run `i` on stream `i` of `seed`.
pub fn simulate_honest_runs(params: &HonestRunParams, runs: u64, seed: u64) -> Result<HonestSummary> {
    params.validate()?;
    let outcomes = (0..runs)
        .into_par_iter()
        .map(|i| honest_run(params, &mut trial_rng(seed, i)).map(|t| t.outcome))
        .collect::<Result<Vec<_>>>()?;
    let bob = outcomes.iter().filter(|&&o| o == HonestOutcome::BobRejected).count() as u64;
    let charlie = outcomes.iter().filter(|&&o| o == HonestOutcome::CharlieRejected).count() as u64;
    Ok(HonestSummary {
        runs,
        bob_rejections: bob,
        charlie_rejections: charlie,
        abort_rate: EmpiricalRate::new(runs, bob),
        transfer_failure_rate: EmpiricalRate::new(runs, charlie),
    })
}

/// Success count over independent trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRate {
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
}

impl EmpiricalRate {
    pub fn new(trials: u64, successes: u64) -> Self {
        let rate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        EmpiricalRate { trials, successes, rate }
    }

    /// Binomial standard error of a rate `p` at this trial count.
    pub fn std_error_at(&self, p: f64) -> f64 {
        if self.trials == 0 {
            return f64::INFINITY;
        }
        let p = p.clamp(0.0, 1.0);
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Whether the rate stays below `bound` plus `sigmas` standard errors
    /// taken at the bound.
    pub fn within(&self, bound: f64, sigmas: f64) -> bool {
        self.rate <= bound + sigmas * self.std_error_at(bound)
    }
}

fn count_successes<F>(trials: u64, seed: u64, trial: F) -> Result<EmpiricalRate>
where
    F: Fn(&mut ChaCha8Rng) -> Result<bool> + Sync,
{
    let hits = (0..trials)
        .into_par_iter()
        .map(|i| trial(&mut trial_rng(seed, i)).map(u64::from))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(EmpiricalRate::new(trials, hits))
}

/// Copy of `a` with exactly `k` positions flipped, chosen uniformly.
fn plant<R: Rng + ?Sized>(a: &[u8], k: usize, rng: &mut R) -> Vec<u8> {
    let mut out = a.to_vec();
    for i in rand::seq::index::sample(rng, a.len(), k).iter() {
        out[i] ^= 1;
    }
    out
}

/// Alice hands Bob and Charlie strings with exactly `⌊e_B·L⌋` and `⌊e_C·L⌋`
/// mismatches. She succeeds when Bob accepts at `s_a` and Charlie rejects the
/// forwarded declaration at `s_v`.
pub fn simulate_repudiating_alice(
    e_b: Probability,
    e_c: Probability,
    l: usize,
    s_a: Probability,
    s_v: Probability,
    trials: u64,
    seed: u64,
) -> Result<EmpiricalRate> {
    check_length(l)?;
    check_thresholds(s_a, s_v)?;
    let k_b = (e_b.value() * l as f64).floor() as usize;
    let k_c = (e_c.value() * l as f64).floor() as usize;
    count_successes(trials, seed, |rng| {
        let raw = [(); 2].map(|_| {
            let alice_b = random_bits(rng, l);
            let alice_c = random_bits(rng, l);
            let bob = plant(&alice_b, k_b, rng);
            let charlie = plant(&alice_c, k_c, rng);
            RawKeys { alice_b, alice_c, bob, charlie }
        });
        let state = SignedKeyState::distribute(raw, &mut SecretChannel::new(), rng)?;
        let decl = sign(&state, 0)?;
        let bob = verify(&decl, state.key(Recipient::Bob, 0), s_a, l)?;
        if !bob.accepted {
            return Ok(false);
        }
        let charlie = verify(&decl, state.key(Recipient::Charlie, 0), s_v, l)?;
        Ok(!charlie.accepted)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgingStrategy {
    /// Every declared bit is a coin flip.
    RandomGuess,
    /// Bob declares every bit he holds and guesses the rest, which are
    /// exactly the bits Charlie received directly from Alice.
    CopyKnownHalf,
}

/// Bob, holding noiseless keys, forges a declaration for a message Alice
/// never signed. Success means Charlie accepts it at `s_v`.
pub fn simulate_forging_bob(
    strategy: ForgingStrategy,
    l: usize,
    s_v: Probability,
    trials: u64,
    seed: u64,
) -> Result<EmpiricalRate> {
    check_length(l)?;
    let v = s_v.value();
    if !(v > 0.0 && v < 0.5) {
        return Err(Error::domain(format!("threshold {v} outside (0, 1/2)")));
    }
    count_successes(trials, seed, |rng| {
        let raw = [(); 2].map(|_| {
            let alice_b = random_bits(rng, l);
            let alice_c = random_bits(rng, l);
            RawKeys { bob: alice_b.clone(), charlie: alice_c.clone(), alice_b, alice_c }
        });
        let state = SignedKeyState::distribute(raw, &mut SecretChannel::new(), rng)?;
        let mut decl = Declaration {
            message: 0,
            sig_b: random_bits(rng, l),
            sig_c: random_bits(rng, l),
        };
        if strategy == ForgingStrategy::CopyKnownHalf {
            for r in state.key(Recipient::Bob, 0) {
                if r.position < l {
                    decl.sig_b[r.position] = r.bit;
                } else {
                    decl.sig_c[r.position - l] = r.bit;
                }
            }
            // Bits Bob forwarded are known to him as well.
            for r in state.key(Recipient::Charlie, 0) {
                if r.origin == Origin::ForwardedByPeer {
                    decl.sig_b[r.position] = r.bit;
                }
            }
        }
        Ok(verify(&decl, state.key(Recipient::Charlie, 0), s_v, l)?.accepted)
    })
}
