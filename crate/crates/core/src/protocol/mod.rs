//! Three-party signature protocol: distribution over two key generations,
//! symmetrization between the recipients, signing and verification.

mod simulate;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::Probability;
use crate::error::{Error, Result};

pub use simulate::{
    simulate_forging_bob, simulate_honest_run, simulate_honest_runs, simulate_repudiating_alice,
    EmpiricalRate, ForgingStrategy, HonestOutcome, HonestRunParams, HonestSummary, HonestTranscript,
    KeySource, StageEvent,
};

/// One of the two recipients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipient {
    Bob,
    Charlie,
}

impl Recipient {
    pub fn other(self) -> Recipient {
        match self {
            Recipient::Bob => Recipient::Charlie,
            Recipient::Charlie => Recipient::Bob,
        }
    }

    /// Key generation this recipient shares with Alice.
    pub fn kgp(self) -> SourceKgp {
        match self {
            Recipient::Bob => SourceKgp::AliceBob,
            Recipient::Charlie => SourceKgp::AliceCharlie,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    DirectFromAlice,
    ForwardedByPeer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKgp {
    AliceBob,
    AliceCharlie,
}

impl SourceKgp {
    /// Offset of this key generation's bits in the `2L` position space.
    fn offset(self, l: usize) -> usize {
        match self {
            SourceKgp::AliceBob => 0,
            SourceKgp::AliceCharlie => l,
        }
    }
}

/// One bit of a recipient's key. Positions `0..L` come from the Alice-Bob
/// generation, `L..2L` from Alice-Charlie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyRecord {
    pub position: usize,
    pub bit: u8,
    pub origin: Origin,
    pub source_kgp: SourceKgp,
}

/// One batch of bits sent over the recipients' secret channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelTransfer {
    pub from: Recipient,
    /// `(position, bit)` pairs, ascending in position.
    pub bits: Vec<(usize, u8)>,
}

/// Ideal authenticated secret channel between Bob and Charlie. It only
/// records what passed through it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretChannel {
    pub transcript: Vec<ChannelTransfer>,
}

impl SecretChannel {
    pub fn new() -> Self {
        Self::default()
    }

    fn send(&mut self, from: Recipient, bits: Vec<(usize, u8)>) -> &[(usize, u8)] {
        self.transcript.push(ChannelTransfer { from, bits });
        &self.transcript.last().expect("just pushed").bits
    }
}

fn check_bits(name: &str, bits: &[u8]) -> Result<()> {
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::domain(format!("{name} holds non-bit value {b}")));
    }
    Ok(())
}

/// Keeps a random half of `bits` and sends the other half over the channel.
/// Returns the kept records and the records as received by the peer.
fn split_half<R: Rng + ?Sized>(
    who: Recipient,
    bits: &[u8],
    channel: &mut SecretChannel,
    rng: &mut R,
) -> (Vec<KeyRecord>, Vec<KeyRecord>) {
    let l = bits.len();
    let kgp = who.kgp();
    let offset = kgp.offset(l);
    let mut forward = vec![false; l];
    for i in rand::seq::index::sample(rng, l, l / 2).iter() {
        forward[i] = true;
    }
    let mut kept = Vec::with_capacity(l);
    let mut sent = Vec::with_capacity(l / 2);
    for (i, &bit) in bits.iter().enumerate() {
        if forward[i] {
            sent.push((offset + i, bit));
        } else {
            kept.push(KeyRecord {
                position: offset + i,
                bit,
                origin: Origin::DirectFromAlice,
                source_kgp: kgp,
            });
        }
    }
    let received = channel
        .send(who, sent)
        .iter()
        .map(|&(position, bit)| KeyRecord {
            position,
            bit,
            origin: Origin::ForwardedByPeer,
            source_kgp: kgp,
        })
        .collect();
    (kept, received)
}

/// Each recipient forwards a uniformly random half of its string to the
/// other and keeps the rest. Returns `(S_B, S_C)`, each sorted by position.
pub fn symmetrize<R: Rng + ?Sized>(
    k_b: &[u8],
    k_c: &[u8],
    channel: &mut SecretChannel,
    rng: &mut R,
) -> Result<(Vec<KeyRecord>, Vec<KeyRecord>)> {
    let l = k_b.len();
    if k_c.len() != l {
        return Err(Error::domain(format!(
            "recipient strings differ in length: {l} and {}",
            k_c.len()
        )));
    }
    if l % 2 == 1 {
        return Err(Error::OddLength(l));
    }
    check_bits("K_B", k_b)?;
    check_bits("K_C", k_c)?;

    let (mut s_b, from_bob) = split_half(Recipient::Bob, k_b, channel, rng);
    let (mut s_c, from_charlie) = split_half(Recipient::Charlie, k_c, channel, rng);
    s_b.extend(from_charlie);
    s_c.extend(from_bob);
    s_b.sort_by_key(|r| r.position);
    s_c.sort_by_key(|r| r.position);
    Ok((s_b, s_c))
}

/// Raw strings of one future message, straight out of the two key generations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawKeys {
    /// Alice's string from the generation with Bob, `A^B_m`.
    pub alice_b: Vec<u8>,
    /// Alice's string from the generation with Charlie, `A^C_m`.
    pub alice_c: Vec<u8>,
    /// Bob's string `K^B_m`.
    pub bob: Vec<u8>,
    /// Charlie's string `K^C_m`.
    pub charlie: Vec<u8>,
}

/// Alice's signature strings for one message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliceStrings {
    pub to_bob: Vec<u8>,
    pub to_charlie: Vec<u8>,
}

/// Everything held after the distribution stage, indexed by message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedKeyState {
    pub l: usize,
    pub alice: [AliceStrings; 2],
    pub bob: [Vec<KeyRecord>; 2],
    pub charlie: [Vec<KeyRecord>; 2],
}

impl SignedKeyState {
    /// Runs the distribution stage for both possible messages.
    pub fn distribute<R: Rng + ?Sized>(
        raw: [RawKeys; 2],
        channel: &mut SecretChannel,
        rng: &mut R,
    ) -> Result<Self> {
        let l = raw[0].alice_b.len();
        for (m, r) in raw.iter().enumerate() {
            for (name, s) in [
                ("alice_b", &r.alice_b),
                ("alice_c", &r.alice_c),
                ("bob", &r.bob),
                ("charlie", &r.charlie),
            ] {
                if s.len() != l {
                    return Err(Error::domain(format!(
                        "message {m}: {name} has length {}, expected {l}",
                        s.len()
                    )));
                }
                check_bits(name, s)?;
            }
        }
        let [r0, r1] = raw;
        let (b0, c0) = symmetrize(&r0.bob, &r0.charlie, channel, rng)?;
        let (b1, c1) = symmetrize(&r1.bob, &r1.charlie, channel, rng)?;
        Ok(SignedKeyState {
            l,
            alice: [
                AliceStrings { to_bob: r0.alice_b, to_charlie: r0.alice_c },
                AliceStrings { to_bob: r1.alice_b, to_charlie: r1.alice_c },
            ],
            bob: [b0, b1],
            charlie: [c0, c1],
        })
    }

    pub fn key(&self, who: Recipient, message: u8) -> &[KeyRecord] {
        let m = (message & 1) as usize;
        match who {
            Recipient::Bob => &self.bob[m],
            Recipient::Charlie => &self.charlie[m],
        }
    }
}

/// `(m, Sig_m)` with `Sig_m = (A^B_m, A^C_m)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub message: u8,
    pub sig_b: Vec<u8>,
    pub sig_c: Vec<u8>,
}

impl Declaration {
    pub fn bit_len(&self) -> usize {
        self.sig_b.len() + self.sig_c.len()
    }
}

pub fn sign(state: &SignedKeyState, message: u8) -> Result<Declaration> {
    if message > 1 {
        return Err(Error::domain(format!("message {message} is not a bit")));
    }
    let a = &state.alice[message as usize];
    Ok(Declaration {
        message,
        sig_b: a.to_bob.clone(),
        sig_c: a.to_charlie.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub accepted: bool,
    pub mismatches_direct: u64,
    pub mismatches_forwarded: u64,
    pub threshold_used: Probability,
}

/// Mismatches of `key` against the declaration, split by origin. Accepts iff
/// both counts are strictly below `threshold · L/2`.
pub fn verify(
    decl: &Declaration,
    key: &[KeyRecord],
    threshold: Probability,
    l: usize,
) -> Result<VerificationResult> {
    if decl.sig_b.len() != l || decl.sig_c.len() != l {
        return Err(Error::MalformedDeclaration(format!(
            "signature halves of length {} and {}, expected {l}",
            decl.sig_b.len(),
            decl.sig_c.len()
        )));
    }
    if key.len() != l {
        return Err(Error::MalformedDeclaration(format!(
            "key of length {}, expected {l}",
            key.len()
        )));
    }
    let t = threshold.value();
    if !(t > 0.0 && t < 0.5) {
        return Err(Error::domain(format!("threshold {t} outside (0, 1/2)")));
    }
    let (mut direct, mut forwarded) = (0u64, 0u64);
    for r in key {
        let expected = match r.position {
            p if p < l => decl.sig_b[p],
            p if p < 2 * l => decl.sig_c[p - l],
            p => {
                return Err(Error::MalformedDeclaration(format!(
                    "key position {p} outside [0, {})",
                    2 * l
                )))
            }
        };
        if expected != r.bit {
            match r.origin {
                Origin::DirectFromAlice => direct += 1,
                Origin::ForwardedByPeer => forwarded += 1,
            }
        }
    }
    let limit = t * l as f64 / 2.0;
    Ok(VerificationResult {
        accepted: (direct as f64) < limit && (forwarded as f64) < limit,
        mismatches_direct: direct,
        mismatches_forwarded: forwarded,
        threshold_used: threshold,
    })
}

/// Signs a multi-bit message one bit at a time, one distribution per bit.
pub fn sign_message(states: &[SignedKeyState], bits: &[u8]) -> Result<Vec<Declaration>> {
    if states.len() != bits.len() {
        return Err(Error::domain(format!(
            "{} message bits but {} distributed key sets",
            bits.len(),
            states.len()
        )));
    }
    states.iter().zip(bits).map(|(s, &b)| sign(s, b)).collect()
}

/// Accepts a multi-bit message iff every bit's declaration is accepted.
pub fn verify_message(
    decls: &[Declaration],
    states: &[SignedKeyState],
    who: Recipient,
    threshold: Probability,
) -> Result<(bool, Vec<VerificationResult>)> {
    if decls.len() != states.len() {
        return Err(Error::MalformedDeclaration(format!(
            "{} declarations for {} key sets",
            decls.len(),
            states.len()
        )));
    }
    let results = decls
        .iter()
        .zip(states)
        .map(|(d, s)| verify(d, s.key(who, d.message), threshold, s.l))
        .collect::<Result<Vec<_>>>()?;
    Ok((results.iter().all(|r| r.accepted), results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_bits(rng: &mut ChaCha8Rng, l: usize) -> Vec<u8> {
        (0..l).map(|_| rng.gen_range(0..2u8)).collect()
    }

    fn noiseless_state(l: usize, seed: u64) -> SignedKeyState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = [(); 2].map(|_| {
            let a = random_bits(&mut rng, l);
            let c = random_bits(&mut rng, l);
            RawKeys { alice_b: a.clone(), alice_c: c.clone(), bob: a, charlie: c }
        });
        SignedKeyState::distribute(raw, &mut SecretChannel::new(), &mut rng).unwrap()
    }

    #[test]
    fn two_bit_strings_split_one_and_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ch = SecretChannel::new();
        let (b, c) = symmetrize(&[0, 1], &[1, 1], &mut ch, &mut rng).unwrap();
        for key in [&b, &c] {
            assert_eq!(key.len(), 2);
            assert_eq!(key.iter().filter(|r| r.origin == Origin::DirectFromAlice).count(), 1);
        }
        assert_eq!(ch.transcript.len(), 2);
        assert!(matches!(
            symmetrize(&[0, 1, 0], &[1, 1, 0], &mut ch, &mut rng),
            Err(Error::OddLength(3))
        ));
    }

    #[test]
    fn symmetrization_conserves_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kb = random_bits(&mut rng, 40);
        let kc = random_bits(&mut rng, 40);
        let (b, c) = symmetrize(&kb, &kc, &mut SecretChannel::new(), &mut rng).unwrap();
        let mut got: Vec<(usize, u8)> = b.iter().chain(&c).map(|r| (r.position, r.bit)).collect();
        got.sort();
        let mut want: Vec<(usize, u8)> = kb.iter().enumerate().map(|(i, &x)| (i, x)).collect();
        want.extend(kc.iter().enumerate().map(|(i, &x)| (40 + i, x)));
        assert_eq!(got, want);
        for (key, own) in [(&b, SourceKgp::AliceBob), (&c, SourceKgp::AliceCharlie)] {
            assert_eq!(key.iter().filter(|r| r.source_kgp == own).count(), 20);
            assert!(key
                .iter()
                .all(|r| (r.source_kgp == own) == (r.origin == Origin::DirectFromAlice)));
        }
    }

    #[test]
    fn sign_is_stored_strings() {
        let s = noiseless_state(10, 3);
        let d = sign(&s, 0).unwrap();
        assert_eq!(d.sig_b, s.alice[0].to_bob);
        assert_eq!(d.sig_c, s.alice[0].to_charlie);
        assert_eq!(d, sign(&s, 0).unwrap());
        assert_eq!(d.bit_len(), 20);
        assert!(sign(&s, 2).is_err());
    }

    #[test]
    fn perfect_match_accepts() {
        let s = noiseless_state(20, 4);
        let d = sign(&s, 1).unwrap();
        let t = Probability::clamped(0.1);
        for who in [Recipient::Bob, Recipient::Charlie] {
            let r = verify(&d, s.key(who, 1), t, 20).unwrap();
            assert!(r.accepted);
            assert_eq!((r.mismatches_direct, r.mismatches_forwarded), (0, 0));
        }
    }

    fn flip_in_half(d: &mut Declaration, key: &[KeyRecord], origin: Origin, count: usize, l: usize) {
        for r in key.iter().filter(|r| r.origin == origin).take(count) {
            if r.position < l {
                d.sig_b[r.position] ^= 1;
            } else {
                d.sig_c[r.position - l] ^= 1;
            }
        }
    }

    #[test]
    fn threshold_is_strict_in_both_halves() {
        // s_a · L/2 = 0.2 · 10 = 2 exactly.
        let l = 20;
        let s = noiseless_state(l, 5);
        let key = s.key(Recipient::Bob, 0);
        let t = Probability::clamped(0.2);
        let mut d = sign(&s, 0).unwrap();
        flip_in_half(&mut d, key, Origin::DirectFromAlice, 2, l);
        let r = verify(&d, key, t, l).unwrap();
        assert_eq!((r.mismatches_direct, r.mismatches_forwarded), (2, 0));
        assert!(!r.accepted);

        let mut d = sign(&s, 0).unwrap();
        flip_in_half(&mut d, key, Origin::DirectFromAlice, 1, l);
        assert!(verify(&d, key, t, l).unwrap().accepted);
        flip_in_half(&mut d, key, Origin::ForwardedByPeer, 3, l);
        let r = verify(&d, key, t, l).unwrap();
        assert_eq!((r.mismatches_direct, r.mismatches_forwarded), (1, 3));
        assert!(!r.accepted);
    }

    #[test]
    fn malformed_inputs() {
        let s = noiseless_state(10, 6);
        let mut d = sign(&s, 0).unwrap();
        let key = s.key(Recipient::Charlie, 0);
        let t = Probability::clamped(0.1);
        assert!(verify(&d, key, Probability::clamped(0.5), 10).is_err());
        d.sig_c.pop();
        assert!(matches!(verify(&d, key, t, 10), Err(Error::MalformedDeclaration(_))));
        let d = sign(&s, 0).unwrap();
        assert!(matches!(verify(&d, &key[1..], t, 10), Err(Error::MalformedDeclaration(_))));
    }

    #[test]
    fn multi_bit_messages() {
        let states: Vec<_> = (0..3).map(|i| noiseless_state(8, 10 + i)).collect();
        let bits = [1, 0, 1];
        let decls = sign_message(&states, &bits).unwrap();
        let t = Probability::clamped(0.2);
        let (ok, rs) = verify_message(&decls, &states, Recipient::Charlie, t).unwrap();
        assert!(ok);
        assert_eq!(rs.len(), 3);
        let mut forged = decls.clone();
        forged[1].message = 1;
        let (ok, _) = verify_message(&forged, &states, Recipient::Bob, t).unwrap();
        assert!(!ok);
        assert!(sign_message(&states, &bits[..2]).is_err());
    }

    #[test]
    fn transcript_roundtrips_json() {
        let s = noiseless_state(4, 7);
        let js = serde_json::to_string(&s).unwrap();
        assert!(js.contains("\"origin\":\"forwarded_by_peer\""));
        assert_eq!(serde_json::from_str::<SignedKeyState>(&js).unwrap(), s);
    }
}
