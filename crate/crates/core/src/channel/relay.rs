//! Linear-optics Bell-state relay: a 50:50 beam splitter followed by a
//! polarizing beam splitter on each output port and four threshold
//! detectors. Photons from both parties are treated as indistinguishable in
//! every degree of freedom except polarization and input port.

use std::collections::HashMap;
use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Arrival, Basis, PulseRecord, SystemProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    D1H,
    D1V,
    D2H,
    D2V,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::D1H, Detector::D1V, Detector::D2H, Detector::D2V];

    #[inline]
    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

const PSI_MINUS_A: u8 = 0b1001; // D1H + D2V
const PSI_MINUS_B: u8 = 0b0110; // D1V + D2H
const PSI_PLUS_A: u8 = 0b0011; // D1H + D1V
const PSI_PLUS_B: u8 = 0b1100; // D2H + D2V

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsmResult {
    PsiMinus,
    PsiPlus,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsmOutcome {
    pub result: BsmResult,
    /// Fired detectors as a bit mask over [`Detector::bit`].
    pub click_pattern: u8,
}

impl BsmOutcome {
    pub fn fired(&self) -> Vec<Detector> {
        Detector::ALL
            .into_iter()
            .filter(|d| self.click_pattern & d.bit() != 0)
            .collect()
    }
}

/// Maps a threshold click pattern to the announced result. Only the four
/// two-detector coincidences count; everything else is a failure.
#[inline]
pub fn outcome_for_mask(mask: u8) -> BsmResult {
    match mask {
        PSI_MINUS_A | PSI_MINUS_B => BsmResult::PsiMinus,
        PSI_PLUS_A | PSI_PLUS_B => BsmResult::PsiPlus,
        _ => BsmResult::Failure,
    }
}

/// Photon content entering the relay, labelled by each party's encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockInput {
    pub alice_basis: Basis,
    pub alice_bit: u8,
    pub alice: Arrival,
    pub peer_basis: Basis,
    pub peer_bit: u8,
    pub peer: Arrival,
}

/// Polarization amplitudes (H, V) of the state encoding `bit` in `basis`.
fn polarization(basis: Basis, bit: u8) -> [f64; 2] {
    match (basis, bit & 1) {
        (Basis::Z, 0) => [1.0, 0.0],
        (Basis::Z, _) => [0.0, 1.0],
        (Basis::X, 0) => [FRAC_1_SQRT_2, FRAC_1_SQRT_2],
        (Basis::X, _) => [FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
    }
}

/// Output-mode amplitudes [D1H, D1V, D2H, D2V] of one creation operator.
/// The beam splitter maps the first input to (port1 + port2)/sqrt2 and the
/// second input to (port1 - port2)/sqrt2.
fn output_form(first_port: bool, pol: [f64; 2]) -> [f64; 4] {
    let s = if first_port { 1.0 } else { -1.0 };
    let [h, v] = pol;
    [
        h * FRAC_1_SQRT_2,
        v * FRAC_1_SQRT_2,
        s * h * FRAC_1_SQRT_2,
        s * v * FRAC_1_SQRT_2,
    ]
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Exact photon-only click-pattern distribution for a Fock input, by
/// expanding the product of output creation operators.
pub fn click_distribution(input: &FockInput) -> [f64; 16] {
    let mut forms: Vec<[f64; 4]> = Vec::new();
    let a_pol = polarization(input.alice_basis, input.alice_bit);
    let a_perp = polarization(input.alice_basis, input.alice_bit ^ 1);
    let p_pol = polarization(input.peer_basis, input.peer_bit);
    let p_perp = polarization(input.peer_basis, input.peer_bit ^ 1);
    let mut push = |count: u32, form: [f64; 4]| {
        for _ in 0..count {
            forms.push(form);
        }
    };
    push(input.alice.aligned, output_form(true, a_pol));
    push(input.alice.flipped, output_form(true, a_perp));
    push(input.peer.aligned, output_form(false, p_pol));
    push(input.peer.flipped, output_form(false, p_perp));

    let mut dist = [0.0; 16];
    let n = forms.len();
    if n == 0 {
        dist[0] = 1.0;
        return dist;
    }

    let radix = n + 1;
    let stride = [1, radix, radix * radix, radix * radix * radix];
    let size = stride[3] * radix;
    let mut poly = vec![0.0f64; size];
    let mut support = vec![0usize];
    poly[0] = 1.0;
    for form in &forms {
        let mut next = vec![0.0f64; size];
        let mut touched = vec![false; size];
        let mut next_support = Vec::with_capacity(support.len() * 4);
        for &idx in &support {
            let c = poly[idx];
            if c == 0.0 {
                continue;
            }
            for o in 0..4 {
                if form[o] == 0.0 {
                    continue;
                }
                let j = idx + stride[o];
                if !touched[j] {
                    touched[j] = true;
                    next_support.push(j);
                }
                next[j] += c * form[o];
            }
        }
        poly = next;
        support = next_support;
    }

    let norm_in = factorial(input.alice.aligned as usize)
        * factorial(input.alice.flipped as usize)
        * factorial(input.peer.aligned as usize)
        * factorial(input.peer.flipped as usize);
    support.sort_unstable();
    for idx in support {
        let c = poly[idx];
        let occ = [
            idx % radix,
            (idx / stride[1]) % radix,
            (idx / stride[2]) % radix,
            idx / stride[3],
        ];
        let fact: f64 = occ.iter().map(|&k| factorial(k)).product();
        let prob = c * c * fact / norm_in;
        let mask = occ
            .iter()
            .enumerate()
            .fold(0u8, |m, (o, &k)| if k > 0 { m | (1 << o) } else { m });
        dist[mask as usize] += prob;
    }
    let total: f64 = dist.iter().sum();
    for p in dist.iter_mut() {
        *p /= total;
    }
    dist
}

/// Folds independent per-detector dark counts into a photon-only distribution.
pub(crate) fn with_dark_counts(photon: &[f64; 16], y0: f64) -> [f64; 16] {
    if y0 == 0.0 {
        return *photon;
    }
    let mut out = [0.0; 16];
    for (final_mask, slot) in out.iter_mut().enumerate() {
        let final_mask = final_mask as u8;
        let silent = 4 - final_mask.count_ones() as i32;
        let quiet = (1.0 - y0).powi(silent);
        let mut acc = 0.0;
        // Sum over photon masks contained in the final mask.
        let mut sub = final_mask;
        loop {
            let extra = (final_mask & !sub).count_ones() as i32;
            acc += photon[sub as usize] * y0.powi(extra);
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & final_mask;
        }
        *slot = acc * quiet;
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DarkSampler {
    y0: f64,
    p_none: f64,
}

impl DarkSampler {
    pub(crate) fn new(y0: f64) -> Self {
        DarkSampler {
            y0,
            p_none: (1.0 - y0).powi(4),
        }
    }

    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        if self.y0 == 0.0 || rng.gen::<f64>() < self.p_none {
            return 0;
        }
        // Conditioned on at least one dark click.
        loop {
            let mut m = 0u8;
            for d in 0..4 {
                if rng.gen::<f64>() < self.y0 {
                    m |= 1 << d;
                }
            }
            if m != 0 {
                return m;
            }
        }
    }
}

/// Memoized click distributions, stored as cumulative tables for sampling.
#[derive(Debug, Default)]
pub(crate) struct ClickCache {
    table: HashMap<FockInput, [f64; 16]>,
}

impl ClickCache {
    #[inline]
    pub(crate) fn sample_mask<R: Rng + ?Sized>(&mut self, input: &FockInput, rng: &mut R) -> u8 {
        if input.alice.total() + input.peer.total() == 0 {
            return 0;
        }
        let cdf = self.table.entry(*input).or_insert_with(|| {
            let dist = click_distribution(input);
            let mut cdf = [0.0; 16];
            let mut run = 0.0;
            for (slot, p) in cdf.iter_mut().zip(dist) {
                run += p;
                *slot = run;
            }
            cdf[15] = 1.0;
            cdf
        });
        let u: f64 = rng.gen();
        cdf.iter().position(|&c| u < c).unwrap_or(15) as u8
    }
}

fn thin<R: Rng + ?Sized>(arrival: Arrival, keep: f64, rng: &mut R) -> Arrival {
    let mut kept = Arrival::default();
    for _ in 0..arrival.aligned {
        if rng.gen::<f64>() < keep {
            kept.aligned += 1;
        }
    }
    for _ in 0..arrival.flipped {
        if rng.gen::<f64>() < keep {
            kept.flipped += 1;
        }
    }
    kept
}

/// One relay measurement. Detector efficiency thins each arriving photon
/// (uniform loss commutes with the passive network), the surviving Fock
/// state is evolved exactly, and dark counts are OR-ed into the pattern.
pub fn relay_bsm<R: Rng + ?Sized>(
    pulse_a: &PulseRecord,
    pulse_b: &PulseRecord,
    profile: &SystemProfile,
    rng: &mut R,
) -> BsmOutcome {
    let eta = profile.detector_efficiency.value();
    let input = FockInput {
        alice_basis: pulse_a.basis,
        alice_bit: pulse_a.bit,
        alice: thin(pulse_a.arriving, eta, rng),
        peer_basis: pulse_b.basis,
        peer_bit: pulse_b.bit,
        peer: thin(pulse_b.arriving, eta, rng),
    };
    let photon_mask = if input.alice.total() + input.peer.total() == 0 {
        0
    } else {
        let dist = click_distribution(&input);
        let u: f64 = rng.gen();
        let mut run = 0.0;
        let mut chosen = 15u8;
        for (m, p) in dist.iter().enumerate() {
            run += p;
            if u < run {
                chosen = m as u8;
                break;
            }
        }
        chosen
    };
    let mask = photon_mask | DarkSampler::new(profile.dark_count_prob.value()).sample(rng);
    BsmOutcome {
        result: outcome_for_mask(mask),
        click_pattern: mask,
    }
}
