use serde::Serialize;

use crate::channel::SystemProfile;
use crate::entropy::Probability;
use crate::error::{Error, Result};

/// Relay detector with published efficiency and background rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorPreset {
    pub name: &'static str,
    /// Human-readable detector family, as printed in the raw-key-time tables.
    pub label: &'static str,
    pub eta_d: f64,
    pub y0: f64,
    pub citation: &'static str,
}

impl DetectorPreset {
    pub fn apply(&self, profile: &mut SystemProfile) {
        profile.detector_efficiency = Probability::clamped(self.eta_d);
        profile.dark_count_prob = Probability::clamped(self.y0);
    }
}

pub const PRESETS: [DetectorPreset; 4] = [
    DetectorPreset {
        name: "standard",
        label: "Standard single-photon detectors",
        eta_d: 0.145,
        y0: 6.02e-6,
        citation: "Ursin2007",
    },
    DetectorPreset {
        name: "ingaas_apd",
        label: "InGaAs APD",
        eta_d: 0.30,
        y0: 1.3e-4,
        citation: "Comandar2015",
    },
    DetectorPreset {
        name: "ingaas_inp_apd",
        label: "InGaAs/InP APD",
        eta_d: 0.55,
        y0: 5e-4,
        citation: "Comandar2015b",
    },
    DetectorPreset {
        name: "snspd",
        label: "SNSPDs",
        eta_d: 0.93,
        y0: 1e-6,
        citation: "Marsili2013",
    },
];

/// Case-insensitive lookup; `-` and `_` are interchangeable.
pub fn preset(name: &str) -> Result<&'static DetectorPreset> {
    let key = name.trim().to_ascii_lowercase().replace('-', "_");
    PRESETS.iter().find(|p| p.name == key).ok_or_else(|| {
        let known: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        Error::config("preset", format!("unknown preset `{name}` (known: {})", known.join(", ")))
    })
}

/// One printed row of the raw-key-time tables: pulse count in units of
/// 1e12 and the generation time in minutes, with its printed decimals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub preset: &'static str,
    pub n_sig_e12: f64,
    pub t_r_minutes: f64,
    pub t_r_decimals: u32,
}

/// Security level of each table and its rows.
pub const TABLES: [(f64, [TableRow; 4]); 2] = [
    (
        1e-5,
        [
            TableRow { preset: "standard", n_sig_e12: 5.58, t_r_minutes: 93.0, t_r_decimals: 0 },
            TableRow { preset: "ingaas_apd", n_sig_e12: 1.8, t_r_minutes: 30.0, t_r_decimals: 0 },
            TableRow { preset: "ingaas_inp_apd", n_sig_e12: 0.87, t_r_minutes: 14.5, t_r_decimals: 1 },
            TableRow { preset: "snspd", n_sig_e12: 0.098, t_r_minutes: 1.6, t_r_decimals: 1 },
        ],
    ),
    (
        1e-10,
        [
            TableRow { preset: "standard", n_sig_e12: 10.5, t_r_minutes: 175.0, t_r_decimals: 0 },
            TableRow { preset: "ingaas_apd", n_sig_e12: 3.35, t_r_minutes: 55.83, t_r_decimals: 2 },
            TableRow { preset: "ingaas_inp_apd", n_sig_e12: 1.63, t_r_minutes: 27.1, t_r_decimals: 1 },
            TableRow { preset: "snspd", n_sig_e12: 0.18, t_r_minutes: 3.0, t_r_decimals: 0 },
        ],
    ),
];

/// `N / (60 rate)` in minutes.
pub fn raw_key_minutes(n_sig: f64, pulse_rate: f64) -> f64 {
    n_sig / (60.0 * pulse_rate)
}

/// Truncates toward zero at `decimals` places. A relative nudge absorbs
/// representation error such as 14.499999 for 14.5.
pub fn truncate_to(x: f64, decimals: u32) -> f64 {
    let f = 10f64.powi(decimals as i32);
    (x * f * (1.0 + 1e-12)).trunc() / f
}
