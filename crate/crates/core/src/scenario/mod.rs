//! Scenario files, detector presets and the orchestration behind the CLI.
//!
//! A scenario is a JSON object merged onto the built-in defaults, so an empty
//! file is a complete scenario.

mod presets;
mod run;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::{BellState, DecoySourceConfig, SystemProfile};
use crate::decoy::ErrorBudget;
use crate::entropy::Probability;
use crate::error::{Error, Result};
use crate::security::{KgpSetup, SecurityCriterion, DEFAULT_ZETA};

pub use presets::{preset, raw_key_minutes, truncate_to, DetectorPreset, TableRow, PRESETS, TABLES};
pub use run::{
    protocol_conformance, run, run_with_sink, table_sweep, AnalyticOutput, BoundCheck,
    MonteCarloOutput, ProtocolOutput, Report, ReportBody, Status, TableLine,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Analytic,
    Montecarlo,
    Protocol,
    TableSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Alice's source and the recipient's source in one key generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSources {
    pub alice: DecoySourceConfig,
    pub peer: DecoySourceConfig,
}

impl Default for PairSources {
    fn default() -> Self {
        PairSources {
            alice: DecoySourceConfig::standard(),
            peer: DecoySourceConfig::standard(),
        }
    }
}

/// Measured key-generation figures, fed straight to the security analysis
/// instead of being estimated from a channel model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedKgp {
    pub e_obs: Probability,
    pub n_half: f64,
    pub r_k: f64,
    pub n_k0: f64,
    pub n_k1: f64,
    pub e_k1: Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSettings {
    pub bell: BellState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSettings {
    /// Key length per recipient per message.
    pub l: usize,
    pub trials: u64,
    /// Honest mismatch rate between Alice and each recipient.
    pub error_rate: Probability,
    /// Adversary floor used to place the thresholds.
    #[serde(rename = "p_E")]
    pub p_e: Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TableSettings {
    /// Also search each row's pulse count with the analytic pipeline.
    pub reproduce: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub mode: Mode,
    /// Detector preset applied to `profile` before the file's own values.
    pub preset: Option<String>,
    pub alice_bob: PairSources,
    pub alice_charlie: PairSources,
    pub profile: SystemProfile,
    /// Used when `n_sig` or `observed` is given; a search derives its own
    /// budget from `target_security` and `criterion`.
    pub budget: ErrorBudget,
    pub target_security: Probability,
    pub criterion: SecurityCriterion,
    pub zeta: f64,
    /// Share of the signal-signal Z events spent on error estimation.
    pub r_fraction: f64,
    /// Pulses per key generation. Analytic mode searches for it when absent.
    #[serde(rename = "N_sig")]
    pub n_sig: Option<f64>,
    pub observed: Option<ObservedKgp>,
    pub seed: Option<u64>,
    pub format: OutputFormat,
    /// Divides the pulse budget of Monte-Carlo sessions.
    pub scale_factor: f64,
    pub montecarlo: MonteCarloSettings,
    pub protocol: ProtocolSettings,
    pub tables: TableSettings,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            mode: Mode::Analytic,
            preset: None,
            alice_bob: PairSources::default(),
            alice_charlie: PairSources::default(),
            profile: SystemProfile::standard(),
            budget: ErrorBudget::standard(),
            target_security: Probability::clamped(1e-5),
            criterion: SecurityCriterion::OrderOf,
            zeta: DEFAULT_ZETA,
            r_fraction: 0.055,
            n_sig: None,
            observed: None,
            seed: None,
            format: OutputFormat::Json,
            scale_factor: 1.0,
            montecarlo: MonteCarloSettings { bell: BellState::PsiMinus },
            protocol: ProtocolSettings {
                l: 1000,
                trials: 10_000,
                error_rate: Probability::clamped(0.1),
                p_e: Probability::clamped(0.4),
            },
            tables: TableSettings::default(),
        }
    }
}

/// Overrides the loader applies after the file, in CLI order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub format: Option<OutputFormat>,
    pub scale_factor: Option<f64>,
    pub n_sig: Option<f64>,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn dotted(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." {
        "<root>".into()
    } else {
        s
    }
}

impl Scenario {
    pub fn from_json_str(text: &str, overrides: &Overrides) -> Result<Self> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| Error::config("<root>", format!("not valid JSON: {e}")))?;
        Self::from_value(user, overrides)
    }

    /// Defaults, then the preset, then the file, then the overrides.
    pub fn from_value(user: Value, overrides: &Overrides) -> Result<Self> {
        if !user.is_object() {
            return Err(Error::config("<root>", "a scenario must be a JSON object"));
        }
        let preset_name = overrides
            .preset
            .clone()
            .or_else(|| user.get("preset").and_then(Value::as_str).map(str::to_owned));
        let mut base = Scenario::default();
        if let Some(name) = &preset_name {
            preset(name)?.apply(&mut base.profile);
        }
        let mut merged = serde_json::to_value(&base).map_err(|e| Error::Io(e.to_string()))?;
        merge(&mut merged, user);
        let mut sc: Scenario = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = dotted(e.path());
            Error::config(path, e.into_inner().to_string())
        })?;
        sc.preset = preset_name.map(|n| preset(&n).map(|p| p.name.to_string())).transpose()?;
        if let Some(m) = overrides.mode {
            sc.mode = m;
        }
        if let Some(s) = overrides.seed {
            sc.seed = Some(s);
        }
        if let Some(f) = overrides.format {
            sc.format = f;
        }
        if let Some(s) = overrides.scale_factor {
            sc.scale_factor = s;
        }
        if let Some(n) = overrides.n_sig {
            sc.n_sig = Some(n);
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.alice_bob.alice.validate("alice_bob.alice")?;
        self.alice_bob.peer.validate("alice_bob.peer")?;
        self.alice_charlie.alice.validate("alice_charlie.alice")?;
        self.alice_charlie.peer.validate("alice_charlie.peer")?;
        self.profile.validate("profile")?;
        self.budget
            .validate()
            .map_err(|e| Error::config("budget", e.to_string()))?;
        let t = self.target_security.value();
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::config("target_security", "must lie in (0, 1)"));
        }
        if !(self.zeta > 1.0 && self.zeta.is_finite()) {
            return Err(Error::config("zeta", "must exceed 1"));
        }
        if !(self.r_fraction > 0.0 && self.r_fraction < 1.0) {
            return Err(Error::config("r_fraction", "must lie in (0, 1)"));
        }
        if let Some(n) = self.n_sig {
            if !(n >= 1.0 && n.is_finite()) {
                return Err(Error::config("N_sig", "must be a finite pulse count of at least 1"));
            }
        }
        if let Some(o) = &self.observed {
            if !(o.n_half >= 1.0 && o.r_k >= 1.0 && o.n_k0 >= 0.0 && o.n_k1 >= 0.0) {
                return Err(Error::config("observed", "counts must be nonnegative, n_half and r_k positive"));
            }
            if o.n_k0 + o.n_k1 > o.n_half {
                return Err(Error::config("observed", "n_k0 + n_k1 exceeds n_half"));
            }
        }
        if !(self.scale_factor >= 1.0 && self.scale_factor.is_finite()) {
            return Err(Error::config("scale_factor", "must be at least 1"));
        }
        if matches!(self.mode, Mode::Montecarlo | Mode::Protocol) && self.seed.is_none() {
            return Err(Error::config("seed", "required in montecarlo and protocol modes"));
        }
        if self.mode == Mode::Montecarlo && self.n_sig.is_none() {
            return Err(Error::config("N_sig", "required in montecarlo mode"));
        }
        let p = &self.protocol;
        if p.l == 0 || p.l % 2 == 1 {
            return Err(Error::config("protocol.l", "must be a positive even length"));
        }
        if p.trials == 0 {
            return Err(Error::config("protocol.trials", "must be positive"));
        }
        if !(p.error_rate.value() < p.p_e.value() && p.p_e.value() < 0.5) {
            return Err(Error::config("protocol", "need error_rate < p_E < 1/2"));
        }
        Ok(())
    }

    /// Both key generations sharing the scenario's channel.
    pub fn setups(&self) -> [KgpSetup; 2] {
        [self.alice_bob, self.alice_charlie].map(|s| KgpSetup {
            alice: s.alice,
            peer: s.peer,
            profile: self.profile,
        })
    }

    pub fn pulse_rate(&self) -> f64 {
        self.alice_bob.peer.pulse_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Scenario> {
        Scenario::from_json_str(text, &Overrides::default())
    }

    #[test]
    fn empty_file_with_standard_preset_is_the_default_parameter_set() {
        let s = Scenario::from_json_str("{}", &Overrides { preset: Some("standard".into()), ..Default::default() }).unwrap();
        assert_eq!(s.preset.as_deref(), Some("standard"));
        assert_eq!(s.profile, SystemProfile::standard());
        assert_eq!(s.alice_bob.alice, DecoySourceConfig::standard());
        assert_eq!(s.alice_bob.peer.pulse_rate, 1e9);
        assert_eq!(s.budget, ErrorBudget::standard());
        assert_eq!((s.zeta, s.r_fraction), (1.16, 0.055));
        assert_eq!(s.budget.eps_pe.value(), 1e-5);
        assert_eq!(s.budget.g.value(), 1e-5);
        assert_eq!(s.budget.eps_ab.value(), 1e-10);
    }

    #[test]
    fn preset_from_file_is_case_insensitive() {
        let s = load(r#"{"preset": "SNSPD"}"#).unwrap();
        assert_eq!(s.profile.detector_efficiency.value(), 0.93);
        assert_eq!(s.profile.dark_count_prob.value(), 1e-6);
        assert_eq!(s.preset.as_deref(), Some("snspd"));
    }

    #[test]
    fn file_values_override_the_preset() {
        let s = load(r#"{"preset": "snspd", "profile": {"dark_count_prob": 2e-6}}"#).unwrap();
        assert_eq!(s.profile.detector_efficiency.value(), 0.93);
        assert_eq!(s.profile.dark_count_prob.value(), 2e-6);
        assert_eq!(s.profile.distance_km, 50.0);
    }

    #[test]
    fn range_errors_carry_the_field_path() {
        match load(r#"{"profile": {"detector_efficiency": 1.5}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "profile.detector_efficiency"),
            other => panic!("{other:?}"),
        }
        match load(r#"{"alice_bob": {"peer": {"intensities": {"signal": "x"}}}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "alice_bob.peer.intensities.signal"),
            other => panic!("{other:?}"),
        }
        match load(r#"{"scale_factor": 0.5}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "scale_factor"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_bad_json_are_rejected() {
        assert!(matches!(load(r#"{"sede": 3}"#), Err(Error::Config { .. })));
        assert!(matches!(load("{"), Err(Error::Config { .. })));
        assert!(matches!(load("[]"), Err(Error::Config { .. })));
    }

    #[test]
    fn seeded_modes_need_a_seed() {
        assert!(matches!(load(r#"{"mode": "protocol"}"#), Err(Error::Config { path, .. }) if path == "seed"));
        assert!(load(r#"{"mode": "protocol", "seed": 7}"#).is_ok());
        let o = Overrides { seed: Some(1), mode: Some(Mode::Montecarlo), ..Default::default() };
        assert!(matches!(Scenario::from_json_str("{}", &o), Err(Error::Config { path, .. }) if path == "N_sig"));
        assert_eq!(load(r#"{"mode": "table-sweep"}"#).unwrap().mode, Mode::TableSweep);
    }

    #[test]
    fn defaults_round_trip() {
        let s = Scenario::default();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(load(&text).unwrap(), s);
    }
}
