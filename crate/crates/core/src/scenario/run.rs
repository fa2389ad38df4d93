use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::presets::{preset, raw_key_minutes, truncate_to, TABLES};
use super::{Mode, OutputFormat, ProtocolSettings, Scenario};
use crate::channel::{run_kgp_session, SiftedData, StopRule};
use crate::decoy::{estimate_from_session, true_error_upper_bound, PhotonPopulation, SessionEstimate};
use crate::entropy::Probability;
use crate::error::{Error, Result};
use crate::protocol::{
    simulate_forging_bob, simulate_honest_runs, simulate_repudiating_alice, EmpiricalRate,
    ForgingStrategy, HonestRunParams, HonestSummary, KeySource,
};
use crate::security::{
    analytic_kgp_bounds, analytic_report, choose_thresholds, evaluate_security, forging_tail, repudiation_bound,
    signature_length_search, KgpBounds, SearchOptions, SecurityReport,
};

/// Whether the run met every threshold it checks. `Fail` maps to exit code 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

impl Status {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: Mode,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub status: Status,
    pub diagnostic: Option<String>,
    pub body: ReportBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportBody {
    Analytic(AnalyticOutput),
    Montecarlo(MonteCarloOutput),
    Protocol(ProtocolOutput),
    TableSweep(Vec<TableLine>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticOutput {
    /// `observed`, `fixed` (given pulse count) or `search`.
    pub source: String,
    pub kgps: Vec<KgpBounds>,
    pub report: SecurityReport,
    pub t_r_minutes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutput {
    /// Pulses actually simulated per key generation.
    pub pulses: u64,
    pub scale_factor: f64,
    pub estimates: Vec<SessionEstimate>,
    /// `(n_k0, n_k1, e_k1)` bounds held against the simulated truth.
    pub bounds_hold: Vec<[bool; 3]>,
    /// Security analysis of the estimates. At desk scale it is usually
    /// infeasible, which does not fail the run.
    pub security: SecurityReport,
}

/// An empirical rate set against its analytic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    pub bound: f64,
    /// Binomial standard error at the bound.
    pub std_error: f64,
    /// `rate <= bound + 3 std_error`.
    pub within: bool,
}

impl BoundCheck {
    fn new(r: EmpiricalRate, bound: f64) -> Self {
        BoundCheck {
            trials: r.trials,
            successes: r.successes,
            rate: r.rate,
            bound,
            std_error: r.std_error_at(bound),
            within: r.within(bound, 3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutput {
    pub l: usize,
    pub error_rate: Probability,
    #[serde(rename = "p_E")]
    pub p_e: Probability,
    pub s_a: Probability,
    pub s_v: Probability,
    pub honest: HonestSummary,
    /// Bob rejecting an honest declaration.
    pub honest_abort: BoundCheck,
    /// Alice planting `(s_a + s_v)/2` mismatches with both recipients.
    pub repudiation: BoundCheck,
    /// Bob declaring coin flips to Charlie.
    pub forging: BoundCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLine {
    pub security_target: f64,
    pub detector: String,
    pub preset: String,
    #[serde(rename = "eta_D")]
    pub eta_d: f64,
    #[serde(rename = "Y0")]
    pub y0: f64,
    #[serde(rename = "N_sig")]
    pub n_sig: f64,
    pub t_r_minutes: f64,
    pub t_r_printed: f64,
    /// The computed time truncated to the printed precision equals it.
    pub matches: bool,
    #[serde(rename = "model_N_sig", skip_serializing_if = "Option::is_none", default)]
    pub model_n_sig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model_t_r_minutes: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model_error: Option<String>,
}

/// Independent 64-bit seed for sub-task `i` of a run.
fn sub_seed(seed: u64, i: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i + 1);
    r.next_u64()
}

fn search_options(sc: &Scenario) -> SearchOptions {
    SearchOptions {
        criterion: sc.criterion,
        r_fraction: sc.r_fraction,
        zeta: sc.zeta,
        ..SearchOptions::default()
    }
}

fn analytic(sc: &Scenario) -> Result<(AnalyticOutput, Option<String>)> {
    let rate = sc.pulse_rate();
    let (source, kgps, report) = if let Some(o) = &sc.observed {
        let e_bar = true_error_upper_bound(o.e_obs, o.n_half, o.r_k, sc.budget.eps_pe)?;
        let k = KgpBounds {
            n_half: o.n_half,
            n_k0: o.n_k0,
            n_k1: o.n_k1,
            e_k1: o.e_k1,
            e_bar,
            bell: None,
        };
        let mut r = evaluate_security(&[k, k], &sc.budget, sc.zeta)?;
        if let Some(n) = sc.n_sig {
            r = r.with_pulses(n, rate);
        }
        ("observed", vec![k, k], r)
    } else if let Some(n) = sc.n_sig {
        let setups = sc.setups();
        let kgps = setups
            .iter()
            .map(|s| analytic_kgp_bounds(s, n, &sc.budget, sc.r_fraction))
            .collect::<Result<Vec<_>>>()?;
        ("fixed", kgps, analytic_report(&setups, n, &sc.budget, sc.zeta, sc.r_fraction)?)
    } else {
        let setups = sc.setups();
        let opts = search_options(sc);
        let found = signature_length_search(&setups, sc.target_security.value(), &opts)?;
        let report = found
            .report
            .ok_or_else(|| Error::ProtocolInfeasible("search ended without a report".into()))?;
        let budget = sc.criterion.budget(sc.target_security.value())?;
        let kgps = setups
            .iter()
            .map(|s| analytic_kgp_bounds(s, found.n_sig, &budget, sc.r_fraction))
            .collect::<Result<Vec<_>>>()?;
        ("search", kgps, report)
    };
    let diagnostic = (!report.feasible).then(|| {
        format!(
            "infeasible: c_k0 + c_k1 (1 - h(e_k1)) <= h(E_bar) with E_bar = {:.6}, p_E = {:.6}",
            report.e_bar.value(),
            report.p_e.value()
        )
    });
    let t_r_minutes = report.n_sig.map(|n| raw_key_minutes(n, rate));
    Ok((
        AnalyticOutput {
            source: source.into(),
            kgps,
            report,
            t_r_minutes,
        },
        diagnostic,
    ))
}

fn montecarlo(
    sc: &Scenario,
    sink: &mut dyn FnMut(usize, &SiftedData) -> Result<()>,
) -> Result<MonteCarloOutput> {
    let seed = sc.seed.ok_or_else(|| Error::config("seed", "required in montecarlo mode"))?;
    let n_sig = sc.n_sig.ok_or_else(|| Error::config("N_sig", "required in montecarlo mode"))?;
    let pulses = (n_sig / sc.scale_factor).ceil().max(1.0) as u64;
    let setups = sc.setups();
    let mut sessions = Vec::new();
    for (i, setup) in setups.iter().enumerate() {
        let data = run_kgp_session(
            &setup.alice,
            &setup.peer,
            &setup.profile,
            &StopRule::PulseBudget(pulses),
            sub_seed(seed, 2 * i as u64),
        )?;
        sink(i, &data)?;
        sessions.push(data);
    }
    let mut estimates = Vec::new();
    for (i, (setup, data)) in setups.iter().zip(&sessions).enumerate() {
        let pop = PhotonPopulation::new(&setup.alice, &setup.peer);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2 * i as u64 + 1));
        estimates.push(estimate_from_session(
            data,
            &pop,
            sc.montecarlo.bell,
            &sc.budget,
            sc.r_fraction,
            &mut rng,
        )?);
    }
    let kgps: Vec<KgpBounds> = estimates.iter().map(SessionEstimate::kgp_bounds).collect();
    let security = evaluate_security(&kgps, &sc.budget, sc.zeta)?.with_pulses(pulses as f64, sc.pulse_rate());
    Ok(MonteCarloOutput {
        pulses,
        scale_factor: sc.scale_factor,
        bounds_hold: estimates
            .iter()
            .map(|e| {
                let (a, b, c) = e.bounds_hold();
                [a, b, c]
            })
            .collect(),
        estimates,
        security,
    })
}

/// Honest-abort, repudiation and forging rates at key length `l` against
/// their analytic bounds, thresholds taken as the thirds of
/// `(error_rate, p_E)`.
pub fn protocol_conformance(p: &ProtocolSettings, seed: u64) -> Result<ProtocolOutput> {
    let (s_a, s_v) = choose_thresholds(p.error_rate, p.p_e)?;
    let l = p.l;
    let lf = l as f64;
    let params = HonestRunParams {
        l,
        s_a,
        s_v,
        message: 0,
        keys: KeySource::Bsc { error_rate: p.error_rate },
    };
    let honest = simulate_honest_runs(&params, p.trials, sub_seed(seed, 0))?;
    let d = s_a.value() - p.error_rate.value();
    let abort_bound = (2.0 * (-lf * d * d).exp()).min(1.0);

    let e = Probability::clamped((s_a.value() + s_v.value()) / 2.0);
    let rep = simulate_repudiating_alice(e, e, l, s_a, s_v, p.trials, sub_seed(seed, 1))?;
    let rep_bound = repudiation_bound(s_a, s_v, lf).0.value();

    let forge = simulate_forging_bob(ForgingStrategy::RandomGuess, l, s_v, p.trials, sub_seed(seed, 2))?;
    // Charlie accepts strictly below s_v L/2 mismatches on the half he got
    // from Alice, which Bob never saw.
    let cut = s_v.value() * lf / 2.0;
    let r = (cut.ceil() as u64).saturating_sub(1);
    let tail = forging_tail(l as u64, r, lf / 2.0, Probability::ZERO, Probability::ONE)?;

    Ok(ProtocolOutput {
        l,
        error_rate: p.error_rate,
        p_e: p.p_e,
        s_a,
        s_v,
        honest_abort: BoundCheck::new(honest.abort_rate, abort_bound),
        honest,
        repudiation: BoundCheck::new(rep, rep_bound),
        forging: BoundCheck::new(forge, tail.p_f.value()),
    })
}

/// Every printed row of both raw-key-time tables, with the time recomputed
/// from the printed pulse count. With `reproduce`, each row's pulse count is
/// also searched under `sc`'s sources and channel.
pub fn table_sweep(sc: &Scenario, reproduce: bool) -> Result<Vec<TableLine>> {
    let rate = sc.pulse_rate();
    let mut lines = Vec::new();
    for (target, rows) in TABLES {
        for row in rows {
            let det = preset(row.preset)?;
            let n_sig = row.n_sig_e12 * 1e12;
            let t = raw_key_minutes(n_sig, rate);
            let mut line = TableLine {
                security_target: target,
                detector: det.label.into(),
                preset: det.name.into(),
                eta_d: det.eta_d,
                y0: det.y0,
                n_sig,
                t_r_minutes: t,
                t_r_printed: row.t_r_minutes,
                matches: (truncate_to(t, row.t_r_decimals) - row.t_r_minutes).abs() < 1e-9,
                model_n_sig: None,
                model_t_r_minutes: None,
                model_error: None,
            };
            if reproduce {
                let mut setups = sc.setups();
                for s in &mut setups {
                    det.apply(&mut s.profile);
                }
                match signature_length_search(&setups, target, &search_options(sc)) {
                    Ok(found) => {
                        line.model_n_sig = Some(found.n_sig);
                        line.model_t_r_minutes = Some(raw_key_minutes(found.n_sig, rate));
                    }
                    Err(e) => line.model_error = Some(e.to_string()),
                }
            }
            lines.push(line);
        }
    }
    Ok(lines)
}

/// Runs the scenario. `sink` receives the sifted data of each Monte-Carlo
/// key generation as it completes.
pub fn run_with_sink(
    sc: &Scenario,
    sink: &mut dyn FnMut(usize, &SiftedData) -> Result<()>,
) -> Result<Report> {
    sc.validate()?;
    let (body, status, diagnostic) = match sc.mode {
        Mode::Analytic => {
            let (out, diag) = analytic(sc)?;
            let ok = out.report.feasible;
            (ReportBody::Analytic(out), Status::from_bool(ok), diag)
        }
        Mode::Montecarlo => {
            let out = montecarlo(sc, sink)?;
            let ok = out.bounds_hold.iter().all(|b| b.iter().all(|&x| x));
            let diag = (!ok).then(|| "an estimated bound missed the simulated value".to_string());
            (ReportBody::Montecarlo(out), Status::from_bool(ok), diag)
        }
        Mode::Protocol => {
            let seed = sc.seed.ok_or_else(|| Error::config("seed", "required in protocol mode"))?;
            let out = protocol_conformance(&sc.protocol, seed)?;
            let ok = out.honest_abort.within && out.repudiation.within && out.forging.within;
            let diag = (!ok).then(|| "an empirical rate exceeded its bound by more than 3 standard errors".to_string());
            (ReportBody::Protocol(out), Status::from_bool(ok), diag)
        }
        Mode::TableSweep => {
            let lines = table_sweep(sc, sc.tables.reproduce)?;
            let ok = lines.iter().all(|l| l.matches);
            let diag = (!ok).then(|| "a printed raw-key time does not follow from its pulse count".to_string());
            (ReportBody::TableSweep(lines), Status::from_bool(ok), diag)
        }
    };
    Ok(Report {
        mode: sc.mode,
        preset: sc.preset.clone(),
        seed: sc.seed,
        status,
        diagnostic,
        body,
    })
}

pub fn run(sc: &Scenario) -> Result<Report> {
    run_with_sink(sc, &mut |_, _| Ok(()))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), x, out);
            }
        }
        Value::Null => out.push((prefix.into(), String::new())),
        Value::String(s) => out.push((prefix.into(), s.clone())),
        other => out.push((prefix.into(), other.to_string())),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl Report {
    pub fn write<W: Write>(&self, format: OutputFormat, mut w: W) -> Result<()> {
        match format {
            OutputFormat::Json => {
                serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Io(e.to_string()))?;
                writeln!(w)?;
            }
            OutputFormat::Csv => self.write_csv(w)?,
        }
        Ok(())
    }

    /// Table modes write the raw-key-time columns; the others write one
    /// `field,value` row per leaf of the JSON report.
    fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match &self.body {
            ReportBody::TableSweep(lines) => {
                out.write_record([
                    "detector", "eta_D", "Y0", "N_sig", "t_r_minutes", "security_target", "t_r_printed",
                    "matches", "model_N_sig", "model_t_r_minutes",
                ])
                .map_err(csv_err)?;
                for l in lines {
                    out.write_record([
                        l.detector.clone(),
                        l.eta_d.to_string(),
                        l.y0.to_string(),
                        l.n_sig.to_string(),
                        l.t_r_minutes.to_string(),
                        l.security_target.to_string(),
                        l.t_r_printed.to_string(),
                        l.matches.to_string(),
                        opt(l.model_n_sig),
                        opt(l.model_t_r_minutes),
                    ])
                    .map_err(csv_err)?;
                }
            }
            _ => {
                let v = serde_json::to_value(self).map_err(|e| Error::Io(e.to_string()))?;
                let mut rows = Vec::new();
                flatten("", &v, &mut rows);
                out.write_record(["field", "value"]).map_err(csv_err)?;
                for (k, x) in rows {
                    out.write_record([k, x]).map_err(csv_err)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ObservedKgp, Overrides};

    fn worked() -> Scenario {
        Scenario {
            observed: Some(ObservedKgp {
                e_obs: Probability::clamped(0.0207),
                n_half: 4.45e6,
                r_k: 5.18e5,
                n_k0: 0.0,
                n_k1: 8.69e5,
                e_k1: Probability::ZERO,
            }),
            ..Scenario::default()
        }
    }

    #[test]
    fn observed_replay() {
        let r = run(&worked()).unwrap();
        assert_eq!(r.status, Status::Pass);
        let ReportBody::Analytic(a) = &r.body else { panic!() };
        assert_eq!(a.source, "observed");
        assert!((a.report.e_bar.value() - 0.0239).abs() < 5e-4);
        assert!((a.report.s_v.value() - 0.0281).abs() < 5e-4);
        assert_eq!(a.report.pr_honest_abort.value(), 2e-5);
    }

    #[test]
    fn infeasible_replay_fails() {
        let mut sc = worked();
        sc.observed.as_mut().unwrap().e_obs = Probability::clamped(0.2);
        let r = run(&sc).unwrap();
        assert_eq!(r.status, Status::Fail);
        assert_eq!(r.status.exit_code(), 2);
        assert!(r.diagnostic.unwrap().contains("infeasible"));
    }

    #[test]
    fn table_arithmetic_matches_every_printed_time() {
        let lines = table_sweep(&Scenario::default(), false).unwrap();
        assert_eq!(lines.len(), 8);
        assert!(lines.iter().all(|l| l.matches), "{lines:?}");
        let minutes: Vec<f64> = lines.iter().map(|l| l.t_r_printed).collect();
        assert_eq!(minutes, [93.0, 30.0, 14.5, 1.6, 175.0, 55.83, 27.1, 3.0]);
    }

    #[test]
    fn table_csv_columns() {
        let sc = Scenario::from_json_str(r#"{"mode": "table-sweep"}"#, &Overrides::default()).unwrap();
        let mut buf = Vec::new();
        run(&sc).unwrap().write(OutputFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("detector,eta_D,Y0,N_sig,t_r_minutes,"));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn small_protocol_run_is_deterministic() {
        let p = ProtocolSettings {
            l: 200,
            trials: 300,
            error_rate: Probability::clamped(0.05),
            p_e: Probability::clamped(0.3),
        };
        let a = protocol_conformance(&p, 9).unwrap();
        assert_eq!(a, protocol_conformance(&p, 9).unwrap());
        assert!(a.honest_abort.within && a.repudiation.within && a.forging.within, "{a:?}");
    }

    #[test]
    fn kv_csv_has_one_row_per_leaf() {
        let mut buf = Vec::new();
        run(&worked()).unwrap().write(OutputFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("field,value\n"));
        assert!(text.contains("body.analytic.report.E_bar,"));
    }
}
