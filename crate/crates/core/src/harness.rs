//! The equivalence battery: one run evaluates every finitized condition on a
//! scenario for a multiplicity hypothesis `k`, cross-checks them, and emits
//! byte-stable reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::convergence::{
    check_k_times, locally_closed_diagnostics, search_translators_with, KTimesVerdict,
    LocalClosureReport, SearchOutcome,
};
use crate::dynamics::{preimage_measures, FactKind, IndexRange, PreimageTable, Scenario};
use crate::error::{Error, Result};
use crate::subgroups::{fell_converges, ClosedSubgroup, FellCertificate};
use crate::trace::{
    inscribed_radius, multiplicity_report_with, tail_offset, upsilon_report, CutDown,
    MultiplicityBoundReport, RatioSeries, TraceOptions, UpsilonReport, Verdict, SUPPORT_FRACTION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Overrides the scenario's quadrature step.
    pub step: Option<f64>,
    pub fell_tolerance: f64,
    /// Overrides the scenario's window exhaustion.
    pub windows: Option<Vec<f64>>,
    pub index_range: Option<IndexRange>,
    pub epsilon: f64,
    pub delta: f64,
    /// Share of the index range whose minimum stands in for `liminf`.
    pub tail_fraction: f64,
    /// Margin `mu` in the ratio conditions.
    pub margin: f64,
    pub trace_tolerance: f64,
    /// Where reports are written; kept out of the report itself.
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            step: None,
            fell_tolerance: 1e-3,
            windows: None,
            index_range: None,
            epsilon: 0.02,
            delta: 0.1,
            tail_fraction: 0.5,
            margin: 0.05,
            trace_tolerance: 0.1,
            out_dir: None,
            format: OutputFormat::Json,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fell_tolerance", self.fell_tolerance),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("tail_fraction", self.tail_fraction),
            ("margin", self.margin),
            ("trace_tolerance", self.trace_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidScenario(format!(
                    "config {name} = {v} must be positive"
                )));
            }
        }
        if let Some(s) = self.step {
            if !(s > 0.0) {
                return Err(Error::NonPositiveStep(s));
            }
        }
        if self.tail_fraction > 1.0 || self.delta >= 1.0 {
            return Err(Error::InvalidScenario(
                "tail_fraction and delta must not exceed 1".into(),
            ));
        }
        Ok(())
    }

    /// The scenario with this configuration's overrides applied.
    pub fn apply(&self, sc: &Scenario) -> Scenario {
        let mut out = sc.clone();
        if let Some(s) = self.step {
            out.quadrature.step = s;
        }
        if let Some(w) = &self.windows {
            out.windows = w.clone();
        }
        if let Some(r) = &self.index_range {
            out.index_range = *r;
        }
        out
    }

    fn trace_options(&self) -> TraceOptions {
        TraceOptions {
            epsilon: self.epsilon,
            delta: self.delta,
            tail_fraction: self.tail_fraction,
            trace_tolerance: self.trace_tolerance,
        }
    }
}

/// SHA-256 over the canonical JSON of the effective scenario and the numeric
/// configuration (output location excluded).
pub fn config_fingerprint(sc: &Scenario, cfg: &RunConfig) -> Result<String> {
    let numeric = RunConfig {
        out_dir: None,
        format: OutputFormat::Json,
        ..cfg.clone()
    };
    let payload = serde_json::json!({ "scenario": sc, "config": numeric });
    let digest = Sha256::digest(canonical_json(&payload)?.as_bytes());
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// `k`-times convergence to `z`.
    KTimes,
    /// `liminf nu_{x_n}(V) >= k nu_z(V)` for every `V`.
    LiminfAtLeastK,
    /// Some `R > k - 1` bounds the `liminf` ratio for every `V`.
    LiminfAboveR,
    /// The strict `(k - 1)` bound along the nested neighborhoods.
    StrictNested,
    /// Trace lower evidence against the measured upper bound.
    TraceSandwich,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: Condition,
    pub verdict: Verdict,
    /// JSON path of the evidence object inside the report.
    pub evidence: String,
    pub summary: String,
}

/// `liminf` brackets of one neighborhood's ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioBracket {
    pub neighborhood: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub fell: FellCertificate,
    pub closure: LocalClosureReport,
    pub search: SearchOutcome,
    pub k_times: Option<KTimesVerdict>,
    pub ratios: Vec<RatioSeries>,
    /// Value of `nu_{x_n}(q(phi^{-1}(V)))` per neighborhood as `(outer, inner)`.
    pub masses: Vec<Vec<(f64, f64)>>,
    pub limit_masses: Vec<(f64, f64)>,
    pub liminf: Vec<RatioBracket>,
    pub tail_start: usize,
    pub multiplicity: Option<MultiplicityBoundReport>,
    pub upsilon: Option<UpsilonReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// Every decided condition agrees with `k`.
    Consistent,
    /// The conditions agree that `k` fails.
    Refuted,
    /// Conditions disagree, or a hypothesis audit failed.
    Contradiction,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Consistent => 0,
            RunStatus::Refuted => 2,
            RunStatus::Contradiction => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub scenario: String,
    pub k: usize,
    pub config: RunConfig,
    pub fingerprint: String,
    pub conditions: Vec<ConditionResult>,
    pub evidence: Evidence,
    pub faults: Vec<String>,
    pub status: RunStatus,
}

impl EquivalenceReport {
    pub fn verdict(&self, c: Condition) -> Option<Verdict> {
        self.conditions
            .iter()
            .find(|r| r.condition == c)
            .map(|r| r.verdict)
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }
}

fn tail_min(v: &[f64], off: usize) -> f64 {
    v[off..].iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Runs the battery. Missing hypotheses of the equivalence are errors; a
/// contradiction between conditions is reported through the status.
pub fn run_equivalence(sc: &Scenario, k: usize, cfg: &RunConfig) -> Result<EquivalenceReport> {
    if k == 0 {
        return Err(Error::InvalidScenario("k must be positive".into()));
    }
    cfg.validate()?;
    let sc = cfg.apply(sc);
    sc.validate()?;
    sc.require_fact(FactKind::OrbitLocallyClosed)?;
    sc.require_fact(FactKind::PreimageRelativelyCompact)?;
    let indices = sc.indices();
    if indices.len() < 2 {
        return Err(Error::IndexRangeTooShort(format!(
            "{} indices",
            indices.len()
        )));
    }
    let fingerprint = config_fingerprint(&sc, cfg)?;
    let mut faults = Vec::new();

    let family: Vec<(usize, ClosedSubgroup)> = indices
        .iter()
        .map(|&n| Ok((n, sc.stabilizer(Some(n))?)))
        .collect::<Result<_>>()?;
    let sz = sc.stabilizer(None)?;
    let fell = fell_converges(&family, &sz, &sc.window_list()?, cfg.fell_tolerance)?;
    if !fell.is_certified() {
        faults.push("stabilizers are not certified to converge to the limit stabilizer".into());
    }
    let closure = locally_closed_diagnostics(&sc)?;
    if !closure.consistent {
        faults.push(format!(
            "orbit of the limit is declared locally closed but the window diagnostic reads {:?}",
            closure.diagnostic
        ));
    }

    let table = PreimageTable::compute(&sc)?;
    let mut conditions = Vec::new();

    // (1) k-times convergence
    let search = search_translators_with(&sc, k, &table)?;
    let (k_times, verdict, summary) = match &search {
        SearchOutcome::Found(cert) => {
            let v = check_k_times(&sc, cert)?;
            let verdict = if v.certified {
                Verdict::Certified
            } else {
                Verdict::Refuted
            };
            let summary = format!(
                "translators found with stages {:?}; check {}",
                cert.stages,
                if v.certified { "passes" } else { "fails" }
            );
            (Some(v), verdict, summary)
        }
        SearchOutcome::Failed(f) => (
            None,
            Verdict::Refuted,
            format!("search failed: {}", f.reason),
        ),
    };
    conditions.push(ConditionResult {
        condition: Condition::KTimes,
        verdict,
        evidence: "evidence.search".into(),
        summary,
    });

    // (5), (6), (7) from the accumulation ratios
    let ratios = crate::trace::ratio_series(&sc, &table)?;
    let off = tail_offset(indices.len(), cfg.tail_fraction);
    let liminf: Vec<RatioBracket> = ratios
        .iter()
        .map(|r| RatioBracket {
            neighborhood: r.neighborhood,
            lower: tail_min(&r.lower, off),
            upper: tail_min(&r.upper, off),
        })
        .collect();
    let lo = liminf.iter().map(|b| b.lower).fold(f64::INFINITY, f64::min);
    let hi = liminf.iter().map(|b| b.upper).fold(f64::INFINITY, f64::min);
    let kf = k as f64;
    let mu = cfg.margin;
    let decide = |certified: bool, refuted: bool| {
        if certified {
            Verdict::Certified
        } else if refuted {
            Verdict::Refuted
        } else {
            Verdict::Inconclusive
        }
    };
    conditions.push(ConditionResult {
        condition: Condition::LiminfAtLeastK,
        verdict: decide(lo >= kf - mu, hi < kf - mu),
        evidence: "evidence.liminf".into(),
        summary: format!("liminf ratio in [{lo:.6}, {hi:.6}] against k = {k} (margin {mu})"),
    });
    conditions.push(ConditionResult {
        condition: Condition::LiminfAboveR,
        verdict: decide(lo > kf - 1.0 + mu, hi <= kf - 1.0 + mu),
        evidence: "evidence.liminf".into(),
        summary: format!("best R = {lo:.6} against k - 1 = {}", k - 1),
    });
    let strict_ok = liminf.iter().all(|b| b.lower > kf - 1.0 + mu);
    let strict_bad = liminf.iter().any(|b| b.upper <= kf - 1.0 + mu);
    conditions.push(ConditionResult {
        condition: Condition::StrictNested,
        verdict: decide(strict_ok, strict_bad),
        evidence: "evidence.liminf".into(),
        summary: format!(
            "per-neighborhood liminf lower brackets {:?} against k - 1 = {}",
            liminf
                .iter()
                .map(|b| (b.lower * 1e6).round() / 1e6)
                .collect::<Vec<_>>(),
            k - 1
        ),
    });

    // trace sandwich
    let opts = cfg.trace_options();
    let (multiplicity, verdict, summary) = match multiplicity_report_with(&sc, k, &table, &opts) {
        Ok(r) => {
            if let Some(t) = &r.limit_trace {
                if (t.value - 1.0).abs() > 1e-3 {
                    faults.push(format!("trace at the limit is {} instead of 1", t.value));
                }
            }
            let (v, s) = (r.status, r.note.clone());
            (Some(r), v, s)
        }
        Err(e @ Error::InconsistentSandwich(_)) => {
            faults.push(e.to_string());
            (None, Verdict::Inconclusive, e.to_string())
        }
        Err(e) => return Err(e),
    };
    conditions.push(ConditionResult {
        condition: Condition::TraceSandwich,
        verdict,
        evidence: "evidence.multiplicity".into(),
        summary,
    });

    let v = sc.neighborhoods.last().ok_or(Error::EmptyWindowList)?;
    let cut = CutDown::for_scenario(
        &sc,
        SUPPORT_FRACTION * inscribed_radius(v, &sc.limit).min(1.0),
    )?;
    let upsilon = upsilon_report(&sc, &cut, cfg.epsilon, cfg.fell_tolerance)?;
    if fell.is_certified() && !upsilon.holds {
        faults.push(format!(
            "Upsilon exceeds 2(1+eps) = {} past the Fell threshold",
            upsilon.bound
        ));
    }

    let masses: Vec<Vec<(f64, f64)>> = table
        .at
        .iter()
        .map(|row| {
            row.iter()
                .zip(&family)
                .map(|(p, (_, s))| preimage_measures(s, p))
                .collect()
        })
        .collect::<Result<_>>()?;
    let limit_masses: Vec<(f64, f64)> = table
        .limit
        .iter()
        .map(|p| preimage_measures(&sz, p))
        .collect::<Result<_>>()?;

    let any = |v: Verdict| conditions.iter().any(|c| c.verdict == v);
    if any(Verdict::Certified) && any(Verdict::Refuted) {
        let split: Vec<String> = conditions
            .iter()
            .map(|c| format!("{:?}: {:?}", c.condition, c.verdict))
            .collect();
        faults.push(format!("conditions disagree: {}", split.join(", ")));
    }
    let status = if !faults.is_empty() {
        RunStatus::Contradiction
    } else if any(Verdict::Refuted) {
        RunStatus::Refuted
    } else {
        RunStatus::Consistent
    };
    Ok(EquivalenceReport {
        scenario: sc.id.clone(),
        k,
        config: cfg.clone(),
        fingerprint,
        conditions,
        evidence: Evidence {
            fell,
            closure,
            search,
            k_times,
            ratios,
            masses,
            limit_masses,
            liminf,
            tail_start: indices[off],
            multiplicity,
            upsilon: Some(upsilon),
        },
        faults,
        status,
    })
}

/// Serializes with sorted keys and every float written with 17 significant digits.
pub fn canonical_json(v: &Value) -> Result<String> {
    let mut out = String::new();
    write_value(v, 0, &mut out)?;
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, depth: usize, out: &mut String) -> Result<()> {
    let pad = |d: usize, out: &mut String| {
        out.push('\n');
        out.extend(std::iter::repeat_n("  ", d));
    };
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&serde_json::to_string(v)?),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                if !f.is_finite() {
                    return Err(Error::InvalidScenario(format!(
                        "non-finite number {f} in report"
                    )));
                }
                let _ = write!(out, "{f:.16e}");
            }
        }
        Value::Array(a) => {
            if a.is_empty() {
                out.push_str("[]");
                return Ok(());
            }
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                pad(depth + 1, out);
                write_value(x, depth + 1, out)?;
            }
            pad(depth, out);
            out.push(']');
        }
        Value::Object(m) => {
            if m.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                pad(depth + 1, out);
                out.push_str(&serde_json::to_string(k)?);
                out.push_str(": ");
                write_value(&m[k], depth + 1, out)?;
            }
            pad(depth, out);
            out.push('}');
        }
    }
    Ok(())
}

pub fn report_json(r: &EquivalenceReport) -> Result<String> {
    canonical_json(&serde_json::to_value(r)?)
}

pub fn parse_report(text: &str) -> Result<EquivalenceReport> {
    Ok(serde_json::from_str(text)?)
}

pub const CSV_HEADER: &str = "scenario,n,quantity,value,error_bound";

fn csv_row(out: &mut String, sc: &str, n: &str, q: &str, v: f64, e: f64) {
    let _ = writeln!(out, "{sc},{n},{q},{v:.16e},{e:.16e}");
}

/// One row per `(n, quantity)`; `n = z` marks values at the limit.
pub fn report_csv(r: &EquivalenceReport) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    let id = r.scenario.replace(',', "_");
    let ev = &r.evidence;
    for (m, (o, i)) in ev.limit_masses.iter().enumerate() {
        csv_row(&mut out, &id, "z", &format!("nu_V{}", m + 1), *o, o - i);
    }
    for series in &ev.ratios {
        let m = series.neighborhood + 1;
        for (p, &n) in series.indices.iter().enumerate() {
            let n = n.to_string();
            if let Some((o, i)) = ev
                .masses
                .get(series.neighborhood)
                .and_then(|row| row.get(p))
            {
                csv_row(&mut out, &id, &n, &format!("nu_V{m}"), *o, o - i);
            }
            let (lo, hi) = (series.lower[p], series.upper[p]);
            csv_row(
                &mut out,
                &id,
                &n,
                &format!("ratio_V{m}"),
                0.5 * (lo + hi),
                0.5 * (hi - lo),
            );
        }
    }
    if let Some(mr) = &ev.multiplicity {
        if let Some(t) = &mr.limit_trace {
            csv_row(&mut out, &id, "z", "trace", t.value, t.error_bound);
        }
        for t in &mr.traces {
            if let Some(n) = t.index {
                csv_row(
                    &mut out,
                    &id,
                    &n.to_string(),
                    "trace",
                    t.value,
                    t.error_bound,
                );
            }
        }
    }
    if let SearchOutcome::Found(cert) = &ev.search {
        for (j, d) in cert.convergence_evidence.iter().enumerate() {
            for (p, &n) in cert.indices.iter().enumerate() {
                csv_row(
                    &mut out,
                    &id,
                    &n.to_string(),
                    &format!("translator_distance_{}", j + 1),
                    d[p],
                    0.0,
                );
            }
        }
    }
    if let Some(u) = &ev.upsilon {
        for (n, m) in &u.maxima {
            csv_row(&mut out, &id, &n.to_string(), "upsilon_max", *m, 0.0);
        }
    }
    out
}

/// Writes `<scenario>_k<k>.{csv,json}` into `dir` and returns the path.
pub fn emit_report(r: &EquivalenceReport, format: OutputFormat, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (ext, body) = match format {
        OutputFormat::Csv => ("csv", report_csv(r)),
        OutputFormat::Json => ("json", report_json(r)?),
    };
    let path = dir.join(format!("{}_k{}.{ext}", r.scenario, r.k));
    std::fs::write(&path, body)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::builtin_scenario;

    #[test]
    fn canonical_floats_and_keys() {
        let v = serde_json::json!({"b": 2.0, "a": [1, 0.1, -3.5e-7], "c": {"z": null, "y": "s"}});
        let s = canonical_json(&v).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("2.0000000000000000e0"));
        assert!(s.contains("1.0000000000000001e-1"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(
            canonical_json(&serde_json::json!({"x": f64::NAN})).is_ok_and(|s| s.contains("null"))
        );
    }

    #[test]
    fn config_checks() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            margin: 0.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let sc = builtin_scenario("translation").unwrap();
        let a = config_fingerprint(&sc, &RunConfig::default()).unwrap();
        let b = config_fingerprint(
            &sc,
            &RunConfig {
                out_dir: Some("/tmp/x".into()),
                ..RunConfig::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        let c = config_fingerprint(
            &sc,
            &RunConfig {
                step: Some(0.02),
                ..RunConfig::default()
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn translation_battery() {
        let sc = builtin_scenario("translation").unwrap();
        let one = run_equivalence(&sc, 1, &RunConfig::default()).unwrap();
        assert_eq!(one.status, RunStatus::Consistent, "{:?}", one.faults);
        assert!(one
            .conditions
            .iter()
            .all(|c| c.verdict == Verdict::Certified));
        let two = run_equivalence(&sc, 2, &RunConfig::default()).unwrap();
        assert_eq!(two.status, RunStatus::Refuted, "{:?}", two.conditions);
        let back = parse_report(&report_json(&two).unwrap()).unwrap();
        assert_eq!(back, two);
    }

    #[test]
    fn header_only_csv_without_series() {
        let sc = builtin_scenario("translation").unwrap();
        let mut r = run_equivalence(&sc, 1, &RunConfig::default()).unwrap();
        r.evidence.ratios.clear();
        r.evidence.limit_masses.clear();
        r.evidence.multiplicity = None;
        r.evidence.upsilon = None;
        r.evidence.search = SearchOutcome::Failed(crate::convergence::SearchFailure {
            k: 1,
            reason: String::new(),
            stages: vec![],
            trace: vec![],
        });
        assert_eq!(report_csv(&r), format!("{CSV_HEADER}\n"));
    }
}
