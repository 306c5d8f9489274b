//! `k`-times convergence in the orbit space: checking translator families,
//! constructing them greedily from measure accumulation, and the diagnostics
//! that distinguish locally closed orbits.
//!
//! Escape to infinity is finitized: a difference `t_n^(j) - t_n^(i)` escapes a
//! window `K` when the coset `t_n^(j) - t_n^(i) + S_{x_n}` misses `K`, and a
//! verdict never claims more than the largest configured window.

use serde::{Deserialize, Serialize};

use crate::dynamics::{PreimageTable, Region, Scenario};
use crate::error::{Error, Result};
use crate::quotient::{
    coordinate_split_measure, quotient_cells, split_axes, BoxSet, GBox, QuotientCell,
};
use crate::subgroups::{AxisKind, ClosedSubgroup, FELL_MIN_TAIL};
use crate::{Element, Window};

/// Margin factor in the stage inequalities: `eps_m = STAGE_MARGIN * nu_z(A_m)`.
pub const STAGE_MARGIN: f64 = 0.05;
/// Translates `s` sampled per real axis and box for the excision inequality.
const EXCISION_SAMPLES: usize = 16;
/// Cap on translate samples per excision estimate.
const EXCISION_BUDGET: usize = 256;
/// Cap on greedy candidates per index.
const CANDIDATE_LIMIT: usize = 400_000;

/// First index of the tail a verdict is judged on.
pub fn tail_start(indices: &[usize]) -> Option<usize> {
    let len = indices.len();
    let tail = ((len as f64 * FELL_MIN_TAIL).ceil() as usize).max(1);
    (len >= tail).then(|| indices[len - tail])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeEntry {
    pub i: usize,
    pub j: usize,
    pub window_radius: f64,
    /// First index from which the coset misses the window for the rest of the range.
    pub threshold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslatorCertificate {
    pub k: usize,
    pub indices: Vec<usize>,
    /// `translators[i][p]` is `t_n^(i+1)` for `n = indices[p]`.
    pub translators: Vec<Vec<Element>>,
    /// Stage starts `n_m`; empty for hand-supplied families.
    pub stages: Vec<usize>,
    /// `convergence_evidence[i][p] = d(t_n^(i+1) . x_n, z)`.
    pub convergence_evidence: Vec<Vec<f64>>,
    pub escape_table: Vec<EscapeEntry>,
}

impl TranslatorCertificate {
    /// Assembles a certificate and records its evidence on the scenario.
    pub fn new(
        sc: &Scenario,
        indices: Vec<usize>,
        translators: Vec<Vec<Element>>,
        stages: Vec<usize>,
    ) -> Result<Self> {
        let k = translators.len();
        if k == 0 {
            return Err(Error::InvalidScenario("k must be positive".into()));
        }
        if translators.iter().any(|t| t.len() != indices.len()) {
            return Err(Error::IndexRangeTooShort(
                "translators do not cover the index range".into(),
            ));
        }
        let a = sc.action();
        let mut evidence = Vec::with_capacity(k);
        for family in &translators {
            let mut d = Vec::with_capacity(indices.len());
            for (t, &n) in family.iter().zip(&indices) {
                let y = a.act(t, &sc.point(n))?;
                d.push(sc.space.distance(&y, &sc.limit));
            }
            evidence.push(d);
        }
        let stabilizers: Vec<ClosedSubgroup> = indices
            .iter()
            .map(|&n| sc.stabilizer(Some(n)))
            .collect::<Result<_>>()?;
        let mut escape_table = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                let dist: Vec<f64> = (0..indices.len())
                    .map(|p| {
                        stabilizers[p].distance(&translators[j][p].try_sub(&translators[i][p])?)
                    })
                    .collect::<Result<_>>()?;
                for &r in &sc.windows {
                    escape_table.push(EscapeEntry {
                        i: i + 1,
                        j: j + 1,
                        window_radius: r,
                        threshold: escape_threshold(&indices, &dist, r),
                    });
                }
            }
        }
        Ok(Self {
            k,
            indices,
            translators,
            stages,
            convergence_evidence: evidence,
            escape_table,
        })
    }

    pub fn translator(&self, i: usize, n: usize) -> Option<&Element> {
        let p = self.indices.iter().position(|&m| m == n)?;
        self.translators.get(i)?.get(p)
    }

    /// The first `k - 1` families, re-evaluated.
    pub fn truncated(&self, sc: &Scenario) -> Result<Self> {
        let mut t = self.translators.clone();
        t.pop();
        Self::new(sc, self.indices.clone(), t, self.stages.clone())
    }
}

/// First index after which `dist > r` holds to the end of the range.
fn escape_threshold(indices: &[usize], dist: &[f64], r: f64) -> Option<usize> {
    let mut start = None;
    for p in (0..indices.len()).rev() {
        if dist[p] > r {
            start = Some(indices[p]);
        } else {
            break;
        }
    }
    start
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KTimesVerdict {
    pub certified: bool,
    pub k: usize,
    pub tolerance: f64,
    pub tail_start: usize,
    /// Tail maximum of `d(t_n^(i) . x_n, z)` per family.
    pub tail_max_distance: Vec<f64>,
    pub escape_table: Vec<EscapeEntry>,
    pub largest_window: f64,
    pub failures: Vec<String>,
}

/// Checks both conditions of `k`-times convergence on the configured windows.
pub fn check_k_times(sc: &Scenario, cert: &TranslatorCertificate) -> Result<KTimesVerdict> {
    let fresh = TranslatorCertificate::new(
        sc,
        cert.indices.clone(),
        cert.translators.clone(),
        cert.stages.clone(),
    )?;
    let tail = tail_start(&fresh.indices)
        .filter(|_| fresh.indices.len() >= 2)
        .ok_or_else(|| Error::IndexRangeTooShort(format!("{} indices", fresh.indices.len())))?;
    let tol = sc.convergence_tolerance();
    let from = fresh
        .indices
        .iter()
        .position(|&n| n == tail)
        .expect("tail index");
    let mut failures = Vec::new();
    let tail_max_distance: Vec<f64> = fresh
        .convergence_evidence
        .iter()
        .map(|d| d[from..].iter().cloned().fold(0.0, f64::max))
        .collect();
    for (i, &d) in tail_max_distance.iter().enumerate() {
        if !(d < tol) {
            failures.push(format!(
                "family {}: tail distance {d:e} not below {tol:e}",
                i + 1
            ));
        }
    }
    for e in &fresh.escape_table {
        match e.threshold {
            Some(t) if t <= tail => {}
            Some(t) => failures.push(format!(
                "pair ({}, {}) escapes the window of radius {} only from n = {t}, after the tail start {tail}",
                e.i, e.j, e.window_radius
            )),
            None => failures.push(format!(
                "pair ({}, {}) does not escape the window of radius {}",
                e.i, e.j, e.window_radius
            )),
        }
    }
    Ok(KTimesVerdict {
        certified: failures.is_empty(),
        k: fresh.k,
        tolerance: tol,
        tail_start: tail,
        tail_max_distance,
        escape_table: fresh.escape_table,
        largest_window: sc.windows.iter().cloned().fold(0.0, f64::max),
        failures,
    })
}

/// One evaluation of the stage inequalities at `(m, n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityRecord {
    pub stage: usize,
    pub n: usize,
    /// Largest `nu_{x_n}(q(K_m + s) ∩ q(phi^{-1}(W_m)))` over sampled `s`.
    pub excised: f64,
    pub excised_bound: f64,
    /// Inner estimate of `nu_{x_n}(q(phi^{-1}(W_m)))`.
    pub measure: f64,
    pub measure_bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchFailure {
    pub k: usize,
    pub reason: String,
    pub stages: Vec<usize>,
    pub trace: Vec<InequalityRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum SearchOutcome {
    Found(TranslatorCertificate),
    Failed(SearchFailure),
}

pub fn search_translators(sc: &Scenario, k: usize) -> Result<SearchOutcome> {
    search_translators_with(sc, k, &PreimageTable::compute(sc)?)
}

/// Greedy translator construction over stages `n_1 < n_2 < ...`. Stage `m`
/// starts at the first index after which both the excision and the measure
/// inequality hold for every later index.
pub fn search_translators_with(
    sc: &Scenario,
    k: usize,
    table: &PreimageTable,
) -> Result<SearchOutcome> {
    if k == 0 {
        return Err(Error::InvalidScenario("k must be positive".into()));
    }
    let indices = sc.indices();
    if indices.len() < 2 {
        return Err(Error::IndexRangeTooShort(format!(
            "{} indices",
            indices.len()
        )));
    }
    let z_stab = sc.stabilizer(None)?;
    let stabs: Vec<ClosedSubgroup> = indices
        .iter()
        .map(|&n| sc.stabilizer(Some(n)))
        .collect::<Result<_>>()?;
    let mut trace = Vec::new();
    let mut stages: Vec<usize> = Vec::new();
    for m in 0..sc.stage_count() {
        let pz = &table.limit[m];
        let a_m = if pz.outer.is_empty() {
            0.0
        } else {
            coordinate_split_measure(&z_stab, &[&pz.outer])?
        };
        let eps = STAGE_MARGIN * a_m;
        let window = Window::centered(sc.group, sc.windows[m])?;
        let kbox = GBox::from_window(&window);
        let mut holds = Vec::with_capacity(indices.len());
        for (p, &n) in indices.iter().enumerate() {
            let pre = &table.at[m][p];
            let excised = excision(&stabs[p], &kbox, &pre.outer)?;
            let measure = if pre.inner.is_empty() {
                0.0
            } else {
                coordinate_split_measure(&stabs[p], &[&pre.inner])?
            };
            let rec = InequalityRecord {
                stage: m + 1,
                n,
                excised,
                excised_bound: a_m + eps / k as f64,
                measure,
                measure_bound: (k - 1) as f64 * a_m + eps,
                holds: excised <= a_m + eps / k as f64 && measure > (k - 1) as f64 * a_m + eps,
            };
            holds.push(rec.holds);
            trace.push(rec);
        }
        // first index past the previous stage with an all-true suffix
        let after = stages.last().copied();
        let mut start = None;
        for p in (0..indices.len()).rev() {
            if !holds[p] || after.is_some_and(|s| indices[p] <= s) {
                break;
            }
            start = Some(indices[p]);
        }
        match start {
            Some(s) => stages.push(s),
            None => break,
        }
    }
    if stages.is_empty() {
        return Ok(SearchOutcome::Failed(SearchFailure {
            k,
            reason: Error::NoStageSchedule.to_string(),
            stages,
            trace,
        }));
    }
    let zero = Element::zero(sc.group);
    let mut translators = vec![Vec::with_capacity(indices.len()); k];
    for (p, &n) in indices.iter().enumerate() {
        let Some(m) = stages.iter().rposition(|&s| s <= n) else {
            for t in translators.iter_mut() {
                t.push(zero.clone());
            }
            continue;
        };
        let r = sc.windows[m];
        let cands = candidates(&stabs[p], &table.at[m][p].inner, sc.quadrature.step)?;
        let mut chosen: Vec<Element> = Vec::with_capacity(k);
        for _ in 0..k {
            let mut pick = None;
            for c in &cands {
                let mut free = true;
                for t in &chosen {
                    if stabs[p].distance(&c.try_sub(t)?)? <= r {
                        free = false;
                        break;
                    }
                }
                if free {
                    pick = Some(c.clone());
                    break;
                }
            }
            match pick {
                Some(c) => chosen.push(c),
                None => {
                    return Ok(SearchOutcome::Failed(SearchFailure {
                        k,
                        reason: format!(
                            "no candidate for translator {} at n = {n} (stage {})",
                            chosen.len() + 1,
                            m + 1
                        ),
                        stages,
                        trace,
                    }))
                }
            }
        }
        for (t, c) in translators.iter_mut().zip(chosen) {
            t.push(c);
        }
    }
    let cert = TranslatorCertificate::new(sc, indices, translators, stages.clone())?;
    let verdict = check_k_times(sc, &cert)?;
    if verdict.certified {
        Ok(SearchOutcome::Found(cert))
    } else {
        Ok(SearchOutcome::Failed(SearchFailure {
            k,
            reason: format!(
                "constructed translators fail the check: {}",
                verdict.failures.join("; ")
            ),
            stages,
            trace,
        }))
    }
}

/// Largest `nu_S(q(K + s) ∩ q(P))` over translates `s` sampled in `P`,
/// thinned to at most `EXCISION_BUDGET` evenly strided samples.
fn excision(s_n: &ClosedSubgroup, k: &GBox, p: &BoxSet) -> Result<f64> {
    let samples: Vec<Element> = p
        .iter()
        .flat_map(|b| box_samples(b, EXCISION_SAMPLES))
        .collect();
    let stride = samples.len().div_ceil(EXCISION_BUDGET).max(1);
    let mut worst: f64 = 0.0;
    for s in samples.iter().step_by(stride) {
        let shifted = [k.translate(s)];
        worst = worst.max(coordinate_split_measure(s_n, &[&shifted, p])?);
    }
    Ok(worst)
}

/// `count` evenly spaced points per real axis, endpoints included, and every
/// lattice point.
fn box_samples(b: &GBox, count: usize) -> Vec<Element> {
    let axes: Vec<Vec<f64>> = b
        .lower
        .iter()
        .zip(&b.upper)
        .map(|(&l, &u)| {
            if u <= l || count < 2 {
                vec![l]
            } else {
                (0..count)
                    .map(|i| l + (u - l) * i as f64 / (count - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let lattice: Vec<Vec<i64>> = b.lattice.iter().map(|&(l, u)| (l..=u).collect()).collect();
    grid_points(&axes, &lattice)
}

fn grid_points(axes: &[Vec<f64>], lattice: &[Vec<i64>]) -> Vec<Element> {
    let mut out = vec![Element::new(vec![], vec![])];
    for ax in axes {
        out = out
            .into_iter()
            .flat_map(|e| {
                ax.iter().map(move |&x| {
                    let mut e = e.clone();
                    e.real.push(x);
                    e
                })
            })
            .collect();
    }
    for ax in lattice {
        out = out
            .into_iter()
            .flat_map(|e| {
                ax.iter().map(move |&x| {
                    let mut e = e.clone();
                    e.lattice.push(x);
                    e
                })
            })
            .collect();
    }
    out
}

/// Grid points of the inner preimage at spacing `step`, lexicographically sorted.
fn candidates(s_n: &ClosedSubgroup, inner: &BoxSet, step: f64) -> Result<Vec<Element>> {
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    let axes = split_axes(s_n)?;
    let rr = s_n.descriptor().real_rank;
    // translators matter only modulo S_{x_n}: enumerate the quotient chart
    let cells = quotient_cells(s_n, inner)?;
    let extent = |c: &QuotientCell, h: f64| -> f64 {
        axes.iter()
            .enumerate()
            .map(|(i, k)| match k {
                AxisKind::Collapsed => 1.0,
                _ if i >= rr => (c.upper[i] - c.lower[i]).round(),
                _ => ((c.upper[i] - c.lower[i]) / h).floor() + 1.0,
            })
            .product()
    };
    let count: f64 = cells.iter().map(|c| extent(c, step)).sum();
    let d = axes
        .iter()
        .take(rr)
        .filter(|k| **k != AxisKind::Collapsed)
        .count()
        .max(1) as f64;
    let stride = (count / CANDIDATE_LIMIT as f64)
        .powf(1.0 / d)
        .ceil()
        .max(1.0);
    let h = step * stride;
    let mut out: Vec<Element> = cells
        .iter()
        .flat_map(|c| {
            let real: Vec<Vec<f64>> = (0..rr)
                .map(|i| {
                    if axes[i] == AxisKind::Collapsed {
                        return vec![0.0];
                    }
                    let (l, u) = (c.lower[i], c.upper[i]);
                    let m = ((u - l) / h + 1e-9).floor() as usize;
                    (0..=m).map(|j| l + j as f64 * h).collect()
                })
                .collect();
            let lattice: Vec<Vec<i64>> = (rr..axes.len())
                .map(|i| (c.lower[i].round() as i64..c.upper[i].round() as i64).collect())
                .collect();
            grid_points(&real, &lattice)
        })
        .collect();
    out.sort_by(|a, b| {
        a.real
            .iter()
            .zip(&b.real)
            .map(|(x, y)| x.total_cmp(y))
            .chain(a.lattice.iter().zip(&b.lattice).map(|(x, y)| x.cmp(y)))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out.dedup();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosureDiagnostic {
    /// Quotient masses settle as the window grows.
    Stabilizing,
    /// Quotient masses keep growing with the window.
    Growing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalClosureReport {
    /// `nu_z(q_z(phi_z^{-1}(W_m)))` across the neighborhoods.
    pub neighborhood_values: Vec<f64>,
    /// `(radius, nu_z(q_z(phi_z^{-1}(W_1) ∩ K)))` across windows `K`.
    pub window_growth: Vec<(f64, f64)>,
    pub diagnostic: ClosureDiagnostic,
    pub declared_locally_closed: bool,
    pub consistent: bool,
}

/// Relative growth between the two largest windows still read as stable.
const GROWTH_TOL: f64 = 1e-2;

/// Testable surrogates of local closedness of `G . z`.
pub fn locally_closed_diagnostics(sc: &Scenario) -> Result<LocalClosureReport> {
    use crate::dynamics::{orbit_preimage, preimage_measures, FactKind};
    let a = sc.action();
    let s = sc.stabilizer(None)?;
    let neighborhood_values = sc
        .neighborhoods
        .iter()
        .map(|v| Ok(preimage_measures(&s, &sc.preimage(v, None)?)?.0))
        .collect::<Result<Vec<_>>>()?;
    let v: &Region = sc.neighborhoods.first().ok_or(Error::EmptyWindowList)?;
    let mut window_growth = Vec::new();
    for &r in &sc.windows {
        let w = Window::centered(sc.group, r)?;
        let p = orbit_preimage(&a, &sc.limit, v, &w, sc.quadrature.step)?;
        window_growth.push((r, preimage_measures(&s, &p)?.0));
    }
    let diagnostic = match window_growth.as_slice() {
        [.., (_, prev), (_, last)] if *last - *prev > GROWTH_TOL * last.abs().max(1e-12) => {
            ClosureDiagnostic::Growing
        }
        _ => ClosureDiagnostic::Stabilizing,
    };
    let declared = sc.has_fact(FactKind::OrbitLocallyClosed);
    Ok(LocalClosureReport {
        neighborhood_values,
        window_growth,
        diagnostic,
        declared_locally_closed: declared,
        consistent: !declared || diagnostic == ClosureDiagnostic::Stabilizing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::builtin_scenario;
    use std::f64::consts::PI;

    fn e1(x: f64) -> Element {
        Element::from_real(vec![x])
    }

    #[test]
    fn identity_translators_give_one_times() {
        let sc = builtin_scenario("translation").unwrap();
        let idx = sc.indices();
        let cert =
            TranslatorCertificate::new(&sc, idx.clone(), vec![vec![e1(0.0); idx.len()]], vec![])
                .unwrap();
        let v = check_k_times(&sc, &cert).unwrap();
        assert!(v.certified, "{:?}", v.failures);
        assert!(v.escape_table.is_empty());
    }

    /// If `t1 + x_n -> 0` and `t2 + x_n -> 0` then `t2 - t1 -> 0`, so no
    /// pair can escape `[-1, 1]`.
    #[test]
    fn translation_cannot_converge_twice() {
        let sc = builtin_scenario("translation").unwrap();
        let idx = sc.indices();
        let t1: Vec<Element> = idx.iter().map(|&n| e1(-1.0 / n as f64)).collect();
        let t2: Vec<Element> = idx.iter().map(|&n| e1(-1.0 / n as f64 + 0.02)).collect();
        let cert =
            TranslatorCertificate::new(&sc, idx.clone(), vec![t1.clone(), t2], vec![]).unwrap();
        assert!(!check_k_times(&sc, &cert).unwrap().certified);
        let far: Vec<Element> = idx.iter().map(|&n| e1(5.0 - 1.0 / n as f64)).collect();
        let cert = TranslatorCertificate::new(&sc, idx, vec![t1, far], vec![]).unwrap();
        assert!(!check_k_times(&sc, &cert).unwrap().certified);
        match search_translators(&sc, 2).unwrap() {
            SearchOutcome::Failed(f) => assert!(f.stages.is_empty()),
            SearchOutcome::Found(_) => panic!("translation is proper"),
        }
    }

    #[test]
    fn green_two_times() {
        let sc = builtin_scenario("green").unwrap();
        let SearchOutcome::Found(cert) = search_translators(&sc, 2).unwrap() else {
            panic!("green converges twice");
        };
        let verdict = check_k_times(&sc, &cert).unwrap();
        assert!(verdict.certified);
        for &n in &sc.indices() {
            if n < cert.stages[0] {
                continue;
            }
            let d = cert.translator(1, n).unwrap().real[0] - cert.translator(0, n).unwrap().real[0];
            let target = 2.0 * n as f64 + PI;
            assert!((d - target).abs() <= 0.01 * target, "n = {n}: {d}");
        }
        // thresholds grow with the window
        for w in verdict.escape_table.windows(2) {
            assert!(w[0].threshold <= w[1].threshold);
        }
        assert!(matches!(
            search_translators(&sc, 3).unwrap(),
            SearchOutcome::Failed(_)
        ));
    }

    #[test]
    fn winding_converges_once() {
        let sc = builtin_scenario("winding").unwrap();
        assert!(matches!(
            search_translators(&sc, 1).unwrap(),
            SearchOutcome::Found(_)
        ));
        assert!(matches!(
            search_translators(&sc, 2).unwrap(),
            SearchOutcome::Failed(_)
        ));
    }

    #[test]
    fn short_ranges_are_reported() {
        let mut sc = builtin_scenario("translation").unwrap();
        sc.index_range.last = sc.index_range.first;
        assert!(matches!(
            search_translators(&sc, 1),
            Err(Error::IndexRangeTooShort(_))
        ));
        let cert =
            TranslatorCertificate::new(&sc, sc.indices(), vec![vec![e1(0.0)]], vec![]).unwrap();
        assert!(matches!(
            check_k_times(&sc, &cert),
            Err(Error::IndexRangeTooShort(_))
        ));
    }

    #[test]
    fn closure_diagnostics_on_proper_scenarios() {
        for id in ["translation", "winding", "green"] {
            let sc = builtin_scenario(id).unwrap();
            let r = locally_closed_diagnostics(&sc).unwrap();
            assert_eq!(r.diagnostic, ClosureDiagnostic::Stabilizing, "{id}");
            assert!(r.consistent);
        }
        let sc = builtin_scenario("winding").unwrap();
        let r = locally_closed_diagnostics(&sc).unwrap();
        assert!((r.neighborhood_values[0] - 1.0).abs() < 1e-12);
    }

    /// An irrational flow on the torus has a dense orbit: the time spent in
    /// a fixed neighborhood keeps growing with the window.
    #[test]
    fn dense_orbit_grows() {
        let json = serde_json::json!({
            "id": "torus",
            "group": {"real_rank": 1, "lattice_rank": 0},
            "space": {"kind": "torus"},
            "action": {"rule": "torus-flow", "slope": std::f64::consts::SQRT_2},
            "sequence": {"rule": "constant", "point": [1.0, 0.0, 1.0, 0.0]},
            "limit": [1.0, 0.0, 1.0, 0.0],
            "index_range": {"first": 1, "last": 4},
            "neighborhoods": [{"shape": "box", "center": [1.0, 0.0, 1.0, 0.0], "half_widths": [0.5, 0.5, 0.5, 0.5]}],
            "windows": [4.0, 16.0, 64.0],
            "declared_facts": [],
            "quadrature": {"step": 0.01, "tolerance": 0.001}
        });
        let sc = Scenario::from_json(&json.to_string()).unwrap();
        let r = locally_closed_diagnostics(&sc).unwrap();
        assert_eq!(
            r.diagnostic,
            ClosureDiagnostic::Growing,
            "{:?}",
            r.window_growth
        );
        assert!(r.consistent);
    }

    #[test]
    fn candidates_are_sorted_grid_points() {
        let trivial = ClosedSubgroup::trivial(crate::GroupDescriptor::real(1));
        let c = candidates(
            &trivial,
            &vec![GBox::interval(0.5, 0.53), GBox::interval(-0.2, -0.18)],
            0.01,
        )
        .unwrap();
        let xs: Vec<f64> = c.iter().map(|e| e.real[0]).collect();
        assert_eq!(xs.len(), 7);
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(xs[0], -0.2);
    }
}
