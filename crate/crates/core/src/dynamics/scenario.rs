//! Scenario files: an action, a convergent sequence `x_n -> z`, nested
//! neighborhoods of `z`, an exhaustion of `G` by windows and the hypotheses
//! the scenario asserts analytically.

use serde::{Deserialize, Serialize};

use super::preimage::{default_search_box, orbit_preimage_in, Preimage};
use super::region::Region;
use super::{Action, ActionRule, Point, Space};
use crate::error::{Error, Result};
use crate::lca::GroupDescriptor;
use crate::quotient::{coordinate_split_measure, Method, SetMeasureEstimate};
use crate::subgroups::ClosedSubgroup;
use crate::Window;

/// Closed-form sequences `n -> x_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SequenceRule {
    /// Green's orbit representatives `y_n = (2^{-2n}, 0, 0)`.
    GreenRepresentatives,
    /// `w_n = 1 / (n^2 + offset)` on the positive real axis of `C`.
    WindingRadii {
        offset: f64,
    },
    /// `x_n = 1 / n` in `R`.
    Harmonic,
    Constant {
        point: Point,
    },
    Product {
        first: Box<SequenceRule>,
        second: Box<SequenceRule>,
    },
}

impl SequenceRule {
    pub fn point(&self, n: usize) -> Point {
        let nf = n as f64;
        match self {
            SequenceRule::GreenRepresentatives => vec![(-2.0 * nf).exp2(), 0.0, 0.0],
            SequenceRule::WindingRadii { offset } => vec![1.0 / (nf * nf + offset), 0.0],
            SequenceRule::Harmonic => vec![1.0 / nf],
            SequenceRule::Constant { point } => point.clone(),
            SequenceRule::Product { first, second } => {
                let mut p = first.point(n);
                p.extend(second.point(n));
                p
            }
        }
    }
}

/// Hypotheses a scenario may assert.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactKind {
    OrbitLocallyClosed,
    StabilizerCompact,
    BoundaryMeasureZero,
    PreimageRelativelyCompact,
    StabilizersVaryContinuously,
}

impl FactKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactKind::OrbitLocallyClosed => "orbit-locally-closed",
            FactKind::StabilizerCompact => "stabilizer-compact",
            FactKind::BoundaryMeasureZero => "boundary-measure-zero",
            FactKind::PreimageRelativelyCompact => "preimage-relatively-compact",
            FactKind::StabilizersVaryContinuously => "stabilizers-vary-continuously",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredFact {
    pub fact: FactKind,
    pub justification: String,
}

/// Inclusive index range; `first > last` is empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRange {
    pub first: usize,
    pub last: usize,
}

impl IndexRange {
    pub fn indices(&self) -> Vec<usize> {
        (self.first..=self.last).collect()
    }

    pub fn len(&self) -> usize {
        (self.last + 1).saturating_sub(self.first)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub step: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub group: GroupDescriptor,
    pub space: Space,
    pub action: ActionRule,
    pub sequence: SequenceRule,
    pub limit: Point,
    pub index_range: IndexRange,
    /// Nested decreasing open neighborhoods `W_m` of the limit.
    pub neighborhoods: Vec<Region>,
    /// Radii of the increasing windows `K_m` centred at the identity.
    pub windows: Vec<f64>,
    pub declared_facts: Vec<DeclaredFact>,
    pub quadrature: Quadrature,
    /// Tail bound on `d(t_n . x_n, z)`; defaults to the radius of the smallest staged neighborhood.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_tolerance: Option<f64>,
}

/// Identifiers of the shipped scenarios.
pub const BUILTIN_IDS: [&str; 5] = [
    "green",
    "winding",
    "green_x_winding",
    "green_x_trivial",
    "translation",
];

const BUILTIN_SOURCES: [&str; 5] = [
    include_str!("../../scenarios/green.json"),
    include_str!("../../scenarios/winding.json"),
    include_str!("../../scenarios/green_x_winding.json"),
    include_str!("../../scenarios/green_x_trivial.json"),
    include_str!("../../scenarios/translation.json"),
];

pub fn builtin_scenario(id: &str) -> Option<Scenario> {
    let i = BUILTIN_IDS.iter().position(|b| *b == id)?;
    Some(Scenario::from_json(BUILTIN_SOURCES[i]).expect("shipped scenarios parse"))
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    BUILTIN_IDS
        .iter()
        .map(|id| builtin_scenario(id).expect("listed"))
        .collect()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn action(&self) -> Action {
        Action::new(self.action.clone())
    }

    pub fn indices(&self) -> Vec<usize> {
        self.index_range.indices()
    }

    pub fn point(&self, n: usize) -> Point {
        self.sequence.point(n)
    }

    /// `x_n`, or the limit `z` for `None`.
    pub fn base_point(&self, n: Option<usize>) -> Point {
        n.map_or_else(|| self.limit.clone(), |n| self.point(n))
    }

    pub fn stabilizer(&self, n: Option<usize>) -> Result<ClosedSubgroup> {
        self.action().stability_subgroup(&self.base_point(n))
    }

    pub fn has_fact(&self, f: FactKind) -> bool {
        self.declared_facts.iter().any(|d| d.fact == f)
    }

    pub fn require_fact(&self, f: FactKind) -> Result<()> {
        if self.has_fact(f) {
            Ok(())
        } else {
            Err(Error::MissingDeclaredFact(f.name().into()))
        }
    }

    /// Windows `K_m` as elements of the exhaustion.
    pub fn window_list(&self) -> Result<Vec<Window>> {
        self.windows
            .iter()
            .map(|&r| Window::centered(self.group, r))
            .collect()
    }

    /// Number of stages `(W_m, K_m)` available to the translator search.
    pub fn stage_count(&self) -> usize {
        self.neighborhoods.len().min(self.windows.len())
    }

    /// Defaults to the radius of the last neighborhood a stage can reach.
    pub fn convergence_tolerance(&self) -> f64 {
        self.convergence_tolerance.unwrap_or_else(|| {
            self.stage_count()
                .checked_sub(1)
                .and_then(|m| self.neighborhoods.get(m))
                .map_or(f64::INFINITY, smallest_radius)
        })
    }

    /// Outer and inner preimage of `v` under the orbit map at `x_n` (or `z`).
    pub fn preimage(&self, v: &Region, n: Option<usize>) -> Result<Preimage> {
        let a = self.action();
        let x = self.base_point(n);
        let search = default_search_box(&a, &x, v)?;
        orbit_preimage_in(&a, &x, v, &search, self.quadrature.step)
    }

    /// Structural checks plus an audit of the declared facts against the oracles.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(format!("{}: {m}", self.id)));
        let a = self.action();
        if a.descriptor != self.group {
            return bad(format!(
                "group {} but the action needs {}",
                self.group, a.descriptor
            ));
        }
        if a.space != self.space {
            return bad("space does not match the action".into());
        }
        if !self.space.contains(&self.limit) {
            return bad(format!("limit {:?} outside the space", self.limit));
        }
        for n in self.indices() {
            if !self.space.contains(&self.point(n)) {
                return bad(format!("x_{n} outside the space"));
            }
        }
        if self.neighborhoods.is_empty() {
            return bad("no neighborhoods".into());
        }
        for v in &self.neighborhoods {
            if v.dim() != self.space.dim() {
                return bad("neighborhood dimension mismatch".into());
            }
            if !v.contains(&self.limit) {
                return bad("a neighborhood misses the limit".into());
            }
        }
        for w in self.neighborhoods.windows(2) {
            if !w[0].contains_region(&w[1]) {
                return bad("neighborhoods are not nested decreasing".into());
            }
        }
        if self.windows.is_empty() {
            return Err(Error::EmptyWindowList);
        }
        if self.windows.iter().any(|r| !(*r > 0.0)) || self.windows.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::WindowsNotNested);
        }
        if !(self.quadrature.step > 0.0) {
            return Err(Error::NonPositiveStep(self.quadrature.step));
        }
        if !(self.quadrature.tolerance > 0.0) {
            return bad("quadrature tolerance must be positive".into());
        }
        for f in &self.declared_facts {
            if f.justification.trim().is_empty() {
                return bad(format!("fact `{}` has no justification", f.fact.name()));
            }
        }
        if self.has_fact(FactKind::StabilizerCompact) && !self.stabilizer(None)?.is_compact() {
            return bad(
                "declares a compact limit stabilizer but the oracle returns a noncompact one"
                    .into(),
            );
        }
        Ok(())
    }
}

/// Preimages of every neighborhood at the limit and along the index range.
#[derive(Clone, Debug)]
pub struct PreimageTable {
    pub indices: Vec<usize>,
    /// `limit[m]` is the preimage of `W_m` at `z`.
    pub limit: Vec<Preimage>,
    /// `at[m][p]` is the preimage of `W_m` at `x_{indices[p]}`.
    pub at: Vec<Vec<Preimage>>,
}

impl PreimageTable {
    pub fn compute(sc: &Scenario) -> Result<Self> {
        let indices = sc.indices();
        let mut limit = Vec::new();
        let mut at = Vec::new();
        for v in &sc.neighborhoods {
            limit.push(sc.preimage(v, None)?);
            at.push(
                indices
                    .iter()
                    .map(|&n| sc.preimage(v, Some(n)))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { indices, limit, at })
    }

    pub fn get(&self, m: usize, n: Option<usize>) -> Option<&Preimage> {
        match n {
            None => self.limit.get(m),
            Some(n) => {
                let p = self.indices.iter().position(|&i| i == n)?;
                self.at.get(m)?.get(p)
            }
        }
    }
}

/// Outer and inner quotient measure of a preimage.
pub fn preimage_measures(s: &ClosedSubgroup, p: &Preimage) -> Result<(f64, f64)> {
    let outer = if p.outer.is_empty() {
        0.0
    } else {
        coordinate_split_measure(s, &[&p.outer])?
    };
    let inner = if p.inner.is_empty() {
        0.0
    } else {
        coordinate_split_measure(s, &[&p.inner])?
    };
    Ok((outer, inner))
}

/// Smallest sup-norm radius of a neighborhood about its centre.
pub fn smallest_radius(v: &Region) -> f64 {
    match v {
        Region::Box { half_widths, .. } => {
            half_widths.iter().cloned().fold(f64::INFINITY, f64::min)
        }
        Region::Ball { radius, .. } => *radius,
        Region::Sector { r_min, r_max, .. } => 0.5 * (r_max - r_min),
        Region::Whole { .. } => f64::INFINITY,
        Region::Product { first, second } => smallest_radius(first).min(smallest_radius(second)),
    }
}

/// `nu_{x_n}(q(phi_{x_n}^{-1}(V)))` (or at `z` for `None`) from the outer
/// preimage; `error_bound` is the outer minus inner quotient measure.
pub fn accumulation_functional(
    sc: &Scenario,
    v: &Region,
    n: Option<usize>,
) -> Result<SetMeasureEstimate> {
    sc.require_fact(FactKind::PreimageRelativelyCompact)?;
    let p = sc.preimage(v, n)?;
    let (outer, inner) = preimage_measures(&sc.stabilizer(n)?, &p)?;
    Ok(SetMeasureEstimate {
        value: outer,
        method: Method::CoordinateSplit,
        error_bound: (outer - inner).max(0.0),
        set_descriptor: match n {
            Some(n) => format!("phi^-1(V) at x_{n}"),
            None => "phi^-1(V) at z".into(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn builtins_parse_and_validate() {
        for sc in builtin_scenarios() {
            sc.validate().unwrap_or_else(|e| panic!("{}: {e}", sc.id));
            let back = Scenario::from_json(&sc.to_json().unwrap()).unwrap();
            assert_eq!(back, sc);
        }
    }

    #[test]
    fn green_accumulates_two_strands() {
        let sc = builtin_scenario("green").unwrap();
        let v = sc.neighborhoods.last().unwrap().clone();
        let h = smallest_radius(&v);
        let z = accumulation_functional(&sc, &v, None).unwrap();
        assert_abs_diff_eq!(z.value, 2.0 * h, epsilon = 1e-4);
        let x = accumulation_functional(&sc, &v, Some(20)).unwrap();
        assert_abs_diff_eq!(x.value, 4.0 * h, epsilon = 1e-4);
        assert!(x.value - x.error_bound <= 4.0 * h && 4.0 * h <= x.value);
        assert!(x.error_bound < 1e-4);
    }

    /// The quotient of `[-1, 1]` by `|w| Z` has total mass
    /// `(N^2 + N + 1/2) / (N^2 + N + 1/4)` for `1 / |w| = N + 1/2`.
    #[test]
    fn winding_ratio_tends_to_one() {
        let sc = builtin_scenario("winding").unwrap();
        let v = sc.neighborhoods[0].clone();
        let z = accumulation_functional(&sc, &v, None).unwrap().value;
        assert_abs_diff_eq!(z, 1.0, epsilon = 1e-12);
        for n in [5usize, 10, 30] {
            let nn = (n * n) as f64;
            let oracle = (nn * nn + nn + 0.5) / (nn * nn + nn + 0.25);
            let x = accumulation_functional(&sc, &v, Some(n)).unwrap().value;
            assert_abs_diff_eq!(x, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn missing_fact_and_bad_files() {
        let mut sc = builtin_scenario("translation").unwrap();
        sc.declared_facts.clear();
        let v = sc.neighborhoods[0].clone();
        assert!(matches!(
            accumulation_functional(&sc, &v, Some(3)),
            Err(Error::MissingDeclaredFact(_))
        ));

        let mut sc = builtin_scenario("winding").unwrap();
        sc.declared_facts.push(DeclaredFact {
            fact: FactKind::StabilizerCompact,
            justification: "wrong on purpose".into(),
        });
        assert!(matches!(sc.validate(), Err(Error::InvalidScenario(_))));

        let mut sc = builtin_scenario("green").unwrap();
        sc.neighborhoods.reverse();
        assert!(sc.validate().is_err());
        let mut sc = builtin_scenario("green").unwrap();
        sc.windows = vec![2.0, 1.0];
        assert!(matches!(sc.validate(), Err(Error::WindowsNotNested)));
        assert!(Scenario::from_json("{\"id\": 3}").is_err());
    }

    #[test]
    fn empty_index_range() {
        let r = IndexRange { first: 5, last: 4 };
        assert!(r.is_empty());
        assert!(r.indices().is_empty());
    }
}
