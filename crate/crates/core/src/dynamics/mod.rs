//! Transformation groups: spaces, registered closed-form actions, stability
//! subgroups, orbit preimages and the builtin scenarios.
//!
//! Points are plain coordinate vectors. The complex plane uses `(re, im)`;
//! Green's space `Y` is a closed subset of `R^3` made of the orbits of the
//! representatives `y_0 = 0` and `y_n = (2^{-2n}, 0, 0)`.

pub mod interval;
pub mod preimage;
pub mod region;
pub mod scenario;

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::lca::GroupDescriptor;
use crate::subgroups::ClosedSubgroup;
use crate::Element;

pub use interval::Interval;
pub use preimage::{default_search_box, orbit_preimage, orbit_preimage_in, Preimage};
pub use region::{Placement, Region};
pub use scenario::{
    accumulation_functional, builtin_scenario, builtin_scenarios, preimage_measures,
    smallest_radius, DeclaredFact, FactKind, IndexRange, PreimageTable, Quadrature, Scenario,
    SequenceRule, BUILTIN_IDS,
};

pub type Point = Vec<f64>;

/// Relative tolerance for deciding membership in `Y`.
const GREEN_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Space {
    Euclidean {
        dim: usize,
    },
    ComplexPlane,
    GreenY,
    /// The unit torus in `C x C`.
    Torus,
    Product {
        first: Box<Space>,
        second: Box<Space>,
    },
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::Euclidean { dim } => *dim,
            Space::ComplexPlane => 2,
            Space::GreenY => 3,
            Space::Torus => 4,
            Space::Product { first, second } => first.dim() + second.dim(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            Space::Euclidean { .. } | Space::ComplexPlane => true,
            Space::GreenY => green_locate(x).is_some(),
            Space::Torus => {
                let on = |a: f64, b: f64| (a.hypot(b) - 1.0).abs() <= 1e-9;
                on(x[0], x[1]) && on(x[2], x[3])
            }
            Space::Product { first, second } => {
                let k = first.dim();
                first.contains(&x[..k]) && second.contains(&x[k..])
            }
        }
    }

    /// Sup-norm distance, the metric used for all convergence checks.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Registered closed-form action rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ActionRule {
    /// `R^d` acting on itself by translation.
    Translation { dim: usize },
    /// Green's free non-proper action of `R` on `Y`.
    Green,
    /// `R` on `C` by `r . w = e^{2 pi i r / |w|} w`, fixing `0`.
    Winding,
    /// Linear flow on the unit torus, `r . (z1, z2) = (e^{2 pi i r} z1, e^{2 pi i slope r} z2)`.
    TorusFlow { slope: f64 },
    /// `R^a x Z^b` acting trivially on `R^dim`-shaped points of a space.
    Trivial {
        real_rank: usize,
        lattice_rank: usize,
        space: Box<Space>,
    },
    /// Coordinatewise product action of `G1 x G2` on `X1 x X2`.
    Product {
        first: Box<ActionRule>,
        second: Box<ActionRule>,
    },
}

impl ActionRule {
    pub fn descriptor(&self) -> GroupDescriptor {
        match self {
            ActionRule::Translation { dim } => GroupDescriptor::real(*dim),
            ActionRule::Green | ActionRule::Winding | ActionRule::TorusFlow { .. } => {
                GroupDescriptor::real(1)
            }
            ActionRule::Trivial {
                real_rank,
                lattice_rank,
                ..
            } => GroupDescriptor::new(*real_rank, *lattice_rank),
            ActionRule::Product { first, second } => {
                first.descriptor().product(&second.descriptor())
            }
        }
    }

    pub fn space(&self) -> Space {
        match self {
            ActionRule::Translation { dim } => Space::Euclidean { dim: *dim },
            ActionRule::Green => Space::GreenY,
            ActionRule::Winding => Space::ComplexPlane,
            ActionRule::TorusFlow { .. } => Space::Torus,
            ActionRule::Trivial { space, .. } => (**space).clone(),
            ActionRule::Product { first, second } => Space::Product {
                first: Box::new(first.space()),
                second: Box::new(second.space()),
            },
        }
    }
}

/// A transformation group `(G, X)` given by a registered rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub descriptor: GroupDescriptor,
    pub space: Space,
    pub rule: ActionRule,
}

impl Action {
    pub fn new(rule: ActionRule) -> Self {
        Self {
            descriptor: rule.descriptor(),
            space: rule.space(),
            rule,
        }
    }

    pub fn act(&self, g: &Element, x: &[f64]) -> Result<Point> {
        act(self, g, x)
    }

    pub fn stability_subgroup(&self, x: &[f64]) -> Result<ClosedSubgroup> {
        stability_subgroup(self, x)
    }
}

/// `g . x` for the registered rule.
pub fn act(a: &Action, g: &Element, x: &[f64]) -> Result<Point> {
    a.descriptor.check(g.descriptor())?;
    if !a.space.contains(x) {
        return Err(Error::OutsideSpace(format!("{x:?}")));
    }
    Ok(apply(&a.rule, g, x))
}

fn apply(rule: &ActionRule, g: &Element, x: &[f64]) -> Point {
    match rule {
        ActionRule::Translation { .. } => x.iter().zip(&g.real).map(|(a, b)| a + b).collect(),
        ActionRule::Green => {
            let (n, s0) = green_locate(x).expect("membership checked");
            green_point(n, s0 + g.real[0])
        }
        ActionRule::Winding => winding_point(x, g.real[0]),
        ActionRule::TorusFlow { slope } => {
            let (s1, c1) = (TAU * g.real[0]).sin_cos();
            let (s2, c2) = (TAU * slope * g.real[0]).sin_cos();
            vec![
                x[0] * c1 - x[1] * s1,
                x[0] * s1 + x[1] * c1,
                x[2] * c2 - x[3] * s2,
                x[2] * s2 + x[3] * c2,
            ]
        }
        ActionRule::Trivial { .. } => x.to_vec(),
        ActionRule::Product { first, second } => {
            let (g1, g2) = g.split(first.descriptor());
            let k = first.space().dim();
            let mut y = apply(first, &g1, &x[..k]);
            y.extend(apply(second, &g2, &x[k..]));
            y
        }
    }
}

/// Closed-form stability subgroup `S_x`.
pub fn stability_subgroup(a: &Action, x: &[f64]) -> Result<ClosedSubgroup> {
    if !a.space.contains(x) {
        return Err(Error::OutsideSpace(format!("{x:?}")));
    }
    stabilizer(&a.rule, x)
}

fn stabilizer(rule: &ActionRule, x: &[f64]) -> Result<ClosedSubgroup> {
    match rule {
        ActionRule::Translation { .. } | ActionRule::Green | ActionRule::TorusFlow { .. } => {
            Ok(ClosedSubgroup::trivial(rule.descriptor()))
        }
        ActionRule::Winding => {
            let r = x[0].hypot(x[1]);
            if r == 0.0 {
                Ok(ClosedSubgroup::whole(rule.descriptor()))
            } else {
                Ok(ClosedSubgroup::scaled_integers(r))
            }
        }
        ActionRule::Trivial { .. } => Ok(ClosedSubgroup::whole(rule.descriptor())),
        ActionRule::Product { first, second } => {
            let k = first.space().dim();
            stabilizer(first, &x[..k])?.direct_sum(&stabilizer(second, &x[k..])?)
        }
    }
}

/// `2^{-k}` exactly.
fn pow2_neg(k: i32) -> f64 {
    (-k as f64).exp2()
}

/// `s . y_n` by the three-branch rule; `n = 0` is the orbit of the origin.
pub fn green_point(n: u32, s: f64) -> Point {
    if n == 0 {
        return vec![0.0, s, 0.0];
    }
    let nf = n as f64;
    let a = pow2_neg(2 * n as i32);
    let b = pow2_neg(2 * n as i32 + 1);
    if s <= nf {
        vec![a, s, 0.0]
    } else if s < nf + PI {
        let u = s - nf;
        vec![a - (u / PI) * b, nf * u.cos(), nf * u.sin()]
    } else {
        vec![b, s - PI - 2.0 * nf, 0.0]
    }
}

/// The pair `(n, s)` with `x = s . y_n`, if `x` lies in `Y`.
pub fn green_locate(x: &[f64]) -> Option<(u32, f64)> {
    let (x1, y, z) = (x[0], x[1], x[2]);
    if x1 == 0.0 {
        return (z == 0.0).then_some((0, y));
    }
    if !(x1 > 0.0 && x1 <= 0.25 * (1.0 + GREEN_TOL)) {
        return None;
    }
    let m = -x1.log2();
    let k = m.round();
    if (x1 / pow2_neg(k as i32) - 1.0).abs() <= GREEN_TOL && z.abs() <= GREEN_TOL {
        let k = k as u32;
        let n = k / 2;
        let nf = n as f64;
        let tol = GREEN_TOL * nf.max(1.0);
        if k.is_multiple_of(2) && n >= 1 && y <= nf + tol {
            return Some((n, y.min(nf)));
        }
        if k % 2 == 1 && n >= 1 && y >= -nf - tol {
            return Some((n, y.max(-nf) + PI + 2.0 * nf));
        }
    }
    // open helix arc between the two strands
    let n = (m / 2.0).floor() as u32;
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let a = pow2_neg(2 * n as i32);
    let b = pow2_neg(2 * n as i32 + 1);
    let u = PI * (a - x1) / b;
    if !(0.0..=PI).contains(&u) {
        return None;
    }
    let tol = GREEN_TOL * nf * 10.0;
    if (y - nf * u.cos()).abs() <= tol && (z - nf * u.sin()).abs() <= tol {
        Some((n, nf + u))
    } else {
        None
    }
}

fn winding_point(x: &[f64], r: f64) -> Point {
    let rho = x[0].hypot(x[1]);
    if rho == 0.0 {
        return vec![0.0, 0.0];
    }
    let (s, c) = (TAU * (r / rho)).sin_cos();
    vec![x[0] * c - x[1] * s, x[0] * s + x[1] * c]
}

/// Interval enclosures of `phi_x(t)` for a one-parameter rule, as boxes
/// whose union contains the image of `t`.
pub(crate) fn enclose_orbit(rule: &ActionRule, x: &[f64], t: Interval) -> Vec<Vec<Interval>> {
    match rule {
        ActionRule::Translation { .. } => vec![vec![t + Interval::point(x[0])]],
        ActionRule::Green => {
            let (n, s0) = green_locate(x).expect("membership checked");
            green_enclosure(n, t + Interval::point(s0))
        }
        ActionRule::Winding => {
            let rho = x[0].hypot(x[1]);
            if rho == 0.0 {
                return vec![vec![Interval::point(0.0); 2]];
            }
            let theta = t.scale(TAU / rho) + Interval::point(x[1].atan2(x[0]));
            vec![vec![theta.cos().scale(rho), theta.sin().scale(rho)]]
        }
        ActionRule::TorusFlow { slope } => {
            let a1 = t.scale(TAU) + Interval::point(x[1].atan2(x[0]));
            let a2 = t.scale(TAU * slope) + Interval::point(x[3].atan2(x[2]));
            vec![vec![a1.cos(), a1.sin(), a2.cos(), a2.sin()]]
        }
        _ => unreachable!("one-parameter rules only"),
    }
}

fn green_enclosure(n: u32, s: Interval) -> Vec<Vec<Interval>> {
    let zero = Interval::point(0.0);
    if n == 0 {
        return vec![vec![zero, s, zero]];
    }
    let nf = n as f64;
    let a = pow2_neg(2 * n as i32);
    let b = pow2_neg(2 * n as i32 + 1);
    let mut out = Vec::new();
    if let Some(p) = s.intersect(&Interval::new(f64::NEG_INFINITY, nf)) {
        out.push(vec![Interval::point(a), p, zero]);
    }
    if let Some(p) = s.intersect(&Interval::new(nf, nf + PI)) {
        let u = p - Interval::point(nf);
        let x1 = Interval::point(a) - u.scale(b / PI);
        out.push(vec![x1, u.cos().scale(nf), u.sin().scale(nf)]);
    }
    if let Some(p) = s.intersect(&Interval::new(nf + PI, f64::INFINITY)) {
        out.push(vec![
            Interval::point(b),
            p - Interval::point(PI + 2.0 * nf),
            zero,
        ]);
    }
    out
}
