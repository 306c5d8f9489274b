//! The representation side: vector-state functionals, the cut-down kernel
//! and trace estimator, the dual-action twist, and the multiplicity sandwich.
//!
//! Nothing here materializes an operator. Every quantity is a scalar
//! functional evaluated by quadrature on quotient charts, or a finite matrix
//! of samples.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{preimage_measures, FactKind, PreimageTable, Region, Scenario};
use crate::error::{Error, Result};
use crate::lca::NeumaierSum;
use crate::quotient::{coordinate_split_measure, quotient_cells, split_axes, GBox};
use crate::subgroups::{fell_converges, AxisKind, ClosedSubgroup};
use crate::{Character, Element, Window};

/// Half width of the unit-mass tent used along axes that `S_z` fills.
pub const TENT_HALF_WIDTH: f64 = 1.0;
/// Support of `F` as a fraction of the inscribed sup-radius of `V`.
pub const SUPPORT_FRACTION: f64 = 0.9;
/// Node budget for one trace double sum.
const MAX_TRACE_NODES: usize = 6_000;
/// Node budget for the normalization quadrature.
const MAX_NORM_NODES: usize = 400_000;
/// Allowed drift of `||F~_z||` between two normalization grids.
const NORM_TOL: f64 = 1e-4;
const SYMMETRY_TOL: f64 = 1e-9;

/// Tri-state outcome shared by every check in the battery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Certified,
    Refuted,
    Inconclusive,
}

/// One-dimensional factor of the cut-down function `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum AxisProfile {
    /// `1` on `|d| <= plateau`, linear down to `0` at `2 plateau`.
    Plateau { plateau: f64 },
    /// `height (1 - |d| / half_width)_+`.
    Tent { half_width: f64, height: f64 },
    /// Lattice axis: `1` on `|k| <= reach`.
    LatticePlateau { reach: i64 },
    /// Lattice axis: the indicator of `0`.
    LatticeDelta,
}

impl AxisProfile {
    pub fn eval(&self, d: f64) -> f64 {
        let a = d.abs();
        match *self {
            AxisProfile::Plateau { plateau } => {
                if a <= plateau {
                    1.0
                } else {
                    (2.0 - a / plateau).max(0.0)
                }
            }
            AxisProfile::Tent { half_width, height } => height * (1.0 - a / half_width).max(0.0),
            AxisProfile::LatticePlateau { reach } => f64::from(u8::from(a <= reach as f64 + 1e-9)),
            AxisProfile::LatticeDelta => f64::from(u8::from(a < 0.5)),
        }
    }

    /// Radius outside which the profile vanishes.
    pub fn reach(&self) -> f64 {
        match *self {
            AxisProfile::Plateau { plateau } => 2.0 * plateau,
            AxisProfile::Tent { half_width, .. } => half_width,
            AxisProfile::LatticePlateau { reach } => reach as f64,
            AxisProfile::LatticeDelta => 0.0,
        }
    }

    fn integral(&self) -> f64 {
        match *self {
            AxisProfile::Plateau { plateau } => 3.0 * plateau,
            AxisProfile::Tent { half_width, height } => half_width * height,
            AxisProfile::LatticePlateau { reach } => (2 * reach + 1) as f64,
            AxisProfile::LatticeDelta => 1.0,
        }
    }

    /// `int_{S_i} beta(d + t)` against raw Lebesgue or counting measure.
    fn over_axis(&self, kind: AxisKind, d: f64) -> f64 {
        match kind {
            AxisKind::Free => self.eval(d),
            AxisKind::Collapsed => self.integral(),
            AxisKind::Periodic(c) => {
                let r = self.reach() + 1e-9;
                let lo = ((-r - d) / c).ceil() as i64;
                let hi = ((r - d) / c).floor() as i64;
                let mut s = NeumaierSum::new();
                for k in lo..=hi {
                    s.add(self.eval(d + k as f64 * c));
                }
                s.sum()
            }
        }
    }
}

/// Product cut-down `b(g) = prod_i beta_i(g_i) / alpha_z(S_z)`, constant in the
/// space variable. Along axes where `S_z` is trivial it is a plateau covering
/// every difference of points of `supp F~_z`; along axes `S_z` fills it
/// integrates to one over `S_z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutDown {
    pub profiles: Vec<AxisProfile>,
    pub real_rank: usize,
    /// Haar scale of `S_z`.
    pub z_scale: f64,
}

impl CutDown {
    /// Cut-down adapted to `F` supported in the sup-ball of radius `support`
    /// about the limit.
    pub fn for_scenario(sc: &Scenario, support: f64) -> Result<Self> {
        let sz = sc.stabilizer(None)?;
        let axes = split_axes(&sz)?.to_vec();
        let rr = sc.group.real_rank;
        let pre = sc.preimage(&Region::cube(sc.limit.clone(), support), None)?;
        let step = sc.quadrature.step;
        let mut profiles = Vec::with_capacity(axes.len());
        for (i, kind) in axes.iter().enumerate() {
            profiles.push(match (*kind, i < rr) {
                (AxisKind::Free, true) => {
                    let lo = pre
                        .outer
                        .iter()
                        .map(|b| b.lower[i])
                        .fold(f64::INFINITY, f64::min);
                    let hi = pre
                        .outer
                        .iter()
                        .map(|b| b.upper[i])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let spread = if hi > lo { hi - lo } else { 0.0 };
                    AxisProfile::Plateau {
                        plateau: spread + step,
                    }
                }
                (AxisKind::Free, false) => {
                    let lo = pre
                        .outer
                        .iter()
                        .map(|b| b.lattice[i - rr].0)
                        .min()
                        .unwrap_or(0);
                    let hi = pre
                        .outer
                        .iter()
                        .map(|b| b.lattice[i - rr].1)
                        .max()
                        .unwrap_or(0);
                    AxisProfile::LatticePlateau {
                        reach: (hi - lo).max(0),
                    }
                }
                (AxisKind::Collapsed, _) => AxisProfile::Tent {
                    half_width: TENT_HALF_WIDTH,
                    height: 1.0 / TENT_HALF_WIDTH,
                },
                (AxisKind::Periodic(c), true) => AxisProfile::Tent {
                    half_width: c,
                    height: 1.0,
                },
                (AxisKind::Periodic(_), false) => AxisProfile::LatticeDelta,
            });
        }
        Ok(Self {
            profiles,
            real_rank: rr,
            z_scale: sz.haar_scale(),
        })
    }

    fn coords(g: &Element) -> Vec<f64> {
        g.real
            .iter()
            .copied()
            .chain(g.lattice.iter().map(|&k| k as f64))
            .collect()
    }

    pub fn value(&self, g: &Element) -> f64 {
        self.profiles
            .iter()
            .zip(Self::coords(g))
            .map(|(p, x)| p.eval(x))
            .product::<f64>()
            / self.z_scale
    }

    /// `Upsilon(s, u) = int_{S} (b(u - s + t) + b(s - u + t)) dalpha_S(t)` for `d = u - s`.
    pub fn upsilon(&self, s: &ClosedSubgroup, d: &Element) -> Result<f64> {
        let axes = split_axes(s)?;
        let xs = Self::coords(d);
        let side = |sign: f64| -> f64 {
            self.profiles
                .iter()
                .zip(axes)
                .zip(&xs)
                .map(|((p, &k), &x)| p.over_axis(k, sign * x))
                .product()
        };
        Ok(s.haar_scale() / self.z_scale * (side(1.0) + side(-1.0)))
    }

    /// Sup-radius of a window containing the `G`-projection of `supp b`.
    pub fn window_radius(&self) -> f64 {
        self.profiles.iter().map(|p| p.reach()).fold(0.0, f64::max)
    }
}

/// Largest sup-ball about `z` inside `v`.
pub fn inscribed_radius(v: &Region, z: &[f64]) -> f64 {
    match v {
        Region::Box {
            center,
            half_widths,
        } => center
            .iter()
            .zip(half_widths)
            .zip(z)
            .map(|((c, h), x)| h - (x - c).abs())
            .fold(f64::INFINITY, f64::min),
        Region::Ball { center, radius } => {
            let d: f64 = center
                .iter()
                .zip(z)
                .map(|(c, x)| (x - c).powi(2))
                .sum::<f64>()
                .sqrt();
            (radius - d) / (center.len().max(1) as f64).sqrt()
        }
        Region::Sector {
            r_min,
            r_max,
            arg_center,
            arg_half_width,
        } => {
            let r = z[0].hypot(z[1]);
            let off = (z[1].atan2(z[0]) - arg_center).rem_euclid(std::f64::consts::TAU);
            let off = off.min(std::f64::consts::TAU - off);
            let slack = arg_half_width - off;
            let angular = if slack >= std::f64::consts::FRAC_PI_2 {
                r
            } else {
                r * slack.sin()
            };
            (r - r_min).min(r_max - r).min(angular) / std::f64::consts::SQRT_2
        }
        Region::Whole { .. } => f64::INFINITY,
        Region::Product { first, second } => {
            let k = first.dim();
            inscribed_radius(first, &z[..k]).min(inscribed_radius(second, &z[k..]))
        }
    }
}

/// Midpoint nodes and `nu_S`-weights covering `q_S(E)` in the quotient chart.
pub fn quotient_nodes(s: &ClosedSubgroup, e: &[GBox], spacing: f64) -> Result<Vec<(Element, f64)>> {
    if !(spacing > 0.0) {
        return Err(Error::NonPositiveStep(spacing));
    }
    let axes = split_axes(s)?;
    let rr = s.descriptor().real_rank;
    let scale = s.haar_scale();
    let mut out = Vec::new();
    if e.is_empty() {
        return Ok(out);
    }
    for cell in quotient_cells(s, e)? {
        let per_axis: Vec<Vec<(f64, f64)>> = axes
            .iter()
            .enumerate()
            .map(|(i, kind)| {
                let (l, u) = (cell.lower[i], cell.upper[i]);
                if *kind == AxisKind::Collapsed {
                    vec![(0.0, 1.0)]
                } else if i >= rr {
                    ((l.round() as i64)..(u.round() as i64))
                        .map(|k| (k as f64, 1.0))
                        .collect()
                } else {
                    let m = ((u - l) / spacing).ceil().max(1.0) as usize;
                    let h = (u - l) / m as f64;
                    (0..m).map(|j| (l + (j as f64 + 0.5) * h, h)).collect()
                }
            })
            .collect();
        let count: usize = per_axis.iter().map(Vec::len).product();
        if out.len() + count > 4 * MAX_NORM_NODES {
            return Err(Error::NetTooLarge(out.len() + count));
        }
        let mut idx = vec![0usize; per_axis.len()];
        if count == 0 {
            continue;
        }
        loop {
            let mut real = Vec::with_capacity(rr);
            let mut lattice = Vec::new();
            let mut w = 1.0 / scale;
            for (i, &j) in idx.iter().enumerate() {
                let (x, wi) = per_axis[i][j];
                w *= wi;
                if i < rr {
                    real.push(x);
                } else {
                    lattice.push(x as i64);
                }
            }
            out.push((Element::new(real, lattice), w));
            let mut i = idx.len();
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < per_axis[i].len() {
                    break;
                }
                idx[i] = 0;
            }
            if idx.iter().all(|&j| j == 0) {
                break;
            }
        }
    }
    Ok(out)
}

/// Node count `quotient_nodes` would produce, without building them.
fn quotient_node_count(s: &ClosedSubgroup, e: &[GBox], spacing: f64) -> Result<f64> {
    if e.is_empty() {
        return Ok(0.0);
    }
    let axes = split_axes(s)?;
    let rr = s.descriptor().real_rank;
    Ok(quotient_cells(s, e)?
        .iter()
        .map(|c| {
            axes.iter()
                .enumerate()
                .map(|(i, k)| match k {
                    AxisKind::Collapsed => 1.0,
                    _ if i >= rr => (c.upper[i] - c.lower[i]).round(),
                    _ => ((c.upper[i] - c.lower[i]) / spacing).ceil().max(1.0),
                })
                .product::<f64>()
        })
        .sum())
}

/// Smallest spacing `>= spacing` (by doubling) keeping the node count under `limit`.
fn affordable_spacing(s: &ClosedSubgroup, e: &[GBox], spacing: f64, limit: usize) -> Result<f64> {
    let mut h = spacing;
    for _ in 0..40 {
        if quotient_node_count(s, e, h)? <= limit as f64 {
            return Ok(h);
        }
        h *= 2.0;
    }
    Err(Error::NetTooLarge(limit))
}

/// `F`, `b` and the window `N` of the trace construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub center: Vec<f64>,
    /// `F = amplitude` on the sup-ball of this radius about `z`.
    pub plateau: f64,
    /// `F = 0` outside the open sup-ball of this radius.
    pub support: f64,
    pub amplitude: f64,
    pub cut_down: CutDown,
    /// Radius of the symmetric window `N` containing the projection of `supp b`.
    pub window_radius: f64,
    /// `||F~_z||_{2,z}` re-evaluated on an independent grid.
    pub norm_check: f64,
    /// Share of `||F~_z||^2` carried by the plateau.
    pub plateau_mass_fraction: f64,
    /// Quadrature spacing for the trace sums.
    pub spacing: f64,
}

impl KernelSpec {
    pub fn f(&self, x: &[f64]) -> f64 {
        let r = x
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.amplitude * trapezoid(r, self.plateau, self.support)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            amplitude: self.amplitude * factor,
            ..self.clone()
        }
    }

    /// Sup-ball about `z` holding `supp F`.
    pub fn support_region(&self) -> Region {
        Region::cube(self.center.clone(), self.support)
    }
}

fn trapezoid(r: f64, plateau: f64, support: f64) -> f64 {
    if r <= plateau {
        1.0
    } else if r < support {
        (support - r) / (support - plateau)
    } else {
        0.0
    }
}

/// Builds `F` and `b` on a neighborhood `V` of the limit. The ramp of `F`
/// takes a `delta / q` share of its support, `q` the quotient dimension, so
/// that the plateau carries at least `1 - delta` of `||F~_z||^2`.
pub fn build_kernel_spec(sc: &Scenario, v: &Region, delta: f64) -> Result<KernelSpec> {
    let sz = sc.stabilizer(None)?;
    if !sz.is_compact() {
        return Err(Error::StabilizerNotCompact);
    }
    sc.require_fact(FactKind::OrbitLocallyClosed)?;
    sc.require_fact(FactKind::StabilizerCompact)?;
    sc.require_fact(FactKind::PreimageRelativelyCompact)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidScenario(format!(
            "delta = {delta} must lie in (0, 1)"
        )));
    }
    let rho = inscribed_radius(v, &sc.limit);
    if !(rho > 0.0) {
        return Err(Error::NeighborhoodTooSmall(
            "the limit is not inside V".into(),
        ));
    }
    let rho = rho.min(1.0);
    let step = sc.quadrature.step;
    let support = SUPPORT_FRACTION * rho;
    if support < 2.0 * step {
        return Err(Error::NeighborhoodTooSmall(format!(
            "support {support:e} of F is below two quadrature steps"
        )));
    }
    let q = split_axes(&sz)?
        .iter()
        .filter(|k| **k != AxisKind::Collapsed)
        .count()
        .max(1) as f64;
    let ramp = support * delta / q;
    let plateau = support - ramp;
    let spacing = (step / 4.0).min(ramp / 16.0);
    let cut_down = CutDown::for_scenario(sc, support)?;
    let mut spec = KernelSpec {
        center: sc.limit.clone(),
        plateau,
        support,
        amplitude: 1.0,
        window_radius: cut_down.window_radius(),
        cut_down,
        norm_check: f64::NAN,
        plateau_mass_fraction: f64::NAN,
        spacing,
    };
    let boxes = sc.preimage(&spec.support_region(), None)?.outer;
    let fine = affordable_spacing(&sz, &boxes, spacing / 4.0, MAX_NORM_NODES)?;
    let a = sc.action();
    let norm_sq = |spec: &KernelSpec, h: f64| -> Result<(f64, f64)> {
        let mut total = NeumaierSum::new();
        let mut flat = NeumaierSum::new();
        for (s, w) in quotient_nodes(&sz, &boxes, h)? {
            let y = a.act(&s, &sc.limit)?;
            let f = spec.f(&y);
            total.add(w * f * f);
            if f == spec.amplitude {
                flat.add(w * f * f);
            }
        }
        Ok((total.sum(), flat.sum()))
    };
    let (raw, _) = norm_sq(&spec, fine)?;
    if !(raw > 0.0) {
        return Err(Error::NeighborhoodTooSmall(
            "F vanishes along the limit orbit".into(),
        ));
    }
    spec.amplitude = raw.powf(-0.5);
    let (check, flat) = norm_sq(&spec, fine * 2.0)?;
    spec.norm_check = check.sqrt();
    spec.plateau_mass_fraction = flat / check;
    if (spec.norm_check - 1.0).abs() > NORM_TOL {
        return Err(Error::CoverageViolation(format!(
            "||F~_z|| = {} after normalization",
            spec.norm_check
        )));
    }
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    /// `None` at the limit.
    pub index: Option<usize>,
    pub value: f64,
    /// Difference to the estimate on the doubled grid.
    pub error_bound: f64,
    pub kernel_norm_sq: f64,
    pub nodes: usize,
    pub spacing: f64,
    pub symmetry_defect: f64,
    pub construction: KernelSpec,
}

/// `tr = ||K_n||_2^2` with `K_n(s, u) = F(s.x_n) F(u.x_n) Upsilon_n(s, u) / 2`.
pub fn trace_estimate(sc: &Scenario, spec: &KernelSpec, n: Option<usize>) -> Result<TraceEstimate> {
    let s = sc.stabilizer(n)?;
    let x = sc.base_point(n);
    let boxes = sc.preimage(&spec.support_region(), n)?.outer;
    let spacing = affordable_spacing(&s, &boxes, spec.spacing, MAX_TRACE_NODES)?;
    let (value, defect, nodes) = kernel_norm_sq(sc, spec, &s, &x, &boxes, spacing)?;
    let (coarse, _, _) = kernel_norm_sq(sc, spec, &s, &x, &boxes, 2.0 * spacing)?;
    if defect > SYMMETRY_TOL {
        return Err(Error::KernelAsymmetry(defect));
    }
    Ok(TraceEstimate {
        index: n,
        value,
        error_bound: (value - coarse).abs(),
        kernel_norm_sq: value,
        nodes,
        spacing,
        symmetry_defect: defect,
        construction: spec.clone(),
    })
}

fn kernel_norm_sq(
    sc: &Scenario,
    spec: &KernelSpec,
    s: &ClosedSubgroup,
    x: &[f64],
    boxes: &[GBox],
    spacing: f64,
) -> Result<(f64, f64, usize)> {
    let a = sc.action();
    let mut nodes = Vec::new();
    for (g, w) in quotient_nodes(s, boxes, spacing)? {
        let f = spec.f(&a.act(&g, x)?);
        if f != 0.0 {
            nodes.push((g, w, f));
        }
    }
    let rows: Vec<Result<(f64, f64)>> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let (gi, wi, fi) = &nodes[i];
            let mut acc = NeumaierSum::new();
            let mut defect: f64 = 0.0;
            for (gj, wj, fj) in &nodes[i..] {
                let d = gj.try_sub(gi)?;
                let kij = 0.5 * fi * fj * spec.cut_down.upsilon(s, &d)?;
                let kji = 0.5 * fj * fi * spec.cut_down.upsilon(s, &d.neg())?;
                defect = defect.max((kij - kji).abs());
                let mult = if std::ptr::eq(gi, gj) { 1.0 } else { 2.0 };
                acc.add(mult * wi * wj * kij * kij);
            }
            Ok((acc.sum(), defect))
        })
        .collect();
    let mut total = NeumaierSum::new();
    let mut defect: f64 = 0.0;
    for r in rows {
        let (v, d) = r?;
        total.add(v);
        defect = defect.max(d);
    }
    Ok((total.sum(), defect, nodes.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsilonReport {
    pub epsilon: f64,
    pub bound: f64,
    /// First index past every Fell threshold, if the family is certified.
    pub threshold: Option<usize>,
    /// `(n, max Upsilon_n)` over the sampled differences.
    pub maxima: Vec<(usize, f64)>,
    pub max_after_threshold: Option<f64>,
    pub holds: bool,
}

/// Samples `Upsilon_n` over differences in `supp b` and checks the
/// `2 (1 + eps)` bound past the Fell threshold of the stabilizers.
pub fn upsilon_report(
    sc: &Scenario,
    cut: &CutDown,
    epsilon: f64,
    fell_tol: f64,
) -> Result<UpsilonReport> {
    let family: Vec<(usize, ClosedSubgroup)> = sc
        .indices()
        .into_iter()
        .map(|n| Ok((n, sc.stabilizer(Some(n))?)))
        .collect::<Result<_>>()?;
    let fell = fell_converges(&family, &sc.stabilizer(None)?, &sc.window_list()?, fell_tol)?;
    let threshold = if fell.is_certified() {
        fell.threshold()
    } else {
        None
    };
    let diffs = difference_samples(cut, 41, 2_000);
    let mut maxima = Vec::with_capacity(family.len());
    for (n, s) in &family {
        let mut m: f64 = 0.0;
        for d in &diffs {
            m = m.max(cut.upsilon(s, d)?);
        }
        maxima.push((*n, m));
    }
    let bound = 2.0 * (1.0 + epsilon);
    let max_after_threshold = threshold.map(|t| {
        maxima
            .iter()
            .filter(|(n, _)| *n >= t)
            .map(|(_, m)| *m)
            .fold(0.0, f64::max)
    });
    Ok(UpsilonReport {
        epsilon,
        bound,
        threshold,
        holds: max_after_threshold.is_some_and(|m| m <= bound),
        maxima,
        max_after_threshold,
    })
}

/// Grid of differences `d` across the support of `b`, at most `limit` points.
fn difference_samples(cut: &CutDown, per_axis: usize, limit: usize) -> Vec<Element> {
    let dims = cut.profiles.len().max(1);
    let per_axis = per_axis.min((limit as f64).powf(1.0 / dims as f64).floor().max(3.0) as usize);
    let axes: Vec<Vec<f64>> = cut
        .profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let r = 1.1 * p.reach().max(1e-3);
            if i >= cut.real_rank {
                let r = r.ceil() as i64;
                (-r..=r).map(|k| k as f64).collect()
            } else {
                (0..per_axis)
                    .map(|j| -r + 2.0 * r * j as f64 / (per_axis - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut out = vec![Element::new(vec![], vec![])];
    for (i, ax) in axes.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|e| {
                ax.iter().map(move |&x| {
                    let mut e = e.clone();
                    if i < cut.real_rank {
                        e.real.push(x);
                    } else {
                        e.lattice.push(x as i64);
                    }
                    e
                })
            })
            .collect();
    }
    out
}

/// An elementary tensor `f(s, x) = h(s) g(x)`: `h` a product of tents on `G`
/// and `g` a tent in the sup-distance to a point of `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementaryTensor {
    pub h_center: Element,
    pub h_half_width: f64,
    pub h_amplitude: f64,
    pub g_center: Vec<f64>,
    pub g_radius: f64,
    pub g_amplitude: f64,
}

impl ElementaryTensor {
    pub fn h(&self, u: &Element) -> f64 {
        let t = |x: f64, c: f64| (1.0 - (x - c).abs() / self.h_half_width).max(0.0);
        self.h_amplitude
            * u.real
                .iter()
                .zip(&self.h_center.real)
                .map(|(&x, &c)| t(x, c))
                .product::<f64>()
            * u.lattice
                .iter()
                .zip(&self.h_center.lattice)
                .map(|(&k, &c)| t(k as f64, c as f64))
                .product::<f64>()
    }

    pub fn g(&self, x: &[f64]) -> f64 {
        let r = x
            .iter()
            .zip(&self.g_center)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.g_amplitude * (1.0 - r / self.g_radius).max(0.0)
    }

    /// `int_{r + B + S} h dmu` for an axis-aligned `S` and box `B`, in closed form.
    fn h_over_coset_box(&self, axes: &[AxisKind], r: &Element, b: &GBox) -> f64 {
        let hw = self.h_half_width;
        let rr = r.real.len();
        let mut total = self.h_amplitude;
        for (i, kind) in axes.iter().enumerate() {
            let factor = if i < rr {
                let (c, lo, hi) = (
                    self.h_center.real[i],
                    r.real[i] + b.lower[i],
                    r.real[i] + b.upper[i],
                );
                match *kind {
                    AxisKind::Collapsed => hw,
                    AxisKind::Free => tent_integral(lo - c, hi - c, hw),
                    AxisKind::Periodic(p) if hi - lo >= p => hw,
                    AxisKind::Periodic(p) => {
                        let k0 = ((c - hw - hi) / p).floor() as i64;
                        let k1 = ((c + hw - lo) / p).ceil() as i64;
                        (k0..=k1)
                            .map(|k| {
                                tent_integral(lo + k as f64 * p - c, hi + k as f64 * p - c, hw)
                            })
                            .sum()
                    }
                }
            } else {
                let j = i - rr;
                let (c, (l, u), ri) = (self.h_center.lattice[j], b.lattice[j], r.lattice[j]);
                let span = hw.floor() as i64;
                (c - span..=c + span)
                    .filter(|&m| match *kind {
                        AxisKind::Periodic(p) => {
                            let p = p.round() as i64;
                            (m - ri - l).rem_euclid(p) <= u - l
                        }
                        _ => l <= m - ri && m - ri <= u,
                    })
                    .map(|m| (1.0 - ((m - c) as f64).abs() / hw).max(0.0))
                    .sum()
            };
            total *= factor;
        }
        total
    }
}

/// `int_a^b (1 - |x| / w)_+ dx`.
fn tent_integral(a: f64, b: f64, w: f64) -> f64 {
    let prim = |x: f64| {
        if x <= -w {
            0.0
        } else if x < 0.0 {
            (x + w).powi(2) / (2.0 * w)
        } else if x < w {
            w - (w - x).powi(2) / (2.0 * w)
        } else {
            w
        }
    };
    if b <= a {
        0.0
    } else {
        prim(b) - prim(a)
    }
}

/// `Psi_n^(j)(f) = C_n int_{q(W S)} F(r) dnu` with
/// `F(r) = g((r + t) . x_n) int_{r + W + S} h dmu` and `C_n = nu(q(W S))^{-1}`,
/// evaluated with the closed-form inner integral. `n = None` gives `Psi(f)` at
/// the limit. Real-valued because `h` and `g` are.
pub fn psi_functional(
    sc: &Scenario,
    n: Option<usize>,
    translator: &Element,
    f: &ElementaryTensor,
    w_radius: f64,
    step: f64,
) -> Result<f64> {
    sc.require_fact(FactKind::BoundaryMeasureZero)?;
    let s = sc.stabilizer(n)?;
    let x = sc.base_point(n);
    let a = sc.action();
    let wbox = GBox::from_window(&Window::centered(sc.group, w_radius)?);
    let axes = split_axes(&s)?;
    let c_inv = coordinate_split_measure(&s, &[std::slice::from_ref(&wbox)])?;
    let mut acc = NeumaierSum::new();
    for (r, w) in quotient_nodes(&s, std::slice::from_ref(&wbox), step)? {
        let gv = f.g(&a.act(&r.try_add(translator)?, &x)?);
        if gv != 0.0 {
            acc.add(w * gv * f.h_over_coset_box(axes, &r, &wbox));
        }
    }
    Ok(acc.sum() / c_inv)
}

/// `<(Ind(x_n, 1) f) eta, eta>` as a direct double integral, with coset
/// membership decided by the distance to `S_{x_n}`.
pub fn psi_direct(
    sc: &Scenario,
    n: Option<usize>,
    translator: &Element,
    f: &ElementaryTensor,
    w_radius: f64,
    step: f64,
) -> Result<f64> {
    let s = sc.stabilizer(n)?;
    let x = sc.base_point(n);
    let a = sc.action();
    let w = Window::centered(sc.group, w_radius)?;
    let inside =
        |g: &Element| -> Result<bool> { Ok(s.distance(&g.try_sub(translator)?)? <= w_radius) };
    let vbox = GBox::from_window(&w).translate(translator);
    let mut num = NeumaierSum::new();
    let mut den = NeumaierSum::new();
    let hw = f.h_half_width;
    for (v, wv) in quotient_nodes(&s, std::slice::from_ref(&vbox), step)? {
        if !inside(&v)? {
            continue;
        }
        den.add(wv);
        let gv = f.g(&a.act(&v, &x)?);
        if gv == 0.0 {
            continue;
        }
        // u ranges over v - supp h
        let ubox = GBox::new(
            v.real
                .iter()
                .zip(&f.h_center.real)
                .map(|(v, c)| v - c - hw)
                .collect(),
            v.real
                .iter()
                .zip(&f.h_center.real)
                .map(|(v, c)| v - c + hw)
                .collect(),
            v.lattice
                .iter()
                .zip(&f.h_center.lattice)
                .map(|(&v, &c)| (v - c - hw.floor() as i64, v - c + hw.floor() as i64))
                .collect(),
        );
        let trivial = ClosedSubgroup::trivial(sc.group);
        let mut inner = NeumaierSum::new();
        for (u, wu) in quotient_nodes(&trivial, std::slice::from_ref(&ubox), step)? {
            if inside(&u)? {
                inner.add(wu * trivial.haar_scale() * f.h(&v.try_sub(&u)?));
            }
        }
        num.add(wv * gv * inner.sum());
    }
    Ok(num.sum() / den.sum())
}

/// `<eta_n^(j), eta_n^(i)>`: the normalized overlap of `q(t_i + W + S)` and `q(t_j + W + S)`.
pub fn eta_overlap(
    sc: &Scenario,
    n: Option<usize>,
    ti: &Element,
    tj: &Element,
    w_radius: f64,
) -> Result<f64> {
    let s = sc.stabilizer(n)?;
    let b = GBox::from_window(&Window::centered(sc.group, w_radius)?);
    let own = coordinate_split_measure(&s, &[std::slice::from_ref(&b)])?;
    let (bi, bj) = (b.translate(ti), b.translate(tj));
    let both =
        coordinate_split_measure(&s, &[std::slice::from_ref(&bi), std::slice::from_ref(&bj)])?;
    Ok(both / own)
}

/// A finitely supported element of `C_c(G)`: point masses with weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledKernel {
    pub points: Vec<Element>,
    pub weights: Vec<f64>,
    pub values: Vec<Complex64>,
}

/// `alpha^_tau(b)(s) = tau(s) b(s)` on samples.
pub fn dual_twist(b: &SampledKernel, tau: &Character) -> Result<SampledKernel> {
    let values = b
        .points
        .iter()
        .zip(&b.values)
        .map(|(p, v)| Ok(tau.eval(p)? * v))
        .collect::<Result<_>>()?;
    Ok(SampledKernel {
        points: b.points.clone(),
        weights: b.weights.clone(),
        values,
    })
}

/// A tent vector in `L^2(G/S_x)`, written in chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVector {
    pub center: Element,
    pub half_width: f64,
    /// Complex phase applied to the tent.
    pub phase: f64,
}

impl TestVector {
    fn eval(&self, axes: &[AxisKind], s: &Element) -> Complex64 {
        let rr = s.real.len();
        let mut v = 1.0;
        let coords = s
            .real
            .iter()
            .copied()
            .chain(s.lattice.iter().map(|&k| k as f64));
        let centers = self
            .center
            .real
            .iter()
            .copied()
            .chain(self.center.lattice.iter().map(|&k| k as f64));
        for (i, ((x, c), kind)) in coords.zip(centers).zip(axes).enumerate() {
            let d = match *kind {
                AxisKind::Collapsed => 0.0,
                AxisKind::Free => x - c,
                AxisKind::Periodic(p) => {
                    let d = (x - c).rem_euclid(p);
                    d.min(p - d)
                }
            };
            let d = if i >= rr { d.round() } else { d };
            v *= (1.0 - d.abs() / self.half_width).max(0.0);
        }
        Complex64::from_polar(v, self.phase)
    }

    fn support(&self) -> GBox {
        let h = self.half_width;
        GBox::new(
            self.center.real.iter().map(|c| c - h).collect(),
            self.center.real.iter().map(|c| c + h).collect(),
            self.center
                .lattice
                .iter()
                .map(|&c| (c - h.floor() as i64, c + h.floor() as i64))
                .collect(),
        )
    }
}

/// Matrix elements `<Ind(x, tau)(b g) xi_a, xi_c>` where
/// `(Ind(x, tau)(f) xi)(s) = sum_p w_p f(t_p, s.x) tau(t_p) xi(s - t_p)`.
pub fn induced_matrix(
    sc: &Scenario,
    n: Option<usize>,
    b: &SampledKernel,
    g: &dyn Fn(&[f64]) -> f64,
    tau: &Character,
    vectors: &[TestVector],
    spacing: f64,
) -> Result<Vec<Vec<Complex64>>> {
    let s = sc.stabilizer(n)?;
    let x = sc.base_point(n);
    let a = sc.action();
    let axes = split_axes(&s)?.to_vec();
    let taus: Vec<Complex64> = b
        .points
        .iter()
        .map(|p| tau.eval(p))
        .collect::<Result<_>>()?;
    let mut out = vec![vec![Complex64::new(0.0, 0.0); vectors.len()]; vectors.len()];
    for (c, xc) in vectors.iter().enumerate() {
        let nodes = quotient_nodes(&s, &[xc.support()], spacing)?;
        for (node, w) in nodes {
            let conj = xc.eval(&axes, &node).conj();
            if conj == Complex64::new(0.0, 0.0) {
                continue;
            }
            let gx = g(&a.act(&node, &x)?);
            for (ai, xa) in vectors.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for ((t, (wt, bt)), tt) in b
                    .points
                    .iter()
                    .zip(b.weights.iter().zip(&b.values))
                    .zip(&taus)
                {
                    acc += *wt * bt * tt * xa.eval(&axes, &node.try_sub(t)?);
                }
                out[ai][c] += w * gx * acc * conj;
            }
        }
    }
    Ok(out)
}

/// Largest entrywise gap between `Ind(x, tau)(b)` and `Ind(x, 1)(alpha^_tau(b))`.
pub fn twist_deviation(
    sc: &Scenario,
    n: Option<usize>,
    b: &SampledKernel,
    g: &dyn Fn(&[f64]) -> f64,
    tau: &Character,
    vectors: &[TestVector],
    spacing: f64,
) -> Result<f64> {
    let lhs = induced_matrix(sc, n, b, g, tau, vectors, spacing)?;
    let rhs = induced_matrix(
        sc,
        n,
        &dual_twist(b, tau)?,
        g,
        &Character::trivial(sc.group),
        vectors,
        spacing,
    )?;
    Ok(lhs
        .iter()
        .flatten()
        .zip(rhs.iter().flatten())
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max))
}

/// Quotient-mass ratios `nu_{x_n}(V) / nu_z(V)` bracketed by outer and inner
/// preimage estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSeries {
    pub neighborhood: usize,
    pub indices: Vec<usize>,
    /// `inner_n / outer_z`.
    pub lower: Vec<f64>,
    /// `outer_n / inner_z`.
    pub upper: Vec<f64>,
}

pub fn ratio_series(sc: &Scenario, table: &PreimageTable) -> Result<Vec<RatioSeries>> {
    let sz = sc.stabilizer(None)?;
    let stabs: Vec<ClosedSubgroup> = table
        .indices
        .iter()
        .map(|&n| sc.stabilizer(Some(n)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (m, pz) in table.limit.iter().enumerate() {
        let (oz, iz) = preimage_measures(&sz, pz)?;
        if !(iz > 0.0) {
            return Err(Error::DenominatorUnderflow {
                value: iz,
                at: sc.limit.clone(),
            });
        }
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for (p, s) in stabs.iter().enumerate() {
            let (on, inn) = preimage_measures(s, &table.at[m][p])?;
            lower.push(inn / oz);
            upper.push(on / iz);
        }
        out.push(RatioSeries {
            neighborhood: m,
            indices: table.indices.clone(),
            lower,
            upper,
        });
    }
    Ok(out)
}

/// Index where the last `ceil(fraction * len)` entries begin (at least one entry).
pub fn tail_offset(len: usize, fraction: f64) -> usize {
    let tail = ((len as f64 * fraction).ceil() as usize).clamp(1, len.max(1));
    len.saturating_sub(tail)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub epsilon: f64,
    pub delta: f64,
    /// Share of the index range standing in for `liminf`.
    pub tail_fraction: f64,
    /// Relative slack when comparing trace evidence with `k`.
    pub trace_tolerance: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            delta: 0.1,
            tail_fraction: 0.5,
            trace_tolerance: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityBoundReport {
    pub k_hypothesis: usize,
    /// Tail median of `outer_n / inner_z` per neighborhood.
    pub per_neighborhood_m: Vec<f64>,
    /// `M`, the largest of the per-neighborhood values (at least 1).
    pub measured_m: f64,
    pub floor_m: u64,
    pub floor_m_squared: u64,
    pub epsilon: f64,
    /// `floor(M) + 1 - M (1 + eps)^4`; the `floor(M)` bound needs it positive.
    pub slack: f64,
    pub upper_bound: u64,
    /// Tail minimum of the trace, when the limit stabilizer is compact.
    pub lower_evidence: Option<f64>,
    pub limit_trace: Option<TraceEstimate>,
    pub traces: Vec<TraceEstimate>,
    pub tail_start: Option<usize>,
    /// Indices where `nu_{x_n}(V) <= M nu_z(V)` holds on every neighborhood.
    pub frequency_set: Vec<usize>,
    pub sources: Vec<String>,
    pub status: Verdict,
    pub note: String,
}

pub fn multiplicity_report(
    sc: &Scenario,
    k: usize,
    opts: &TraceOptions,
) -> Result<MultiplicityBoundReport> {
    multiplicity_report_with(sc, k, &PreimageTable::compute(sc)?, opts)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Upper bounds from the measured accumulation ratio, lower evidence from the
/// trace tail, and the verdict on `k`.
pub fn multiplicity_report_with(
    sc: &Scenario,
    k: usize,
    table: &PreimageTable,
    opts: &TraceOptions,
) -> Result<MultiplicityBoundReport> {
    let series = ratio_series(sc, table)?;
    let len = table.indices.len();
    if len == 0 {
        return Err(Error::IndexRangeTooShort("empty index range".into()));
    }
    let off = tail_offset(len, opts.tail_fraction);
    let per_neighborhood_m: Vec<f64> = series.iter().map(|r| median(&r.upper[off..])).collect();
    let measured_m = per_neighborhood_m.iter().cloned().fold(1.0, f64::max);
    let floor_m = measured_m.floor() as u64;
    let floor_m_squared = (measured_m * measured_m).floor() as u64;
    let grow = (1.0 + opts.epsilon).powi(4);
    let slack = floor_m as f64 + 1.0 - measured_m * grow;
    let upper_bound = if slack > 0.0 {
        floor_m
    } else {
        floor_m_squared
    };
    let frequency_set: Vec<usize> = (0..len)
        .filter(|&p| {
            series
                .iter()
                .all(|r| r.upper[p] <= measured_m * (1.0 + 1e-9))
        })
        .map(|p| table.indices[p])
        .collect();
    let sources = vec![
        format!("nu_x_n(V) <= M nu_z(V) frequently with M = {measured_m:.6}: multiplicity <= floor(M) = {floor_m} when M (1+eps)^4 < floor(M)+1"),
        format!("without the eps room: multiplicity <= floor(M^2) = {floor_m_squared}"),
        "liminf of ||K_n||^2 against the rank-one trace at the limit".to_string(),
    ];
    let compact = sc.stabilizer(None)?.is_compact();
    let (limit_trace, traces, lower_evidence, tail_start) = if compact {
        let v = sc.neighborhoods.last().ok_or(Error::EmptyWindowList)?;
        let spec = build_kernel_spec(sc, v, opts.delta)?;
        let limit = trace_estimate(sc, &spec, None)?;
        let traces: Vec<TraceEstimate> = table.indices[off..]
            .iter()
            .map(|&n| trace_estimate(sc, &spec, Some(n)))
            .collect::<Result<_>>()?;
        let low = traces.iter().map(|t| t.value).fold(f64::INFINITY, f64::min);
        (Some(limit), traces, Some(low), Some(table.indices[off]))
    } else {
        (None, Vec::new(), None, Some(table.indices[off]))
    };
    if let Some(low) = lower_evidence {
        let err = traces.iter().map(|t| t.error_bound).fold(0.0, f64::max);
        let ceiling = measured_m * grow;
        if low - err > ceiling * (1.0 + opts.trace_tolerance) {
            return Err(Error::InconsistentSandwich(format!(
                "trace liminf {low} exceeds M (1+eps)^4 = {ceiling}"
            )));
        }
    }
    let kf = k as f64;
    let (status, note) = if (upper_bound as usize) < k {
        (
            Verdict::Refuted,
            format!("upper bound {upper_bound} < k = {k}"),
        )
    } else {
        match lower_evidence {
            None => (
                Verdict::Inconclusive,
                "limit stabilizer is not compact: no trace evidence".to_string(),
            ),
            Some(low) if low >= kf * (1.0 - opts.trace_tolerance) => (
                Verdict::Certified,
                format!("trace liminf {low:.4} and upper bound {upper_bound} bracket k = {k}"),
            ),
            Some(low) => (
                Verdict::Refuted,
                format!("trace liminf {low:.4} below k = {k}"),
            ),
        }
    };
    Ok(MultiplicityBoundReport {
        k_hypothesis: k,
        per_neighborhood_m,
        measured_m,
        floor_m,
        floor_m_squared,
        epsilon: opts.epsilon,
        slack,
        upper_bound,
        lower_evidence,
        limit_trace,
        traces,
        tail_start,
        frequency_set,
        sources,
        status,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_scenario, green_point};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn small_v(sc: &Scenario) -> Region {
        sc.neighborhoods.last().unwrap().clone()
    }

    #[test]
    fn translation_trapezoid_norm() {
        let sc = builtin_scenario("translation").unwrap();
        let v = Region::Box {
            center: vec![0.0],
            half_widths: vec![1.0],
        };
        let spec = build_kernel_spec(&sc, &v, 0.1).unwrap();
        // int trap^2 = 2 p + 2 r / 3 over R, nu = Lebesgue / haar scale
        let s = sc.stabilizer(None).unwrap();
        let r = spec.support - spec.plateau;
        let exact = (2.0 * spec.plateau + 2.0 * r / 3.0) / s.haar_scale();
        assert_abs_diff_eq!(spec.amplitude, exact.powf(-0.5), epsilon = 1e-4);
        assert_abs_diff_eq!(spec.norm_check, 1.0, epsilon = 1e-4);
        assert!(spec.plateau_mass_fraction >= 0.9);
    }

    #[test]
    fn noncompact_stabilizer_is_rejected() {
        let sc = builtin_scenario("winding").unwrap();
        assert!(matches!(
            build_kernel_spec(&sc, &small_v(&sc), 0.1),
            Err(Error::StabilizerNotCompact)
        ));
    }

    #[test]
    fn tiny_neighborhoods_are_rejected() {
        let sc = builtin_scenario("translation").unwrap();
        let v = Region::cube(vec![0.0], 0.015);
        assert!(matches!(
            build_kernel_spec(&sc, &v, 0.1),
            Err(Error::NeighborhoodTooSmall(_))
        ));
    }

    #[test]
    fn rank_one_at_the_limit() {
        for id in ["translation", "green"] {
            let sc = builtin_scenario(id).unwrap();
            for v in &sc.neighborhoods {
                let spec = build_kernel_spec(&sc, v, 0.1).unwrap();
                let t = trace_estimate(&sc, &spec, None).unwrap();
                assert_abs_diff_eq!(t.value, 1.0, epsilon = 1e-3);
                assert!(t.symmetry_defect <= 1e-9);
            }
        }
    }

    #[test]
    fn zero_kernel_has_zero_trace() {
        let sc = builtin_scenario("green").unwrap();
        let spec = build_kernel_spec(&sc, &small_v(&sc), 0.1)
            .unwrap()
            .scaled(0.0);
        assert_eq!(trace_estimate(&sc, &spec, Some(12)).unwrap().value, 0.0);
    }

    /// Cross-strand pairs sit `2n + pi` apart, beyond the reach of `b`, so the
    /// kernel splits into one rank-one block per strand.
    #[test]
    fn green_trace_matches_strand_decomposition() {
        let sc = builtin_scenario("green").unwrap();
        let spec = build_kernel_spec(&sc, &small_v(&sc), 0.1).unwrap();
        let scale = sc.stabilizer(None).unwrap().haar_scale();
        for n in [8usize, 15, 30] {
            let strand = |c: f64| {
                let m = 20_000;
                let h = 0.2 / m as f64;
                (0..m)
                    .map(|i| {
                        let s = c - 0.1 + (i as f64 + 0.5) * h;
                        spec.f(&green_point(n as u32, s)).powi(2) * h
                    })
                    .sum::<f64>()
                    / scale
            };
            let oracle = strand(0.0).powi(2) + strand(2.0 * n as f64 + PI).powi(2);
            let t = trace_estimate(&sc, &spec, Some(n)).unwrap();
            assert_abs_diff_eq!(t.value, oracle, epsilon = 1e-3);
            assert!((t.value - 2.0).abs() <= 0.1, "n = {n}: {}", t.value);
        }
    }

    #[test]
    fn cut_down_plateau_and_range() {
        let sc = builtin_scenario("green").unwrap();
        let spec = build_kernel_spec(&sc, &small_v(&sc), 0.1).unwrap();
        let b = &spec.cut_down;
        let top = 1.0 / b.z_scale;
        for i in 0..=40 {
            let d = -2.0 * spec.support + 4.0 * spec.support * i as f64 / 40.0;
            assert_abs_diff_eq!(b.value(&Element::from_real(vec![d])), top, epsilon = 1e-12);
        }
        for i in 0..=200 {
            let d = -3.0 * spec.window_radius + 6.0 * spec.window_radius * i as f64 / 200.0;
            let v = b.value(&Element::from_real(vec![d]));
            assert!((0.0..=top + 1e-12).contains(&v));
        }
        assert_eq!(
            b.value(&Element::from_real(vec![spec.window_radius * 1.01])),
            0.0
        );
    }

    #[test]
    fn upsilon_bound_on_green_and_products() {
        for id in ["green", "green_x_winding", "green_x_trivial"] {
            let sc = builtin_scenario(id).unwrap();
            let rho = inscribed_radius(&small_v(&sc), &sc.limit);
            let cut = CutDown::for_scenario(&sc, SUPPORT_FRACTION * rho).unwrap();
            let r = upsilon_report(&sc, &cut, 0.02, 1e-3).unwrap();
            assert!(r.holds, "{id}: {r:?}");
        }
    }

    fn bump_tensor(center: Vec<f64>) -> ElementaryTensor {
        ElementaryTensor {
            h_center: Element::from_real(vec![0.0]),
            h_half_width: 0.4,
            h_amplitude: 1.0,
            g_center: center,
            g_radius: 0.5,
            g_amplitude: 1.0,
        }
    }

    #[test]
    fn psi_paths_agree_at_the_limit() {
        let sc = builtin_scenario("green").unwrap();
        let f = bump_tensor(sc.limit.clone());
        let t = Element::from_real(vec![0.0]);
        let closed = psi_functional(&sc, None, &t, &f, 0.5, 0.005).unwrap();
        let direct = psi_direct(&sc, None, &t, &f, 0.5, 0.005).unwrap();
        assert!(closed > 0.05);
        assert_abs_diff_eq!(closed, direct, epsilon = 1e-3);
        let zero = ElementaryTensor {
            h_amplitude: 0.0,
            ..f
        };
        assert_eq!(
            psi_functional(&sc, None, &t, &zero, 0.5, 0.01).unwrap(),
            0.0
        );
    }

    #[test]
    fn psi_converges_along_both_strands() {
        let sc = builtin_scenario("green").unwrap();
        let f = bump_tensor(sc.limit.clone());
        let zero = Element::from_real(vec![0.0]);
        let limit = psi_functional(&sc, None, &zero, &f, 0.5, 0.01).unwrap();
        let mut prev = [f64::INFINITY; 2];
        for n in [4usize, 8, 16, 30] {
            let ts = [zero.clone(), Element::from_real(vec![2.0 * n as f64 + PI])];
            for (j, t) in ts.iter().enumerate() {
                let gap = (psi_functional(&sc, Some(n), t, &f, 0.5, 0.01).unwrap() - limit).abs();
                assert!(gap <= prev[j] + 1e-12, "n = {n}, j = {j}");
                prev[j] = gap;
            }
            assert_abs_diff_eq!(eta_overlap(&sc, Some(n), &ts[0], &ts[1], 0.5).unwrap(), 0.0);
        }
        assert!(prev.iter().all(|&g| g < 1e-6));
    }

    #[test]
    fn twist_examples() {
        let b = SampledKernel {
            points: vec![Element::from_real(vec![1.0])],
            weights: vec![1.0],
            values: vec![Complex64::new(1.0, 0.0)],
        };
        let flip = dual_twist(&b, &Character::new(vec![0.5], vec![])).unwrap();
        assert_abs_diff_eq!(flip.values[0].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(flip.values[0].im, 0.0, epsilon = 1e-12);
        let same = dual_twist(&b, &Character::trivial(crate::GroupDescriptor::real(1))).unwrap();
        assert_eq!(same, b);
    }

    #[test]
    fn twist_identity_on_translation() {
        let sc = builtin_scenario("translation").unwrap();
        let pts: Vec<Element> = (0..9)
            .map(|i| Element::from_real(vec![-0.4 + 0.1 * i as f64]))
            .collect();
        let b = SampledKernel {
            weights: vec![0.1; pts.len()],
            values: pts
                .iter()
                .map(|p| Complex64::new(1.0 - p.real[0].abs(), 0.3 * p.real[0]))
                .collect(),
            points: pts,
        };
        let vectors: Vec<TestVector> = (0..4)
            .map(|i| TestVector {
                center: Element::from_real(vec![-0.3 + 0.2 * i as f64]),
                half_width: 0.3,
                phase: 0.4 * i as f64,
            })
            .collect();
        let g = |x: &[f64]| (1.0 - x[0].abs()).max(0.0);
        let tau = Character::new(vec![0.37], vec![]);
        let dev = twist_deviation(&sc, None, &b, &g, &tau, &vectors, 0.01).unwrap();
        assert!(dev <= 1e-6);
        // a non-trivial character really changes the matrix
        let plain = induced_matrix(
            &sc,
            None,
            &b,
            &g,
            &Character::new(vec![0.0], vec![]),
            &vectors,
            0.01,
        )
        .unwrap();
        let twisted = induced_matrix(&sc, None, &b, &g, &tau, &vectors, 0.01).unwrap();
        assert!((plain[1][1] - twisted[1][1]).norm() > 1e-3);
    }

    #[test]
    fn sandwich_on_green() {
        let sc = builtin_scenario("green").unwrap();
        let table = PreimageTable::compute(&sc).unwrap();
        let opts = TraceOptions::default();
        let two = multiplicity_report_with(&sc, 2, &table, &opts).unwrap();
        assert_eq!(two.upper_bound, 2);
        assert!(two.slack > 0.0);
        assert!((two.lower_evidence.unwrap() - 2.0).abs() < 0.2);
        assert_eq!(two.status, Verdict::Certified);
        let three = multiplicity_report_with(&sc, 3, &table, &opts).unwrap();
        assert_eq!(three.status, Verdict::Refuted);
    }

    #[test]
    fn sandwich_on_translation_and_winding() {
        let sc = builtin_scenario("translation").unwrap();
        let r = multiplicity_report(&sc, 1, &TraceOptions::default()).unwrap();
        assert_eq!(r.upper_bound, 1);
        assert!((r.lower_evidence.unwrap() - 1.0).abs() < 0.05);
        assert_eq!(r.status, Verdict::Certified);
        let sc = builtin_scenario("winding").unwrap();
        let r = multiplicity_report(&sc, 1, &TraceOptions::default()).unwrap();
        assert_eq!(r.upper_bound, 1);
        assert_eq!(r.status, Verdict::Inconclusive);
        assert_eq!(
            multiplicity_report(&sc, 2, &TraceOptions::default())
                .unwrap()
                .status,
            Verdict::Refuted
        );
    }

    proptest! {
        #[test]
        fn tent_integral_is_additive(a in -2.0f64..2.0, m in 0.0f64..1.0, len in 0.0f64..2.0, w in 0.1f64..1.5) {
            let b = a + len;
            let c = a + m * len;
            prop_assert!((tent_integral(a, c, w) + tent_integral(c, b, w) - tent_integral(a, b, w)).abs() < 1e-12);
            prop_assert!(tent_integral(a, b, w) <= w + 1e-12);
        }

        #[test]
        fn upsilon_is_symmetric(d in -1.0f64..1.0, c in 0.05f64..2.0) {
            let cut = CutDown {
                profiles: vec![AxisProfile::Plateau { plateau: 0.3 }],
                real_rank: 1,
                z_scale: 1.0,
            };
            for s in [ClosedSubgroup::trivial(crate::GroupDescriptor::real(1)), ClosedSubgroup::scaled_integers(c)] {
                let u = cut.upsilon(&s, &Element::from_real(vec![d])).unwrap();
                let v = cut.upsilon(&s, &Element::from_real(vec![-d])).unwrap();
                prop_assert!((u - v).abs() < 1e-12);
                prop_assert!(u >= 0.0);
            }
        }
    }
}
