//! Closed subgroups `H = V + L` of `R^a x Z^b`, their normalized Haar measures
//! and a finite-window Fell convergence checker.
//!
//! `V` is a subspace of `R^a` kept as an orthonormal basis. `L` is a discrete
//! group generated by elements whose real parts are orthogonal to `V`.
//! Distances use the sup norm of the residual to the Euclidean-nearest point
//! of `H`; for subgroups aligned with the coordinate axes that is exactly the
//! sup-norm distance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lca::{GridBox, GroupDescriptor, NeumaierSum};
use crate::{Bump, Element, Window};

const ZERO_TOL: f64 = 1e-9;
/// Generators shorter than this after reduction mean the group is not closed.
const DENSE_TOL: f64 = 1e-6;
const MAX_REDUCTION_ROUNDS: usize = 10_000;
/// Candidate limit for coefficient box searches.
pub const SEARCH_LIMIT: usize = 1_000_000;
const NET_LIMIT: usize = 2_000_000;

/// How a subgroup sits over one coordinate axis, when it splits as a product
/// of one-dimensional subgroups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AxisKind {
    /// Only `0` on this axis.
    Free,
    /// The whole axis (a basis vector of `V`).
    Collapsed,
    /// Multiples of a positive period.
    Periodic(f64),
}

/// A closed subgroup in canonical form with its Haar scale.
#[derive(Clone, Debug, Serialize)]
pub struct ClosedSubgroup {
    descriptor: GroupDescriptor,
    vector_basis: Vec<Vec<f64>>,
    discrete_generators: Vec<Element>,
    haar_scale: f64,
    #[serde(skip)]
    axes: Option<Vec<AxisKind>>,
    #[serde(skip)]
    embedded: Vec<Vec<f64>>,
    #[serde(skip)]
    gram_inv: Vec<Vec<f64>>,
    #[serde(skip)]
    sigma_min: f64,
}

impl PartialEq for ClosedSubgroup {
    fn eq(&self, other: &Self) -> bool {
        self.descriptor == other.descriptor
            && self.vector_basis == other.vector_basis
            && self.discrete_generators == other.discrete_generators
    }
}

/// Nearest point of a subgroup to some element.
#[derive(Clone, Debug, PartialEq)]
pub struct Nearest {
    pub point: Element,
    pub coefficients: Vec<i64>,
    /// Sup norm of the residual.
    pub distance: f64,
}

impl ClosedSubgroup {
    /// Canonicalizes `span(spanning) + Z-span(generators)` and normalizes its
    /// Haar measure against the reference bump.
    pub fn new(
        descriptor: GroupDescriptor,
        spanning: Vec<Vec<f64>>,
        generators: Vec<Element>,
    ) -> Result<Self> {
        for v in &spanning {
            if v.len() != descriptor.real_rank {
                return Err(Error::DescriptorMismatch {
                    expected: descriptor,
                    found: GroupDescriptor::new(v.len(), descriptor.lattice_rank),
                });
            }
        }
        for g in &generators {
            descriptor.check(g.descriptor())?;
        }
        let vector_basis = orthonormalize(&spanning);
        let projected: Vec<Element> = generators
            .iter()
            .map(|g| Element::new(reject(&g.real, &vector_basis), g.lattice.clone()))
            .collect();
        let discrete_generators = reduce_generators(projected)?;
        let mut h = Self {
            descriptor,
            vector_basis,
            discrete_generators,
            haar_scale: 1.0,
            axes: None,
            embedded: Vec::new(),
            gram_inv: Vec::new(),
            sigma_min: 1.0,
        };
        h.build_caches()?;
        h.haar_scale = haar_normalize(&h, &Bump::reference())?;
        Ok(h)
    }

    pub fn trivial(descriptor: GroupDescriptor) -> Self {
        Self::new(descriptor, vec![], vec![]).expect("trivial subgroup")
    }

    pub fn whole(descriptor: GroupDescriptor) -> Self {
        let a = descriptor.real_rank;
        let spanning = (0..a).map(|i| unit(a, i)).collect();
        let gens = (0..descriptor.lattice_rank)
            .map(|j| {
                let mut l = vec![0; descriptor.lattice_rank];
                l[j] = 1;
                Element::new(vec![0.0; a], l)
            })
            .collect();
        Self::new(descriptor, spanning, gens).expect("whole group")
    }

    /// `Z g`, or `{0}` when `g = 0`.
    pub fn cyclic(generator: Element) -> Result<Self> {
        Self::new(generator.descriptor(), vec![], vec![generator])
    }

    /// `c Z` inside `R`. `c = 0` gives `{0}`.
    pub fn scaled_integers(c: f64) -> Self {
        Self::cyclic(Element::from_real(vec![c])).expect("cZ is closed")
    }

    /// `H1 x H2` inside `G1 x G2`.
    pub fn direct_sum(&self, other: &Self) -> Result<Self> {
        let d1 = self.descriptor;
        let d2 = other.descriptor;
        let d = d1.product(&d2);
        let mut spanning = Vec::new();
        for v in &self.vector_basis {
            let mut w = v.clone();
            w.resize(d.real_rank, 0.0);
            spanning.push(w);
        }
        for v in &other.vector_basis {
            let mut w = vec![0.0; d1.real_rank];
            w.extend_from_slice(v);
            spanning.push(w);
        }
        let mut gens = Vec::new();
        for g in &self.discrete_generators {
            gens.push(g.concat(&Element::zero(d2)));
        }
        for g in &other.discrete_generators {
            gens.push(Element::zero(d1).concat(g));
        }
        Self::new(d, spanning, gens)
    }

    pub fn descriptor(&self) -> GroupDescriptor {
        self.descriptor
    }

    pub fn vector_basis(&self) -> &[Vec<f64>] {
        &self.vector_basis
    }

    pub fn discrete_generators(&self) -> &[Element] {
        &self.discrete_generators
    }

    pub fn haar_scale(&self) -> f64 {
        self.haar_scale
    }

    /// Per-axis structure when `H` is a product of axis subgroups.
    pub fn axis_kinds(&self) -> Option<&[AxisKind]> {
        self.axes.as_deref()
    }

    /// Indices of real axes spanned by `V`, when `V` is spanned by axes.
    pub fn vector_axes(&self) -> Option<Vec<usize>> {
        self.vector_basis.iter().map(|v| axis_of(v)).collect()
    }

    /// Compact means `{0}` in this group family.
    pub fn is_compact(&self) -> bool {
        self.vector_basis.is_empty() && self.discrete_generators.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.is_compact()
    }

    /// Haar mass of `H` itself, finite only when `H` is compact.
    pub fn total_mass(&self) -> Option<f64> {
        self.is_compact().then_some(self.haar_scale)
    }

    /// Short human-readable form such as `0.5Z`, `{0} x R` or `R`.
    pub fn describe(&self) -> String {
        if let Some(axes) = &self.axes {
            let parts: Vec<String> = axes
                .iter()
                .enumerate()
                .map(|(i, k)| {
                    let lattice = i >= self.descriptor.real_rank;
                    match k {
                        AxisKind::Free => "{0}".to_string(),
                        AxisKind::Collapsed => "R".to_string(),
                        AxisKind::Periodic(c) if lattice => format!("{c}Z (lattice)"),
                        AxisKind::Periodic(c) => format!("{c}Z"),
                    }
                })
                .collect();
            if parts.is_empty() {
                "{0}".to_string()
            } else {
                parts.join(" x ")
            }
        } else {
            format!(
                "span{:?} + Z{:?}",
                self.vector_basis,
                self.discrete_generators
                    .iter()
                    .map(|g| (g.real.clone(), g.lattice.clone()))
                    .collect::<Vec<_>>()
            )
        }
    }

    fn build_caches(&mut self) -> Result<()> {
        let d = self.descriptor;
        self.embedded = self
            .discrete_generators
            .iter()
            .map(|g| embed(&g.real, &g.lattice))
            .collect();
        let m = self.embedded.len();
        if m > 0 {
            let n = d.dim();
            let dm = DMatrix::from_fn(n, m, |i, j| self.embedded[j][i]);
            let gram = dm.transpose() * &dm;
            let eig = gram.clone().symmetric_eigen();
            let min = eig
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            if !(min > 1e-12 * max.max(1.0)) {
                return Err(Error::NotClosed(
                    "discrete generators are linearly dependent after reduction".into(),
                ));
            }
            self.sigma_min = min.sqrt();
            let inv = gram
                .try_inverse()
                .ok_or_else(|| Error::NotClosed("singular Gram matrix".into()))?;
            self.gram_inv = (0..m)
                .map(|i| (0..m).map(|j| inv[(i, j)]).collect())
                .collect();
        }
        self.axes = self.detect_axes();
        Ok(())
    }

    fn detect_axes(&self) -> Option<Vec<AxisKind>> {
        let a = self.descriptor.real_rank;
        let mut axes = vec![AxisKind::Free; self.descriptor.dim()];
        for v in &self.vector_basis {
            axes[axis_of(v)?] = AxisKind::Collapsed;
        }
        for g in &self.discrete_generators {
            let e = embed(&g.real, &g.lattice);
            let axis = axis_of_embedded(&e)?;
            if axes[axis] != AxisKind::Free {
                return None;
            }
            let period = if axis < a {
                e[axis].abs()
            } else {
                g.lattice[axis - a].unsigned_abs() as f64
            };
            axes[axis] = AxisKind::Periodic(period);
        }
        Some(axes)
    }

    /// Euclidean-nearest point of `H`, ties broken towards the lexicographically
    /// smallest coefficient vector.
    pub fn nearest(&self, g: &Element) -> Result<Nearest> {
        self.descriptor.check(g.descriptor())?;
        if let Some(axes) = &self.axes {
            return Ok(self.nearest_axes(axes, g));
        }
        let v_part = project(&g.real, &self.vector_basis);
        let e = embed(&reject(&g.real, &self.vector_basis), &g.lattice);
        let m = self.embedded.len();
        if m == 0 {
            let mut point = Element::zero(self.descriptor);
            point.real = v_part;
            return Ok(Nearest {
                distance: sup_dist(&e, &vec![0.0; e.len()]),
                point,
                coefficients: vec![],
            });
        }
        let c_star = self.least_squares(&e);
        let c0: Vec<i64> = c_star.iter().map(|&c| round_down_ties(c)).collect();
        let d0 = sq_dist(&e, &self.combine(&c0));
        let perp = sq_dist(&e, &self.combine_f(&c_star));
        let radius = (d0 - perp).max(0.0).sqrt() / self.sigma_min + 1e-9;
        let mut best: Option<(f64, Vec<i64>)> = None;
        for_each_in_box(&c_star, radius, |c| {
            let d = sq_dist(&e, &self.combine(c));
            let better = match &best {
                None => true,
                Some((bd, _)) => d < *bd - 1e-15 * bd.max(1.0),
            };
            if better {
                best = Some((d, c.to_vec()));
            }
        })?;
        let (_, coefficients) = best.expect("box contains the rounded point");
        let point = self.point_from(&coefficients, &v_part);
        let distance = g
            .real
            .iter()
            .zip(&point.real)
            .map(|(x, y)| (x - y).abs())
            .chain(
                g.lattice
                    .iter()
                    .zip(&point.lattice)
                    .map(|(x, y)| (x - y).abs() as f64),
            )
            .fold(0.0, f64::max);
        Ok(Nearest {
            point,
            coefficients,
            distance,
        })
    }

    fn nearest_axes(&self, axes: &[AxisKind], g: &Element) -> Nearest {
        let a = self.descriptor.real_rank;
        let mut point = Element::zero(self.descriptor);
        let mut coefficients = Vec::new();
        let mut distance: f64 = 0.0;
        for (i, kind) in axes.iter().enumerate() {
            let x = if i < a {
                g.real[i]
            } else {
                g.lattice[i - a] as f64
            };
            let (p, c) = match *kind {
                AxisKind::Free => (0.0, None),
                AxisKind::Collapsed => (x, None),
                AxisKind::Periodic(c) => {
                    let k = round_down_ties(x / c);
                    (k as f64 * c, Some(k))
                }
            };
            if i < a {
                point.real[i] = p;
                distance = distance.max((x - p).abs());
            } else {
                let pi = p.round() as i64;
                point.lattice[i - a] = pi;
                distance = distance.max((g.lattice[i - a] - pi).abs() as f64);
            }
            if let Some(k) = c {
                coefficients.push(k);
            }
        }
        Nearest {
            point,
            coefficients,
            distance,
        }
    }

    /// Sup-norm distance from `g` to `H` (see the module notes).
    pub fn distance(&self, g: &Element) -> Result<f64> {
        Ok(self.nearest(g)?.distance)
    }

    fn least_squares(&self, e: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = self.embedded.iter().map(|col| dot(col, e)).collect();
        self.gram_inv.iter().map(|row| dot(row, &rhs)).collect()
    }

    fn combine(&self, c: &[i64]) -> Vec<f64> {
        let mut out = vec![0.0; self.descriptor.dim()];
        for (col, &k) in self.embedded.iter().zip(c) {
            for (o, x) in out.iter_mut().zip(col) {
                *o += k as f64 * x;
            }
        }
        out
    }

    fn combine_f(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.descriptor.dim()];
        for (col, &k) in self.embedded.iter().zip(c) {
            for (o, x) in out.iter_mut().zip(col) {
                *o += k * x;
            }
        }
        out
    }

    /// `v_part + sum_i c_i g_i`, with exact lattice arithmetic.
    fn point_from(&self, c: &[i64], v_part: &[f64]) -> Element {
        let mut p = Element::zero(self.descriptor);
        p.real.copy_from_slice(v_part);
        for (g, &k) in self.discrete_generators.iter().zip(c) {
            for (o, x) in p.real.iter_mut().zip(&g.real) {
                *o += k as f64 * x;
            }
            for (o, x) in p.lattice.iter_mut().zip(&g.lattice) {
                *o += k * x;
            }
        }
        p
    }

    /// Coefficient vectors `c` of points of `L` with `|Lc - e(center)|_2 <= rho`,
    /// in lexicographic order.
    fn discrete_points_near(&self, center: &Element, rho: f64) -> Result<Vec<Vec<i64>>> {
        if self.embedded.is_empty() {
            return Ok(vec![vec![]]);
        }
        let e = embed(&reject(&center.real, &self.vector_basis), &center.lattice);
        let c_star = self.least_squares(&e);
        let perp = sq_dist(&e, &self.combine_f(&c_star));
        let slack = rho * rho - perp;
        let mut out = Vec::new();
        if slack < -1e-12 {
            return Ok(out);
        }
        let radius = slack.max(0.0).sqrt() / self.sigma_min + 1e-9;
        let bound = rho * rho * (1.0 + 1e-12) + 1e-12;
        for_each_in_box(&c_star, radius, |c| {
            if sq_dist(&e, &self.combine(c)) <= bound {
                out.push(c.to_vec());
            }
        })?;
        Ok(out)
    }

    /// Points `p` of `L` (real parts orthogonal to `V`) whose coset `p + V`
    /// can meet `window`, in lexicographic coefficient order.
    pub fn cosets_meeting(&self, window: &Window) -> Result<Vec<Element>> {
        self.descriptor.check(window.descriptor())?;
        let rho = (self.descriptor.dim() as f64).sqrt() * window.radius * (1.0 + 1e-12);
        let zero = vec![0.0; self.descriptor.real_rank];
        Ok(self
            .discrete_points_near(&window.center, rho)?
            .iter()
            .map(|c| self.point_from(c, &zero))
            .collect())
    }

    /// Haar integral over `H` restricted to `window`.
    pub fn integrate_h<F>(&self, f: F, window: &Window, step: f64) -> Result<f64>
    where
        F: Fn(&Element) -> f64 + Sync,
    {
        if !(step > 0.0) {
            return Err(Error::NonPositiveStep(step));
        }
        let k = self.vector_basis.len();
        let mut total = NeumaierSum::new();
        for p in self.cosets_meeting(window)? {
            if k == 0 {
                if window.contains(&p) {
                    total.add(f(&p));
                }
                continue;
            }
            let (lo, hi) = self.vector_chart_box(window);
            let grid = GridBox::covering(lo, hi, vec![], step)?;
            let basis = &self.vector_basis;
            let v = grid.integrate(|y| {
                let mut x = p.clone();
                for (yl, v) in y.real.iter().zip(basis) {
                    for (o, vi) in x.real.iter_mut().zip(v) {
                        *o += yl * vi;
                    }
                }
                if window.contains(&x) {
                    f(&x)
                } else {
                    0.0
                }
            });
            total.add(v);
        }
        Ok(self.haar_scale * total.sum())
    }

    /// `int_H f(base + t) dalpha_H(t)` over the `t` with `base + t` in `window`.
    pub fn integrate_coset<F>(
        &self,
        f: F,
        base: &Element,
        window: &Window,
        step: f64,
    ) -> Result<f64>
    where
        F: Fn(&Element) -> f64 + Sync,
    {
        let shifted = Window::new(window.center.try_sub(base)?, window.radius)?;
        self.integrate_h(
            |t| f(&base.try_add(t).expect("same descriptor")),
            &shifted,
            step,
        )
    }

    /// Box in `V`-coordinates covering `window ∩ (p + V)` for every `p`.
    fn vector_chart_box(&self, window: &Window) -> (Vec<f64>, Vec<f64>) {
        let r = window.radius;
        match self.vector_axes() {
            Some(ax) => (
                ax.iter().map(|&i| window.center.real[i] - r).collect(),
                ax.iter().map(|&i| window.center.real[i] + r).collect(),
            ),
            None => {
                let ext = (self.descriptor.real_rank as f64).sqrt() * r;
                let y0: Vec<f64> = self
                    .vector_basis
                    .iter()
                    .map(|v| dot(v, &window.center.real))
                    .collect();
                (
                    y0.iter().map(|y| y - ext).collect(),
                    y0.iter().map(|y| y + ext).collect(),
                )
            }
        }
    }

    /// Grid samples of `H ∩ window` with spacing at most `spacing` along `V`.
    pub fn sample_net(&self, window: &Window, spacing: f64) -> Result<Vec<Element>> {
        let mut out = Vec::new();
        let cosets = self.cosets_meeting(window)?;
        if self.vector_basis.is_empty() {
            out.extend(cosets.into_iter().filter(|p| window.contains(p)));
            return Ok(out);
        }
        let (lo, hi) = self.vector_chart_box(window);
        let grid = GridBox::covering(lo, hi, vec![], spacing)?;
        if grid.len().saturating_mul(cosets.len()) > NET_LIMIT {
            return Err(Error::NetTooLarge(grid.len().saturating_mul(cosets.len())));
        }
        let rows = grid.fold_rows(Vec::new, |acc: &mut Vec<Vec<f64>>, y| {
            acc.push(y.real.clone())
        });
        for p in &cosets {
            for y in rows.iter().flatten() {
                let mut x = p.clone();
                for (yl, v) in y.iter().zip(&self.vector_basis) {
                    for (o, vi) in x.real.iter_mut().zip(v) {
                        *o += yl * vi;
                    }
                }
                if window.contains(&x) {
                    out.push(x);
                }
            }
        }
        Ok(out)
    }
}

/// Raw Lebesgue-times-counting integral of `f0` over `H`, inverted.
pub fn haar_normalize(h: &ClosedSubgroup, f0: &Bump) -> Result<f64> {
    let r = f0.support_radius;
    let raw = if let Some(axes) = &h.axes {
        axes.iter()
            .map(|k| match *k {
                AxisKind::Free => 1.0,
                AxisKind::Collapsed => f0.axis_integral(),
                AxisKind::Periodic(c) => {
                    let n = (r / c).floor() as i64;
                    let s: NeumaierSum<f64> = (-n..=n)
                        .map(|k| crate::lca::tent(k as f64 * c / r))
                        .collect();
                    s.sum()
                }
            })
            .product::<f64>()
    } else {
        let window = Window::centered(h.descriptor, r)?;
        let k = h.vector_basis.len();
        let zero = vec![0.0; h.descriptor.real_rank];
        let rho = (h.descriptor.dim() as f64).sqrt() * r;
        let mut total = NeumaierSum::new();
        for c in h.discrete_points_near(&Element::zero(h.descriptor), rho)? {
            let p = h.point_from(&c, &zero);
            if k == 0 {
                total.add(f0.value(&p));
                continue;
            }
            let (lo, hi) = h.vector_chart_box(&window);
            let per_axis = (4.0e6f64).powf(1.0 / k as f64).floor();
            let step = (hi[0] - lo[0]) / per_axis.min(2.0e5);
            let grid = GridBox::covering(lo, hi, vec![], step)?;
            total.add(grid.integrate(|y| {
                let mut x = p.clone();
                for (yl, v) in y.real.iter().zip(&h.vector_basis) {
                    for (o, vi) in x.real.iter_mut().zip(v) {
                        *o += yl * vi;
                    }
                }
                f0.value(&x)
            }));
        }
        total.sum()
    };
    assert!(
        raw.is_finite() && raw > 0.0,
        "raw Haar integral {raw} of a compactly supported bump"
    );
    Ok(1.0 / raw)
}

/// Convenience wrapper for [`ClosedSubgroup::nearest`].
pub fn subgroup_membership(h: &ClosedSubgroup, g: &Element, tol: f64) -> Result<bool> {
    if !(tol > 0.0) {
        return Err(Error::NonPositiveStep(tol));
    }
    Ok(h.distance(g)? < tol)
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn embed(real: &[f64], lattice: &[i64]) -> Vec<f64> {
    real.iter()
        .copied()
        .chain(lattice.iter().map(|&k| k as f64))
        .collect()
}

fn project(x: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for v in basis {
        let c = dot(x, v);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += c * vi;
        }
    }
    out
}

fn reject(x: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let p = project(x, basis);
    x.iter().zip(&p).map(|(a, b)| a - b).collect()
}

/// Nearest integer, halves going down.
fn round_down_ties(t: f64) -> i64 {
    (t - 0.5).ceil() as i64
}

/// Axis index of a unit coordinate vector.
fn axis_of(v: &[f64]) -> Option<usize> {
    axis_of_embedded(v).filter(|&i| (v[i].abs() - 1.0).abs() < 1e-12)
}

fn axis_of_embedded(v: &[f64]) -> Option<usize> {
    let mut found = None;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > 1e-12 {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
    }
    found
}

/// Modified Gram-Schmidt; vectors close to an axis are snapped onto it.
fn orthonormalize(spanning: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in spanning {
        let scale = dot(v, v).sqrt().max(1.0);
        let mut w = v.clone();
        for _ in 0..2 {
            w = reject(&w, &basis);
        }
        let n = dot(&w, &w).sqrt();
        if n > ZERO_TOL * scale {
            let mut u: Vec<f64> = w.iter().map(|x| x / n).collect();
            if let Some(i) = u.iter().position(|x| (x.abs() - 1.0).abs() < 1e-12) {
                u = unit(u.len(), i);
            }
            basis.push(u);
        }
    }
    basis
}

/// Pairwise size reduction until stable, dropping zero vectors. The leading
/// nonzero coordinate of each survivor is made positive.
fn reduce_generators(mut gens: Vec<Element>) -> Result<Vec<Element>> {
    let norm2 = |g: &Element| dot(&embed(&g.real, &g.lattice), &embed(&g.real, &g.lattice));
    for _ in 0..MAX_REDUCTION_ROUNDS {
        gens.retain(|g| norm2(g) > ZERO_TOL * ZERO_TOL);
        let mut changed = false;
        for i in 0..gens.len() {
            for j in 0..gens.len() {
                if i == j {
                    continue;
                }
                let (ni, nj) = (norm2(&gens[i]), norm2(&gens[j]));
                if nj < ni || ni <= ZERO_TOL * ZERO_TOL {
                    continue;
                }
                let ei = embed(&gens[i].real, &gens[i].lattice);
                let ej = embed(&gens[j].real, &gens[j].lattice);
                let t = dot(&ei, &ej) / ni;
                if t.abs() <= 0.5 + 1e-12 {
                    continue;
                }
                let mu = t.round() as i64;
                let gi = gens[i].clone();
                let gj = &mut gens[j];
                for (x, y) in gj.real.iter_mut().zip(&gi.real) {
                    *x -= mu as f64 * y;
                }
                for (x, y) in gj.lattice.iter_mut().zip(&gi.lattice) {
                    *x -= mu * y;
                }
                changed = true;
            }
        }
        if !changed {
            gens.retain(|g| norm2(g) > ZERO_TOL * ZERO_TOL);
            for g in &gens {
                if norm2(g).sqrt() < DENSE_TOL {
                    return Err(Error::NotClosed(format!(
                        "reduction produced a generator of length {:.3e}; the group is not discrete",
                        norm2(g).sqrt()
                    )));
                }
            }
            for g in gens.iter_mut() {
                let e = embed(&g.real, &g.lattice);
                if let Some(x) = e.iter().find(|x| x.abs() > 1e-12) {
                    if *x < 0.0 {
                        *g = g.neg();
                    }
                }
                for x in g.real.iter_mut() {
                    if x.abs() < 1e-15 {
                        *x = 0.0;
                    }
                }
            }
            return Ok(gens);
        }
    }
    Err(Error::NotClosed(
        "generator reduction did not stabilize; no integer relation found".into(),
    ))
}

/// Calls `visit` on each integer vector of the box `center ± radius`, in
/// lexicographic order.
fn for_each_in_box<F: FnMut(&[i64])>(center: &[f64], radius: f64, mut visit: F) -> Result<()> {
    let ranges: Vec<(i64, i64)> = center
        .iter()
        .map(|&c| ((c - radius).ceil() as i64, (c + radius).floor() as i64))
        .collect();
    let count: f64 = ranges
        .iter()
        .map(|&(lo, hi)| (hi - lo + 1).max(0) as f64)
        .product();
    if count > SEARCH_LIMIT as f64 {
        return Err(Error::SearchRadiusOverflow {
            candidates: count,
            limit: SEARCH_LIMIT,
        });
    }
    if ranges.iter().any(|&(lo, hi)| hi < lo) {
        return Ok(());
    }
    let mut c: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        visit(&c);
        let mut i = c.len();
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            if c[i] < ranges[i].1 {
                c[i] += 1;
                break;
            }
            c[i] = ranges[i].0;
        }
    }
}

/// Outcome of a finite-window Fell check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FellStatus {
    Certified,
    Violated,
}

/// Worst witness distance observed at one index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessRecord {
    pub index: usize,
    pub sample: Element,
    pub witness: Element,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FellViolation {
    pub window_radius: f64,
    pub index: usize,
    /// 1: a point of `H` is not approximated; 2: a point of `H_n` is far from `H`.
    pub condition: u8,
    pub point: Element,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FellWindowRecord {
    pub window: Window,
    pub samples: usize,
    pub threshold_condition1: Option<usize>,
    pub threshold_condition2: Option<usize>,
    pub direction1_witnesses: Vec<WitnessRecord>,
}

impl FellWindowRecord {
    /// Index from which both conditions hold on this window.
    pub fn threshold(&self) -> Option<usize> {
        Some(self.threshold_condition1?.max(self.threshold_condition2?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FellCertificate {
    pub status: FellStatus,
    pub tolerance: f64,
    pub first_index: usize,
    pub last_index: usize,
    pub required_tail: usize,
    pub windows: Vec<FellWindowRecord>,
    pub direction2_violations: Vec<FellViolation>,
}

impl FellCertificate {
    pub fn is_certified(&self) -> bool {
        self.status == FellStatus::Certified
    }

    /// Largest per-window threshold, when certified.
    pub fn threshold(&self) -> Option<usize> {
        self.windows
            .iter()
            .map(|w| w.threshold())
            .try_fold(0, |m, t| Some(m.max(t?)))
    }
}

/// Fraction of the index range that must lie past every threshold.
pub const FELL_MIN_TAIL: f64 = 0.25;

/// Checks `H_n -> H` on nested windows. The family is given as
/// `(index, subgroup)` pairs in increasing index order.
pub fn fell_converges(
    family: &[(usize, ClosedSubgroup)],
    limit: &ClosedSubgroup,
    windows: &[Window],
    tol: f64,
) -> Result<FellCertificate> {
    if windows.is_empty() {
        return Err(Error::EmptyWindowList);
    }
    if family.is_empty() {
        return Err(Error::IndexRangeTooShort("empty subgroup family".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::NonPositiveStep(tol));
    }
    let d = limit.descriptor();
    for w in windows {
        d.check(w.descriptor())?;
    }
    for (_, h) in family {
        d.check(h.descriptor())?;
    }
    for pair in windows.windows(2) {
        let shift = pair[1].center.try_sub(&pair[0].center)?.sup_norm();
        if pair[1].radius + 1e-12 < pair[0].radius + shift {
            return Err(Error::WindowsNotNested);
        }
    }
    let len = family.len();
    let required_tail = ((len as f64 * FELL_MIN_TAIL).ceil() as usize).max(1);
    let per_window: Vec<Result<(FellWindowRecord, Vec<FellViolation>)>> = windows
        .par_iter()
        .map(|w| check_window(family, limit, w, tol, required_tail))
        .collect();
    let mut records = Vec::new();
    let mut violations = Vec::new();
    for r in per_window {
        let (rec, v) = r?;
        records.push(rec);
        violations.extend(v);
    }
    let status = if violations.is_empty() {
        FellStatus::Certified
    } else {
        FellStatus::Violated
    };
    Ok(FellCertificate {
        status,
        tolerance: tol,
        first_index: family[0].0,
        last_index: family[len - 1].0,
        required_tail,
        windows: records,
        direction2_violations: violations,
    })
}

fn check_window(
    family: &[(usize, ClosedSubgroup)],
    limit: &ClosedSubgroup,
    window: &Window,
    tol: f64,
    required_tail: usize,
) -> Result<(FellWindowRecord, Vec<FellViolation>)> {
    let len = family.len();
    let net = limit.sample_net(window, tol)?;
    let mut violations = Vec::new();

    // condition (1): every sample of H has a close witness in H_n
    let mut witnesses = Vec::new();
    let mut threshold1 = Some(family[0].0);
    for pos in (0..len).rev() {
        let (idx, h) = &family[pos];
        let mut worst: Option<WitnessRecord> = None;
        for s in &net {
            let near = h.nearest(s)?;
            if worst.as_ref().is_none_or(|w| near.distance > w.distance) {
                worst = Some(WitnessRecord {
                    index: *idx,
                    sample: s.clone(),
                    witness: near.point,
                    distance: near.distance,
                });
            }
        }
        match worst {
            Some(w) if w.distance >= tol => {
                threshold1 = family.get(pos + 1).map(|p| p.0);
                if len - (pos + 1) < required_tail {
                    violations.push(FellViolation {
                        window_radius: window.radius,
                        index: *idx,
                        condition: 1,
                        point: w.sample,
                        distance: w.distance,
                    });
                }
                break;
            }
            Some(w) => witnesses.push(w),
            None => {}
        }
    }
    witnesses.reverse();

    // condition (2): samples of H_n stay close to H
    let mut threshold2 = Some(family[0].0);
    // nothing lies off a limit that fills every real axis of R^a
    let full = limit.descriptor().lattice_rank == 0
        && limit.vector_basis.len() == limit.descriptor().real_rank;
    for pos in (0..len).rev().filter(|_| !full) {
        let (idx, h) = &family[pos];
        let mut worst: Option<(f64, Element)> = None;
        for s in h.sample_net(window, tol)? {
            let dist = limit.distance(&s)?;
            if dist >= tol && worst.as_ref().is_none_or(|w| dist > w.0) {
                worst = Some((dist, s));
            }
        }
        if let Some((dist, point)) = worst {
            threshold2 = family.get(pos + 1).map(|p| p.0);
            if len - (pos + 1) < required_tail {
                violations.push(FellViolation {
                    window_radius: window.radius,
                    index: *idx,
                    condition: 2,
                    point,
                    distance: dist,
                });
            }
            break;
        }
    }
    Ok((
        FellWindowRecord {
            window: window.clone(),
            samples: net.len(),
            threshold_condition1: threshold1,
            threshold_condition2: threshold2,
            direction1_witnesses: witnesses,
        },
        violations,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const R1: GroupDescriptor = GroupDescriptor::real(1);
    const R2: GroupDescriptor = GroupDescriptor::real(2);

    fn e1(x: f64) -> Element {
        Element::from_real(vec![x])
    }

    fn windows(d: GroupDescriptor, radii: &[f64]) -> Vec<Window> {
        radii
            .iter()
            .map(|&r| Window::centered(d, r).unwrap())
            .collect()
    }

    /// Independent oracle for cZ: 1 / sum_k (1 - |k| c)^+.
    fn cz_scale(c: f64) -> f64 {
        let mut s = 0.0;
        let mut k = 0i64;
        loop {
            let v = 1.0 - (k as f64 * c).abs();
            if v <= 0.0 {
                break;
            }
            s += if k == 0 { v } else { 2.0 * v };
            k += 1;
        }
        1.0 / s
    }

    #[test]
    fn membership_examples() {
        let h = ClosedSubgroup::scaled_integers(0.5);
        assert!(subgroup_membership(&h, &e1(1.5), 1e-9).unwrap());
        let t = ClosedSubgroup::trivial(R1);
        assert!(subgroup_membership(&t, &e1(0.0), 1e-9).unwrap());
        let v = ClosedSubgroup::new(R2, vec![vec![0.0, 1.0]], vec![]).unwrap();
        let g = Element::from_real(vec![0.3, 7.1]);
        assert!(!subgroup_membership(&v, &g, 1e-9).unwrap());
        assert_abs_diff_eq!(v.distance(&g).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_scales() {
        assert_eq!(ClosedSubgroup::whole(R1).haar_scale(), 1.0);
        assert_eq!(ClosedSubgroup::trivial(R1).haar_scale(), 1.0);
        assert_eq!(ClosedSubgroup::scaled_integers(2.0).haar_scale(), 1.0);
        assert_abs_diff_eq!(
            ClosedSubgroup::scaled_integers(0.5).haar_scale(),
            0.5,
            epsilon = 1e-15
        );
        for c in [0.3, 0.25, 0.01, 1e-3, 0.7] {
            assert_abs_diff_eq!(
                ClosedSubgroup::scaled_integers(c).haar_scale(),
                cz_scale(c),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn integrate_h_normalization() {
        let w = Window::centered(R1, 2.0).unwrap();
        let f0 = Bump::reference();
        let line = ClosedSubgroup::whole(R1);
        assert_abs_diff_eq!(
            line.integrate_h(|t| f0.value(t), &w, 1e-3).unwrap(),
            1.0,
            epsilon = 1e-6
        );
        let half = ClosedSubgroup::scaled_integers(0.5);
        assert_abs_diff_eq!(
            half.integrate_h(|t| f0.value(t), &w, 1e-3).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        for c in [0.5, 0.1, 0.03, 0.007, 0.001] {
            let h = ClosedSubgroup::scaled_integers(c);
            assert_abs_diff_eq!(
                h.integrate_h(|t| f0.value(t), &w, 1e-3).unwrap(),
                1.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn integer_relations_are_cleaned_up() {
        let h = ClosedSubgroup::new(R1, vec![], vec![e1(2.0), e1(3.0)]).unwrap();
        assert_eq!(h.discrete_generators(), &[e1(1.0)]);
        let h = ClosedSubgroup::new(R1, vec![], vec![e1(-0.5)]).unwrap();
        assert_eq!(h.discrete_generators(), &[e1(0.5)]);
    }

    #[test]
    fn dense_generators_are_rejected() {
        let r = ClosedSubgroup::new(R1, vec![], vec![e1(1.0), e1(2f64.sqrt())]);
        assert!(matches!(r, Err(Error::NotClosed(_))));
    }

    #[test]
    fn generators_are_projected_off_the_vector_part() {
        let h = ClosedSubgroup::new(
            R2,
            vec![vec![1.0, 0.0]],
            vec![Element::from_real(vec![3.0, 0.5])],
        )
        .unwrap();
        assert_eq!(
            h.discrete_generators(),
            &[Element::from_real(vec![0.0, 0.5])]
        );
        assert_eq!(
            h.axis_kinds().unwrap(),
            &[AxisKind::Collapsed, AxisKind::Periodic(0.5)]
        );
    }

    #[test]
    fn oblique_subgroup_normalizes() {
        // the diagonal line in R^2: int_R (1 - |t/sqrt2|)^2... checked by quadrature
        let d = ClosedSubgroup::new(R2, vec![vec![1.0, 1.0]], vec![]).unwrap();
        let w = Window::centered(R2, 1.0).unwrap();
        let f0 = Bump::reference();
        let v = d.integrate_h(|t| f0.value(t), &w, 1e-4).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-6);
        // closed form: int (1-|s|/sqrt2)^2 ds over |s| < sqrt2 = 2 sqrt2 / 3
        assert_abs_diff_eq!(d.haar_scale(), 3.0 / (2.0 * 2f64.sqrt()), epsilon = 1e-6);
    }

    #[test]
    fn mixed_lattice_membership() {
        let d = GroupDescriptor::new(1, 1);
        let h = ClosedSubgroup::cyclic(Element::new(vec![0.5], vec![1])).unwrap();
        assert!(h.axis_kinds().is_none());
        assert!(subgroup_membership(&h, &Element::new(vec![1.5], vec![3]), 1e-9).unwrap());
        assert!(!subgroup_membership(&h, &Element::new(vec![1.5], vec![2]), 1e-3).unwrap());
        let f0 = Bump::reference();
        let w = Window::centered(d, 2.0).unwrap();
        let v = h.integrate_h(|t| f0.value(t), &w, 1e-3).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        // only 0 lies in the support of f0: (0.5, 1) has lattice coordinate 1
        assert_eq!(h.haar_scale(), 1.0);
    }

    #[test]
    fn nearest_breaks_ties_downwards() {
        let h = ClosedSubgroup::scaled_integers(1.0);
        assert_eq!(h.nearest(&e1(0.5)).unwrap().point, e1(0.0));
        assert_eq!(h.nearest(&e1(-0.5)).unwrap().point, e1(-1.0));
    }

    #[test]
    fn fell_winding_stabilizers() {
        let fam: Vec<_> = (1..=40)
            .map(|n| {
                (
                    n,
                    ClosedSubgroup::scaled_integers(1.0 / (n as f64 * n as f64 + 0.5)),
                )
            })
            .collect();
        let c = fell_converges(
            &fam,
            &ClosedSubgroup::whole(R1),
            &windows(R1, &[1.0, 3.0, 10.0]),
            1e-3,
        )
        .unwrap();
        assert!(c.is_certified(), "{:?}", c.direction2_violations);
    }

    #[test]
    fn fell_constant_sequence() {
        let h = ClosedSubgroup::new(
            R2,
            vec![vec![0.0, 1.0]],
            vec![Element::from_real(vec![0.75, 0.0])],
        )
        .unwrap();
        let fam: Vec<_> = (1..=6).map(|n| (n, h.clone())).collect();
        let c = fell_converges(&fam, &h, &windows(R2, &[1.0, 2.0]), 1e-2).unwrap();
        assert!(c.is_certified());
        assert!(c.windows.iter().all(|w| w.threshold() == Some(1)));
    }

    #[test]
    fn fell_n_z_to_trivial() {
        let fam: Vec<_> = (1..=12)
            .map(|n| (n, ClosedSubgroup::scaled_integers(n as f64)))
            .collect();
        let c = fell_converges(
            &fam,
            &ClosedSubgroup::trivial(R1),
            &windows(R1, &[1.0, 3.0]),
            1e-3,
        )
        .unwrap();
        assert!(c.is_certified());
        assert_eq!(c.windows[1].threshold(), Some(4));
    }

    #[test]
    fn fell_counterexample_is_violated() {
        let fam: Vec<_> = (1..=40)
            .map(|n| (n, ClosedSubgroup::scaled_integers(1.0 + 1.0 / n as f64)))
            .collect();
        let c = fell_converges(
            &fam,
            &ClosedSubgroup::scaled_integers(2.0),
            &windows(R1, &[3.0]),
            1e-3,
        )
        .unwrap();
        assert!(!c.is_certified());
        let v2 = c
            .direction2_violations
            .iter()
            .find(|v| v.condition == 2)
            .expect("condition (2) violation");
        // 1 + 1/n sits at distance 1 - 1/n from 2Z
        assert_abs_diff_eq!(v2.distance, 1.0 - 1.0 / 40.0, epsilon = 1e-12);
    }

    #[test]
    fn fell_rejects_bad_windows() {
        let fam = vec![(1, ClosedSubgroup::trivial(R1))];
        let t = ClosedSubgroup::trivial(R1);
        assert!(matches!(
            fell_converges(&fam, &t, &[], 1e-3),
            Err(Error::EmptyWindowList)
        ));
        assert!(matches!(
            fell_converges(&fam, &t, &windows(R1, &[2.0, 1.0]), 1e-3),
            Err(Error::WindowsNotNested)
        ));
    }

    #[test]
    fn direct_sum_of_trivial_and_line() {
        let h = ClosedSubgroup::trivial(R1)
            .direct_sum(&ClosedSubgroup::whole(R1))
            .unwrap();
        assert_eq!(h.describe(), "{0} x R");
        assert_eq!(h.haar_scale(), 1.0);
    }

    #[test]
    fn search_overflow_is_reported() {
        let h = ClosedSubgroup::new(
            R2,
            vec![],
            vec![
                Element::from_real(vec![1.0, 0.0]),
                Element::from_real(vec![0.3, 1e-5]),
            ],
        );
        // nearly dependent generators: the coefficient box explodes
        if let Ok(h) = h {
            let w = Window::centered(R2, 50.0).unwrap();
            assert!(matches!(
                h.cosets_meeting(&w),
                Err(Error::SearchRadiusOverflow { .. })
            ));
        }
    }

    fn lattice_subgroup() -> impl Strategy<Value = ClosedSubgroup> {
        prop_oneof![
            (0.05..3.0f64).prop_map(ClosedSubgroup::scaled_integers),
            Just(ClosedSubgroup::whole(R1)),
            Just(ClosedSubgroup::trivial(R1)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn normalization_holds(h in lattice_subgroup()) {
            let w = Window::centered(R1, 2.0).unwrap();
            let f0 = Bump::reference();
            let v = h.integrate_h(|t| f0.value(t), &w, 1e-3).unwrap();
            prop_assert!((v - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn nearest_point_is_a_member(h in lattice_subgroup(), x in -20.0..20.0f64) {
            let n = h.nearest(&e1(x)).unwrap();
            prop_assert!(h.distance(&n.point).unwrap() < 1e-9);
            prop_assert!((n.distance - (x - n.point.real[0]).abs()).abs() < 1e-12);
        }

        #[test]
        fn fell_reflexive(h in lattice_subgroup()) {
            let fam: Vec<_> = (1..=4).map(|n| (n, h.clone())).collect();
            let c = fell_converges(&fam, &h, &windows(R1, &[1.0, 2.0]), 1e-2).unwrap();
            prop_assert!(c.is_certified());
        }

        #[test]
        fn fell_subsequence_thresholds(p in 1.0..4.0f64) {
            let fam: Vec<_> = (1..=24).map(|n| (n, ClosedSubgroup::scaled_integers(p / (n as f64 * n as f64)))).collect();
            let sub: Vec<_> = fam.iter().filter(|(n, _)| n % 2 == 0).cloned().collect();
            let line = ClosedSubgroup::whole(R1);
            let w = windows(R1, &[1.0, 2.0]);
            let full = fell_converges(&fam, &line, &w, 1e-2).unwrap();
            prop_assume!(full.is_certified());
            let half = fell_converges(&sub, &line, &w, 1e-2).unwrap();
            prop_assert!(half.is_certified());
            // positions in the subsequence never exceed positions in the full family
            let t_full = full.threshold().unwrap();
            let t_half = half.threshold().unwrap();
            prop_assert!(t_half / 2 <= t_full);
        }

        #[test]
        fn haar_choice_is_continuous(c in 0.002..0.02f64, shift in -0.5..0.5f64) {
            let w = Window::centered(R1, 3.0).unwrap();
            let f = Bump::triangular(1.7);
            let h = ClosedSubgroup::scaled_integers(c);
            let line = ClosedSubgroup::whole(R1);
            let fc = |t: &Element| f.value(&e1(t.real[0] - shift));
            let a = h.integrate_h(fc, &w, 1e-3).unwrap();
            let b = line.integrate_h(fc, &w, 1e-3).unwrap();
            prop_assert!((a - b).abs() < 4.0 * c);
        }
    }

    #[test]
    fn haar_choice_converges_monotonically() {
        // |int_{H_n} f - int_R f| for H_n = (1/n)Z and a bump off the lattice
        let w = Window::centered(R1, 3.0).unwrap();
        let f = Bump::triangular(1.3);
        let line = ClosedSubgroup::whole(R1);
        let fc = |t: &Element| f.value(&e1(t.real[0] - 0.37));
        let target = line.integrate_h(fc, &w, 1e-4).unwrap();
        let errs: Vec<f64> = (10..=60)
            .step_by(10)
            .map(|n| {
                let h = ClosedSubgroup::scaled_integers(1.0 / n as f64);
                (h.integrate_h(fc, &w, 1e-4).unwrap() - target).abs()
            })
            .collect();
        for pair in errs.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-3);
        }
        assert!(errs.last().unwrap() < &1e-3);
    }
}
