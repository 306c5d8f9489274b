//! Quotient measures `nu_H` on `G/H`, normalized by the Weil formula
//! `int_G f = int_{G/H} int_H f(s + t) dalpha_H(t) dnu_H(s)`.
//!
//! Two independent evaluators are provided. The coordinate split works when
//! `H` is a product of axis subgroups: `G/H` is then a product of lines,
//! circles and points and `nu_H = (1 / haar_scale) x` the product measure.
//! The Bruhat section evaluator integrates `chi_{E+H} b` over `G` for a
//! function `b` whose `H`-averages are identically one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lca::{smoothed_indicator, tent, GridBox, GroupDescriptor, NeumaierSum};
use crate::subgroups::{AxisKind, ClosedSubgroup, FellCertificate};
use crate::{Bump, Element, Window};

/// Closed box in `G`: an interval per real axis, an integer range per lattice axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lattice: Vec<(i64, i64)>,
}

impl GBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, lattice: Vec<(i64, i64)>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Self {
            lower,
            upper,
            lattice,
        }
    }

    /// `[lo, hi]` in `R`.
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(vec![lo], vec![hi], vec![])
    }

    pub fn from_window(w: &Window) -> Self {
        let (lower, upper) = w.real_bounds();
        Self::new(lower, upper, w.lattice_ranges())
    }

    pub fn descriptor(&self) -> GroupDescriptor {
        GroupDescriptor::new(self.lower.len(), self.lattice.len())
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| u < l)
            || self.lattice.iter().any(|(l, u)| u < l)
    }

    /// Lebesgue times counting measure.
    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let real: f64 = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product();
        let count: f64 = self
            .lattice
            .iter()
            .map(|(l, u)| (u - l + 1) as f64)
            .product();
        real * count
    }

    pub fn contains(&self, g: &Element) -> bool {
        g.real
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| l <= x && x <= u)
            && g.lattice
                .iter()
                .zip(&self.lattice)
                .all(|(k, (l, u))| l <= k && k <= u)
    }

    pub fn translate(&self, g: &Element) -> Self {
        Self::new(
            self.lower.iter().zip(&g.real).map(|(l, x)| l + x).collect(),
            self.upper.iter().zip(&g.real).map(|(u, x)| u + x).collect(),
            self.lattice
                .iter()
                .zip(&g.lattice)
                .map(|((l, u), k)| (l + k, u + k))
                .collect(),
        )
    }

    pub fn intersect(&self, other: &Self) -> Self {
        Self::new(
            self.lower
                .iter()
                .zip(&other.lower)
                .map(|(a, b)| a.max(*b))
                .collect(),
            self.upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| a.min(*b))
                .collect(),
            self.lattice
                .iter()
                .zip(&other.lattice)
                .map(|((a, b), (c, d))| (*a.max(c), *b.min(d)))
                .collect(),
        )
    }

    /// Sup-norm centre and radius of the smallest enclosing window.
    pub fn center(&self) -> Element {
        Element::new(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect(),
            self.lattice.iter().map(|(l, u)| l + (u - l) / 2).collect(),
        )
    }

    pub fn half_width(&self) -> f64 {
        let r = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (u - l))
            .fold(0.0, f64::max);
        self.lattice
            .iter()
            .map(|(l, u)| ((u - l) - (u - l) / 2) as f64)
            .fold(r, f64::max)
    }

    /// Cartesian product, real axes first.
    pub fn product(&self, other: &Self) -> Self {
        let mut b = self.clone();
        b.lower.extend_from_slice(&other.lower);
        b.upper.extend_from_slice(&other.upper);
        b.lattice.extend_from_slice(&other.lattice);
        b
    }
}

/// Union of [`GBox`]es in the union-of-boxes sense; overlaps are allowed.
pub type BoxSet = Vec<GBox>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CoordinateSplit,
    BruhatSection,
}

#[derive(Clone, Debug)]
pub struct QuotientMeasure {
    pub ambient: GroupDescriptor,
    pub subgroup: ClosedSubgroup,
    pub method: Method,
}

impl QuotientMeasure {
    pub fn new(subgroup: ClosedSubgroup, method: Method) -> Self {
        Self {
            ambient: subgroup.descriptor(),
            subgroup,
            method,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMeasureEstimate {
    pub value: f64,
    pub method: Method,
    pub error_bound: f64,
    pub set_descriptor: String,
}

fn describe_set(e: &[GBox]) -> String {
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    for b in e {
        if lo.is_empty() {
            lo = b.lower.clone();
            hi = b.upper.clone();
        }
        for (i, (l, u)) in b.lower.iter().zip(&b.upper).enumerate() {
            lo[i] = lo[i].min(*l);
            hi[i] = hi[i].max(*u);
        }
    }
    format!("{} boxes in {:?}..{:?}", e.len(), lo, hi)
}

/// Image of a box on one quotient axis: half-open intervals in chart units.
fn axis_image(kind: AxisKind, lattice: bool, lo: f64, hi: f64) -> Option<Vec<(f64, f64)>> {
    match kind {
        AxisKind::Collapsed => None,
        AxisKind::Free if lattice => Some(vec![(lo, hi + 1.0)]),
        AxisKind::Free => Some(vec![(lo, hi)]),
        AxisKind::Periodic(c) => {
            let (lo, hi, c) = if lattice {
                (lo, hi + 1.0, c)
            } else {
                (lo, hi, c)
            };
            if hi - lo >= c {
                return Some(vec![(0.0, c)]);
            }
            let a = lo.rem_euclid(c);
            let b = a + (hi - lo);
            if b <= c {
                Some(vec![(a, b)])
            } else {
                Some(vec![(a, c), (0.0, b - c)])
            }
        }
    }
}

/// A product of intervals on the active quotient axes.
type Piece = Vec<(f64, f64)>;

fn image_pieces(axes: &[AxisKind], real_rank: usize, b: &GBox) -> Vec<Piece> {
    if b.is_empty() {
        return Vec::new();
    }
    let mut pieces: Vec<Piece> = vec![Vec::new()];
    for (i, &kind) in axes.iter().enumerate() {
        let (lo, hi, lattice) = if i < real_rank {
            (b.lower[i], b.upper[i], false)
        } else {
            let (l, u) = b.lattice[i - real_rank];
            (l as f64, u as f64, true)
        };
        let Some(parts) = axis_image(kind, lattice, lo, hi) else {
            continue;
        };
        pieces = pieces
            .into_iter()
            .flat_map(|p| {
                parts.iter().map(move |&iv| {
                    let mut q = p.clone();
                    q.push(iv);
                    q
                })
            })
            .collect();
    }
    pieces
}

/// A cell of the quotient chart covered by a set, in chart coordinates.
/// Collapsed axes carry the degenerate interval `[0, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuotientCell {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Axis structure needed by the coordinate split.
pub fn split_axes(h: &ClosedSubgroup) -> Result<&[AxisKind]> {
    h.axis_kinds().ok_or_else(|| {
        Error::MethodNotApplicable(format!(
            "coordinate split needs an axis-aligned subgroup, got {}",
            h.describe()
        ))
    })
}

/// Elementary cells of the common refinement of all images, with the sets
/// covering each.
fn refine(
    axes: &[AxisKind],
    real_rank: usize,
    sets: &[&[GBox]],
) -> (Vec<Vec<f64>>, Vec<Vec<Piece>>) {
    let images: Vec<Vec<Piece>> = sets
        .iter()
        .map(|s| {
            s.iter()
                .flat_map(|b| image_pieces(axes, real_rank, b))
                .collect()
        })
        .collect();
    let active = axes.iter().filter(|k| **k != AxisKind::Collapsed).count();
    let mut breaks: Vec<Vec<f64>> = vec![Vec::new(); active];
    for p in images.iter().flatten() {
        for (j, &(l, u)) in p.iter().enumerate() {
            breaks[j].push(l);
            breaks[j].push(u);
        }
    }
    for b in breaks.iter_mut() {
        b.sort_by(|x, y| x.total_cmp(y));
        b.dedup();
    }
    (breaks, images)
}

fn for_each_cell<F: FnMut(&[(f64, f64)])>(breaks: &[Vec<f64>], mut visit: F) {
    if breaks.iter().any(|b| b.len() < 2) {
        return;
    }
    let n = breaks.len();
    let mut idx = vec![0usize; n];
    let mut cell: Vec<(f64, f64)> = breaks.iter().map(|b| (b[0], b[1])).collect();
    loop {
        visit(&cell);
        let mut i = n;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] + 1 < breaks[i].len() {
                cell[i] = (breaks[i][idx[i]], breaks[i][idx[i] + 1]);
                break;
            }
            idx[i] = 0;
            cell[i] = (breaks[i][0], breaks[i][1]);
        }
    }
}

fn covered(pieces: &[Piece], cell: &[(f64, f64)]) -> bool {
    pieces.iter().any(|p| {
        p.iter()
            .zip(cell)
            .all(|(&(l, u), &(a, b))| l <= a && b <= u)
    })
}

/// `nu_H(q(A_1) ∩ ... ∩ q(A_m))` for unions of boxes `A_i`, in closed form.
pub fn coordinate_split_measure(h: &ClosedSubgroup, sets: &[&[GBox]]) -> Result<f64> {
    let axes = split_axes(h)?;
    let real_rank = h.descriptor().real_rank;
    let (breaks, images) = refine(axes, real_rank, sets);
    if images.iter().any(|i| i.is_empty()) {
        return Ok(0.0);
    }
    if breaks.is_empty() {
        // G/H is a point of mass 1 / haar_scale
        return Ok(1.0 / h.haar_scale());
    }
    let mut total = NeumaierSum::<f64>::new();
    for_each_cell(&breaks, |cell| {
        if images.iter().all(|pieces| covered(pieces, cell)) {
            total.add(cell.iter().map(|(a, b)| b - a).product());
        }
    });
    Ok(total.sum() / h.haar_scale())
}

/// Disjoint chart cells whose union is `q(E)`, expanded to full `G` dimension.
pub fn quotient_cells(h: &ClosedSubgroup, e: &[GBox]) -> Result<Vec<QuotientCell>> {
    let axes = split_axes(h)?;
    let real_rank = h.descriptor().real_rank;
    let (breaks, images) = refine(axes, real_rank, &[e]);
    let mut out = Vec::new();
    if images[0].is_empty() {
        return Ok(out);
    }
    let expand = |cell: &[(f64, f64)]| {
        let mut lower = Vec::with_capacity(axes.len());
        let mut upper = Vec::with_capacity(axes.len());
        let mut j = 0;
        for k in axes {
            if *k == AxisKind::Collapsed {
                lower.push(0.0);
                upper.push(0.0);
            } else {
                lower.push(cell[j].0);
                upper.push(cell[j].1);
                j += 1;
            }
        }
        QuotientCell { lower, upper }
    };
    if breaks.is_empty() {
        out.push(expand(&[]));
        return Ok(out);
    }
    for_each_cell(&breaks, |cell| {
        if covered(&images[0], cell) {
            out.push(expand(cell));
        }
    });
    Ok(out)
}

/// Cut-down approximate cross section `b = g / int_H g(. + t) dalpha_H(t)`.
#[derive(Clone, Debug)]
pub struct BruhatSection {
    pub bump: Bump,
    pub center: Element,
    pub coverage_window: Window,
    /// Largest `|int_H b(r + t) dalpha - 1|` seen on the certification grid.
    pub certified_defect: f64,
    subgroup: ClosedSubgroup,
    vector_axes: Vec<usize>,
}

/// Partition-of-unity tolerance on the certification grid.
pub const SECTION_TOL: f64 = 1e-4;

impl BruhatSection {
    pub fn subgroup(&self) -> &ClosedSubgroup {
        &self.subgroup
    }

    fn support(&self) -> Window {
        Window::new(self.center.clone(), self.bump.support_radius).expect("positive radius")
    }

    /// `int_H g(r + t) dalpha_H(t)`, summed in closed form over `V`.
    pub fn denominator(&self, r: &Element) -> f64 {
        let h = &self.subgroup;
        let rho = self.bump.support_radius;
        let a = h.descriptor().real_rank;
        let offset = self.center.try_sub(r).expect("descriptor checked at build");
        let probe = Window::new(offset, rho).expect("positive radius");
        let cosets = h.cosets_meeting(&probe).unwrap_or_default();
        let v_mass = rho.powi(self.vector_axes.len() as i32);
        let mut s = NeumaierSum::new();
        for p in cosets {
            let mut v = v_mass;
            for i in 0..a {
                if !self.vector_axes.contains(&i) {
                    v *= tent((r.real[i] + p.real[i] - self.center.real[i]) / rho);
                }
            }
            for (j, &k) in p.lattice.iter().enumerate() {
                v *= tent((r.lattice[j] + k - self.center.lattice[j]) as f64 / rho);
            }
            s.add(v);
        }
        h.haar_scale() * s.sum()
    }

    pub fn value(&self, r: &Element) -> f64 {
        let g = self
            .bump
            .value(&r.try_sub(&self.center).expect("descriptor"));
        if g == 0.0 {
            0.0
        } else {
            g / self.denominator(r)
        }
    }
}

/// Builds the section for `H` with coverage `W`. The bump has radius
/// `2 R + 2` around the centre of `W`, which keeps the denominator above one
/// half of `haar_scale` times the `V`-mass on `W + H`.
pub fn build_bruhat_section(h: &ClosedSubgroup, w: &Window) -> Result<BruhatSection> {
    h.descriptor().check(w.descriptor())?;
    let vector_axes = h.vector_axes().ok_or_else(|| {
        Error::MethodNotApplicable(format!(
            "section needs an axis-aligned vector part, got {}",
            h.describe()
        ))
    })?;
    let rho = 2.0 * w.radius + 2.0;
    let section = BruhatSection {
        bump: Bump::triangular(rho),
        center: w.center.clone(),
        coverage_window: w.clone(),
        certified_defect: 0.0,
        subgroup: h.clone(),
        vector_axes,
    };
    // certification grid on W
    let per_axis = 9usize;
    let (lo, hi) = w.real_bounds();
    let grid = GridBox {
        lower: lo,
        upper: hi,
        cells: vec![per_axis; h.descriptor().real_rank],
        lattice: w.lattice_ranges(),
    };
    let samples: Vec<Element> = grid
        .fold_rows(Vec::new, |acc: &mut Vec<Element>, g| acc.push(g.clone()))
        .into_iter()
        .flatten()
        .collect();
    let reach = Window::new(w.center.clone(), rho + w.radius)?;
    let mut defect: f64 = 0.0;
    for r in &samples {
        let den = section.denominator(r);
        if den < 0.1 {
            return Err(Error::DenominatorUnderflow {
                value: den,
                at: r.real.clone(),
            });
        }
        let avg = h.integrate_coset(|x| section.value(x), r, &reach, 2e-3)?;
        defect = defect.max((avg - 1.0).abs());
    }
    if defect > SECTION_TOL {
        return Err(Error::CoverageViolation(format!(
            "partition of unity defect {defect:.3e} on the certification grid"
        )));
    }
    Ok(BruhatSection {
        certified_defect: defect,
        ..section
    })
}

/// `nu_H(q_H(E))` by the measure's configured method. The section is
/// required for the Bruhat method and must cover `E`.
pub fn quotient_measure_of_set(
    nu: &QuotientMeasure,
    e: &[GBox],
    section: Option<&BruhatSection>,
    step: f64,
) -> Result<SetMeasureEstimate> {
    let set_descriptor = describe_set(e);
    match nu.method {
        Method::CoordinateSplit => {
            let value = coordinate_split_measure(&nu.subgroup, &[e])?;
            Ok(SetMeasureEstimate {
                value,
                method: Method::CoordinateSplit,
                error_bound: 1e-12 * value.max(1.0),
                set_descriptor,
            })
        }
        Method::BruhatSection => {
            let section = section.ok_or_else(|| {
                Error::CoverageViolation("bruhat-section method needs a section".into())
            })?;
            let (value, error_bound) = bruhat_measure(&nu.subgroup, e, section, step)?;
            Ok(SetMeasureEstimate {
                value,
                method: Method::BruhatSection,
                error_bound,
                set_descriptor,
            })
        }
    }
}

fn bruhat_measure(
    h: &ClosedSubgroup,
    e: &[GBox],
    section: &BruhatSection,
    step: f64,
) -> Result<(f64, f64)> {
    let cover = GBox::from_window(&section.coverage_window);
    for b in e {
        if !b.is_empty() && b.intersect(&cover) != *b {
            return Err(Error::CoverageViolation(format!(
                "box {:?}..{:?} leaves the section coverage",
                b.lower, b.upper
            )));
        }
    }
    let support = section.support();
    let ramp = 2.0 * step;
    let a = h.descriptor().real_rank;
    let vax = &section.vector_axes;
    // translates of E by the discrete part that reach the support of b
    let mut shifted: Vec<GBox> = Vec::new();
    for b in e.iter().filter(|b| !b.is_empty()) {
        let probe = Window::new(
            support.center.try_sub(&b.center())?,
            support.radius + b.half_width() + ramp,
        )?;
        for p in h.cosets_meeting(&probe)? {
            shifted.push(b.translate(&p));
        }
    }
    // clipped sum, so translates that abut along a face join without a dip
    let chi = |r: &Element| -> f64 {
        let mut best: f64 = 0.0;
        for b in &shifted {
            let mut v = 1.0;
            for i in 0..a {
                if !vax.contains(&i) {
                    v *= smoothed_indicator(r.real[i], b.lower[i], b.upper[i], ramp);
                    if v == 0.0 {
                        break;
                    }
                }
            }
            if v > 0.0
                && r.lattice
                    .iter()
                    .zip(&b.lattice)
                    .all(|(k, (l, u))| l <= k && k <= u)
            {
                best += v;
            }
        }
        best.min(1.0)
    };
    let grid = GridBox::covering(
        support.real_bounds().0,
        support.real_bounds().1,
        support.lattice_ranges(),
        step,
    )?;
    let rows = grid.fold_rows(
        || (NeumaierSum::new(), 0.0f64),
        |acc, r| {
            let c = chi(r);
            if c > 0.0 {
                let b = section.value(r);
                acc.0.add(c * b);
                acc.1 = acc.1.max(b);
            }
        },
    );
    let value = rows
        .iter()
        .map(|r| r.0.sum())
        .collect::<NeumaierSum<f64>>()
        .sum()
        * grid.weight();
    let b_max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    // volume of the ramp bands inside the support of b
    let mut band = 0.0;
    for b in &shifted {
        for i in (0..a).filter(|i| !vax.contains(i)) {
            let mut vol = 2.0 * ramp;
            for j in (0..a).filter(|&j| j != i) {
                vol *= if vax.contains(&j) {
                    2.0 * support.radius
                } else {
                    (b.upper[j] - b.lower[j] + ramp).min(2.0 * support.radius)
                };
            }
            for (l, u) in &b.lattice {
                vol *= (u - l + 1) as f64;
            }
            band += vol;
        }
    }
    Ok((value, b_max * band + 1e-9 * value))
}

/// Residual `int_G f - int_{G/H} int_H f dalpha dnu`, the right side taken
/// over an explicit fundamental domain of `H`. `window` must contain the
/// support of `f`.
pub fn weil_consistency<F>(h: &ClosedSubgroup, f: F, window: &Window, step: f64) -> Result<f64>
where
    F: Fn(&Element) -> f64 + Sync,
{
    h.descriptor().check(window.descriptor())?;
    let lhs = GridBox::from_window(window, step)?.integrate(&f);
    let domain = FundamentalDomain::new(h, window, step)?;
    let rhs = domain.integrate(h, &f, window, step)?;
    Ok(lhs - rhs)
}

/// A Borel fundamental domain `D` of `H` in `G`: lattice residues modulo the
/// pivots of an integer echelon form, a half-open parallelepiped of the real
/// lattice, and a box of the orthogonal complement.
struct FundamentalDomain {
    /// Per lattice axis: residue count for pivot axes, a window range otherwise.
    lattice: Vec<(i64, i64)>,
    real_lattice: Vec<Vec<f64>>,
    complement: Vec<Vec<f64>>,
    complement_box: Vec<(f64, f64, usize)>,
    jacobian: f64,
}

impl FundamentalDomain {
    fn new(h: &ClosedSubgroup, window: &Window, step: f64) -> Result<Self> {
        let d = h.descriptor();
        let a = d.real_rank;
        let mut gens: Vec<Element> = h.discrete_generators().to_vec();
        let mut pivots: Vec<Element> = Vec::new();
        let mut lattice = window.lattice_ranges();
        for j in 0..d.lattice_rank {
            loop {
                let mut nz: Vec<usize> = (0..gens.len())
                    .filter(|&i| gens[i].lattice[j] != 0)
                    .collect();
                if nz.len() <= 1 {
                    if let Some(&i) = nz.first() {
                        let mut p = gens.remove(i);
                        if p.lattice[j] < 0 {
                            p = p.neg();
                        }
                        lattice[j] = (0, p.lattice[j] - 1);
                        pivots.push(p);
                    }
                    break;
                }
                nz.sort_by_key(|&i| (gens[i].lattice[j].abs(), i));
                let piv = gens[nz[0]].clone();
                for &i in &nz[1..] {
                    let q = gens[i].lattice[j].div_euclid(piv.lattice[j]);
                    for (x, y) in gens[i].real.iter_mut().zip(&piv.real) {
                        *x -= q as f64 * y;
                    }
                    for (x, y) in gens[i].lattice.iter_mut().zip(&piv.lattice) {
                        *x -= q * y;
                    }
                }
            }
        }
        let real_lattice: Vec<Vec<f64>> = gens.iter().map(|g| g.real.clone()).collect();
        let jacobian = if real_lattice.is_empty() {
            1.0
        } else {
            let k = real_lattice.len();
            let m = nalgebra::DMatrix::from_fn(a, k, |i, j| real_lattice[j][i]);
            (m.transpose() * m).determinant().sqrt()
        };
        // orthonormal complement of V + span(real lattice)
        let mut span: Vec<Vec<f64>> = h.vector_basis().to_vec();
        for r in &real_lattice {
            let mut w = r.clone();
            for _ in 0..2 {
                for b in &span {
                    let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in w.iter_mut().zip(b) {
                        *x -= c * y;
                    }
                }
            }
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            span.push(w.iter().map(|x| x / n).collect());
        }
        let mut complement: Vec<Vec<f64>> = Vec::new();
        for i in 0..a {
            let mut w = vec![0.0; a];
            w[i] = 1.0;
            for _ in 0..2 {
                for b in span.iter().chain(&complement) {
                    let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in w.iter_mut().zip(b) {
                        *x -= c * y;
                    }
                }
            }
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 {
                complement.push(w.iter().map(|x| x / n).collect());
            }
        }
        let r = window.radius;
        let generous = {
            let c = window.center.sup_norm();
            let mut b = (a as f64).sqrt() * (c + r);
            for p in &pivots {
                let lat = p.lattice.iter().map(|x| x.abs()).max().unwrap_or(1).max(1) as f64;
                let norm = p.real.iter().map(|x| x * x).sum::<f64>().sqrt();
                b += norm * ((c + r) / lat + 1.0);
            }
            b
        };
        let complement_box = complement
            .iter()
            .map(|u| {
                let axis = u.iter().position(|x| (x - 1.0).abs() < 1e-15);
                let untouched = axis.is_some_and(|i| pivots.iter().all(|p| p.real[i] == 0.0));
                match axis {
                    Some(i) if untouched => {
                        let n = (2.0 * r / step).round().max(1.0) as usize;
                        (window.center.real[i] - r, window.center.real[i] + r, n)
                    }
                    _ => {
                        let y0: f64 = u.iter().zip(&window.center.real).map(|(x, y)| x * y).sum();
                        let n = (2.0 * generous / step).ceil().max(1.0) as usize;
                        (y0 - generous, y0 + generous, n)
                    }
                }
            })
            .collect();
        Ok(Self {
            lattice,
            real_lattice,
            complement,
            complement_box,
            jacobian,
        })
    }

    fn integrate<F>(&self, h: &ClosedSubgroup, f: &F, window: &Window, step: f64) -> Result<f64>
    where
        F: Fn(&Element) -> f64 + Sync,
    {
        let k = self.real_lattice.len();
        let mut lower = vec![0.0; k];
        let mut upper = vec![1.0; k];
        let mut cells: Vec<usize> = self
            .real_lattice
            .iter()
            .map(|r| {
                let len = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                (len / step).ceil().max(1.0) as usize
            })
            .collect();
        for &(lo, hi, n) in &self.complement_box {
            lower.push(lo);
            upper.push(hi);
            cells.push(n);
        }
        let grid = GridBox {
            lower,
            upper,
            cells,
            lattice: self.lattice.clone(),
        };
        let a = h.descriptor().real_rank;
        let total = grid.integrate(|p| {
            let mut base = Element::new(vec![0.0; a], p.lattice.clone());
            for (theta, r) in p.real[..k].iter().zip(&self.real_lattice) {
                for (o, x) in base.real.iter_mut().zip(r) {
                    *o += theta * x;
                }
            }
            for (omega, u) in p.real[k..].iter().zip(&self.complement) {
                for (o, x) in base.real.iter_mut().zip(u) {
                    *o += omega * x;
                }
            }
            h.integrate_coset(f, &base, window, step)
                .unwrap_or(f64::NAN)
        });
        if total.is_nan() {
            return Err(Error::CoverageViolation("coset integral failed".into()));
        }
        Ok(total * self.jacobian / h.haar_scale())
    }
}

/// Sequence of `nu_{H_n}(q(W))` against the limit value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimsupReport {
    pub values: Vec<(usize, f64)>,
    pub limit_value: f64,
    pub tail_start: usize,
    pub tail_max: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// Relative tolerance on the limsup inequality.
pub const LIMSUP_REL_TOL: f64 = 5e-3;

/// Compares `limsup_n nu_{H_n}(q(W))` with `nu_H(q(W))`. Refuses to run
/// without a certified Fell certificate for the family.
pub fn limsup_comparison(
    family: &[(usize, ClosedSubgroup)],
    limit: &ClosedSubgroup,
    certificate: Option<&FellCertificate>,
    w: &[GBox],
    tail_fraction: f64,
) -> Result<LimsupReport> {
    match certificate {
        Some(c) if c.is_certified() => {}
        _ => return Err(Error::MissingFellCertificate),
    }
    if family.is_empty() {
        return Err(Error::IndexRangeTooShort("empty family".into()));
    }
    let measure = |h: &ClosedSubgroup| -> Result<f64> {
        match coordinate_split_measure(h, &[w]) {
            Ok(v) => Ok(v),
            Err(Error::MethodNotApplicable(_)) => {
                let cover = bounding_window(w)?;
                let s = build_bruhat_section(h, &cover)?;
                Ok(bruhat_measure(h, w, &s, 1e-3)?.0)
            }
            Err(e) => Err(e),
        }
    };
    let values: Vec<(usize, f64)> = family
        .iter()
        .map(|(n, h)| measure(h).map(|v| (*n, v)))
        .collect::<Result<_>>()?;
    let limit_value = measure(limit)?;
    let tail_len = ((values.len() as f64 * tail_fraction).ceil() as usize).clamp(1, values.len());
    let tail = &values[values.len() - tail_len..];
    let tail_max = tail.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let tolerance = LIMSUP_REL_TOL * limit_value;
    Ok(LimsupReport {
        tail_start: tail[0].0,
        holds: tail_max <= limit_value + tolerance,
        values,
        limit_value,
        tail_max,
        tolerance,
    })
}

/// Smallest window containing every box of `e`.
pub fn bounding_window(e: &[GBox]) -> Result<Window> {
    let first = e
        .first()
        .ok_or_else(|| Error::DegenerateWindow("empty set".into()))?;
    let mut hull = first.clone();
    for b in &e[1..] {
        for i in 0..hull.lower.len() {
            hull.lower[i] = hull.lower[i].min(b.lower[i]);
            hull.upper[i] = hull.upper[i].max(b.upper[i]);
        }
        for (x, y) in hull.lattice.iter_mut().zip(&b.lattice) {
            *x = (x.0.min(y.0), x.1.max(y.1));
        }
    }
    Window::new(
        hull.center(),
        hull.half_width().max(1e-9) * (1.0 + 1e-12) + 1e-12,
    )
}
