//! The ambient group `G = R^a x Z^b`: elements, box windows, characters,
//! the reference bump and Haar quadrature.
//!
//! Everything here is generic over [`Scalar`], so the same code runs in `f32`
//! or `f64`. Lattice coordinates are always exact `i64`.

use std::fmt;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating point type the group layer computes in.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Cannot fail for the two implementors.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shape `(a, b)` of `R^a x Z^b`. `(0, 0)` is the trivial group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupDescriptor {
    pub real_rank: usize,
    pub lattice_rank: usize,
}

impl GroupDescriptor {
    pub const fn new(real_rank: usize, lattice_rank: usize) -> Self {
        Self {
            real_rank,
            lattice_rank,
        }
    }

    pub const fn real(real_rank: usize) -> Self {
        Self::new(real_rank, 0)
    }

    pub const fn dim(&self) -> usize {
        self.real_rank + self.lattice_rank
    }

    pub const fn is_trivial(&self) -> bool {
        self.dim() == 0
    }

    /// Descriptor of `G1 x G2`, real coordinates first.
    pub const fn product(&self, other: &Self) -> Self {
        Self::new(
            self.real_rank + other.real_rank,
            self.lattice_rank + other.lattice_rank,
        )
    }

    pub(crate) fn check(&self, found: GroupDescriptor) -> Result<()> {
        if *self == found {
            Ok(())
        } else {
            Err(Error::DescriptorMismatch {
                expected: *self,
                found,
            })
        }
    }
}

impl fmt::Display for GroupDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R^{} x Z^{}", self.real_rank, self.lattice_rank)
    }
}

/// A point of `G`, written additively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElement<T> {
    pub real: Vec<T>,
    pub lattice: Vec<i64>,
}

impl<T: Scalar> GroupElement<T> {
    pub fn new(real: Vec<T>, lattice: Vec<i64>) -> Self {
        Self { real, lattice }
    }

    pub fn from_real(real: Vec<T>) -> Self {
        Self::new(real, Vec::new())
    }

    pub fn zero(d: GroupDescriptor) -> Self {
        Self::new(vec![T::zero(); d.real_rank], vec![0; d.lattice_rank])
    }

    pub fn descriptor(&self) -> GroupDescriptor {
        GroupDescriptor::new(self.real.len(), self.lattice.len())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        group_op(self, other)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        group_op(self, &other.neg())
    }

    pub fn neg(&self) -> Self {
        Self::new(
            self.real.iter().map(|&x| -x).collect(),
            self.lattice.iter().map(|&m| -m).collect(),
        )
    }

    /// Sup norm over all coordinates, lattice coordinates included.
    pub fn sup_norm(&self) -> T {
        let r = self.real.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        self.lattice
            .iter()
            .fold(r, |m, &k| m.max(T::from_i64(k.abs()).unwrap()))
    }

    /// Element of `G1 x G2` with `self` in the first factor.
    pub fn concat(&self, other: &Self) -> Self {
        let mut real = self.real.clone();
        real.extend_from_slice(&other.real);
        let mut lattice = self.lattice.clone();
        lattice.extend_from_slice(&other.lattice);
        Self::new(real, lattice)
    }

    /// Inverse of [`concat`](Self::concat).
    pub fn split(&self, first: GroupDescriptor) -> (Self, Self) {
        (
            Self::new(
                self.real[..first.real_rank].to_vec(),
                self.lattice[..first.lattice_rank].to_vec(),
            ),
            Self::new(
                self.real[first.real_rank..].to_vec(),
                self.lattice[first.lattice_rank..].to_vec(),
            ),
        )
    }
}

/// Coordinatewise sum.
pub fn group_op<T: Scalar>(g: &GroupElement<T>, h: &GroupElement<T>) -> Result<GroupElement<T>> {
    g.descriptor().check(h.descriptor())?;
    Ok(GroupElement::new(
        g.real.iter().zip(&h.real).map(|(&x, &y)| x + y).collect(),
        g.lattice
            .iter()
            .zip(&h.lattice)
            .map(|(&x, &y)| x + y)
            .collect(),
    ))
}

/// Closed sup-norm box `center + [-radius, radius]^(a+b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window<T> {
    pub center: GroupElement<T>,
    pub radius: T,
}

impl<T: Scalar> Window<T> {
    pub fn new(center: GroupElement<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(Error::DegenerateWindow(format!("radius {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(d: GroupDescriptor, radius: T) -> Result<Self> {
        Self::new(GroupElement::zero(d), radius)
    }

    pub fn descriptor(&self) -> GroupDescriptor {
        self.center.descriptor()
    }

    pub fn contains(&self, g: &GroupElement<T>) -> bool {
        g.descriptor() == self.descriptor()
            && g.real
                .iter()
                .zip(&self.center.real)
                .all(|(&x, &c)| (x - c).abs() <= self.radius)
            && self
                .lattice_ranges()
                .iter()
                .zip(&g.lattice)
                .all(|(&(lo, hi), &k)| lo <= k && k <= hi)
    }

    /// Integer range `[lo, hi]` per lattice coordinate.
    pub fn lattice_ranges(&self) -> Vec<(i64, i64)> {
        let r = self.radius.floor().to_i64().unwrap_or(i64::MAX / 4);
        self.center
            .lattice
            .iter()
            .map(|&c| (c - r, c + r))
            .collect()
    }

    pub fn real_bounds(&self) -> (Vec<T>, Vec<T>) {
        (
            self.center.real.iter().map(|&c| c - self.radius).collect(),
            self.center.real.iter().map(|&c| c + self.radius).collect(),
        )
    }
}

/// A character `s -> exp(2 pi i (<freqs, real> + <angles, lattice>))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Character<T> {
    pub real_freqs: Vec<T>,
    pub lattice_angles: Vec<T>,
}

impl<T: Scalar> Character<T> {
    /// Lattice angles are reduced into `[0, 1)`.
    pub fn new(real_freqs: Vec<T>, lattice_angles: Vec<T>) -> Self {
        let lattice_angles = lattice_angles.into_iter().map(|t| t - t.floor()).collect();
        Self {
            real_freqs,
            lattice_angles,
        }
    }

    pub fn trivial(d: GroupDescriptor) -> Self {
        Self::new(
            vec![T::zero(); d.real_rank],
            vec![T::zero(); d.lattice_rank],
        )
    }

    pub fn descriptor(&self) -> GroupDescriptor {
        GroupDescriptor::new(self.real_freqs.len(), self.lattice_angles.len())
    }

    pub fn eval(&self, g: &GroupElement<T>) -> Result<Complex<T>> {
        character_eval(self, g)
    }
}

/// Evaluates `tau(g)`. The phase is reduced mod 1 before the exponential so the
/// modulus stays at 1 for large arguments.
pub fn character_eval<T: Scalar>(tau: &Character<T>, g: &GroupElement<T>) -> Result<Complex<T>> {
    tau.descriptor().check(g.descriptor())?;
    let mut phase = NeumaierSum::new();
    for (&f, &x) in tau.real_freqs.iter().zip(&g.real) {
        phase.add(f * x);
    }
    for (&a, &k) in tau.lattice_angles.iter().zip(&g.lattice) {
        phase.add(a * T::from_i64(k).unwrap());
    }
    let p = phase.sum();
    let frac = p - p.floor();
    let theta = T::TAU() * frac;
    Ok(Complex::new(theta.cos(), theta.sin()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpKind {
    TriangularProduct,
}

/// `f(t) = prod_i max(0, 1 - |t_i| / r)` over every coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction<T> {
    pub kind: BumpKind,
    pub support_radius: T,
}

impl<T: Scalar> BumpFunction<T> {
    /// Radius one: the reference bump that fixes every Haar normalization.
    pub fn reference() -> Self {
        Self::triangular(T::one())
    }

    pub fn triangular(support_radius: T) -> Self {
        assert!(support_radius > T::zero(), "bump radius must be positive");
        Self {
            kind: BumpKind::TriangularProduct,
            support_radius,
        }
    }

    pub fn value(&self, g: &GroupElement<T>) -> T {
        self.value_coords(&g.real, &g.lattice)
    }

    pub fn value_coords(&self, real: &[T], lattice: &[i64]) -> T {
        let r = self.support_radius;
        let mut v = T::one();
        for &x in real {
            v = v * tent(x / r);
        }
        for &k in lattice {
            v = v * tent(T::from_i64(k).unwrap() / r);
        }
        v
    }

    /// Integral of one factor over the real line.
    pub fn axis_integral(&self) -> T {
        self.support_radius
    }
}

/// `max(0, 1 - |u|)`.
pub fn tent<T: Scalar>(u: T) -> T {
    (T::one() - u.abs()).max(T::zero())
}

/// Indicator of `[lo, hi]` with linear ramps of total width `width` centred on
/// each endpoint. Integrates to exactly `hi - lo` whenever `hi - lo >= width`.
pub fn smoothed_indicator<T: Scalar>(x: T, lo: T, hi: T, width: T) -> T {
    let half = T::lit(0.5);
    let clamp = |u: T| u.max(T::zero()).min(T::one());
    clamp((x - lo) / width + half) * clamp((hi - x) / width + half)
}

/// Neumaier's variant of compensated summation.
#[derive(Clone, Copy, Debug)]
pub struct NeumaierSum<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> Default for NeumaierSum<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> NeumaierSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }

    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp + ((self.sum - t) + x);
        } else {
            self.comp = self.comp + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn sum(&self) -> T {
        self.sum + self.comp
    }
}

impl<T: Scalar> FromIterator<T> for NeumaierSum<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Product midpoint grid: equal cells on each real axis, every integer of a
/// range on each lattice axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GridBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub cells: Vec<usize>,
    pub lattice: Vec<(i64, i64)>,
}

impl<T: Scalar> GridBox<T> {
    /// Grid of a window whose width must be an integer multiple of `step`.
    pub fn from_window(window: &Window<T>, step: T) -> Result<Self> {
        check_step(step)?;
        let width = window.radius + window.radius;
        let n = (width / step).round();
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) * width;
        if window.descriptor().real_rank > 0 && (n < T::one() || (n * step - width).abs() > tol) {
            return Err(Error::StepDoesNotDivide {
                step: step.as_f64(),
                width: width.as_f64(),
            });
        }
        let (lower, upper) = window.real_bounds();
        let cells = vec![n.to_usize().unwrap_or(1).max(1); lower.len()];
        Ok(Self {
            lower,
            upper,
            cells,
            lattice: window.lattice_ranges(),
        })
    }

    /// Grid over `[lower, upper]` with cells no wider than `step`.
    pub fn covering(
        lower: Vec<T>,
        upper: Vec<T>,
        lattice: Vec<(i64, i64)>,
        step: T,
    ) -> Result<Self> {
        check_step(step)?;
        let mut cells = Vec::with_capacity(lower.len());
        for (&lo, &hi) in lower.iter().zip(&upper) {
            if !(hi > lo) {
                return Err(Error::DegenerateWindow(format!("[{lo}, {hi}]")));
            }
            let n = ((hi - lo) / step - T::lit(1e-9)).ceil().max(T::one());
            cells.push(n.to_usize().unwrap_or(1));
        }
        Ok(Self {
            lower,
            upper,
            cells,
            lattice,
        })
    }

    pub fn descriptor(&self) -> GroupDescriptor {
        GroupDescriptor::new(self.lower.len(), self.lattice.len())
    }

    /// Cell volume: the Lebesgue part of each sample's weight.
    pub fn weight(&self) -> T {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(&self.cells)
            .fold(T::one(), |w, ((&lo, &hi), &n)| {
                w * (hi - lo) / T::from_usize(n).unwrap()
            })
    }

    pub fn spacing(&self, axis: usize) -> T {
        (self.upper[axis] - self.lower[axis]) / T::from_usize(self.cells[axis]).unwrap()
    }

    fn axis_len(&self, axis: usize) -> usize {
        let a = self.lower.len();
        if axis < a {
            self.cells[axis]
        } else {
            let (lo, hi) = self.lattice[axis - a];
            if hi < lo {
                0
            } else {
                (hi - lo + 1) as usize
            }
        }
    }

    /// Number of sample points.
    pub fn len(&self) -> usize {
        (0..self.lower.len() + self.lattice.len())
            .map(|i| self.axis_len(i))
            .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn set_coord(&self, axis: usize, idx: usize, g: &mut GroupElement<T>) {
        let a = self.lower.len();
        if axis < a {
            let h = self.spacing(axis);
            g.real[axis] = self.lower[axis] + (T::from_usize(idx).unwrap() + T::lit(0.5)) * h;
        } else {
            g.lattice[axis - a] = self.lattice[axis - a].0 + idx as i64;
        }
    }

    /// Visits every sample in lexicographic order, one accumulator per value
    /// of the leading coordinate. Rows run in parallel; the returned vector is
    /// in row order so callers can reduce deterministically.
    pub fn fold_rows<A, M, F>(&self, make: M, visit: F) -> Vec<A>
    where
        A: Send,
        M: Fn() -> A + Sync,
        F: Fn(&mut A, &GroupElement<T>) + Sync,
    {
        let dims = self.lower.len() + self.lattice.len();
        let d = self.descriptor();
        if dims == 0 {
            let mut acc = make();
            visit(&mut acc, &GroupElement::zero(d));
            return vec![acc];
        }
        let lens: Vec<usize> = (0..dims).map(|i| self.axis_len(i)).collect();
        if lens.contains(&0) {
            return Vec::new();
        }
        (0..lens[0])
            .into_par_iter()
            .map(|row| {
                let mut acc = make();
                let mut g = GroupElement::zero(d);
                self.set_coord(0, row, &mut g);
                let mut idx = vec![0usize; dims];
                for (axis, &i) in idx.iter().enumerate().skip(1) {
                    self.set_coord(axis, i, &mut g);
                }
                loop {
                    visit(&mut acc, &g);
                    // odometer over trailing axes
                    let mut axis = dims;
                    loop {
                        axis -= 1;
                        if axis == 0 {
                            return acc;
                        }
                        idx[axis] += 1;
                        if idx[axis] < lens[axis] {
                            self.set_coord(axis, idx[axis], &mut g);
                            break;
                        }
                        idx[axis] = 0;
                        self.set_coord(axis, 0, &mut g);
                    }
                }
            })
            .collect()
    }

    pub fn integrate<F>(&self, f: F) -> T
    where
        F: Fn(&GroupElement<T>) -> T + Sync,
    {
        let rows = self.fold_rows(NeumaierSum::new, |acc, g| acc.add(f(g)));
        rows.iter()
            .map(NeumaierSum::sum)
            .collect::<NeumaierSum<T>>()
            .sum()
            * self.weight()
    }

    pub fn integrate_complex<F>(&self, f: F) -> Complex<T>
    where
        F: Fn(&GroupElement<T>) -> Complex<T> + Sync,
    {
        let rows = self.fold_rows(
            || (NeumaierSum::new(), NeumaierSum::new()),
            |acc, g| {
                let v = f(g);
                acc.0.add(v.re);
                acc.1.add(v.im);
            },
        );
        let re: NeumaierSum<T> = rows.iter().map(|r| r.0.sum()).collect();
        let im: NeumaierSum<T> = rows.iter().map(|r| r.1.sum()).collect();
        Complex::new(re.sum(), im.sum()) * self.weight()
    }
}

fn check_step<T: Scalar>(step: T) -> Result<()> {
    if step > T::zero() && step.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveStep(step.as_f64()))
    }
}

/// Haar integral over `G` of a function supported in `window`: midpoint rule on
/// the real axes, exact sums on the lattice axes.
pub fn integrate_g<T, F>(f: F, window: &Window<T>, step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&GroupElement<T>) -> T + Sync,
{
    Ok(GridBox::from_window(window, step)?.integrate(f))
}

pub fn integrate_g_complex<T, F>(f: F, window: &Window<T>, step: T) -> Result<Complex<T>>
where
    T: Scalar,
    F: Fn(&GroupElement<T>) -> Complex<T> + Sync,
{
    Ok(GridBox::from_window(window, step)?.integrate_complex(f))
}
