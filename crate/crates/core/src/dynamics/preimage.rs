//! Interval sweeps for `phi_x^{-1}(V) = {s : s . x in V}`.
//!
//! One-parameter rules are swept cell by cell: each cell's image is enclosed
//! in boxes and classified against `V`; undecided cells are bisected. Product
//! actions combine the factor preimages, which requires `V` to split.

use serde::{Deserialize, Serialize};

use super::interval::Interval;
use super::region::{Placement, Region};
use super::{enclose_orbit, green_locate, Action, ActionRule};
use crate::error::{Error, Result};
use crate::quotient::{BoxSet, GBox};
use crate::Window;

/// Bisection depth for undecided sweep cells.
const MAX_DEPTH: u32 = 10;
/// Largest tolerated `(outer - inner) / outer`.
const MAX_GAP: f64 = 0.1;

/// Outer and inner approximations of a preimage, as disjoint boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preimage {
    pub outer: BoxSet,
    pub inner: BoxSet,
    pub outer_volume: f64,
    pub inner_volume: f64,
}

impl Preimage {
    pub fn gap(&self) -> f64 {
        self.outer_volume - self.inner_volume
    }

    fn from_parts(outer: BoxSet, inner: BoxSet) -> Self {
        let vol = |s: &BoxSet| s.iter().map(GBox::volume).sum::<f64>();
        Self {
            outer_volume: vol(&outer),
            inner_volume: vol(&inner),
            outer,
            inner,
        }
    }
}

/// Preimage of `v` within a sup-norm search window.
pub fn orbit_preimage(
    a: &Action,
    x: &[f64],
    v: &Region,
    window: &Window,
    step: f64,
) -> Result<Preimage> {
    orbit_preimage_in(a, x, v, &GBox::from_window(window), step)
}

/// Preimage of `v` within a search box of `G`.
pub fn orbit_preimage_in(
    a: &Action,
    x: &[f64],
    v: &Region,
    search: &GBox,
    step: f64,
) -> Result<Preimage> {
    if !(step > 0.0) {
        return Err(Error::NonPositiveStep(step));
    }
    if !a.space.contains(x) {
        return Err(Error::OutsideSpace(format!("{x:?}")));
    }
    if v.dim() != a.space.dim() {
        return Err(Error::InvalidScenario(format!(
            "neighborhood of dimension {} in a space of dimension {}",
            v.dim(),
            a.space.dim()
        )));
    }
    a.descriptor.check(search.descriptor())?;
    let (outer, inner) = sweep(&a.rule, x, v, search, step)?;
    let p = Preimage::from_parts(outer, inner);
    if p.gap() > MAX_GAP * p.outer_volume {
        return Err(Error::ResolutionTooCoarse {
            gap: p.gap(),
            outer: p.outer_volume,
        });
    }
    Ok(p)
}

fn split_box(b: &GBox, real: usize, lattice: usize) -> (GBox, GBox) {
    (
        GBox::new(
            b.lower[..real].to_vec(),
            b.upper[..real].to_vec(),
            b.lattice[..lattice].to_vec(),
        ),
        GBox::new(
            b.lower[real..].to_vec(),
            b.upper[real..].to_vec(),
            b.lattice[lattice..].to_vec(),
        ),
    )
}

fn sweep(
    rule: &ActionRule,
    x: &[f64],
    v: &Region,
    search: &GBox,
    step: f64,
) -> Result<(BoxSet, BoxSet)> {
    match rule {
        ActionRule::Trivial { .. } => {
            if v.contains(x) {
                Ok((vec![search.clone()], vec![search.clone()]))
            } else {
                Ok((vec![], vec![]))
            }
        }
        ActionRule::Product { first, second } => {
            let k = first.space().dim();
            let (v1, v2) = v.split(k).ok_or_else(|| {
                Error::Unsupported(
                    "product preimages need a neighborhood that splits across the factors".into(),
                )
            })?;
            let d1 = first.descriptor();
            let (s1, s2) = split_box(search, d1.real_rank, d1.lattice_rank);
            let (o1, i1) = sweep(first, &x[..k], &v1, &s1, step)?;
            let (o2, i2) = sweep(second, &x[k..], &v2, &s2, step)?;
            let prod = |a: &BoxSet, b: &BoxSet| -> BoxSet {
                a.iter()
                    .flat_map(|p| b.iter().map(move |q| p.product(q)))
                    .collect()
            };
            Ok((prod(&o1, &o2), prod(&i1, &i2)))
        }
        ActionRule::Translation { dim } if *dim != 1 => match v {
            Region::Box {
                center,
                half_widths,
            } => {
                let lo: Vec<f64> = center
                    .iter()
                    .zip(half_widths)
                    .zip(x)
                    .map(|((c, h), y)| c - h - y)
                    .collect();
                let hi: Vec<f64> = center
                    .iter()
                    .zip(half_widths)
                    .zip(x)
                    .map(|((c, h), y)| c + h - y)
                    .collect();
                let b = GBox::new(lo, hi, vec![]).intersect(search);
                let s = if b.is_empty() { vec![] } else { vec![b] };
                Ok((s.clone(), s))
            }
            _ => Err(Error::Unsupported(
                "translation preimages in dimension > 1 need a box".into(),
            )),
        },
        _ => {
            let (outer, inner) = sweep_line(rule, x, v, search.lower[0], search.upper[0], step);
            let wrap =
                |iv: Vec<(f64, f64)>| iv.into_iter().map(|(l, u)| GBox::interval(l, u)).collect();
            Ok((wrap(outer), wrap(inner)))
        }
    }
}

fn classify(rule: &ActionRule, x: &[f64], v: &Region, t: Interval) -> Placement {
    let mut pieces = enclose_orbit(rule, x, t).into_iter();
    let first = match pieces.next() {
        Some(p) => v.classify(&p),
        None => return Placement::Outside,
    };
    pieces.fold(first, |acc, p| acc.or(v.classify(&p)))
}

type Intervals = Vec<(f64, f64)>;

fn push_merged(out: &mut Intervals, lo: f64, hi: f64) {
    if let Some(last) = out.last_mut() {
        if lo <= last.1 {
            last.1 = last.1.max(hi);
            return;
        }
    }
    out.push((lo, hi));
}

fn refine(
    rule: &ActionRule,
    x: &[f64],
    v: &Region,
    lo: f64,
    hi: f64,
    depth: u32,
    outer: &mut Intervals,
    inner: &mut Intervals,
) {
    match classify(rule, x, v, Interval::new(lo, hi)) {
        Placement::Outside => {}
        Placement::Inside => {
            push_merged(outer, lo, hi);
            push_merged(inner, lo, hi);
        }
        Placement::Partial if depth >= MAX_DEPTH => push_merged(outer, lo, hi),
        Placement::Partial => {
            let mid = 0.5 * (lo + hi);
            refine(rule, x, v, lo, mid, depth + 1, outer, inner);
            refine(rule, x, v, mid, hi, depth + 1, outer, inner);
        }
    }
}

fn sweep_line(
    rule: &ActionRule,
    x: &[f64],
    v: &Region,
    lo: f64,
    hi: f64,
    step: f64,
) -> (Intervals, Intervals) {
    let mut outer = Vec::new();
    let mut inner = Vec::new();
    let cells = ((hi - lo) / step).ceil().max(0.0) as usize;
    for i in 0..cells {
        let a = lo + i as f64 * step;
        let b = (lo + (i + 1) as f64 * step).min(hi);
        refine(rule, x, v, a, b, 0, &mut outer, &mut inner);
    }
    (outer, inner)
}

/// Search box guaranteed to contain `phi_x^{-1}(v)` modulo the stabilizer.
pub fn default_search_box(a: &Action, x: &[f64], v: &Region) -> Result<GBox> {
    if !a.space.contains(x) {
        return Err(Error::OutsideSpace(format!("{x:?}")));
    }
    search_box(&a.rule, x, v)
}

fn search_box(rule: &ActionRule, x: &[f64], v: &Region) -> Result<GBox> {
    match rule {
        ActionRule::Translation { .. } => {
            let (lo, hi) = v.bounding_box();
            if lo.iter().chain(&hi).any(|b| !b.is_finite()) {
                return Err(Error::Unsupported(
                    "unbounded neighborhood for a proper action".into(),
                ));
            }
            Ok(GBox::new(
                lo.iter().zip(x).map(|(l, y)| l - y - 1.0).collect(),
                hi.iter().zip(x).map(|(u, y)| u - y + 1.0).collect(),
                vec![],
            ))
        }
        ActionRule::Green => {
            let (n, s0) = green_locate(x).expect("membership checked");
            let reach = v.reach() + 1.0;
            let top = if n == 0 {
                reach
            } else {
                2.0 * n as f64 + std::f64::consts::PI + reach
            };
            Ok(GBox::interval(-reach - s0, top - s0))
        }
        ActionRule::Winding => {
            let r = x[0].hypot(x[1]).max(1.0);
            Ok(GBox::interval(-r, r))
        }
        ActionRule::TorusFlow { .. } => Ok(GBox::interval(-10.0, 10.0)),
        ActionRule::Trivial {
            real_rank,
            lattice_rank,
            ..
        } => Ok(GBox::new(
            vec![-1.0; *real_rank],
            vec![1.0; *real_rank],
            vec![(-1, 1); *lattice_rank],
        )),
        ActionRule::Product { first, second } => {
            let k = first.space().dim();
            let (v1, v2) = v.split(k).ok_or_else(|| {
                Error::Unsupported("neighborhood does not split across the factors".into())
            })?;
            Ok(search_box(first, &x[..k], &v1)?.product(&search_box(second, &x[k..], &v2)?))
        }
    }
}
