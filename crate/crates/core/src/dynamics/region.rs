//! Open neighborhoods in the registered spaces and their classification
//! against interval enclosures.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use super::interval::Interval;

/// Where an enclosure sits relative to a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Inside,
    Outside,
    Partial,
}

impl Placement {
    /// Placement of a product enclosure from its factors.
    pub fn and(self, other: Placement) -> Placement {
        use Placement::*;
        match (self, other) {
            (Outside, _) | (_, Outside) => Outside,
            (Inside, Inside) => Inside,
            _ => Partial,
        }
    }

    /// Placement of a union of enclosures.
    pub fn or(self, other: Placement) -> Placement {
        use Placement::*;
        match (self, other) {
            (Inside, Inside) => Inside,
            (Outside, Outside) => Outside,
            _ => Partial,
        }
    }
}

/// An open subset of a space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Region {
    /// Open axis-aligned box.
    Box {
        center: Vec<f64>,
        half_widths: Vec<f64>,
    },
    /// Open Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Open annular sector of the complex plane.
    Sector {
        r_min: f64,
        r_max: f64,
        arg_center: f64,
        arg_half_width: f64,
    },
    /// The whole space of the given dimension.
    Whole { dim: usize },
    Product {
        first: Box<Region>,
        second: Box<Region>,
    },
}

impl Region {
    pub fn cube(center: Vec<f64>, half_width: f64) -> Self {
        let n = center.len();
        Region::Box {
            center,
            half_widths: vec![half_width; n],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box { center, .. } | Region::Ball { center, .. } => center.len(),
            Region::Sector { .. } => 2,
            Region::Whole { dim } => *dim,
            Region::Product { first, second } => first.dim() + second.dim(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let enc: Vec<Interval> = x.iter().map(|&v| Interval::point(v)).collect();
        self.classify(&enc) == Placement::Inside
    }

    /// Sound classification of a box enclosure: `Inside` and `Outside` are
    /// guaranteed for every point of the enclosure.
    pub fn classify(&self, enc: &[Interval]) -> Placement {
        match self {
            Region::Whole { .. } => Placement::Inside,
            Region::Box {
                center,
                half_widths,
            } => {
                let mut p = Placement::Inside;
                for ((iv, c), h) in enc.iter().zip(center).zip(half_widths) {
                    let (lo, hi) = (c - h, c + h);
                    if iv.hi <= lo || iv.lo >= hi {
                        return Placement::Outside;
                    }
                    if !(iv.lo > lo && iv.hi < hi) {
                        p = Placement::Partial;
                    }
                }
                p
            }
            Region::Ball { center, radius } => {
                let (near, far) = distance_range(enc, center);
                if near >= *radius {
                    Placement::Outside
                } else if far < *radius {
                    Placement::Inside
                } else {
                    Placement::Partial
                }
            }
            Region::Sector {
                r_min,
                r_max,
                arg_center,
                arg_half_width,
            } => classify_sector(enc, *r_min, *r_max, *arg_center, *arg_half_width),
            Region::Product { first, second } => {
                let k = first.dim();
                first.classify(&enc[..k]).and(second.classify(&enc[k..]))
            }
        }
    }

    /// Factorization along the first `k` coordinates, when the shape allows it.
    pub fn split(&self, k: usize) -> Option<(Region, Region)> {
        match self {
            Region::Box {
                center,
                half_widths,
            } => Some((
                Region::Box {
                    center: center[..k].to_vec(),
                    half_widths: half_widths[..k].to_vec(),
                },
                Region::Box {
                    center: center[k..].to_vec(),
                    half_widths: half_widths[k..].to_vec(),
                },
            )),
            Region::Whole { dim } => {
                Some((Region::Whole { dim: k }, Region::Whole { dim: dim - k }))
            }
            Region::Product { first, second } if first.dim() == k => {
                Some(((**first).clone(), (**second).clone()))
            }
            _ if k == 0 => Some((Region::Whole { dim: 0 }, self.clone())),
            _ if k == self.dim() => Some((self.clone(), Region::Whole { dim: 0 })),
            _ => None,
        }
    }

    /// Axis-aligned bounding box `(lower, upper)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Box {
                center,
                half_widths,
            } => (
                center.iter().zip(half_widths).map(|(c, h)| c - h).collect(),
                center.iter().zip(half_widths).map(|(c, h)| c + h).collect(),
            ),
            Region::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Region::Sector { r_max, .. } => (vec![-r_max; 2], vec![*r_max; 2]),
            Region::Whole { dim } => (vec![f64::NEG_INFINITY; *dim], vec![f64::INFINITY; *dim]),
            Region::Product { first, second } => {
                let (mut lo, mut hi) = first.bounding_box();
                let (l2, h2) = second.bounding_box();
                lo.extend(l2);
                hi.extend(h2);
                (lo, hi)
            }
        }
    }

    /// Largest sup-norm distance from the origin to a point of the region,
    /// ignoring unbounded factors.
    pub fn reach(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        lo.iter()
            .chain(&hi)
            .filter(|x| x.is_finite())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Whether `other ⊆ self`, judged by bounding boxes for boxes and balls.
    pub fn contains_region(&self, other: &Region) -> bool {
        match (self, other) {
            (Region::Whole { .. }, _) => true,
            (
                Region::Product {
                    first: a,
                    second: b,
                },
                Region::Product {
                    first: c,
                    second: d,
                },
            ) => a.contains_region(c) && b.contains_region(d),
            (
                Region::Ball {
                    center: c1,
                    radius: r1,
                },
                Region::Ball {
                    center: c2,
                    radius: r2,
                },
            ) => {
                let d: f64 = c1
                    .iter()
                    .zip(c2)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                d + r2 <= r1 + 1e-12
            }
            (
                Region::Sector {
                    r_min: a0,
                    r_max: a1,
                    arg_center: c1,
                    arg_half_width: w1,
                },
                Region::Sector {
                    r_min: b0,
                    r_max: b1,
                    arg_center: c2,
                    arg_half_width: w2,
                },
            ) => {
                let d = wrap(c2 - c1).abs();
                a0 <= b0 && b1 <= a1 && d + w2 <= w1 + 1e-12
            }
            _ => {
                let (lo1, hi1) = self.bounding_box();
                let (lo2, hi2) = other.bounding_box();
                let boxed = matches!(self, Region::Box { .. });
                boxed
                    && lo1.iter().zip(&lo2).all(|(a, b)| a <= b)
                    && hi1.iter().zip(&hi2).all(|(a, b)| b <= a)
            }
        }
    }
}

/// Angle reduced into `(-pi, pi]`.
fn wrap(t: f64) -> f64 {
    let r = t.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Range of Euclidean distance from `center` over a box.
fn distance_range(enc: &[Interval], center: &[f64]) -> (f64, f64) {
    let mut near = 0.0;
    let mut far = 0.0;
    for (iv, c) in enc.iter().zip(center) {
        let lo = iv.lo - c;
        let hi = iv.hi - c;
        let n = if lo > 0.0 {
            lo
        } else if hi < 0.0 {
            -hi
        } else {
            0.0
        };
        let f = lo.abs().max(hi.abs());
        near += n * n;
        far += f * f;
    }
    (near.sqrt(), far.sqrt())
}

fn classify_sector(enc: &[Interval], r_min: f64, r_max: f64, c: f64, half: f64) -> Placement {
    let (near, far) = distance_range(enc, &[0.0, 0.0]);
    if far <= r_min || near >= r_max {
        return Placement::Outside;
    }
    let radial_inside = near > r_min && far < r_max;
    if near == 0.0 {
        return Placement::Partial;
    }
    // arguments of the corners, relative to the sector axis
    let corners = [
        (enc[0].lo, enc[1].lo),
        (enc[0].lo, enc[1].hi),
        (enc[0].hi, enc[1].lo),
        (enc[0].hi, enc[1].hi),
    ];
    let spread = |axis: f64| {
        let rel: Vec<f64> = corners
            .iter()
            .map(|&(x, y)| wrap(y.atan2(x) - axis))
            .collect();
        let lo = rel.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (lo, hi) = spread(c);
    if hi - lo > PI {
        // the box straddles the ray opposite the sector axis
        let (lo, hi) = spread(c + PI);
        return if lo >= -PI + half && hi <= PI - half {
            Placement::Outside
        } else {
            Placement::Partial
        };
    }
    if hi <= -half || lo >= half {
        Placement::Outside
    } else if lo > -half && hi < half && radial_inside {
        Placement::Inside
    } else {
        Placement::Partial
    }
}
