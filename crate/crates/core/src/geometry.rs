//! Closed intervals, unions of intervals and axis-aligned boxes.
//!
//! An empty intersection is represented as `None`; it has measure zero
//! wherever a length is needed.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("interval endpoints must be finite, got [{lo}, {hi}]")]
    NonFinite { lo: f64, hi: f64 },
    #[error("interval is inverted: lo {lo} > hi {hi}")]
    Inverted { lo: f64, hi: f64 },
}

/// A closed real interval `[lo, hi]` with `lo <= hi`. Zero-length intervals are valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = GeometryError;

    fn try_from([lo, hi]: [f64; 2]) -> Result<Self, Self::Error> {
        Self::new(lo, hi)
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GeometryError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(GeometryError::NonFinite { lo, hi });
        }
        if lo > hi {
            return Err(GeometryError::Inverted { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate interval `[v, v]`.
    pub fn point(v: f64) -> Result<Self, GeometryError> {
        Self::new(v, v)
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// `[max(lo), min(hi)]`, or `None` when the intervals do not meet.
    /// Intervals touching at a single point intersect in that point.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn translate(&self, d: f64) -> Result<Interval, GeometryError> {
        Interval::new(self.lo + d, self.hi + d)
    }

    /// Image of the interval under `v -> scale * v + offset` with `scale > 0`.
    pub fn affine(&self, scale: f64, offset: f64) -> Result<Interval, GeometryError> {
        Interval::new(scale * self.lo + offset, scale * self.hi + offset)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Intersection of every interval in `xs`; `None` for an empty slice or an empty meet.
pub fn intersect_all(xs: &[Interval]) -> Option<Interval> {
    let (first, rest) = xs.split_first()?;
    rest.iter().try_fold(*first, |acc, iv| acc.intersect(iv))
}

/// Sorted, pairwise-disjoint segments. Overlapping or touching inputs are merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalUnion {
    segments: Vec<Interval>,
}

impl IntervalUnion {
    pub fn new<I>(items: I) -> Self
    where
        I: IntoIterator<Item = Option<Interval>>,
    {
        let mut xs: Vec<Interval> = items.into_iter().flatten().collect();
        xs.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));

        let mut segments: Vec<Interval> = Vec::with_capacity(xs.len());
        for iv in xs {
            match segments.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => segments.push(iv),
            }
        }
        Self { segments }
    }

    pub fn segments(&self) -> &[Interval] {
        &self.segments
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Interval::length).fold(0.0, |a, b| a + b)
    }
}

/// Lebesgue measure of the union. `None` entries stand for empty sets.
pub fn union_length<I>(items: I) -> f64
where
    I: IntoIterator<Item = Option<Interval>>,
{
    IntervalUnion::new(items).total_length()
}

/// Axis-aligned box as a pair of intervals.
///
/// Serialized as `[x_lo, y_lo, x_hi, y_hi]`, i.e. top-left then bottom-right corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Aabb {
    pub x: Interval,
    pub y: Interval,
}

impl Aabb {
    pub fn new(x_lo: f64, y_lo: f64, x_hi: f64, y_hi: f64) -> Result<Self, GeometryError> {
        Ok(Self {
            x: Interval::new(x_lo, x_hi)?,
            y: Interval::new(y_lo, y_hi)?,
        })
    }

    pub fn from_intervals(x: Interval, y: Interval) -> Self {
        Self { x, y }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    /// `[x_lo, y_lo, x_hi, y_hi]`
    pub fn coords(&self) -> [f64; 4] {
        [self.x.lo, self.y.lo, self.x.hi, self.y.hi]
    }

    pub fn width(&self) -> f64 {
        self.x.length()
    }

    pub fn height(&self) -> f64 {
        self.y.length()
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x.midpoint(), self.y.midpoint())
    }

    pub fn intersect(&self, other: &Aabb) -> Option<Aabb> {
        Some(Aabb {
            x: self.x.intersect(&other.x)?,
            y: self.y.intersect(&other.y)?,
        })
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Aabb, GeometryError> {
        Ok(Aabb {
            x: self.x.translate(dx)?,
            y: self.y.translate(dy)?,
        })
    }

    /// Intersection over union. Zero when the union has zero area.
    pub fn iou(&self, other: &Aabb) -> f64 {
        let overlap = self.intersect(other).map_or(0.0, |b| b.area());
        let union = self.area() + other.area() - overlap;
        if union <= 0.0 {
            0.0
        } else {
            (overlap / union).clamp(0.0, 1.0)
        }
    }
}

impl TryFrom<[f64; 4]> for Aabb {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Aabb::new(c[0], c[1], c[2], c[3])
    }
}

impl From<Aabb> for [f64; 4] {
    fn from(b: Aabb) -> Self {
        b.coords()
    }
}

impl fmt::Display for Aabb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.coords();
        write!(f, "[{a:.4}, {b:.4}, {c:.4}, {d:.4}]")
    }
}

pub fn iou(a: &Aabb, b: &Aabb) -> f64 {
    a.iou(b)
}

/// Total order on floats used for deterministic sorting (NaN never reaches here).
pub(crate) fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}
