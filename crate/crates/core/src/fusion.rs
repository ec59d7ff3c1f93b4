//! Box fusers: the fuzzy-integral fuser plus average, median and NMS baselines,
//! and the group dispatcher that picks one of them by group size.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy_measure::{
    agreement_endpoint_chains, agreement_integral, agreement_measure, EndpointChains, Lattice, MeasureError,
    DEFAULT_MAX_INPUTS,
};
use crate::geometry::{cmp_f64, Aabb, Interval};
use crate::grouping::majority_label;

/// IoU above which greedy NMS suppresses a lower-scored box.
pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Number of boxes fused per object when not configured otherwise.
pub const DEFAULT_TOP_T: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("need at least {min} boxes, got {got}")]
    EmptyInput { min: usize, got: usize },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("score {0} outside [0, 1]")]
    Score(f64),
    #[error("empty label")]
    Label,
}

/// A labelled, scored box from one detector invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    pub bbox: Aabb,
    pub label: String,
    pub score: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    bbox: Aabb,
    label: String,
    score: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = DetectionError;

    fn try_from(raw: RawDetection) -> Result<Self, Self::Error> {
        Detection::new(raw.bbox, raw.label, raw.score)
    }
}

impl Detection {
    pub fn new(bbox: Aabb, label: impl Into<String>, score: f64) -> Result<Self, DetectionError> {
        let label = label.into();
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectionError::Score(score));
        }
        if label.is_empty() {
            return Err(DetectionError::Label);
        }
        Ok(Self { bbox, label, score })
    }
}

/// Fuser used for groups with at least three members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    #[default]
    Aabbfi,
    Average,
    Median,
    Nms,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 4] = [
        FusionMethod::Nms,
        FusionMethod::Average,
        FusionMethod::Median,
        FusionMethod::Aabbfi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMethod::Aabbfi => "aabbfi",
            FusionMethod::Average => "average",
            FusionMethod::Median => "median",
            FusionMethod::Nms => "nms",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aabbfi" => Ok(FusionMethod::Aabbfi),
            "average" | "avg" | "mean" => Ok(FusionMethod::Average),
            "median" => Ok(FusionMethod::Median),
            "nms" => Ok(FusionMethod::Nms),
            other => Err(format!(
                "unknown fusion method {other:?} (expected aabbfi, average, median or nms)"
            )),
        }
    }
}

/// What actually produced a fused box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppliedMethod {
    Aabbfi,
    Average,
    Median,
    Nms,
    Passthrough,
}

impl From<FusionMethod> for AppliedMethod {
    fn from(m: FusionMethod) -> Self {
        match m {
            FusionMethod::Aabbfi => AppliedMethod::Aabbfi,
            FusionMethod::Average => AppliedMethod::Average,
            FusionMethod::Median => AppliedMethod::Median,
            FusionMethod::Nms => AppliedMethod::Nms,
        }
    }
}

/// Output of a single fuser.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedBox {
    pub bbox: Aabb,
    pub method: AppliedMethod,
    /// An axis came out with lo > hi and its endpoints were swapped.
    pub repaired: bool,
    /// Axes that fell back to the endpoint mean, with the reason.
    pub fallback: Option<String>,
}

impl FusedBox {
    fn plain(bbox: Aabb, method: AppliedMethod) -> Self {
        Self {
            bbox,
            method,
            repaired: false,
            fallback: None,
        }
    }
}

/// Fused output for one object group. `bbox` is `None` for an empty group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub bbox: Option<Aabb>,
    pub label: String,
    /// Highest confidence among the fused members.
    pub score: Option<f64>,
    pub method: AppliedMethod,
    pub repaired: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl FusionResult {
    pub fn none() -> Self {
        Self {
            bbox: None,
            label: String::new(),
            score: None,
            method: AppliedMethod::Passthrough,
            repaired: false,
            fallback: None,
        }
    }
}

fn require(boxes: usize, min: usize) -> Result<(), FusionError> {
    if boxes < min {
        Err(FusionError::EmptyInput { min, got: boxes })
    } else {
        Ok(())
    }
}

fn axis_mean(xs: &[Interval]) -> Interval {
    let n = xs.len() as f64;
    let lo = xs.iter().map(Interval::lo).sum::<f64>() / n;
    let hi = xs.iter().map(Interval::hi).sum::<f64>() / n;
    Interval::new(lo, hi).expect("mean of valid intervals is valid")
}

/// Fuzzy-integral fusion: each axis is fused as interval evidence with its own
/// measure of agreement, giving four Choquet integrals (x lo, y lo, x hi, y hi).
///
/// An axis whose evidence has zero agreement falls back to the mean of its
/// endpoints.
pub fn fuse_aabbfi(boxes: &[Aabb]) -> Result<FusedBox, FusionError> {
    require(boxes.len(), 2)?;
    let xs: Vec<Interval> = boxes.iter().map(|b| b.x).collect();
    let ys: Vec<Interval> = boxes.iter().map(|b| b.y).collect();

    let mut repaired = false;
    let mut fallbacks = Vec::new();
    let mut fuse_axis = |name: &str, evidence: &[Interval]| -> Result<Interval, FusionError> {
        match agreement_integral(evidence) {
            Ok(out) => {
                repaired |= out.repaired;
                Ok(out.value)
            }
            Err(MeasureError::ZeroAgreement) => {
                fallbacks.push(format!("zero agreement on {name} axis, used endpoint mean"));
                Ok(axis_mean(evidence))
            }
            Err(e) => Err(e.into()),
        }
    };
    let x = fuse_axis("x", &xs)?;
    let y = fuse_axis("y", &ys)?;

    Ok(FusedBox {
        bbox: Aabb::from_intervals(x, y),
        method: AppliedMethod::Aabbfi,
        repaired,
        fallback: (!fallbacks.is_empty()).then(|| fallbacks.join("; ")),
    })
}

/// Measures behind one AABBFI axis, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisDiagnostics {
    pub evidence: Vec<Interval>,
    /// Full lattice, or `None` for more than [`DEFAULT_MAX_INPUTS`] inputs.
    pub lattice: Option<Lattice>,
    pub chains: Option<EndpointChains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AabbfiDiagnostics {
    pub x: AxisDiagnostics,
    pub y: AxisDiagnostics,
}

pub fn aabbfi_diagnostics(boxes: &[Aabb]) -> AabbfiDiagnostics {
    let axis = |evidence: Vec<Interval>| {
        let lattice = if evidence.len() <= DEFAULT_MAX_INPUTS {
            agreement_measure(&evidence).ok().map(|g| g.to_lattice())
        } else {
            None
        };
        let (chains, error) = match agreement_endpoint_chains(&evidence) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        AxisDiagnostics {
            evidence,
            lattice,
            chains,
            error,
        }
    };
    AabbfiDiagnostics {
        x: axis(boxes.iter().map(|b| b.x).collect()),
        y: axis(boxes.iter().map(|b| b.y).collect()),
    }
}

/// Coordinate-wise arithmetic mean.
pub fn fuse_average(boxes: &[Aabb]) -> Result<FusedBox, FusionError> {
    require(boxes.len(), 1)?;
    let xs: Vec<Interval> = boxes.iter().map(|b| b.x).collect();
    let ys: Vec<Interval> = boxes.iter().map(|b| b.y).collect();
    Ok(FusedBox::plain(
        Aabb::from_intervals(axis_mean(&xs), axis_mean(&ys)),
        AppliedMethod::Average,
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| cmp_f64(*a, *b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Coordinate-wise median; even counts take the mean of the middle pair.
pub fn fuse_median(boxes: &[Aabb]) -> Result<FusedBox, FusionError> {
    require(boxes.len(), 1)?;
    let coord = |k: usize| median(boxes.iter().map(|b| b.coords()[k]).collect());
    // medians of lo and hi are taken independently; lo <= hi still holds
    // because every box has lo <= hi
    let bbox = Aabb::new(coord(0), coord(1), coord(2), coord(3))
        .expect("coordinate medians of valid boxes form a valid box");
    Ok(FusedBox::plain(bbox, AppliedMethod::Median))
}

/// Greedy NMS. Returns surviving indices in descending score order
/// (ties keep input order).
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(dets[b].score, dets[a].score));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| dets[k].bbox.iou(&dets[i].bbox) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

/// NMS as a fuser: the top survivor represents the group.
pub fn fuse_nms(dets: &[Detection], iou_threshold: f64) -> Result<FusedBox, FusionError> {
    require(dets.len(), 1)?;
    let top = nms(dets, iou_threshold)[0];
    Ok(FusedBox::plain(dets[top].bbox, AppliedMethod::Nms))
}

/// Result of dispatching one object group.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub result: FusionResult,
    /// Indices into the group of the members that were fused.
    pub selected: Vec<usize>,
}

/// Indices of the `t` highest-scoring detections; equal scores keep the
/// earlier index.
pub fn top_t(group: &[Detection], t: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..group.len()).collect();
    idx.sort_by(|&a, &b| cmp_f64(group[b].score, group[a].score));
    idx.truncate(t);
    idx
}

/// Fuses one object group by its size `N`:
/// `N >= 3` fuses the top-`t` members with `method`, `N = 2` averages,
/// `N = 1` passes the detection through and `N = 0` yields no box.
///
/// Members are expected in augmentation order so that score ties resolve to
/// the lower augmentation index.
pub fn dispatch(
    group: &[Detection],
    t: usize,
    method: FusionMethod,
    nms_iou: f64,
) -> Result<Dispatch, FusionError> {
    let t = t.max(1);
    let label = match majority_label(group) {
        Some(l) => l,
        None => {
            return Ok(Dispatch {
                result: FusionResult::none(),
                selected: Vec::new(),
            })
        }
    };

    let (fused, selected) = match group.len() {
        1 => (
            FusedBox::plain(group[0].bbox, AppliedMethod::Passthrough),
            vec![0],
        ),
        2 => {
            let boxes = [group[0].bbox, group[1].bbox];
            (fuse_average(&boxes)?, vec![0, 1])
        }
        _ => {
            let selected = top_t(group, t);
            let chosen: Vec<Detection> = selected.iter().map(|&i| group[i].clone()).collect();
            let boxes: Vec<Aabb> = chosen.iter().map(|d| d.bbox).collect();
            let fused = match method {
                // a single selected box cannot be integrated
                _ if boxes.len() == 1 => FusedBox::plain(boxes[0], AppliedMethod::Passthrough),
                FusionMethod::Aabbfi => fuse_aabbfi(&boxes)?,
                FusionMethod::Average => fuse_average(&boxes)?,
                FusionMethod::Median => fuse_median(&boxes)?,
                FusionMethod::Nms => fuse_nms(&chosen, nms_iou)?,
            };
            (fused, selected)
        }
    };

    let score = selected
        .iter()
        .map(|&i| group[i].score)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Dispatch {
        result: FusionResult {
            bbox: Some(fused.bbox),
            label,
            score: Some(score),
            method: fused.method,
            repaired: fused.repaired,
            fallback: fused.fallback,
        },
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(c: [f64; 4]) -> Aabb {
        Aabb::try_from(c).unwrap()
    }

    fn det(c: [f64; 4], label: &str, score: f64) -> Detection {
        Detection::new(bx(c), label, score).unwrap()
    }

    fn assert_coords(b: &Aabb, want: [f64; 4], tol: f64) {
        for (got, want) in b.coords().iter().zip(want) {
            assert!((got - want).abs() <= tol, "{b} vs {want:?}");
        }
    }

    const EX1: [[f64; 4]; 3] = [[1., 1., 4., 6.], [2., 2., 5., 7.], [3., 3., 6., 8.]];
    const EX2: [[f64; 4]; 3] = [[1., 1., 4., 6.], [2., 2., 5., 7.], [7., 4., 10., 9.]];
    const EX3: [[f64; 4]; 3] = [[1., 1., 4., 6.], [2., 2., 5., 7.], [7., 8., 8., 9.]];

    fn boxes(c: &[[f64; 4]]) -> Vec<Aabb> {
        c.iter().copied().map(bx).collect()
    }

    #[test]
    fn aabbfi_examples() {
        let f = fuse_aabbfi(&boxes(&EX1)).unwrap();
        assert_coords(&f.bbox, [13. / 9., 27. / 19., 40. / 9., 122. / 19.], 1e-9);
        assert!(!f.repaired && f.fallback.is_none());
        assert_coords(&fuse_aabbfi(&boxes(&EX2)).unwrap().bbox, [1., 1.38, 4., 6.38], 0.01);
        assert_coords(&fuse_aabbfi(&boxes(&EX3)).unwrap().bbox, [1., 1., 4., 6.], 1e-12);
    }

    #[test]
    fn aabbfi_needs_two_boxes() {
        assert_eq!(
            fuse_aabbfi(&boxes(&EX1[..1])),
            Err(FusionError::EmptyInput { min: 2, got: 1 })
        );
    }

    #[test]
    fn aabbfi_falls_back_per_axis() {
        // x intervals pairwise disjoint, y intervals identical
        let b = boxes(&[[0., 0., 1., 4.], [2., 0., 3., 4.], [4., 0., 5., 4.]]);
        let f = fuse_aabbfi(&b).unwrap();
        assert_coords(&f.bbox, [2., 0., 3., 4.], 1e-12);
        let reason = f.fallback.unwrap();
        assert!(reason.contains("x axis") && !reason.contains("y axis"));
    }

    #[test]
    fn average_and_median_examples() {
        assert_coords(&fuse_average(&boxes(&EX1)).unwrap().bbox, [2., 2., 5., 7.], 1e-12);
        assert_coords(&fuse_average(&boxes(&EX2)).unwrap().bbox, [3.33, 2.33, 6.33, 7.33], 0.01);
        assert_coords(&fuse_average(&boxes(&EX3)).unwrap().bbox, [3.33, 3.66, 5.67, 7.33], 0.01);
        assert_coords(&fuse_median(&boxes(&EX1)).unwrap().bbox, [2., 2., 5., 7.], 0.0);
        assert_coords(&fuse_median(&boxes(&EX2)).unwrap().bbox, [2., 2., 5., 7.], 0.0);
        assert_coords(
            &fuse_median(&boxes(&[[0., 0., 2., 2.], [0., 0., 4., 4.]])).unwrap().bbox,
            [0., 0., 3., 3.],
            0.0,
        );
        let one = boxes(&EX1[..1]);
        assert_eq!(fuse_average(&one).unwrap().bbox, one[0]);
        assert_eq!(fuse_median(&one).unwrap().bbox, one[0]);
        assert!(fuse_average(&[]).is_err());
        assert!(fuse_median(&[]).is_err());
    }

    /// Textbook greedy NMS written independently of `nms`: repeatedly take the
    /// best remaining box and drop everything overlapping it.
    fn reference_nms(dets: &[Detection], thr: f64) -> Vec<usize> {
        let mut remaining: Vec<usize> = (0..dets.len()).collect();
        let mut out = Vec::new();
        while !remaining.is_empty() {
            let best_pos = (0..remaining.len())
                .max_by(|&a, &b| {
                    dets[remaining[a]]
                        .score
                        .partial_cmp(&dets[remaining[b]].score)
                        .unwrap()
                        .then(remaining[b].cmp(&remaining[a]))
                })
                .unwrap();
            let best = remaining.remove(best_pos);
            out.push(best);
            remaining.retain(|&i| dets[i].bbox.iou(&dets[best].bbox) <= thr);
        }
        out
    }

    #[test]
    fn nms_examples() {
        let a = det([0., 0., 10., 10.], "cone", 0.9);
        assert_eq!(fuse_nms(std::slice::from_ref(&a), 0.5).unwrap().bbox, a.bbox);

        let dup = det([0., 0., 10., 10.], "cone", 0.8);
        assert_eq!(nms(&[dup.clone(), a.clone()], 0.5), vec![1]);
        assert_eq!(fuse_nms(&[dup, a.clone()], 0.5).unwrap().bbox, a.bbox);

        let far = det([50., 50., 60., 60.], "cone", 0.8);
        let pair = [far.clone(), a.clone()];
        assert_eq!(nms(&pair, 0.5), reference_nms(&pair, 0.5));
        assert_eq!(nms(&pair, 0.5), vec![1, 0]);
        assert_eq!(fuse_nms(&pair, 0.5).unwrap().bbox, a.bbox);
        assert!(fuse_nms(&[], 0.5).is_err());
    }

    #[test]
    fn dispatch_branches() {
        let dets: Vec<Detection> = EX1.iter().map(|&c| det(c, "cone", 0.8)).collect();

        let d0 = dispatch(&[], 3, FusionMethod::Aabbfi, DEFAULT_NMS_IOU).unwrap();
        assert_eq!(d0.result.bbox, None);

        let d1 = dispatch(&dets[..1], 3, FusionMethod::Aabbfi, DEFAULT_NMS_IOU).unwrap();
        assert_eq!(d1.result.method, AppliedMethod::Passthrough);
        assert_eq!(d1.result.bbox, Some(dets[0].bbox));

        for m in FusionMethod::ALL {
            let d2 = dispatch(&dets[..2], 3, m, DEFAULT_NMS_IOU).unwrap();
            assert_eq!(d2.result.method, AppliedMethod::Average);
            assert_coords(&d2.result.bbox.unwrap(), [1.5, 1.5, 4.5, 6.5], 1e-12);
        }

        let d3 = dispatch(&dets, 3, FusionMethod::Aabbfi, DEFAULT_NMS_IOU).unwrap();
        assert_eq!(d3.result.method, AppliedMethod::Aabbfi);
        assert_eq!(d3.selected, vec![0, 1, 2]);
        assert_coords(&d3.result.bbox.unwrap(), [1.44, 1.42, 4.44, 6.42], 0.01);
        assert_eq!(d3.result.label, "cone");
    }

    #[test]
    fn dispatch_selects_top_t_with_stable_ties() {
        let mut dets: Vec<Detection> = EX1.iter().map(|&c| det(c, "cone", 0.5)).collect();
        dets.push(det([100., 100., 110., 110.], "box", 0.4));
        dets[2].score = 0.9;
        let d = dispatch(&dets, 3, FusionMethod::Median, DEFAULT_NMS_IOU).unwrap();
        assert_eq!(d.selected, vec![2, 0, 1]);
        assert_eq!(d.result.score, Some(0.9));

        // fewer members than t: fuse all of them
        let d = dispatch(&dets[..3], 5, FusionMethod::Aabbfi, DEFAULT_NMS_IOU).unwrap();
        assert_eq!(d.selected.len(), 3);
    }

    #[test]
    fn detection_validation() {
        assert!(Detection::new(bx(EX1[0]), "cone", 1.2).is_err());
        assert!(Detection::new(bx(EX1[0]), "", 0.2).is_err());
        let bad = r#"{"bbox":[0,0,1,1],"label":"x","score":-0.1}"#;
        assert!(serde_json::from_str::<Detection>(bad).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("AABBFI".parse::<FusionMethod>(), Ok(FusionMethod::Aabbfi));
        assert!("sugeno".parse::<FusionMethod>().is_err());
        assert_eq!(serde_json::to_string(&AppliedMethod::Passthrough).unwrap(), "\"passthrough\"");
    }

    fn arb_boxes() -> impl Strategy<Value = Vec<Aabb>> {
        proptest::collection::vec((0.0f64..20.0, 0.0f64..20.0, 1.0f64..15.0, 1.0f64..15.0), 2..6)
            .prop_map(|v| {
                v.into_iter()
                    .map(|(x, y, w, h)| Aabb::new(x, y, x + w, y + h).unwrap())
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn fusers_are_permutation_invariant(b in arb_boxes(), rot in 0usize..6) {
            let mut shuffled = b.clone();
            shuffled.rotate_left(rot % b.len());
            shuffled.swap(0, b.len() - 1);
            for f in [fuse_aabbfi, fuse_average, fuse_median] {
                let (p, q) = (f(&b).unwrap().bbox, f(&shuffled).unwrap().bbox);
                for (u, v) in p.coords().iter().zip(q.coords()) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn aabbfi_within_coordinate_hull(b in arb_boxes()) {
            let f = fuse_aabbfi(&b).unwrap();
            for k in 0..4 {
                let vals: Vec<f64> = b.iter().map(|x| x.coords()[k]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = f.bbox.coords()[k];
                if !f.repaired {
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }
        }

        #[test]
        fn aabbfi_of_identical_boxes(b in arb_boxes(), k in 2usize..6) {
            let same = vec![b[0]; k];
            prop_assert_eq!(fuse_aabbfi(&same).unwrap().bbox, b[0]);
        }

        #[test]
        fn aabbfi_translation_equivariant(b in arb_boxes(), dx in -30.0f64..30.0, dy in -30.0f64..30.0) {
            let moved: Vec<Aabb> = b.iter().map(|x| x.translate(dx, dy).unwrap()).collect();
            let p = fuse_aabbfi(&b).unwrap().bbox;
            let q = fuse_aabbfi(&moved).unwrap().bbox;
            let want = p.translate(dx, dy).unwrap();
            for (u, v) in q.coords().iter().zip(want.coords()) {
                prop_assert!((u - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn outlier_has_no_influence() {
        let base = fuse_aabbfi(&boxes(&EX3)).unwrap().bbox;
        for (dx, dy) in [(0.0, 0.0), (3.0, 5.0), (-20.0, -30.0), (40.0, -15.0)] {
            let mut b = boxes(&EX3);
            b[2] = b[2].translate(dx, dy).unwrap();
            assert_eq!(fuse_aabbfi(&b).unwrap().bbox, base);
        }
    }
}
