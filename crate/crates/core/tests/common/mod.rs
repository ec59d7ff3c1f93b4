//! Slow, independent reference implementations used as test oracles.
#![allow(dead_code)]

use boxfuse_core::evaluation::EvalRecord;
use boxfuse_core::fusion::Detection;
use boxfuse_core::geometry::Aabb;
use boxfuse_core::schema::TruthObject;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Length of a union of closed intervals by coordinate compression: every
/// elementary segment between sorted endpoints counts if any interval covers it.
pub fn union_length_oracle(ivs: &[(f64, f64)]) -> f64 {
    let mut cuts: Vec<f64> = ivs.iter().flat_map(|&(a, b)| [a, b]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if ivs.iter().any(|&(a, b)| a <= mid && mid <= b) {
            total += w[1] - w[0];
        }
    }
    total
}

fn subsets_of_size(members: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if members.len() < k {
        return vec![];
    }
    let (first, rest) = members.split_first().unwrap();
    let mut with: Vec<Vec<usize>> = subsets_of_size(rest, k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, *first);
            s
        })
        .collect();
    with.extend(subsets_of_size(rest, k));
    with
}

/// Unnormalized agreement worth of `set`: for every k >= 2, the length of the
/// union of all k-wise intersections, weighted by k / n.
pub fn worth_oracle(evidence: &[(f64, f64)], set: &[usize]) -> f64 {
    let n = evidence.len() as f64;
    let mut w = 0.0;
    for k in 2..=set.len() {
        let meets: Vec<(f64, f64)> = subsets_of_size(set, k)
            .into_iter()
            .filter_map(|s| {
                let lo = s.iter().map(|&i| evidence[i].0).fold(f64::NEG_INFINITY, f64::max);
                let hi = s.iter().map(|&i| evidence[i].1).fold(f64::INFINITY, f64::min);
                (lo <= hi).then_some((lo, hi))
            })
            .collect();
        w += union_length_oracle(&meets) * k as f64 / n;
    }
    w
}

/// Agreement measure values along the chain `perm[..1] ⊂ perm[..2] ⊂ …`.
pub fn agreement_chain_oracle(evidence: &[(f64, f64)], perm: &[usize]) -> Option<Vec<f64>> {
    let all: Vec<usize> = (0..evidence.len()).collect();
    let norm = worth_oracle(evidence, &all);
    if norm <= 0.0 {
        return None;
    }
    Some((1..=perm.len()).map(|i| worth_oracle(evidence, &perm[..i]) / norm).collect())
}

/// Choquet integral straight from the definition with an arbitrary set function.
pub fn choquet_oracle(h: &[f64], g: impl Fn(&[usize]) -> f64) -> f64 {
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    let mut prev = 0.0;
    let mut acc = 0.0;
    for i in 1..=order.len() {
        let gi = g(&order[..i]);
        acc += h[order[i - 1]] * (gi - prev);
        prev = gi;
    }
    acc
}

/// IoU by counting unit cells; exact for integer-aligned boxes.
pub fn raster_iou(a: &Aabb, b: &Aabb) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.coords().map(|v| v as i64);
    let [bx0, by0, bx1, by1] = b.coords().map(|v| v as i64);
    let (mut inter, mut union) = (0u64, 0u64);
    for x in ax0.min(bx0)..ax1.max(bx1) {
        for y in ay0.min(by0)..ay1.max(by1) {
            let ina = x >= ax0 && x < ax1 && y >= ay0 && y < ay1;
            let inb = x >= bx0 && x < bx1 && y >= by0 && y < by1;
            inter += (ina && inb) as u64;
            union += (ina || inb) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// 11-point AP per class from precision/recall measured at every distinct
/// score cutoff. Each cutoff rematches its kept predictions from scratch.
/// Assumes distinct scores within a class.
pub fn map_exhaustive_oracle(records: &[EvalRecord], score_threshold: f64, iou_threshold: f64) -> f64 {
    let mut classes: Vec<&str> = records
        .iter()
        .flat_map(|r| r.truth.iter().map(|t| t.label.as_str()))
        .collect();
    classes.sort();
    classes.dedup();

    let mut aps = Vec::new();
    for label in classes {
        let positives = records.iter().flat_map(|r| &r.truth).filter(|t| t.label == label).count();
        let mut cutoffs: Vec<f64> = records
            .iter()
            .flat_map(|r| &r.predictions)
            .filter(|d| d.label == label && d.score >= score_threshold)
            .map(|d| d.score)
            .collect();
        cutoffs.sort_by(|a, b| b.total_cmp(a));
        cutoffs.dedup();

        let mut pr = Vec::new();
        for &c in &cutoffs {
            let (mut tp, mut kept) = (0usize, 0usize);
            for r in records {
                let mut preds: Vec<_> = r.predictions.iter().filter(|d| d.label == label && d.score >= c).collect();
                preds.sort_by(|a, b| b.score.total_cmp(&a.score));
                let mut taken = vec![false; r.truth.len()];
                for p in preds {
                    kept += 1;
                    let mut best: Option<(usize, f64)> = None;
                    for (ti, t) in r.truth.iter().enumerate() {
                        if t.label != label {
                            continue;
                        }
                        let v = p.bbox.iou(&t.bbox);
                        if best.is_none_or(|(_, bv)| v > bv) {
                            best = Some((ti, v));
                        }
                    }
                    if let Some((ti, v)) = best {
                        if v >= iou_threshold && !taken[ti] {
                            taken[ti] = true;
                            tp += 1;
                        }
                    }
                }
            }
            pr.push((tp as f64 / positives as f64, tp as f64 / kept as f64));
        }
        let ap = (0..=10)
            .map(|i| {
                let r = i as f64 / 10.0;
                pr.iter().filter(|p| p.0 >= r - 1e-12).map(|p| p.1).fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 11.0;
        aps.push(ap);
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

fn det(b: Aabb, label: &str, score: f64) -> Detection {
    Detection::new(b, label, score).unwrap()
}

fn int_box(rng: &mut ChaCha8Rng) -> Aabb {
    let x = rng.random_range(0..40) as f64;
    let y = rng.random_range(0..40) as f64;
    let w = rng.random_range(3..15) as f64;
    let h = rng.random_range(3..15) as f64;
    Aabb::new(x, y, x + w, y + h).unwrap()
}

fn jitter(rng: &mut ChaCha8Rng, b: &Aabb, amount: i32) -> Aabb {
    let d = |rng: &mut ChaCha8Rng| rng.random_range(-amount..=amount) as f64;
    let [x0, y0, x1, y1] = b.coords();
    let (dx, dy) = (d(rng), d(rng));
    Aabb::new(x0 + dx, y0 + dy, (x1 + dx + d(rng)).max(x0 + dx + 1.0), (y1 + dy + d(rng)).max(y0 + dy + 1.0)).unwrap()
}

/// Two-class records with jittered, missing and spurious predictions, all scores distinct.
pub fn fixture(seed: u64, images: usize) -> Vec<EvalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = ["car", "cone"];
    (0..images)
        .map(|i| {
            let truth: Vec<TruthObject> = (0..rng.random_range(1..4))
                .map(|k| TruthObject {
                    bbox: int_box(&mut rng),
                    label: labels[k % 2].into(),
                })
                .collect();
            let mut predictions = Vec::new();
            for t in &truth {
                if rng.random::<f64>() < 0.8 {
                    let b = jitter(&mut rng, &t.bbox, 3);
                    predictions.push(det(b, &t.label, rng.random_range(0.05..1.0)));
                }
            }
            for _ in 0..rng.random_range(0..3) {
                let label = labels[rng.random_range(0..2)];
                predictions.push(det(int_box(&mut rng), label, rng.random_range(0.05..1.0)));
            }
            EvalRecord {
                image_id: format!("img{i}"),
                predictions,
                truth,
            }
        })
        .collect()
}
