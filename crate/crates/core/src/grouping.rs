//! Pools detections from every augmented variant and partitions them into
//! per-object groups with k-means over box centers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::Detection;
use crate::geometry::cmp_f64;

pub const MAX_KMEANS_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupingError {
    #[error("cannot form {groups} groups from {detections} detections")]
    Underdetermined { groups: usize, detections: usize },
    #[error("group is empty")]
    EmptyGroup,
}

/// Detections indexed by augmentation id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionPool {
    pub per_augmentation: Vec<Vec<Detection>>,
}

impl DetectionPool {
    pub fn new(per_augmentation: Vec<Vec<Detection>>) -> Self {
        Self { per_augmentation }
    }

    pub fn len(&self) -> usize {
        self.per_augmentation.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flatten(&self) -> Vec<GroupMember> {
        self.per_augmentation
            .iter()
            .enumerate()
            .flat_map(|(aug, dets)| {
                dets.iter().map(move |d| GroupMember {
                    augmentation_id: aug,
                    detection: d.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub augmentation_id: usize,
    pub detection: Detection,
}

/// Detections believed to belong to one object, at most one per augmentation
/// (unless there are more detections from an augmentation than groups).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectGroup {
    /// 1-based.
    pub object_id: usize,
    pub members: Vec<GroupMember>,
}

impl ObjectGroup {
    pub fn detections(&self) -> Vec<Detection> {
        self.members.iter().map(|m| m.detection.clone()).collect()
    }

    pub fn majority_label(&self) -> Result<String, GroupingError> {
        majority_label(self.members.iter().map(|m| &m.detection)).ok_or(GroupingError::EmptyGroup)
    }
}

/// Largest per-augmentation detection count.
pub fn object_count(pool: &DetectionPool) -> usize {
    pool.per_augmentation.iter().map(Vec::len).max().unwrap_or(0)
}

/// Most frequent label. Count ties go to the higher summed score, then to
/// the lexicographically smaller label.
pub fn majority_label<'a, I>(dets: I) -> Option<String>
where
    I: IntoIterator<Item = &'a Detection>,
{
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for d in dets {
        let e = tally.entry(d.label.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d.score;
    }
    // BTreeMap iterates labels ascending, so strict comparisons keep the
    // lexicographically first label on full ties
    let mut best: Option<(&str, usize, f64)> = None;
    for (label, (count, score)) in tally {
        let better = match best {
            None => true,
            Some((_, c, s)) => count > c || (count == c && score > s),
        };
        if better {
            best = Some((label, count, score));
        }
    }
    best.map(|(l, _, _)| l.to_string())
}

type Point = [f64; 2];

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: Point, centroids: &[Point]) -> usize {
    (0..centroids.len())
        .min_by(|&a, &b| cmp_f64(dist2(p, centroids[a]), dist2(p, centroids[b])))
        .expect("at least one centroid")
}

/// k-means++ seeding.
fn init_centroids(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|&p| {
                centroids
                    .iter()
                    .map(|&c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if r < *w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            // every point coincides with a centroid
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick]);
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds. Stops when assignments stop
/// changing or after [`MAX_KMEANS_ITERATIONS`]. An emptied cluster is
/// re-seeded at the point farthest from its current centroid.
pub fn kmeans(points: &[Point], k: usize, seed: u64) -> (Vec<Point>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_centroids(points, k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids)).collect();

    for _ in 0..MAX_KMEANS_ITERATIONS {
        let mut sums = vec![[0.0, 0.0]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            sums[c][0] += p[0];
            sums[c][1] += p[1];
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        cmp_f64(
                            dist2(points[a], centroids[assign[a]]),
                            dist2(points[b], centroids[assign[b]]),
                        )
                    })
                    .expect("nonempty points");
                centroids[c] = points[far];
                counts[assign[far]] -= 1;
                assign[far] = c;
                counts[c] = 1;
            }
        }
        let next: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (centroids, assign)
}

/// Partitions the pool into `s` object groups.
///
/// k-means runs on box centers. Afterwards each group keeps at most one
/// detection per augmentation: detections are placed in descending score
/// order, each into the nearest centroid whose group has no member from the
/// same augmentation yet. If no such group exists the detection goes to its
/// nearest group regardless. Groups are numbered by centroid position
/// (x, then y).
pub fn group(pool: &DetectionPool, s: usize, seed: u64) -> Result<Vec<ObjectGroup>, GroupingError> {
    let members = pool.flatten();
    if s == 0 || members.len() < s {
        return Err(GroupingError::Underdetermined {
            groups: s,
            detections: members.len(),
        });
    }
    let points: Vec<Point> = members
        .iter()
        .map(|m| {
            let (cx, cy) = m.detection.bbox.center();
            [cx, cy]
        })
        .collect();

    let mut centroids = if s == 1 {
        vec![[0.0, 0.0]]
    } else {
        kmeans(&points, s, seed).0
    };

    // stable object numbering independent of the seeding order
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| {
        cmp_f64(centroids[a][0], centroids[b][0]).then(cmp_f64(centroids[a][1], centroids[b][1]))
    });
    centroids = order.iter().map(|&i| centroids[i]).collect();

    let mut by_score: Vec<usize> = (0..members.len()).collect();
    by_score.sort_by(|&a, &b| cmp_f64(members[b].detection.score, members[a].detection.score));

    let mut slots: Vec<Vec<usize>> = vec![Vec::new(); s];
    for i in by_score {
        let mut candidates: Vec<usize> = (0..s).collect();
        candidates.sort_by(|&a, &b| cmp_f64(dist2(points[i], centroids[a]), dist2(points[i], centroids[b])));
        let aug = members[i].augmentation_id;
        let target = candidates
            .iter()
            .copied()
            .find(|&c| slots[c].iter().all(|&j| members[j].augmentation_id != aug))
            .unwrap_or(candidates[0]);
        slots[target].push(i);
    }

    Ok(slots
        .into_iter()
        .enumerate()
        .map(|(g, mut idx)| {
            idx.sort_unstable();
            ObjectGroup {
                object_id: g + 1,
                members: idx.into_iter().map(|i| members[i].clone()).collect(),
            }
        })
        .collect())
}
