//! Candidate regions inside a salient mask from K-means on position and colour.

use rand::Rng as _;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::imaging::{Image, Mask};
use crate::init::rng;

/// One part of a partitioned salient region. `score` is set once the region is ranked.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateRegion {
    #[serde(skip)]
    pub mask: Mask,
    pub cluster_id: usize,
    pub score: Option<f64>,
}

const RESTARTS: usize = 4;
const MAX_ITERS: usize = 100;

fn dist2(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from a k-means++ start. Returns (assignment, inertia).
fn lloyd(points: &[[f64; 5]], k: usize, r: &mut crate::init::Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centres = vec![points[r.random_range(0..n)]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            r.random_range(0..n)
        } else {
            let mut t = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        };
        centres.push(points[next]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &centres[centres.len() - 1]));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k).min_by(|&a, &b| dist2(p, &centres[a]).total_cmp(&dist2(p, &centres[b]))).unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0; 5]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for j in 0..5 {
                sums[a][j] += p[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centre
                let far = (0..n)
                    .max_by(|&a, &b| dist2(&points[a], &centres[assign[a]]).total_cmp(&dist2(&points[b], &centres[assign[b]])))
                    .unwrap();
                centres[c] = points[far];
                assign[far] = c;
                changed = true;
            } else {
                for j in 0..5 {
                    centres[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&assign).map(|(p, &a)| dist2(p, &centres[a])).sum();
    (assign, inertia)
}

/// Partitions the salient pixels into `k` regions using features
/// `[x/W, y/H, λr, λg, λb]`. Regions are numbered by their first pixel in row-major order.
pub fn spatial_kmeans_candidates(salient: &Mask, image: &Image, k: usize, lambda: f64, seed: u64) -> Result<Vec<CandidateRegion>> {
    image.require_rgb()?;
    ensure(salient.dims() == image.dims(), || "salient mask and image differ in size".into())?;
    ensure(k >= 1, || "k must be at least 1".into())?;
    let idx: Vec<usize> = (0..salient.data.len()).filter(|&i| salient.data[i] != 0).collect();
    ensure(k <= idx.len(), || format!("k = {k} exceeds the {} salient pixels", idx.len()))?;
    let (h, w) = salient.dims();
    let points: Vec<[f64; 5]> = idx
        .iter()
        .map(|&i| {
            let (y, x) = (i / w, i % w);
            [
                x as f64 / w as f64,
                y as f64 / h as f64,
                lambda * image.get(0, y, x),
                lambda * image.get(1, y, x),
                lambda * image.get(2, y, x),
            ]
        })
        .collect();
    let mut r = rng(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(&points, k, &mut r);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let assign = best.unwrap().0;
    let mut order: Vec<usize> = Vec::with_capacity(k);
    for &a in &assign {
        if !order.contains(&a) {
            order.push(a);
        }
    }
    Ok(order
        .iter()
        .enumerate()
        .map(|(id, &c)| {
            let mut mask = Mask::empty(h, w);
            for (&i, &a) in idx.iter().zip(&assign) {
                if a == c {
                    mask.data[i] = 1;
                }
            }
            CandidateRegion { mask, cluster_id: id, score: None }
        })
        .collect())
}
