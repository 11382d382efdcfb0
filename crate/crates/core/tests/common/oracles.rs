//! Scalar reference implementations written directly from the definitions.

/// Set-overlap metrics by explicit counting, MAE by a plain loop.
pub struct Counts {
    pub tp: f64,
    pub fp: f64,
    pub fneg: f64,
    pub tn: f64,
}

pub fn counts(pred: &[f64], target: &[u8], thr: f64) -> Counts {
    let mut c = Counts { tp: 0.0, fp: 0.0, fneg: 0.0, tn: 0.0 };
    for i in 0..pred.len() {
        let m = pred[i] >= thr;
        let t = target[i] == 1;
        if m && t {
            c.tp += 1.0;
        } else if m {
            c.fp += 1.0;
        } else if t {
            c.fneg += 1.0;
        } else {
            c.tn += 1.0;
        }
    }
    c
}

fn div_or(num: f64, den: f64, empty: f64) -> f64 {
    if den == 0.0 {
        empty
    } else {
        num / den
    }
}

pub fn iou(c: &Counts) -> f64 {
    div_or(c.tp, c.tp + c.fp + c.fneg, 1.0)
}

pub fn dice(c: &Counts) -> f64 {
    div_or(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fneg, 1.0)
}

pub fn precision(c: &Counts) -> f64 {
    let both_empty = if c.tp + c.fp + c.fneg == 0.0 { 1.0 } else { 0.0 };
    div_or(c.tp, c.tp + c.fp, both_empty)
}

pub fn recall(c: &Counts) -> f64 {
    let both_empty = if c.tp + c.fp + c.fneg == 0.0 { 1.0 } else { 0.0 };
    div_or(c.tp, c.tp + c.fneg, both_empty)
}

pub fn accuracy(c: &Counts) -> f64 {
    (c.tp + c.tn) / (c.tp + c.tn + c.fp + c.fneg)
}

pub fn mae(pred: &[f64], target: &[u8]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += (pred[i] - target[i] as f64).abs();
    }
    s / pred.len() as f64
}

/// Fraction of positive/negative pairs ranked correctly, ties counting one half.
pub fn pairwise_auc(pred: &[f64], target: &[u8]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..pred.len() {
        if target[i] != 1 {
            continue;
        }
        for j in 0..pred.len() {
            if target[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if pred[i] > pred[j] {
                wins += 1.0;
            } else if pred[i] == pred[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Random prediction/target pair of `n` pixels. Predictions are drawn from a coarse
/// grid part of the time so ties and exact-threshold hits occur.
pub fn random_pair(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let u = super::uniform(&[2 * n + 2], seed, 0.0, 1.0).into_data();
    let density = u[2 * n];
    let coarse = u[2 * n + 1] < 0.4;
    let pred = u[..n].iter().map(|&v| if coarse { (v * 4.0).floor() / 4.0 } else { v }).collect();
    let target = u[n..2 * n].iter().map(|&v| (v < density) as u8).collect();
    (pred, target)
}
