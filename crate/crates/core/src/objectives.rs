//! Pixel BCE, soft IoU, and their unweighted sum for mask and edge predictions.

use serde::{Deserialize, Serialize};
use smloc_grad::{Graph, Tensor, Var};

use crate::error::{ensure, Result};

/// Predictions are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` inside the logarithms.
pub const CLAMP_EPS: f64 = 1e-7;
/// Guard added to the IoU denominator.
pub const IOU_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

fn same_len(pred: usize, target: usize) -> Result<()> {
    ensure(pred == target, || format!("prediction has {pred} values but target has {target}"))
}

pub fn bce_value(pred: &[f64], target: &[f64], reduction: Reduction) -> Result<f64> {
    same_len(pred.len(), target.len())?;
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(match reduction {
        Reduction::Sum => s,
        Reduction::Mean => s / pred.len().max(1) as f64,
    })
}

/// `1 − Σ t·p / (Σ t + Σ p − Σ t·p)`; zero when both target and prediction are all zero.
pub fn iou_loss_value(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred.len(), target.len())?;
    let (inter, st, sp) = sums(pred, target);
    Ok(soft_iou_loss(inter, st, sp))
}

fn sums(pred: &[f64], target: &[f64]) -> (f64, f64, f64) {
    pred.iter().zip(target).fold((0.0, 0.0, 0.0), |(i, t, p), (&pv, &tv)| (i + tv * pv, t + tv, p + pv))
}

fn soft_iou_loss(inter: f64, st: f64, sp: f64) -> f64 {
    if st == 0.0 && sp == 0.0 {
        return 0.0;
    }
    1.0 - inter / (st + sp - inter + IOU_EPS)
}

fn check_target(g: &Graph, pred: Var, target: &Tensor) -> Result<()> {
    ensure(g.shape(pred) == target.shape(), || {
        format!("prediction shape {:?} does not match target shape {:?}", g.shape(pred), target.shape())
    })
}

/// Pixel BCE over every element of `pred`.
pub fn bce_pixel_loss(g: &mut Graph, pred: Var, target: &Tensor, reduction: Reduction) -> Result<Var> {
    check_target(g, pred, target)?;
    let value = bce_value(g.value(pred).data(), target.data(), reduction)?;
    let t = target.clone();
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / t.numel().max(1) as f64,
    };
    Ok(g.custom(&[pred], Tensor::scalar(value), move |args| {
        let gs = args.grad.item() * scale;
        let p = args.inputs[0].data();
        let d = p
            .iter()
            .zip(t.data())
            .map(|(&p, &t)| {
                if p <= CLAMP_EPS || p >= 1.0 - CLAMP_EPS {
                    0.0
                } else {
                    gs * ((1.0 - t) / (1.0 - p) - t / p)
                }
            })
            .collect();
        vec![Some(Tensor::new(args.inputs[0].shape(), d))]
    }))
}

/// Soft IoU loss per image (leading axis), averaged over the batch.
pub fn iou_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    check_target(g, pred, target)?;
    let shape = target.shape().to_vec();
    let batch = if shape.len() >= 3 { shape[0] } else { 1 };
    let per = target.numel() / batch.max(1);
    let pv = g.value(pred).data();
    let stats: Vec<(f64, f64, f64)> =
        (0..batch).map(|b| sums(&pv[b * per..(b + 1) * per], &target.data()[b * per..(b + 1) * per])).collect();
    let value = stats.iter().map(|&(i, t, p)| soft_iou_loss(i, t, p)).sum::<f64>() / batch as f64;
    let t = target.clone();
    Ok(g.custom(&[pred], Tensor::scalar(value), move |args| {
        let gs = args.grad.item() / batch as f64;
        let mut d = vec![0.0; t.numel()];
        for (b, &(inter, st, sp)) in stats.iter().enumerate() {
            if st == 0.0 && sp == 0.0 {
                continue;
            }
            let union = st + sp - inter + IOU_EPS;
            // loss = 1 − I/U with ∂I/∂p = t and ∂U/∂p = 1 − t
            let range = b * per..(b + 1) * per;
            for (di, &tv) in d[range.clone()].iter_mut().zip(&t.data()[range]) {
                *di = gs * -(tv * union - inter * (1.0 - tv)) / (union * union);
            }
        }
        vec![Some(Tensor::new(t.shape(), d))]
    }))
}

/// Binary mask and edge targets, each shaped like the matching prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPair {
    pub mask: Tensor,
    pub edge: Tensor,
}

impl TargetPair {
    pub fn new(mask: Tensor, edge: Tensor) -> Result<Self> {
        ensure(mask.shape() == edge.shape(), || "mask and edge targets differ in shape".into())?;
        let binary = |t: &Tensor| t.data().iter().all(|&v| v == 0.0 || v == 1.0);
        ensure(binary(&mask) && binary(&edge), || "targets must be binary".into())?;
        Ok(TargetPair { mask, edge })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce_mask: f64,
    pub iou_mask: f64,
    pub bce_edge: f64,
    pub total: f64,
}

/// Mask BCE + mask IoU + edge BCE. Without an edge prediction the edge term is zero.
pub fn total_objective(
    g: &mut Graph,
    pred_mask: Var,
    pred_edge: Option<Var>,
    targets: &TargetPair,
    reduction: Reduction,
) -> Result<(Var, LossBreakdown)> {
    let bce_m = bce_pixel_loss(g, pred_mask, &targets.mask, reduction)?;
    let iou_m = iou_loss(g, pred_mask, &targets.mask)?;
    let bce_e = match pred_edge {
        Some(e) => bce_pixel_loss(g, e, &targets.edge, reduction)?,
        None => g.constant(Tensor::scalar(0.0)),
    };
    let total = g.add_n(&[bce_m, iou_m, bce_e]);
    let b = LossBreakdown {
        bce_mask: g.value(bce_m).item(),
        iou_mask: g.value(iou_m).item(),
        bce_edge: g.value(bce_e).item(),
        total: g.value(total).item(),
    };
    Ok((total, b))
}
