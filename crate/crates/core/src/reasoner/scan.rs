//! Scan orders over a token grid, interleaving of content/scope tokens, the inverse
//! split, and channel-wise aggregation across directions.

use smloc_grad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{ensure, Result};
use crate::reasoner::BranchPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanOrder {
    RowForward,
    ColumnForward,
    RowBackward,
    ColumnBackward,
}

impl ScanOrder {
    /// Fixed direction order, which is also the row order of [`DirectionalWeights`].
    pub const ALL: [ScanOrder; 4] =
        [ScanOrder::RowForward, ScanOrder::ColumnForward, ScanOrder::RowBackward, ScanOrder::ColumnBackward];

    pub fn index(self) -> usize {
        match self {
            ScanOrder::RowForward => 0,
            ScanOrder::ColumnForward => 1,
            ScanOrder::RowBackward => 2,
            ScanOrder::ColumnBackward => 3,
        }
    }

    /// `perm[k]` is the row-major grid index visited at step `k`.
    pub fn permutation(self, h: usize, w: usize) -> Vec<usize> {
        let rows: Vec<usize> = (0..h * w).collect();
        let cols: Vec<usize> = (0..w).flat_map(|x| (0..h).map(move |y| y * w + x)).collect();
        match self {
            ScanOrder::RowForward => rows,
            ScanOrder::ColumnForward => cols,
            ScanOrder::RowBackward => rows.into_iter().rev().collect(),
            ScanOrder::ColumnBackward => cols.into_iter().rev().collect(),
        }
    }
}

pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &i) in perm.iter().enumerate() {
        inv[i] = k;
    }
    inv
}

/// Tokens `[B, 2N, C]` laid out as `[m_π(0), e_π(0), m_π(1), e_π(1), ...]`.
#[derive(Clone, Copy, Debug)]
pub struct InterleavedSequence {
    pub tokens: Var,
    pub order: ScanOrder,
    pub grid: (usize, usize),
}

pub fn build_direction_sequence(g: &mut Graph, pair: &BranchPair, order: ScanOrder) -> Result<InterleavedSequence> {
    pair.check(g)?;
    let (h, w) = pair.grid;
    let n = h * w;
    let both = g.concat(&[pair.content, pair.scope], 1);
    let index: Vec<usize> = order.permutation(h, w).into_iter().flat_map(|i| [i, n + i]).collect();
    let tokens = g.gather_rows(both, &index);
    Ok(InterleavedSequence { tokens, order, grid: pair.grid })
}

/// Even positions become content, odd positions scope; both return to row-major order.
pub fn split_and_restore(g: &mut Graph, seq: &InterleavedSequence) -> Result<BranchPair> {
    let s = g.shape(seq.tokens).to_vec();
    ensure(s.len() == 3, || format!("sequence must be [B, L, C], got {s:?}"))?;
    ensure(s[1].is_multiple_of(2), || format!("interleaved sequence has odd length {}", s[1]))?;
    let (h, w) = seq.grid;
    ensure(s[1] == 2 * h * w, || format!("sequence length {} does not match a {h}x{w} grid", s[1]))?;
    let inv = invert(&seq.order.permutation(h, w));
    let content_idx: Vec<usize> = inv.iter().map(|&k| 2 * k).collect();
    let scope_idx: Vec<usize> = inv.iter().map(|&k| 2 * k + 1).collect();
    let content = g.gather_rows(seq.tokens, &content_idx);
    let scope = g.gather_rows(seq.tokens, &scope_idx);
    Ok(BranchPair { content, scope, grid: seq.grid })
}

/// Serializes one branch `[B, N, C]` along `order`.
pub fn serialize(g: &mut Graph, tokens: Var, grid: (usize, usize), order: ScanOrder) -> Var {
    let perm = order.permutation(grid.0, grid.1);
    if order == ScanOrder::RowForward { tokens } else { g.gather_rows(tokens, &perm) }
}

/// Inverse of [`serialize`].
pub fn restore(g: &mut Graph, tokens: Var, grid: (usize, usize), order: ScanOrder) -> Var {
    let inv = invert(&order.permutation(grid.0, grid.1));
    if order == ScanOrder::RowForward { tokens } else { g.gather_rows(tokens, &inv) }
}

/// Per-direction, per-channel mixing weights `[4, C]` for each branch.
#[derive(Clone, Copy, Debug)]
pub struct DirectionalWeights {
    pub content: ParamId,
    pub scope: ParamId,
}

impl DirectionalWeights {
    pub fn register(store: &mut ParamStore, channels: usize) -> Self {
        DirectionalWeights {
            content: store.add("reasoner.dir_weights.content", Tensor::full(&[4, channels], 0.25), true),
            scope: store.add("reasoner.dir_weights.scope", Tensor::full(&[4, channels], 0.25), true),
        }
    }
}

/// `out[:, :, c] = Σ_d w[d, c] · pair_d[:, :, c]` for content and scope separately.
pub fn aggregate_directions(
    g: &mut Graph,
    store: &ParamStore,
    pairs: &[BranchPair; 4],
    weights: &DirectionalWeights,
) -> Result<BranchPair> {
    let shape = g.shape(pairs[0].content).to_vec();
    for p in pairs {
        p.check(g)?;
        ensure(g.shape(p.content) == shape.as_slice() && p.grid == pairs[0].grid, || {
            "directional outputs differ in shape".into()
        })?;
    }
    let c = shape[2];
    let mix = |g: &mut Graph, id: ParamId, pick: fn(&BranchPair) -> Var| -> Result<Var> {
        let w = g.param(store, id);
        ensure(g.shape(w) == [4, c], || format!("directional weights must be [4, {c}]"))?;
        let terms: Vec<Var> = pairs
            .iter()
            .enumerate()
            .map(|(d, p)| {
                let row = g.narrow(w, 0, d, 1);
                let row = g.reshape(row, &[c]);
                g.mul_last(pick(p), row)
            })
            .collect();
        Ok(g.add_n(&terms))
    };
    let content = mix(g, weights.content, |p| p.content)?;
    let scope = mix(g, weights.scope, |p| p.scope)?;
    Ok(BranchPair { content, scope, grid: pairs[0].grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_are_bijections_with_reversed_backward_scans() {
        for (h, w) in [(1, 1), (2, 3), (4, 4), (3, 5)] {
            for d in ScanOrder::ALL {
                let mut p = d.permutation(h, w);
                p.sort();
                assert_eq!(p, (0..h * w).collect::<Vec<_>>());
            }
            let mut rf = ScanOrder::RowForward.permutation(h, w);
            rf.reverse();
            assert_eq!(rf, ScanOrder::RowBackward.permutation(h, w));
            let mut cf = ScanOrder::ColumnForward.permutation(h, w);
            cf.reverse();
            assert_eq!(cf, ScanOrder::ColumnBackward.permutation(h, w));
        }
        assert_eq!(ScanOrder::ColumnForward.permutation(2, 3), vec![0, 3, 1, 4, 2, 5]);
    }
}
