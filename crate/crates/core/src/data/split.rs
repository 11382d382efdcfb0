//! Provenance-stratified train/val/test assignment and hard-sample promotion.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::manifest::{DatasetRecord, Provenance, Split};
use crate::error::{ensure, Result};
use crate::init::rng;

/// Groups records sharing an authentic image so they always land in one split.
fn groups(records: &[DatasetRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut g: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        g.entry(r.authentic_path.clone()).or_default().push(i);
    }
    g
}

/// Assigns splits with ratios `train:val:test` over authentic-image groups. Split sizes
/// follow the ratios globally; within each provenance stratum (the provenance of a group's
/// first record) groups are shuffled and spread evenly along the train, val, test order.
pub fn assign_splits(records: &mut [DatasetRecord], ratios: (u32, u32, u32), seed: u64) -> Result<()> {
    let total = ratios.0 + ratios.1 + ratios.2;
    ensure(total > 0, || "split ratios are all zero".into())?;
    let mut strata: BTreeMap<Provenance, Vec<Vec<usize>>> = BTreeMap::new();
    for (_, members) in groups(records) {
        strata.entry(records[members[0]].provenance).or_default().push(members);
    }
    let mut r = rng(seed);
    let mut placed: Vec<(f64, Vec<usize>)> = Vec::new();
    for (_, mut gs) in strata {
        gs.shuffle(&mut r);
        let n = gs.len() as f64;
        placed.extend(gs.into_iter().enumerate().map(|(k, m)| ((k as f64 + 0.5) / n, m)));
    }
    placed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = placed.len() as f64;
    let n_train = (n * ratios.0 as f64 / total as f64).round() as usize;
    let n_val = ((n * (ratios.0 + ratios.1) as f64 / total as f64).round() as usize).saturating_sub(n_train);
    for (k, (_, members)) in placed.iter().enumerate() {
        let split = if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        for &i in members {
            records[i].split = split;
        }
    }
    Ok(())
}

/// Moves `fraction` of the training groups made only of `sdri_st` records into test.
/// Returns the number of records moved.
pub fn promote_hard(records: &mut [DatasetRecord], fraction: f64, seed: u64) -> Result<usize> {
    ensure((0.0..=1.0).contains(&fraction), || format!("hard-sample fraction {fraction} is outside [0, 1]"))?;
    let mut eligible: Vec<Vec<usize>> = groups(records)
        .into_values()
        .filter(|m| m.iter().all(|&i| records[i].provenance == Provenance::SdriSt && records[i].split == Split::Train))
        .collect();
    eligible.shuffle(&mut rng(seed));
    let take = (eligible.len() as f64 * fraction).floor() as usize;
    let mut moved = 0;
    for members in eligible.into_iter().take(take) {
        for i in members {
            records[i].split = Split::Test;
            moved += 1;
        }
    }
    Ok(moved)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(provs: &[Provenance]) -> Vec<DatasetRecord> {
        provs
            .iter()
            .enumerate()
            .map(|(i, &p)| DatasetRecord {
                authentic_path: format!("a{i}.png"),
                manipulated_path: format!("m{i}.png"),
                mask_path: format!("g{i}.png"),
                edge_path: format!("e{i}.png"),
                split: Split::Train,
                provenance: p,
            })
            .collect()
    }

    fn sizes(r: &[DatasetRecord]) -> [usize; 3] {
        [Split::Train, Split::Val, Split::Test].map(|s| r.iter().filter(|x| x.split == s).count())
    }

    #[test]
    fn sizes_follow_ratios_even_with_singleton_strata() {
        let mut r = recs(&[Provenance::SdriSt, Provenance::SynthSplice, Provenance::SynthCopymove, Provenance::SynthRemoval]);
        assign_splits(&mut r, (2, 1, 1), 0).unwrap();
        assert_eq!(sizes(&r), [2, 1, 1]);
        let mut r = recs(&[Provenance::SynthSplice; 10]);
        assign_splits(&mut r, (8, 1, 1), 3).unwrap();
        assert_eq!(sizes(&r), [8, 1, 1]);
    }

    #[test]
    fn large_strata_reach_every_split() {
        let provs: Vec<Provenance> = (0..40).map(|i| if i % 2 == 0 { Provenance::SdriSt } else { Provenance::SynthRemoval }).collect();
        let mut r = recs(&provs);
        assign_splits(&mut r, (2, 1, 1), 9).unwrap();
        assert_eq!(sizes(&r), [20, 10, 10]);
        for p in [Provenance::SdriSt, Provenance::SynthRemoval] {
            let own: Vec<DatasetRecord> = r.iter().filter(|x| x.provenance == p).cloned().collect();
            assert_eq!(sizes(&own), [10, 5, 5]);
        }
    }
}
