//! Dataset synthesis: forgery locality, candidate partitions, filtering, manifests.

#[path = "common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use sha2::{Digest, Sha256};
use smloc_core::data::captions::StubCaptioner;
use smloc_core::data::edges::sobel_edge_target;
use smloc_core::data::fixtures::synthetic_source;
use smloc_core::data::forgery::{filler_registry, saliency_overlap_filter, synth_forgery, ForgeryConfig, ForgeryRequest, Source};
use smloc_core::data::kmeans::spatial_kmeans_candidates;
use smloc_core::data::manifest::{parse_manifest, read_manifest, to_ndjson, write_manifest, DatasetRecord, Provenance, Split};
use smloc_core::data::prepare::load_and_prepare;
use smloc_core::data::synth::{synthesize_dataset, Quotas, SynthConfig};
use smloc_core::imaging::Mask;

pub fn forgeries_leave_every_pixel_outside_ground_truth_untouched() {
    let fillers = filler_registry();
    let config = ForgeryConfig::default();
    for seed in 0..100u64 {
        let (host, host_mask) = synthetic_source(32, seed);
        let (donor, donor_mask) = synthetic_source(32, seed + 10_000);
        let kind = ["splice", "copymove", "removal"][seed as usize % 3];
        let filler = fillers.get(["mean", "recolor"][seed as usize % 2]).unwrap();
        let req = ForgeryRequest {
            host: Source { image: &host, mask: &host_mask },
            donor: Some(Source { image: &donor, mask: &donor_mask }),
            filler,
            config: &config,
        };
        let f = synth_forgery(kind, &req, seed).unwrap();
        assert!(!f.mask.is_empty(), "seed {seed} {kind}");
        let n = 32 * 32;
        for i in 0..n {
            let differs = (0..3).any(|c| f.image.data[c * n + i].to_bits() != host.data[c * n + i].to_bits());
            assert_eq!(differs, f.mask.data[i] != 0, "seed {seed} {kind} pixel {i}");
        }
    }
}

pub fn candidates_partition_the_salient_mask() {
    for seed in 0..50u64 {
        let (image, salient) = synthetic_source(32, 200 + seed);
        let k = 3 + seed as usize % 3;
        let regions = spatial_kmeans_candidates(&salient, &image, k, 0.2, seed).unwrap();
        assert_eq!(regions.len(), k);
        let mut cover = vec![0u8; salient.data.len()];
        for r in &regions {
            assert!(!r.mask.is_empty(), "seed {seed}: empty region");
            for (c, &v) in cover.iter_mut().zip(&r.mask.data) {
                *c += (v != 0) as u8;
            }
        }
        for (i, (&c, &s)) in cover.iter().zip(&salient.data).enumerate() {
            assert_eq!(c, (s != 0) as u8, "seed {seed} pixel {i}");
        }
    }
}

pub fn overlap_filter_requires_strictly_more_than_threshold() {
    let gt = Mask::from_fn(1, 10, |_, _| true);
    let eight = Mask::from_fn(1, 10, |_, x| x < 8);
    let nine = Mask::from_fn(1, 10, |_, x| x < 9);
    assert!(!saliency_overlap_filter(&gt, &eight, 0.8).unwrap());
    assert!(saliency_overlap_filter(&gt, &nine, 0.8).unwrap());
    assert!(!saliency_overlap_filter(&Mask::empty(1, 10), &nine, 0.8).unwrap());
    assert!(saliency_overlap_filter(&gt, &Mask::empty(2, 5), 0.8).is_err());
}

fn record(i: usize, split: Split, provenance: Provenance) -> DatasetRecord {
    DatasetRecord {
        authentic_path: format!("authentic/src{i:04}.png"),
        manipulated_path: format!("manipulated/{}_{i:05}.png", provenance.as_str()),
        mask_path: format!("masks/{i:05}.png"),
        edge_path: format!("edges/{i:05}.png"),
        split,
        provenance,
    }
}

pub fn manifest_round_trip_is_byte_identical() {
    let records: Vec<_> = (0..12)
        .map(|i| record(i, [Split::Train, Split::Val, Split::Test][i % 3], Provenance::ALL[i % 5]))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    write_manifest(&path, &records).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = read_manifest(&path).unwrap();
    assert_eq!(back, records);
    write_manifest(&path, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert_eq!(to_ndjson(&parse_manifest(std::str::from_utf8(&first).unwrap()).unwrap()).as_bytes(), &first[..]);
}

pub fn manifest_rejects_leaks_and_duplicates() {
    let a = record(0, Split::Train, Provenance::SynthSplice);
    let mut leak = a.clone();
    leak.split = Split::Test;
    leak.manipulated_path = "manipulated/other.png".into();
    assert!(parse_manifest(&to_ndjson(&[a.clone(), leak])).is_err());
    assert!(parse_manifest(&to_ndjson(&[a.clone(), a])).is_err());
    assert!(parse_manifest("{\"authentic_path\": 3}\n").is_err());
}

fn write_sources(dir: &Path, n: usize, with_selected: bool) -> std::path::PathBuf {
    std::fs::create_dir_all(dir.join("src")).unwrap();
    let mut lines = String::new();
    for i in 0..n {
        let (img, sal) = synthetic_source(32, 40 + i as u64);
        img.save(&dir.join(format!("src/img{i}.png"))).unwrap();
        sal.save_png(&dir.join(format!("src/sal{i}.png"))).unwrap();
        if with_selected && i < 2 {
            // one manipulation inside the salient object, one mostly outside it
            let gt = if i == 0 { sal.clone() } else { Mask::from_fn(32, 32, |y, _| y < 6) };
            let mut m = img.clone();
            for (j, &v) in gt.data.iter().enumerate() {
                if v != 0 {
                    m.data[j] = 1.0 - m.data[j];
                }
            }
            m.save(&dir.join(format!("src/man{i}.png"))).unwrap();
            gt.save_png(&dir.join(format!("src/gt{i}.png"))).unwrap();
            lines.push_str(&format!(
                "{{\"image\":\"src/img{i}.png\",\"salient_mask\":\"src/sal{i}.png\",\"manipulated\":\"src/man{i}.png\",\"mask\":\"src/gt{i}.png\"}}\n"
            ));
        } else {
            lines.push_str(&format!("{{\"image\":\"src/img{i}.png\",\"salient_mask\":\"src/sal{i}.png\"}}\n"));
        }
    }
    let p = dir.join("sources.jsonl");
    std::fs::write(&p, lines).unwrap();
    p
}

fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "summary.json" {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}

fn small_config() -> SynthConfig {
    SynthConfig {
        seed: 11,
        quotas: Quotas { sdri_st: 3, splice: 3, copymove: 3, removal: 3 },
        split_ratios: (2, 1, 1),
        ..Default::default()
    }
}

pub fn fixed_seed_synthesis_is_hash_stable_and_loadable() {
    let work = tempfile::tempdir().unwrap();
    let sources = write_sources(work.path(), 4, true);
    let cfg = small_config();
    let a = synthesize_dataset(&sources, &work.path().join("a"), &cfg, &StubCaptioner).unwrap();
    let b = synthesize_dataset(&sources, &work.path().join("b"), &cfg, &StubCaptioner).unwrap();
    let (da, db) = (tree_digest(&work.path().join("a")), tree_digest(&work.path().join("b")));
    assert!(!da.is_empty());
    assert_eq!(da, db);
    assert_eq!((a.counts.clone(), a.splits.clone()), (b.counts.clone(), b.splits.clone()));

    for (key, want) in [("sdri_st", 3), ("synth_splice", 3), ("synth_copymove", 3), ("synth_removal", 3), ("selected", 1)] {
        assert_eq!(a.counts.get(key).copied().unwrap_or(0), want, "{key}: {:?}", a.counts);
    }
    assert_eq!(a.rejected_selected, 1);

    let base = work.path().join("a");
    let records = read_manifest(&a.manifest).unwrap();
    assert_eq!(records.len(), 13);
    for r in &records {
        let p = load_and_prepare(r, &base, 32).unwrap();
        assert!(!p.mask.is_empty(), "{}", r.manipulated_path);
        let stored = Mask::load_png(&base.join(&r.edge_path)).unwrap();
        assert_eq!(stored, sobel_edge_target(&p.mask));
    }
    let other = SynthConfig { seed: 12, ..small_config() };
    synthesize_dataset(&sources, &work.path().join("c"), &other, &StubCaptioner).unwrap();
    assert_ne!(tree_digest(&work.path().join("c")), da);
}

pub fn splits_never_share_an_authentic_image() {
    let work = tempfile::tempdir().unwrap();
    let sources = write_sources(work.path(), 6, false);
    let cfg = SynthConfig { promote_hard: Some(0.5), ..small_config() };
    let s = synthesize_dataset(&sources, &work.path().join("out"), &cfg, &StubCaptioner).unwrap();
    let records = read_manifest(&s.manifest).unwrap();
    let mut home: BTreeMap<&str, Split> = BTreeMap::new();
    for r in &records {
        assert_eq!(*home.entry(&r.authentic_path).or_insert(r.split), r.split, "{}", r.authentic_path);
    }
    assert!(SynthConfig::from_toml("clusters = 9\n").map(|c| c.clusters).unwrap() == 9);
    let bad = SynthConfig { clusters: 9, ..small_config() };
    assert!(synthesize_dataset(&sources, &work.path().join("bad"), &bad, &StubCaptioner).is_err());
    assert!(SynthConfig::from_toml("bogus_key = 1\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edge_target_lies_on_mask_boundary(seed in any::<u64>()) {
        let (_, m) = synthetic_source(24, seed);
        let e = sobel_edge_target(&m);
        for y in 0..24 {
            for x in 0..24 {
                if e.get(y, x) {
                    let mut mixed = false;
                    for dy in -1i32..=1 {
                        for dx in -1i32..=1 {
                            let (yy, xx) = ((y as i32 + dy).clamp(0, 23) as usize, (x as i32 + dx).clamp(0, 23) as usize);
                            mixed |= m.get(yy, xx) != m.get(y, x);
                        }
                    }
                    prop_assert!(mixed, "edge pixel ({}, {}) has a uniform neighbourhood", y, x);
                }
            }
        }
    }
}

common::suite!(
    forgeries_leave_every_pixel_outside_ground_truth_untouched,
    candidates_partition_the_salient_mask,
    overlap_filter_requires_strictly_more_than_threshold,
    manifest_round_trip_is_byte_identical,
    manifest_rejects_leaks_and_duplicates,
    fixed_seed_synthesis_is_hash_stable_and_loadable,
    splits_never_share_an_authentic_image,
);
