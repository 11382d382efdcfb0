//! End-to-end dataset synthesis from a source manifest of images and salient masks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::captions::{rank_candidates, CaptionClient, SubjectFirstJudge};
use crate::data::edges::sobel_edge_target;
use crate::data::forgery::{filler_registry, saliency_overlap_filter, synth_forgery, ForgeryConfig, ForgeryRequest, Source};
use crate::data::kmeans::spatial_kmeans_candidates;
use crate::data::manifest::{read_sources, write_manifest, DatasetRecord, Provenance, Split};
use crate::data::morph::morph_refine;
use crate::data::prepare::resolve;
use crate::data::split::{assign_splits, promote_hard};
use crate::error::{ensure, Error, Result};
use crate::imaging::{Image, Mask};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Quotas {
    pub sdri_st: usize,
    pub splice: usize,
    pub copymove: usize,
    pub removal: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub quotas: Quotas,
    /// Filler for removal forgeries.
    pub filler: String,
    /// Filler standing in for the semantic editor on decisive regions.
    pub editor: String,
    /// Cluster count for candidate regions, 3..=5.
    pub clusters: usize,
    /// Colour weight against normalized position in the clustering features.
    pub color_weight: f64,
    pub morph_radius: usize,
    pub min_region_area: usize,
    pub overlap_threshold: f64,
    pub split_ratios: (u32, u32, u32),
    /// Fraction of decisive-region training groups moved to test, if any.
    pub promote_hard: Option<f64>,
    pub forgery: ForgeryConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            quotas: Quotas::default(),
            filler: "mean".into(),
            editor: "recolor".into(),
            clusters: 5,
            color_weight: 0.2,
            morph_radius: 1,
            min_region_area: 8,
            overlap_threshold: 0.8,
            split_ratios: (8, 1, 1),
            promote_hard: None,
            forgery: ForgeryConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub counts: BTreeMap<String, usize>,
    pub splits: BTreeMap<String, usize>,
    pub rejected_selected: usize,
    pub promoted_to_test: usize,
    pub failures: Vec<String>,
    pub manifest: PathBuf,
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("bad synthesis config: {e}")))
    }
}

struct Loaded {
    stem: String,
    image: Image,
    salient: Mask,
    authentic_rel: String,
}

fn mix_seed(seed: u64, kind: u64, j: u64, attempt: u64) -> u64 {
    let mut x = seed ^ kind.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ j.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ attempt.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x.wrapping_mul(0xD6E8_FEB8_6659_FD93)
}

fn mkdirs(out: &Path) -> Result<()> {
    for d in ["authentic", "manipulated", "masks", "edges"] {
        let p = out.join(d);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Writes the manipulated image, its mask and edge map; returns the record (split unset).
fn emit(out: &Path, name: &str, authentic_rel: &str, image: &Image, mask: &Mask, provenance: Provenance) -> Result<DatasetRecord> {
    let rec = DatasetRecord {
        authentic_path: authentic_rel.to_string(),
        manipulated_path: format!("manipulated/{name}.png"),
        mask_path: format!("masks/{name}.png"),
        edge_path: format!("edges/{name}.png"),
        split: Split::Train,
        provenance,
    };
    image.save(&out.join(&rec.manipulated_path))?;
    mask.save_png(&out.join(&rec.mask_path))?;
    sobel_edge_target(mask).save_png(&out.join(&rec.edge_path))?;
    Ok(rec)
}

/// Decisive region of one source: candidates, caption ranking, refinement, then the editor.
fn decisive_edit(src: &Loaded, cfg: &SynthConfig, client: &dyn CaptionClient, seed: u64) -> Result<(Image, Mask)> {
    let cands = spatial_kmeans_candidates(&src.salient, &src.image, cfg.clusters, cfg.color_weight, seed)?;
    let ranking = rank_candidates(&src.image, &src.salient, &cands, client, &SubjectFirstJudge::default())?;
    let top = &ranking.ranked[0];
    let refined = morph_refine(&top.mask, cfg.morph_radius, cfg.min_region_area);
    let region = if refined.is_empty() { top.mask.clone() } else { refined };
    let reg = filler_registry();
    let mut edited = reg.get(&cfg.editor)?.fill(&src.image, &region)?;
    for (v, o) in edited.data.iter_mut().zip(&src.image.data) {
        if v != o {
            *v = crate::imaging::to_u8(*v) as f64 / 255.0;
        }
    }
    let n = src.image.h * src.image.w;
    let mask = Mask::from_fn(src.image.h, src.image.w, |y, x| {
        let i = y * src.image.w + x;
        (0..3).any(|c| edited.data[c * n + i] != src.image.data[c * n + i])
    });
    ensure(!mask.is_empty(), || "editing the decisive region changed no pixel".into())?;
    Ok((edited, mask))
}

/// Builds a dataset under `out` from the sources listed in `sources_path`.
pub fn synthesize_dataset(sources_path: &Path, out: &Path, cfg: &SynthConfig, client: &dyn CaptionClient) -> Result<SynthSummary> {
    ensure((3..=5).contains(&cfg.clusters), || format!("cluster count {} is outside 3..=5", cfg.clusters))?;
    let base = sources_path.parent().unwrap_or(Path::new("."));
    let sources = read_sources(sources_path)?;
    ensure(!sources.is_empty(), || format!("{} lists no sources", sources_path.display()))?;
    mkdirs(out)?;
    let mut summary = SynthSummary::default();
    let mut loaded = Vec::with_capacity(sources.len());
    let mut records = Vec::new();
    for (i, s) in sources.iter().enumerate() {
        let image = Image::load(&resolve(base, &s.image))?;
        let salient = Mask::load_png(&resolve(base, &s.salient_mask))?;
        ensure(image.dims() == salient.dims(), || format!("{} and its salient mask differ in size", s.image))?;
        let stem = format!("src{i:04}");
        let authentic_rel = format!("authentic/{stem}.png");
        image.save(&out.join(&authentic_rel))?;
        if let (Some(m), Some(gt)) = (&s.manipulated, &s.mask) {
            let manip = Image::load(&resolve(base, m))?;
            let gt = Mask::load_png(&resolve(base, gt))?;
            if manip.dims() == gt.dims() && saliency_overlap_filter(&gt, &salient, cfg.overlap_threshold)? {
                records.push(emit(out, &format!("selected_{stem}"), &authentic_rel, &manip, &gt, Provenance::Selected)?);
            } else {
                summary.rejected_selected += 1;
            }
        }
        loaded.push(Loaded { stem, image, salient, authentic_rel });
    }
    let fillers = filler_registry();
    let filler = fillers.get(&cfg.filler)?;
    let n = loaded.len();
    let plan = [
        (Provenance::SdriSt, cfg.quotas.sdri_st),
        (Provenance::SynthSplice, cfg.quotas.splice),
        (Provenance::SynthCopymove, cfg.quotas.copymove),
        (Provenance::SynthRemoval, cfg.quotas.removal),
    ];
    let mut cursor = 0;
    for (kind_idx, &(prov, quota)) in plan.iter().enumerate() {
        let mut made = 0;
        let mut attempt = 0;
        while made < quota {
            if attempt >= quota + 4 * n {
                return Err(Error::runtime(format!(
                    "only {made} of {quota} {} samples could be made; failures: {}",
                    prov.as_str(),
                    summary.failures.join("; ")
                )));
            }
            let host = &loaded[cursor % n];
            cursor += 1;
            let seed = mix_seed(cfg.seed, kind_idx as u64, made as u64, attempt as u64);
            attempt += 1;
            let result = match prov {
                Provenance::SdriSt => decisive_edit(host, cfg, client, seed),
                _ => {
                    let donor = (prov == Provenance::SynthSplice).then(|| {
                        let d = &loaded[(attempt % n + 1 + made % n.max(2)) % n];
                        Source { image: &d.image, mask: &d.salient }
                    });
                    if prov == Provenance::SynthSplice && n < 2 {
                        Err(Error::validation("splice needs at least two sources"))
                    } else {
                        let kind = match prov {
                            Provenance::SynthSplice => "splice",
                            Provenance::SynthCopymove => "copymove",
                            _ => "removal",
                        };
                        let req = ForgeryRequest {
                            host: Source { image: &host.image, mask: &host.salient },
                            donor,
                            filler,
                            config: &cfg.forgery,
                        };
                        synth_forgery(kind, &req, seed).map(|f| (f.image, f.mask))
                    }
                }
            };
            match result {
                Ok((image, mask)) => {
                    let name = format!("{}_{made:05}_{}", prov.as_str(), host.stem);
                    records.push(emit(out, &name, &host.authentic_rel, &image, &mask, prov)?);
                    made += 1;
                }
                Err(e @ Error::Validation(_)) if prov == Provenance::SynthSplice && n < 2 => return Err(e),
                Err(e) => summary.failures.push(format!("{} from {}: {e}", prov.as_str(), host.stem)),
            }
        }
    }
    assign_splits(&mut records, cfg.split_ratios, cfg.seed)?;
    if let Some(f) = cfg.promote_hard {
        summary.promoted_to_test = promote_hard(&mut records, f, cfg.seed)?;
    }
    for r in &records {
        *summary.counts.entry(r.provenance.as_str().to_string()).or_default() += 1;
        *summary.splits.entry(r.split.to_string()).or_default() += 1;
    }
    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    let summary_path = out.join("summary.json");
    summary.manifest = manifest;
    let text = serde_json::to_string_pretty(&summary).map_err(|source| Error::Json { what: "summary".into(), source })?;
    std::fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    Ok(summary)
}
