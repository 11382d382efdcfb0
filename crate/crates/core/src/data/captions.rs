//! Caption clients and the caption-delta ranking of candidate regions.

use std::collections::BTreeSet;
use std::io::Read as _;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::data::kmeans::CandidateRegion;
use crate::error::{ensure, Error, Result};
use crate::imaging::{Image, Mask};

pub trait CaptionClient {
    fn caption(&self, image: &Image) -> Result<String>;
}

impl<F: Fn(&Image) -> Result<String>> CaptionClient for F {
    fn caption(&self, image: &Image) -> Result<String> {
        self(image)
    }
}

/// Deterministic offline captioner: the 8-bit pixel content is hashed and the digest
/// picks an attribute, a subject and a setting from fixed word lists.
#[derive(Clone, Debug, Default)]
pub struct StubCaptioner;

const SUBJECTS: [&str; 8] = ["dog", "cat", "car", "person", "bird", "boat", "horse", "bicycle"];
const ATTRIBUTES: [&str; 8] = ["red", "small", "old", "bright", "wet", "striped", "dark", "wooden"];
const SETTINGS: [&str; 6] = ["on the street", "in a field", "near the water", "in a room", "under a tree", "on the grass"];

impl CaptionClient for StubCaptioner {
    fn caption(&self, image: &Image) -> Result<String> {
        let bytes: Vec<u8> = image.data.iter().map(|&v| crate::imaging::to_u8(v)).collect();
        let d = Sha256::digest(&bytes);
        Ok(format!(
            "a {} {} {}",
            ATTRIBUTES[d[0] as usize % ATTRIBUTES.len()],
            SUBJECTS[d[1] as usize % SUBJECTS.len()],
            SETTINGS[d[2] as usize % SETTINGS.len()]
        ))
    }
}

/// HTTP captioner: POSTs the image as PNG and expects `{"caption": "..."}` back.
#[derive(Clone, Debug)]
pub struct HttpCaptioner {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
}

impl HttpCaptioner {
    /// Reads `SMLOC_CAPTION_ENDPOINT`, `SMLOC_CAPTION_TOKEN`, `SMLOC_CAPTION_TIMEOUT_MS`
    /// (default 10000) and `SMLOC_CAPTION_RETRIES` (default 2).
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var("SMLOC_CAPTION_ENDPOINT")
            .map_err(|_| Error::validation("SMLOC_CAPTION_ENDPOINT is not set"))?;
        let num = |key: &str, default: u64| -> Result<u64> {
            match std::env::var(key) {
                Ok(v) => v.parse().map_err(|_| Error::validation(format!("{key}='{v}' is not an integer"))),
                Err(_) => Ok(default),
            }
        };
        Ok(HttpCaptioner {
            endpoint,
            token: std::env::var("SMLOC_CAPTION_TOKEN").ok(),
            timeout: Duration::from_millis(num("SMLOC_CAPTION_TIMEOUT_MS", 10_000)?),
            retries: num("SMLOC_CAPTION_RETRIES", 2)? as u32,
        })
    }

    fn once(&self, agent: &ureq::Agent, body: &[u8]) -> Result<String> {
        let mut req = agent.post(&self.endpoint).set("Content-Type", "image/png");
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = req.send_bytes(body).map_err(|e| match e {
            ureq::Error::Transport(t) if t.kind() == ureq::ErrorKind::Io => Error::Timeout(self.timeout.as_millis() as u64),
            other => Error::runtime(format!("caption request failed: {other}")),
        })?;
        let mut text = String::new();
        resp.into_reader()
            .take(1 << 20)
            .read_to_string(&mut text)
            .map_err(|_| Error::Timeout(self.timeout.as_millis() as u64))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|source| Error::Json { what: "caption response".into(), source })?;
        v.get("caption")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::runtime("caption response has no 'caption' string"))
    }
}

impl CaptionClient for HttpCaptioner {
    fn caption(&self, image: &Image) -> Result<String> {
        let mut body = Vec::new();
        image
            .to_rgb8()?
            .write_to(&mut std::io::Cursor::new(&mut body), image::ImageFormat::Png)?;
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut last = Error::runtime("caption client made no attempt");
        for _ in 0..=self.retries {
            match self.once(&agent, &body) {
                Ok(c) => return Ok(c),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

/// Scores how much a caption changed; larger means more semantically decisive.
pub trait ScoreFn {
    fn score(&self, original: &str, masked: &str) -> f64;
}

impl<F: Fn(&str, &str) -> f64> ScoreFn for F {
    fn score(&self, original: &str, masked: &str) -> f64 {
        self(original, masked)
    }
}

/// Two-tier caption comparison: a change of subject adds `subject_weight`; the
/// remaining content words add their Jaccard distance (at most 1).
#[derive(Clone, Debug)]
pub struct SubjectFirstJudge {
    pub subject_weight: f64,
}

impl Default for SubjectFirstJudge {
    fn default() -> Self {
        SubjectFirstJudge { subject_weight: 10.0 }
    }
}

const STOPWORDS: [&str; 9] = ["a", "an", "the", "this", "that", "some", "two", "one", "its"];
const PHRASE_BREAKS: [&str; 18] = [
    "with", "in", "on", "at", "near", "under", "over", "beside", "behind", "by", "of", "and", "is", "are",
    "was", "were", "from", "into",
];

/// Content words of a caption, lowercased with punctuation removed.
pub fn content_words(caption: &str) -> Vec<String> {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// The last word of the leading noun phrase, which ends at the first preposition,
/// conjunction, copula or verb-like `-ing`/`-ed` word of five or more letters.
pub fn subject_of(caption: &str) -> Option<String> {
    let words = content_words(caption);
    let end = words
        .iter()
        .position(|w| PHRASE_BREAKS.contains(&w.as_str()) || (w.len() > 4 && (w.ends_with("ing") || w.ends_with("ed"))))
        .unwrap_or(words.len());
    words[..end].last().cloned()
}

impl ScoreFn for SubjectFirstJudge {
    fn score(&self, original: &str, masked: &str) -> f64 {
        let subject_changed = subject_of(original) != subject_of(masked);
        let a: BTreeSet<String> = content_words(original).into_iter().collect();
        let b: BTreeSet<String> = content_words(masked).into_iter().collect();
        let union = a.union(&b).count();
        let jaccard = if union == 0 { 0.0 } else { 1.0 - a.intersection(&b).count() as f64 / union as f64 };
        self.subject_weight * subject_changed as u8 as f64 + jaccard
    }
}

/// Replaces the pixels of `region` with the mean colour of the salient region.
pub fn mask_with_mean(image: &Image, salient: &Mask, region: &Mask) -> Result<Image> {
    ensure(image.dims() == salient.dims() && salient.dims() == region.dims(), || "image and masks differ in size".into())?;
    let n = salient.count().max(1) as f64;
    let mut out = image.clone();
    for c in 0..image.channels {
        let mean = image.channel(c).iter().zip(&salient.data).filter(|(_, &m)| m != 0).map(|(v, _)| v).sum::<f64>() / n;
        for (v, &m) in out.channel_mut(c).iter_mut().zip(&region.data) {
            if m != 0 {
                *v = mean;
            }
        }
    }
    Ok(out)
}

/// Ranked candidates plus how many received a score.
#[derive(Clone, Debug)]
pub struct Ranking {
    pub ranked: Vec<CandidateRegion>,
    pub scored: usize,
    pub total: usize,
}

/// Captions the original and each masked image, scores the caption change, and sorts by
/// score, highest first. Ties keep input order; candidates whose caption request failed
/// stay unscored and go last.
pub fn rank_candidates(
    image: &Image,
    salient: &Mask,
    candidates: &[CandidateRegion],
    client: &dyn CaptionClient,
    judge: &dyn ScoreFn,
) -> Result<Ranking> {
    let original = client.caption(image)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let masked = mask_with_mean(image, salient, &c.mask)?;
        let score = client.caption(&masked).ok().map(|cap| judge.score(&original, &cap));
        scored.push(CandidateRegion { score, ..c.clone() });
    }
    let n_scored = scored.iter().filter(|c| c.score.is_some()).count();
    scored.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(Ranking { ranked: scored, scored: n_scored, total: candidates.len() })
}
