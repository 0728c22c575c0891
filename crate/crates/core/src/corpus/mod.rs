//! Folk-tune corpus: ABC parsing, measure extraction, attributes and the
//! train/validation dataset.

mod abc;
mod attributes;

pub use abc::{
    measure_to_abc, measures_to_abc, parse_abc, parse_abc_bytes, tune_to_measures, AbcParse, AbcTune,
    MeasureExtraction, UnitLength,
};
pub use attributes::{compute_attributes, AttributeVector, ATTRIBUTE_NAMES, METRICAL_WEIGHTS};

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::score::{TokenSequence, MIN_PITCH, VOCAB_SIZE};

pub const MIN_DATASET_MEASURES: usize = 10;
pub const HISTOGRAM_BINS: usize = 20;
pub const MANIFEST_FORMAT: &str = "folkvae-dataset/1";

/// The bundled training corpus of 4/4 folk tunes.
pub const DESK_CORPUS: &str = include_str!("../../data/desk_corpus.abc");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("corpus is not valid UTF-8: {0}")]
    Decode(String),
    #[error("only {found} admissible measures, at least {MIN_DATASET_MEASURES} are needed")]
    TooFewMeasures { found: usize },
    #[error("dataset manifest is invalid: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedTune,
    Meter,
    Key,
    Syntax,
    Chord,
    Tuplet,
    MultiMeasureRest,
    Resolution,
    PitchRange,
    IncompleteMeasure,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = serde_json::to_value(self).ok();
        f.write_str(text.as_ref().and_then(|v| v.as_str()).unwrap_or("unknown"))
    }
}

/// A skipped tune or measure, tagged with the tune's `X:` number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub tune: Option<u32>,
    pub measure: Option<usize>,
    pub reason: RejectReason,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.tune, self.measure) {
            (Some(t), Some(m)) => write!(f, "X:{t} measure {m}: ")?,
            (Some(t), None) => write!(f, "X:{t}: ")?,
            _ => {}
        }
        write!(f, "{} ({})", self.message, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: TokenSequence,
    pub attributes: AttributeVector,
}

impl Example {
    pub fn new(tokens: TokenSequence) -> Self {
        let attributes = compute_attributes(&tokens);
        Self { tokens, attributes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
    /// Equal-width bins spanning `min..=max`.
    pub histogram: Vec<u32>,
}

impl AttributeStats {
    fn from_values(name: &str, values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (values.iter().sum::<f64>() / n).clamp(min, max);
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut histogram = vec![0u32; HISTOGRAM_BINS];
        for &v in values {
            let bin = if max > min {
                (((v - min) / (max - min)) * HISTOGRAM_BINS as f64) as usize
            } else {
                0
            };
            histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
        }
        Self { name: name.to_string(), min, max, mean, stddev: var.sqrt(), histogram }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub measure_count: usize,
    pub tunes_used: usize,
    pub attributes: Vec<AttributeStats>,
    pub rejections: BTreeMap<RejectReason, usize>,
}

/// A shuffled 90/10 split of admissible measures. Serializes to the
/// dataset manifest JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    /// Token id table: 0 = REST, 1 = HOLD, `2 + p - 48` = NOTE(p).
    pub vocabulary: BTreeMap<usize, String>,
    pub seed: u64,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub stats: DatasetStats,
    pub diagnostics: Vec<Diagnostic>,
}

fn vocabulary_table() -> BTreeMap<usize, String> {
    (0..VOCAB_SIZE)
        .map(|id| {
            let label = match id {
                0 => "REST".to_string(),
                1 => "HOLD".to_string(),
                _ => format!("NOTE({})", MIN_PITCH as usize + id - 2),
            };
            (id, label)
        })
        .collect()
}

impl Dataset {
    /// Parses ABC text and builds the dataset, keeping parse diagnostics.
    pub fn from_abc(text: &str, seed: u64) -> Result<Self, CorpusError> {
        let parsed = parse_abc(text);
        let mut dataset = build_dataset(&parsed.tunes, seed)?;
        for d in &parsed.diagnostics {
            *dataset.stats.rejections.entry(d.reason).or_default() += 1;
        }
        let mut diagnostics = parsed.diagnostics;
        diagnostics.append(&mut dataset.diagnostics);
        dataset.diagnostics = diagnostics;
        Ok(dataset)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Train then validation examples.
    pub fn all(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(self.validation.iter())
    }

    pub fn to_manifest_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("dataset serializes")
    }

    pub fn from_manifest_json(bytes: &[u8]) -> Result<Self, CorpusError> {
        let dataset: Dataset = serde_json::from_slice(bytes).map_err(|e| CorpusError::Manifest(e.to_string()))?;
        if dataset.format != MANIFEST_FORMAT {
            return Err(CorpusError::Manifest(format!("unknown format {:?}", dataset.format)));
        }
        if dataset.stats.measure_count != dataset.len() {
            return Err(CorpusError::Manifest("measure count does not match the examples".into()));
        }
        Ok(dataset)
    }

    /// SHA-256 of the manifest JSON.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_manifest_json()).into()
    }
}

/// Extracts every admissible measure, shuffles them with `seed` and
/// splits 90/10 into train and validation.
pub fn build_dataset(tunes: &[AbcTune], seed: u64) -> Result<Dataset, CorpusError> {
    let mut measures = Vec::new();
    let mut diagnostics = Vec::new();
    let mut tunes_used = 0;
    for tune in tunes {
        let mut extraction = tune_to_measures(tune);
        if !extraction.measures.is_empty() {
            tunes_used += 1;
        }
        for d in &extraction.diagnostics {
            tracing::debug!("{d}");
        }
        measures.append(&mut extraction.measures);
        diagnostics.append(&mut extraction.diagnostics);
    }
    if !diagnostics.is_empty() {
        tracing::info!(skipped = diagnostics.len(), kept = measures.len(), "corpus diagnostics");
    }
    if measures.len() < MIN_DATASET_MEASURES {
        return Err(CorpusError::TooFewMeasures { found: measures.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    measures.shuffle(&mut rng);
    let mut examples: Vec<Example> = measures.into_iter().map(Example::new).collect();
    let train_len = examples.len() * 9 / 10;
    let validation = examples.split_off(train_len);
    let train = examples;

    let mut rejections = BTreeMap::new();
    for d in &diagnostics {
        *rejections.entry(d.reason).or_default() += 1;
    }
    let all: Vec<[f64; 4]> = train.iter().chain(&validation).map(|e| e.attributes.as_array()).collect();
    let attributes = ATTRIBUTE_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let values: Vec<f64> = all.iter().map(|a| a[i]).collect();
            AttributeStats::from_values(name, &values)
        })
        .collect();

    Ok(Dataset {
        format: MANIFEST_FORMAT.to_string(),
        vocabulary: vocabulary_table(),
        seed,
        stats: DatasetStats {
            measure_count: train.len() + validation.len(),
            tunes_used,
            attributes,
            rejections,
        },
        train,
        validation,
        diagnostics,
    })
}
