//! Sessions tying Euclidean layers and a chord to a trained model: render,
//! reduce, encode, reconstruct, and measure how far the model moved the
//! melody.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{compute_attributes, AttributeVector};
use crate::euclid::{EuclideanSpec, RhythmError};
use crate::score::{
    detokenize, reduce_monophonic, render_polyrhythm, tokenize, Layer, PianoRoll, ScoreError, TokenSequence,
    C_MINOR, MAX_PITCH, MIN_PITCH,
};
use crate::vae::{contrast, decode, encode, LatentVector, Model, VaeError};

/// Cycle lengths above this are rejected; a measure has 16 steps.
pub const MAX_LAYER_STEPS: u32 = 256;
pub const MAX_LENGTH_MEASURES: u32 = 64;
/// Upper bound on the (i, j, k) combinations one sweep may evaluate.
pub const MAX_SWEEP_COMBINATIONS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Rhythm(#[from] RhythmError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("{layers} layers but only {tones} chord tones")]
    NotEnoughChordTones { layers: usize, tones: usize },
    #[error("layer cycle of {0} steps exceeds the limit of {MAX_LAYER_STEPS}")]
    TooManySteps(u32),
    #[error("length must be between 1 and {MAX_LENGTH_MEASURES} measures, got {0}")]
    BadLength(u32),
    #[error("layer index {index} out of range for {layers} layers")]
    BadLayerIndex { index: usize, layers: usize },
    #[error("sweep covers {0} combinations, limit is {MAX_SWEEP_COMBINATIONS}")]
    SweepTooLarge(usize),
    #[error("range {start}..={end} is empty")]
    EmptyRange { start: i64, end: i64 },
}

/// Content hash naming a persisted artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub kind: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    pub action: String,
    pub artifacts: Vec<ArtifactRef>,
}

/// Canonical JSON of an artifact and the SHA-256 hex digest naming it.
pub fn artifact_bytes<T: Serialize>(value: &T) -> (String, Vec<u8>) {
    let bytes = serde_json::to_vec(value).expect("artifacts serialize");
    (hex::encode(Sha256::digest(&bytes)), bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub model_id: String,
    /// Layer `n` plays `chord[n]`.
    pub layers: Vec<EuclideanSpec>,
    pub chord: Vec<u8>,
    pub length_measures: u32,
    pub history: Vec<HistoryEntry>,
}

impl Session {
    /// No layers, C minor chord, one measure.
    pub fn new(id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Session {
            id: id.into(),
            model_id: model_id.into(),
            layers: Vec::new(),
            chord: C_MINOR.to_vec(),
            length_measures: 1,
            history: Vec::new(),
        }
    }

    pub fn set_layers(&mut self, layers: Vec<EuclideanSpec>) -> Result<(), WorkflowError> {
        check_state(&layers, &self.chord, self.length_measures)?;
        self.layers = layers;
        Ok(())
    }

    pub fn set_chord(&mut self, chord: Vec<u8>) -> Result<(), WorkflowError> {
        check_state(&self.layers, &chord, self.length_measures)?;
        self.chord = chord;
        Ok(())
    }

    pub fn set_length(&mut self, length_measures: u32) -> Result<(), WorkflowError> {
        check_state(&self.layers, &self.chord, length_measures)?;
        self.length_measures = length_measures;
        Ok(())
    }

    /// Checks the invariants of a session read back from storage.
    pub fn validate(&self) -> Result<(), WorkflowError> {
        check_state(&self.layers, &self.chord, self.length_measures)
    }

    pub fn voiced_layers(&self) -> Result<Vec<Layer>, WorkflowError> {
        voice(&self.layers, &self.chord)
    }

    pub fn record(&mut self, action: impl Into<String>, artifacts: Vec<ArtifactRef>) {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        self.history.push(HistoryEntry { timestamp_ms, action: action.into(), artifacts });
    }
}

fn check_state(layers: &[EuclideanSpec], chord: &[u8], length_measures: u32) -> Result<(), WorkflowError> {
    if !(1..=MAX_LENGTH_MEASURES).contains(&length_measures) {
        return Err(WorkflowError::BadLength(length_measures));
    }
    voice(layers, chord).map(|_| ())
}

fn voice(layers: &[EuclideanSpec], chord: &[u8]) -> Result<Vec<Layer>, WorkflowError> {
    if let Some(&p) = chord.iter().find(|p| !(MIN_PITCH..=MAX_PITCH).contains(*p)) {
        return Err(ScoreError::PitchOutOfRange(p).into());
    }
    if layers.len() > chord.len() {
        return Err(WorkflowError::NotEnoughChordTones { layers: layers.len(), tones: chord.len() });
    }
    layers
        .iter()
        .zip(chord)
        .map(|(spec, &pitch)| {
            if spec.steps > MAX_LAYER_STEPS {
                return Err(WorkflowError::TooManySteps(spec.steps));
            }
            Ok(Layer::new(*spec, pitch)?)
        })
        .collect()
}

/// Fraction of the 48 ticks whose tokens differ.
pub fn divergence(a: &TokenSequence, b: &TokenSequence) -> f64 {
    let differing = a.tokens().iter().zip(b.tokens()).filter(|(x, y)| x != y).count();
    differing as f64 / a.tokens().len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub measure_index: u32,
    pub roll: PianoRoll,
    pub mono_roll: PianoRoll,
    pub tokens: TokenSequence,
    pub mu: LatentVector,
    pub logvar: LatentVector,
    pub reconstruction: TokenSequence,
    pub divergence: f64,
    pub attributes: AttributeVector,
}

impl PipelineOutput {
    /// `mu` at the model's regularised dimensions.
    pub fn regularised_activations(&self, model: &Model) -> Vec<f64> {
        model.config.regularised_dims.iter().map(|&d| self.mu.0[d]).collect()
    }
}

fn pipeline_for(layers: &[Layer], length_measures: u32, model: &Model, measure_index: u32) -> Result<PipelineOutput, WorkflowError> {
    let roll = render_polyrhythm(layers, length_measures)?;
    let mono_roll = reduce_monophonic(&roll);
    let tokens = tokenize(&mono_roll, measure_index)?;
    let (mu, logvar) = encode(&model.params, &tokens);
    let (reconstruction, _) = decode(&model.params, &mu)?;
    Ok(PipelineOutput {
        measure_index,
        divergence: divergence(&tokens, &reconstruction),
        attributes: compute_attributes(&tokens),
        roll,
        mono_roll,
        tokens,
        mu,
        logvar,
        reconstruction,
    })
}

/// The pipeline without touching history.
pub fn compute_pipeline(session: &Session, model: &Model, measure_index: u32) -> Result<PipelineOutput, WorkflowError> {
    pipeline_for(&session.voiced_layers()?, session.length_measures, model, measure_index)
}

/// Render → monophonic reduction → tokenize → encode → decode(mu) →
/// divergence, recorded in the session history.
pub fn run_pipeline(session: &mut Session, model: &Model, measure_index: u32) -> Result<PipelineOutput, WorkflowError> {
    let output = compute_pipeline(session, model, measure_index)?;
    session.record(
        "pipeline",
        vec![
            ArtifactRef { kind: "tokens".into(), hash: artifact_bytes(&output.tokens).0 },
            ArtifactRef { kind: "reconstruction".into(), hash: artifact_bytes(&output.reconstruction).0 },
        ],
    );
    Ok(output)
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRange {
    pub start: i64,
    pub end: i64,
}

impl SweepRange {
    pub fn single(value: i64) -> Self {
        SweepRange { start: value, end: value }
    }

    fn len(&self) -> Result<usize, WorkflowError> {
        if self.end < self.start {
            return Err(WorkflowError::EmptyRange { start: self.start, end: self.end });
        }
        Ok((self.end - self.start) as usize + 1)
    }
}

/// Ranges for pulses (i), steps (j) and rotation (k). A missing range keeps
/// the layer's current value. A missing k range with a j range present
/// sweeps every rotation `0..j` of each j.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRanges {
    pub pulses: Option<SweepRange>,
    pub steps: Option<SweepRange>,
    pub rotation: Option<SweepRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: EuclideanSpec,
    pub melody: TokenSequence,
    pub reconstruction: TokenSequence,
    pub divergence: f64,
    pub regularised_activations: Vec<f64>,
    /// Euclidean distance between `mu` of the melody and of its reconstruction.
    pub latent_distance: f64,
    /// Sum of absolute attribute differences between melody and reconstruction.
    pub attribute_delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub results: Vec<SweepResult>,
    /// One note per skipped combination.
    pub skipped: Vec<String>,
}

fn combinations(current: EuclideanSpec, ranges: &SweepRanges) -> Result<Vec<(i64, i64, i64)>, WorkflowError> {
    let pulses = ranges.pulses.unwrap_or(SweepRange::single(current.pulses as i64));
    let steps = ranges.steps.unwrap_or(SweepRange::single(current.steps as i64));
    let mut count = pulses.len()?.saturating_mul(steps.len()?);
    if let Some(r) = ranges.rotation {
        count = count.saturating_mul(r.len()?);
    } else if ranges.steps.is_some() {
        count = count.saturating_mul(steps.end.max(1) as usize);
    }
    if count > MAX_SWEEP_COMBINATIONS {
        return Err(WorkflowError::SweepTooLarge(count));
    }
    let mut out = Vec::with_capacity(count);
    for i in pulses.start..=pulses.end {
        for j in steps.start..=steps.end {
            let (k_start, k_end) = match ranges.rotation {
                Some(r) => (r.start, r.end),
                None if ranges.steps.is_some() => (0, j - 1),
                None => (current.rotation, current.rotation),
            };
            for k in k_start..=k_end {
                out.push((i, j, k));
            }
        }
    }
    Ok(out)
}

fn sweep_spec(i: i64, j: i64, k: i64) -> Result<EuclideanSpec, String> {
    let pulses = u32::try_from(i).map_err(|_| format!("E({i},{j},{k}): negative pulse count"))?;
    let steps = u32::try_from(j).map_err(|_| format!("E({i},{j},{k}): negative step count"))?;
    if steps > MAX_LAYER_STEPS {
        return Err(format!("E({i},{j},{k}): more than {MAX_LAYER_STEPS} steps"));
    }
    EuclideanSpec::new(pulses, steps, k).map_err(|e| format!("E({i},{j},{k}): {e}"))
}

/// Substitutes every valid (i, j, k) into the chosen layer, runs the
/// pipeline on each and returns results by ascending divergence, ties by
/// (i, j, k). Invalid combinations are skipped with a note. The session's
/// layers are left as they were; one history entry records the sweep.
pub fn sweep(
    session: &mut Session,
    model: &Model,
    layer_index: usize,
    ranges: &SweepRanges,
    measure_index: u32,
) -> Result<SweepOutcome, WorkflowError> {
    let Some(&current) = session.layers.get(layer_index) else {
        return Err(WorkflowError::BadLayerIndex { index: layer_index, layers: session.layers.len() });
    };
    let mut layers = session.voiced_layers()?;
    let mut outcome = SweepOutcome::default();
    // a bad measure index fails even when every combination is skipped
    tokenize(&PianoRoll::empty(session.length_measures)?, measure_index)?;

    for (i, j, k) in combinations(current, ranges)? {
        let spec = match sweep_spec(i, j, k) {
            Ok(spec) => spec,
            Err(note) => {
                outcome.skipped.push(note);
                continue;
            }
        };
        layers[layer_index].spec = spec;
        let out = pipeline_for(&layers, session.length_measures, model, measure_index)?;
        let (rec_mu, _) = encode(&model.params, &out.reconstruction);
        let latent_distance = out.mu.0.iter().zip(&rec_mu.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let rec_attrs = compute_attributes(&out.reconstruction);
        let attribute_delta = out
            .attributes
            .as_array()
            .iter()
            .zip(rec_attrs.as_array())
            .map(|(a, b)| (a - b).abs())
            .sum();
        outcome.results.push(SweepResult {
            spec,
            regularised_activations: out.regularised_activations(model),
            divergence: out.divergence,
            melody: out.tokens,
            reconstruction: out.reconstruction,
            latent_distance,
            attribute_delta,
        });
    }
    outcome
        .results
        .sort_by(|a, b| a.divergence.total_cmp(&b.divergence).then(a.spec.cmp(&b.spec)));
    let (hash, _) = artifact_bytes(&outcome);
    session.record("sweep", vec![ArtifactRef { kind: "sweep".into(), hash }]);
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEdit {
    pub tokens: TokenSequence,
    pub roll: PianoRoll,
    pub attributes: AttributeVector,
}

/// Decodes `mu` moved by `delta_z` along `dim`, as a playable one-measure roll.
pub fn apply_latent_edit(
    session: &mut Session,
    model: &Model,
    mu: &LatentVector,
    dim: usize,
    delta_z: f64,
) -> Result<LatentEdit, WorkflowError> {
    let expected = model.config.latent_dim;
    if mu.dim() != expected {
        return Err(VaeError::LatentShape { expected, got: mu.dim() }.into());
    }
    let report = contrast(&model.params, mu, dim, delta_z)?;
    let edit = LatentEdit {
        roll: detokenize(&report.tokens_after),
        attributes: report.attributes_after,
        tokens: report.tokens_after,
    };
    session.record(
        "latent_edit",
        vec![ArtifactRef { kind: "tokens".into(), hash: artifact_bytes(&edit.tokens).0 }],
    );
    Ok(edit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Token;
    use crate::vae::{init_params, ModelConfig, ModelParams, TrainingConfig};

    fn model(zero: bool) -> Model {
        let config = ModelConfig { encoder_hidden: 8, decoder_hidden: 8, ..ModelConfig::default() };
        let params = if zero { ModelParams::zeros(&config) } else { init_params(&config).unwrap() };
        Model { config, training: TrainingConfig::default(), params, corpus_fingerprint: [0; 32] }
    }

    fn spec(i: u32, j: u32, k: i64) -> EuclideanSpec {
        EuclideanSpec::new(i, j, k).unwrap()
    }

    fn three_layers() -> Session {
        let mut s = Session::new("s", "m");
        s.set_layers(vec![spec(3, 7, 2), spec(4, 16, 0), spec(2, 5, 2)]).unwrap();
        s
    }

    #[test]
    fn divergence_counts() {
        let rest = TokenSequence::rests();
        assert_eq!(divergence(&rest, &rest), 0.0);
        let mut tokens = vec![Token::Note(60)];
        tokens.extend(vec![Token::Hold; 47]);
        assert_eq!(divergence(&rest, &TokenSequence::new(tokens.clone()).unwrap()), 1.0);
        for t in tokens.iter_mut().skip(24) {
            *t = Token::Rest;
        }
        assert_eq!(divergence(&rest, &TokenSequence::new(tokens).unwrap()), 0.5);
    }

    #[test]
    fn layer_chord_mapping_is_checked() {
        let mut s = Session::new("s", "m");
        let four = vec![spec(1, 4, 0); 4];
        assert_eq!(
            s.set_layers(four),
            Err(WorkflowError::NotEnoughChordTones { layers: 4, tones: 3 })
        );
        s.set_layers(vec![spec(1, 4, 0); 3]).unwrap();
        assert!(s.set_chord(vec![48, 51]).is_err());
        assert!(s.set_chord(vec![48, 51, 120]).is_err());
        assert!(s.set_length(0).is_err());
        assert_eq!(s.set_layers(vec![spec(1, 1000, 0)]), Err(WorkflowError::TooManySteps(1000)));
        assert_eq!(s.layers.len(), 3);
    }

    #[test]
    fn three_layer_onsets() {
        let mut s = three_layers();
        let out = run_pipeline(&mut s, &model(false), 0).unwrap();
        let steps: Vec<usize> = out.tokens.onsets().map(|(t, _)| t / 3).collect();
        assert_eq!(steps, vec![0, 2, 4, 6, 7, 8, 9, 11, 12, 13, 14]);
        assert_eq!(s.history.len(), 1);
        assert!(out.mono_roll.notes().windows(2).all(|w| w[0].end() == w[1].onset));
    }

    #[test]
    fn empty_session_yields_rests() {
        let mut s = Session::new("s", "m");
        let out = run_pipeline(&mut s, &model(true), 0).unwrap();
        assert_eq!(out.tokens, TokenSequence::rests());
        assert_eq!(out.reconstruction, TokenSequence::rests());
        assert_eq!(out.divergence, 0.0);
    }

    #[test]
    fn pipeline_is_repeatable_and_checks_measure() {
        let s = three_layers();
        let m = model(false);
        assert_eq!(compute_pipeline(&s, &m, 0).unwrap(), compute_pipeline(&s, &m, 0).unwrap());
        assert!(matches!(
            compute_pipeline(&s, &m, 1),
            Err(WorkflowError::Score(ScoreError::MeasureOutOfRange { .. }))
        ));
    }

    #[test]
    fn rotation_sweep() {
        let mut s = three_layers();
        let before = s.clone();
        let ranges = SweepRanges { rotation: Some(SweepRange { start: 0, end: 4 }), ..Default::default() };
        let out = sweep(&mut s, &model(false), 2, &ranges, 0).unwrap();
        assert_eq!(out.results.len(), 5);
        assert!(out.results.windows(2).all(|w| w[0].divergence <= w[1].divergence));
        assert!(out.results.iter().all(|r| (0.0..=1.0).contains(&r.divergence)));
        assert_eq!(s.layers, before.layers);
        assert_eq!(s.history.len(), 1);
    }

    #[test]
    fn sweep_skips_invalid_combinations() {
        let mut s = three_layers();
        let ranges = SweepRanges {
            pulses: Some(SweepRange { start: 3, end: 6 }),
            steps: Some(SweepRange::single(5)),
            rotation: Some(SweepRange::single(0)),
        };
        let out = sweep(&mut s, &model(false), 0, &ranges, 0).unwrap();
        assert_eq!(out.results.len(), 3);
        assert_eq!(out.skipped.len(), 1);
        let too_big = SweepRanges { steps: Some(SweepRange { start: 1, end: 200 }), ..Default::default() };
        assert!(matches!(sweep(&mut s, &model(false), 0, &too_big, 0), Err(WorkflowError::SweepTooLarge(_))));
        assert!(matches!(
            sweep(&mut s, &model(false), 7, &SweepRanges::default(), 0),
            Err(WorkflowError::BadLayerIndex { .. })
        ));
    }

    #[test]
    fn steps_sweep_defaults_to_every_rotation() {
        let current = spec(2, 5, 2);
        let ranges = SweepRanges { steps: Some(SweepRange { start: 4, end: 5 }), ..Default::default() };
        let combos = combinations(current, &ranges).unwrap();
        assert_eq!(combos.len(), 4 + 5);
    }

    #[test]
    fn latent_edit_records_history() {
        let mut s = three_layers();
        let m = model(false);
        let out = compute_pipeline(&s, &m, 0).unwrap();
        let edit = apply_latent_edit(&mut s, &m, &out.mu, 0, 0.0).unwrap();
        assert_eq!(edit.tokens, decode(&m.params, &out.mu).unwrap().0);
        assert_eq!(edit.attributes, compute_attributes(&edit.tokens));
        assert_eq!(s.history.len(), 1);
        apply_latent_edit(&mut s, &m, &out.mu, 3, 1.5).unwrap();
        assert_eq!(s.history.len(), 2);
    }

    #[test]
    fn artifact_hash_is_content_address() {
        let (a, bytes) = artifact_bytes(&TokenSequence::rests());
        assert_eq!(a, hex::encode(Sha256::digest(&bytes)));
        assert_ne!(a, artifact_bytes(&TokenSequence::from_ids(&[2; 48]).unwrap()).0);
    }
}
