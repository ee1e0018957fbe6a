//! Pipeline configuration file (TOML).
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected. `--set section.key=value` overrides are applied
//! to the parsed document before validation; the value is read as a TOML
//! literal, falling back to a plain string.

use std::path::Path;

use derivdoa::fusion::FusionConfig;
use derivdoa::geometry::{ArrayGeometry, Vec3, DEFAULT_SPEED_OF_SOUND, DEFAULT_TETRA_RADIUS};
use derivdoa::labels::{DEFAULT_GAP_FRAMES, STATIC_THRESHOLD_DEG};
use derivdoa::metrics::{Aggregation, EvalConfig, DEFAULT_THRESHOLD_DEG};
use derivdoa::predictor::{NoiseScaling, OracleConfig, TrainConfig};
use derivdoa::salsa::FeatureConfig;
use derivdoa::scene::{
    RandomSceneParams, SignalKind, DEFAULT_CLASS_COUNT, DEFAULT_LABEL_HOP_S, DEFAULT_SAMPLE_RATE,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed; per-recording seeds are derived from it.
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub scene: SceneConfig,
    pub labels: LabelConfig,
    pub features: FeatureConfig,
    pub predictor: PredictorConfig,
    pub regressor: RegressorConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub fusion: FusionConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    /// Radius of the default tetrahedral array, meters.
    pub radius: f64,
    pub speed_of_sound: f64,
    pub reference_index: usize,
    /// Explicit microphone positions; replaces the tetrahedral array.
    pub mic_positions: Option<Vec<[f64; 3]>>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_TETRA_RADIUS,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            reference_index: 0,
            mic_positions: None,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> derivdoa::Result<ArrayGeometry> {
        match &self.mic_positions {
            Some(p) => ArrayGeometry::new(
                p.iter().map(|&a| Vec3::from_array(a)).collect(),
                self.reference_index,
                self.speed_of_sound,
            ),
            None => ArrayGeometry::tetrahedral(self.radius, self.speed_of_sound),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalChoice {
    Mixed,
    WhiteNoise,
    ToneSweep,
    FilteredNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub recordings: usize,
    pub duration_frames: usize,
    pub label_frame_hop_s: f64,
    pub sample_rate: u32,
    pub class_count: usize,
    pub max_sources: usize,
    pub moving_probability: f64,
    pub min_event_frames: usize,
    pub max_event_frames: usize,
    pub min_speed_deg_per_frame: f64,
    pub max_speed_deg_per_frame: f64,
    pub signal: SignalChoice,
    /// Injected white-noise SNR in dB; absent for clean recordings.
    pub snr_db: Option<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let r = RandomSceneParams::default();
        Self {
            recordings: 4,
            duration_frames: r.duration_frames,
            label_frame_hop_s: DEFAULT_LABEL_HOP_S,
            sample_rate: DEFAULT_SAMPLE_RATE,
            class_count: DEFAULT_CLASS_COUNT,
            max_sources: r.max_sources,
            moving_probability: r.moving_probability,
            min_event_frames: r.min_event_frames,
            max_event_frames: r.max_event_frames,
            min_speed_deg_per_frame: r.speed_deg_per_frame.0,
            max_speed_deg_per_frame: r.speed_deg_per_frame.1,
            signal: SignalChoice::Mixed,
            snr_db: None,
        }
    }
}

impl SceneConfig {
    pub fn random_params(&self) -> RandomSceneParams {
        RandomSceneParams {
            duration_frames: self.duration_frames,
            class_count: self.class_count,
            max_sources: self.max_sources,
            moving_probability: self.moving_probability,
            min_event_frames: self.min_event_frames,
            max_event_frames: self.max_event_frames,
            speed_deg_per_frame: (self.min_speed_deg_per_frame, self.max_speed_deg_per_frame),
            signal: match self.signal {
                SignalChoice::Mixed => None,
                SignalChoice::WhiteNoise => Some(SignalKind::WhiteNoise),
                SignalChoice::ToneSweep => Some(SignalKind::ToneSweep),
                SignalChoice::FilteredNoise => Some(SignalKind::FilteredNoise),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub gap_frames: usize,
    pub static_threshold_deg: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            gap_frames: DEFAULT_GAP_FRAMES,
            static_threshold_deg: STATIC_THRESHOLD_DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Oracle,
    Regressor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    /// Grow oracle noise with the injected scene noise.
    pub scale_with_snr: bool,
    pub oracle: OracleConfig,
    pub snr_scaling: NoiseScaling,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Oracle,
            scale_with_snr: true,
            oracle: OracleConfig::default(),
            snr_scaling: NoiseScaling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub state: usize,
    pub init_seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden1: 32,
            hidden2: 32,
            state: 32,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Last recordings (in file-name order) held out for model selection.
    pub validation_recordings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Pooled,
    PerRecordingMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub threshold_deg: f64,
    pub aggregation: AggregationMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            threshold_deg: DEFAULT_THRESHOLD_DEG,
            aggregation: AggregationMode::Pooled,
        }
    }
}

impl PipelineConfig {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            threshold_deg: self.metrics.threshold_deg,
            gap_frames: self.labels.gap_frames,
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        match self.metrics.aggregation {
            AggregationMode::Pooled => Aggregation::Pooled,
            AggregationMode::PerRecordingMean => Aggregation::PerRecordingMean,
        }
    }

    /// Loads `path` (or the defaults) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: &str| Err(CliError::Config(format!("`{key}`: {why}")));
        if let Err(e) = self.geometry.build() {
            return bad("geometry", &e.to_string());
        }
        if let Err(e) = self.predictor.oracle.validate() {
            return bad("predictor.oracle", &e.to_string());
        }
        if let Err(e) = self.fusion.validate() {
            return bad("fusion", &e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad("train", &e.to_string());
        }
        if self.scene.recordings == 0 {
            return bad("scene.recordings", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.scene.moving_probability) {
            return bad("scene.moving_probability", "must be in [0, 1]");
        }
        if self.scene.min_speed_deg_per_frame > self.scene.max_speed_deg_per_frame {
            return bad("scene.min_speed_deg_per_frame", "exceeds the maximum speed");
        }
        if let Some(s) = self.scene.snr_db {
            if !s.is_finite() {
                return bad("scene.snr_db", "must be finite");
            }
        }
        if self.labels.gap_frames == 0 {
            return bad("labels.gap_frames", "must be positive");
        }
        if !(self.metrics.threshold_deg > 0.0 && self.metrics.threshold_deg <= 180.0) {
            return bad("metrics.threshold_deg", "must be in (0, 180]");
        }
        if self.features.window_size < 2 || self.features.hop_size == 0 {
            return bad("features", "window_size must be >= 2 and hop_size > 0");
        }
        let r = &self.regressor;
        if r.hidden1 == 0 || r.hidden2 == 0 || r.state == 0 {
            return bad("regressor", "layer sizes must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}`: {part} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            PipelineConfig::parse("", &[]).unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["sed = 1", "[scene]\nrecordigns = 2", "[fusion]\nbeta = 0.1"] {
            let err = PipelineConfig::parse(text, &[]).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{err}");
        }
    }

    #[test]
    fn overrides() {
        let cfg = PipelineConfig::parse(
            "[fusion]\nalpha = 0.3",
            &[
                "fusion.alpha=1".into(),
                "scene.snr_db=-5".into(),
                "predictor.kind=regressor".into(),
                "train.epochs=3".into(),
                "train.lr_decay_last_epochs=1".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.fusion.alpha, 1.0);
        assert_eq!(cfg.scene.snr_db, Some(-5.0));
        assert_eq!(cfg.predictor.kind, PredictorKind::Regressor);
        assert_eq!(cfg.train.epochs, 3);
        assert!(PipelineConfig::parse("", &["fusion.alpha=2".into()]).is_err());
        assert!(PipelineConfig::parse("", &["fusion".into()]).is_err());
        assert!(PipelineConfig::parse("", &["seed.x=1".into()]).is_err());
    }
}
