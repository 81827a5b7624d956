//! TOML run configuration with per-command sections.

use std::fs;
use std::path::{Path, PathBuf};

use endosim::losses::{GanForm, LossWeights};
use endosim::nn::{ArchitectureSpec, DiscriminatorSpec, Variant};
use endosim::render::RenderParams;
use endosim::train::TrainingConfig;
use endosim::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::Value;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub render: RenderSection,
    pub cleanse: CleanseSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub translate: TranslateSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSection {
    /// Writes the two-domain toy dataset instead of a fly-through.
    pub toy: bool,
    pub toy_count: usize,
    pub toy_size: usize,
    /// Volume header file; empty renders a phantom.
    pub volume: String,
    pub phantom: String,
    pub phantom_dims: Vec<usize>,
    pub phantom_radius: f64,
    pub fold_amplitude: f64,
    pub fold_period: f64,
    pub spacing_mm: f64,
    /// `[x, y, z, target_x, target_y, target_z]` in millimeters; empty
    /// follows the volume's z axis through its center.
    pub keyframes: Vec<Vec<f64>>,
    pub samples_per_segment: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub step_size: f64,
    pub reference_step: f64,
    pub termination: f64,
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        let rp = RenderParams::default();
        Self {
            toy: false,
            toy_count: endosim::toy::TOY_COUNT,
            toy_size: endosim::toy::TOY_SIZE,
            volume: String::new(),
            phantom: "tube".into(),
            phantom_dims: vec![48, 48, 160],
            phantom_radius: 14.0,
            fold_amplitude: 0.3,
            fold_period: 18.0,
            spacing_mm: 1.0,
            keyframes: Vec::new(),
            samples_per_segment: 10,
            width: 256,
            height: 256,
            fov_deg: 70.0,
            step_size: rp.step_size,
            reference_step: rp.reference_step,
            termination: rp.termination,
            ambient: rp.ambient,
            diffuse: rp.diffuse,
            specular: rp.specular,
            shininess: rp.shininess,
        }
    }
}

impl RenderSection {
    pub fn render_params(&self) -> RenderParams {
        RenderParams {
            step_size: self.step_size,
            reference_step: self.reference_step,
            termination: self.termination,
            ambient: self.ambient,
            diffuse: self.diffuse,
            specular: self.specular,
            shininess: self.shininess,
            ..RenderParams::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanseSection {
    /// Dataset manifest of the records to cleanse.
    pub records: String,
    /// `<id>\t<label>` exclusions; empty means none.
    pub exclusions: String,
    pub narrow_band_rule: bool,
    pub surgical_tool_rule: bool,
}

impl Default for CleanseSection {
    fn default() -> Self {
        Self {
            records: String::new(),
            exclusions: String::new(),
            narrow_band_rule: true,
            surgical_tool_rule: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Manifest of the cleansed virtual domain.
    pub virtual_manifest: String,
    /// Manifest of the cleansed real domain.
    pub real_manifest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub variant: String,
    pub base_channels: usize,
    pub input_size: usize,
    pub disc_base_channels: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::Unet.to_string(),
            base_channels: 64,
            input_size: 256,
            disc_base_channels: DiscriminatorSpec::DEFAULT_BASE,
        }
    }
}

impl ModelSection {
    pub fn variant(&self) -> Result<Variant> {
        self.variant.parse()
    }

    pub fn spec(&self) -> Result<ArchitectureSpec> {
        let spec = ArchitectureSpec::new(self.variant()?, self.base_channels, self.input_size, self.input_size);
        spec.validate()?;
        Ok(spec)
    }

    pub fn disc_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec::new(self.input_size, self.input_size).with_base(self.disc_base_channels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub fake_buffer_size: usize,
    pub checkpoint_every: u64,
    /// Checkpoint to continue from; empty starts fresh.
    pub resume: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            fake_buffer_size: t.fake_buffer_size,
            checkpoint_every: t.checkpoint_every,
            resume: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSection {
    pub lambda_cyc: f64,
    pub epsilon_log: f64,
    pub gan_form: String,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_cyc: w.lambda_cyc,
            epsilon_log: w.epsilon_log,
            gan_form: w.gan_form.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslateSection {
    pub checkpoint: String,
    /// Manifest of images to translate.
    pub input: String,
    /// `G` (virtual to real) or `F` (real to virtual).
    pub direction: String,
}

impl Default for TranslateSection {
    fn default() -> Self {
        Self {
            checkpoint: String::new(),
            input: String::new(),
            direction: "G".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub checkpoint: String,
    /// Virtual-domain manifest to translate.
    pub input: String,
    /// Real-domain manifest used as the reference distribution.
    pub reference: String,
    pub bins: usize,
    /// Ordered frame manifest for temporal smoothness; empty renders a toy
    /// fly-through of `sequence_frames` frames.
    pub sequence: String,
    pub sequence_frames: usize,
    pub grid_rows: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoint: String::new(),
            input: String::new(),
            reference: String::new(),
            bins: endosim::eval::DEFAULT_BINS,
            sequence: String::new(),
            sequence_frames: 10,
            grid_rows: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub variants: Vec<String>,
    pub runs: usize,
    pub size: usize,
    pub base_channels: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.iter().map(|v| v.to_string()).collect(),
            runs: endosim::eval::MIN_TIMED_RUNS,
            size: 256,
            base_channels: 64,
        }
    }
}

impl RunConfig {
    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            fake_buffer_size: self.train.fake_buffer_size,
            checkpoint_every: self.train.checkpoint_every,
            seed: self.seed,
        }
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        Ok(LossWeights {
            lambda_cyc: self.loss.lambda_cyc,
            epsilon_log: self.loss.epsilon_log,
            gan_form: self.loss.gan_form.parse::<GanForm>()?,
        })
    }

    /// Value checks across all sections, every problem reported together.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, key: &str| {
            if !ok {
                bad.push(key.to_string());
            }
        };
        check(self.model.variant().is_ok(), "model.variant");
        check(self.model.base_channels > 0, "model.base_channels");
        check(self.model.input_size > 0, "model.input_size");
        check(self.model.disc_base_channels > 0, "model.disc_base_channels");
        check(self.train.epochs >= 1, "train.epochs");
        check(self.train.batch_size >= 1, "train.batch_size");
        check(self.train.learning_rate >= 0.0 && self.train.learning_rate.is_finite(), "train.learning_rate");
        check((0.0..1.0).contains(&self.train.beta1), "train.beta1");
        check((0.0..1.0).contains(&self.train.beta2), "train.beta2");
        check(self.loss.lambda_cyc >= 0.0 && self.loss.lambda_cyc.is_finite(), "loss.lambda_cyc");
        check(self.loss.epsilon_log > 0.0 && self.loss.epsilon_log <= 1e-3, "loss.epsilon_log");
        check(self.loss.gan_form.parse::<GanForm>().is_ok(), "loss.gan_form");
        check(self.render.render_params().validate().is_ok(), "render (ray-casting parameters)");
        check(self.render.samples_per_segment >= 1, "render.samples_per_segment");
        check(self.render.phantom_dims.len() == 3, "render.phantom_dims");
        check(self.render.keyframes.iter().all(|k| k.len() == 6), "render.keyframes");
        check(self.render.toy_count >= 1 && self.render.toy_size >= 32, "render.toy_count/toy_size");
        check(matches!(self.translate.direction.as_str(), "G" | "F"), "translate.direction");
        check(self.eval.bins >= 8, "eval.bins");
        check(self.eval.sequence_frames >= 2, "eval.sequence_frames");
        check(self.bench.runs >= endosim::eval::MIN_TIMED_RUNS, "bench.runs");
        check(self.bench.variants.iter().all(|v| v.parse::<Variant>().is_ok()), "bench.variants");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Param(format!("invalid values for {}", bad.join(", "))))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn same_kind(expected: &Value, got: &Value) -> bool {
    matches!(
        (expected, got),
        (Value::String(_), Value::String(_))
            | (Value::Integer(_), Value::Integer(_))
            | (Value::Float(_), Value::Float(_) | Value::Integer(_))
            | (Value::Boolean(_), Value::Boolean(_))
            | (Value::Array(_), Value::Array(_))
            | (Value::Table(_), Value::Table(_))
    )
}

/// Collects keys absent from the defaults and keys whose value type differs.
fn audit(defaults: &toml::Table, given: &toml::Table, prefix: &str, unknown: &mut Vec<String>, mistyped: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match defaults.get(k) {
            None => unknown.push(path),
            Some(Value::Table(dt)) => match v {
                Value::Table(gt) => audit(dt, gt, &path, unknown, mistyped),
                _ => mistyped.push(path),
            },
            Some(d) if !same_kind(d, v) => mistyped.push(path),
            Some(_) => {}
        }
    }
}

/// Parses a config text, reporting every unknown or mistyped key at once.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let given: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Param(format!("config syntax: {}", e.message())))?;
    let defaults = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    let (mut unknown, mut mistyped) = (Vec::new(), Vec::new());
    audit(&defaults, &given, "", &mut unknown, &mut mistyped);
    if !unknown.is_empty() {
        return Err(Error::UnknownKeys(unknown));
    }
    if !mistyped.is_empty() {
        return Err(Error::Param(format!("wrong value type for {}", mistyped.join(", "))));
    }
    given
        .try_into()
        .map_err(|e: toml::de::Error| Error::Param(format!("config: {}", e.message())))
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Load {
                path: p.to_path_buf(),
                reason: e.to_string(),
            })?;
            parse_config(&text)
        }
    }
}

/// A config path value; empty means "not set".
pub fn path_opt(s: &str) -> Option<PathBuf> {
    (!s.is_empty()).then(|| PathBuf::from(s))
}

pub fn require_path(s: &str, key: &str) -> Result<PathBuf> {
    path_opt(s).ok_or_else(|| Error::Param(format!("{key} must be set")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(parse_config("").unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = parse_config("seed = 4\n[train]\nepochs = 3\n[loss]\nlambda_cyc = 5\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainSection::default().batch_size);
        assert_eq!(cfg.loss.lambda_cyc, 5.0);
        assert_eq!(cfg.training().seed, 4);
    }

    #[test]
    fn audit_reports_every_unknown_and_mistyped_key() {
        match parse_config("bogus = 1\n[model]\nwidth = 3\n[extra]\nk = 1\n") {
            Err(Error::UnknownKeys(keys)) => assert_eq!(keys, ["bogus", "extra", "model.width"]),
            other => panic!("{other:?}"),
        }
        let err = parse_config("seed = \"x\"\n[train]\nepochs = 1.5\n[model]\nvariant = 3\n").unwrap_err().to_string();
        assert!(err.contains("train.epochs") && err.contains("seed") && err.contains("model.variant"), "{err}");
    }
}
