//! Run configuration: flat key-value text with `[section]` headers, no
//! nesting. Every key has a default; unknown sections or keys are errors,
//! as are duplicate keys. `--override section.key=value` entries are
//! upserted before typed conversion.

use std::path::Path;

use crate::augment::AugSpec;
use crate::dynamics::{DynamicsConfig, ParticleInit};
use crate::error::{Error, Result};
use crate::losses::SvInput;
use crate::nn::NormKind;
use crate::optim::ExclusionRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    Centroid,
    Byol,
    Multicrop,
}

impl LossVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(LossVariant::Centroid),
            "byol" => Ok(LossVariant::Byol),
            "multicrop" => Ok(LossVariant::Multicrop),
            other => Err(Error::Config(format!(
                "unknown loss variant '{other}' (expected centroid|byol|multicrop)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossVariant::Centroid => "centroid",
            LossVariant::Byol => "byol",
            LossVariant::Multicrop => "multicrop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Lars,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lars" => Ok(OptimizerKind::Lars),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected lars|sgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKindCfg {
    Gaussian,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalProtocol {
    Knn,
    Probe,
    Both,
}

impl EvalProtocol {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(EvalProtocol::Knn),
            "probe" => Ok(EvalProtocol::Probe),
            "both" => Ok(EvalProtocol::Both),
            other => Err(Error::Config(format!(
                "unknown protocol '{other}' (expected knn|probe|both)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: String,
}

#[derive(Debug, Clone)]
pub struct DatasetSection {
    pub kind: DatasetKindCfg,
    pub num_classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub idx_train_images: String,
    pub idx_train_labels: String,
    pub idx_test_images: String,
    pub idx_test_labels: String,
}

#[derive(Debug, Clone)]
pub struct ModelSection {
    pub backbone: Option<Vec<usize>>,
    pub projector: Option<Vec<usize>>,
    pub predictor: Option<Vec<usize>>,
    /// Normalization for the projector/predictor hidden layers.
    pub norm: NormKind,
    /// Backbone hidden-layer normalization; follows `norm` when unset.
    pub backbone_norm: Option<NormKind>,
}

#[derive(Debug, Clone)]
pub struct LossSection {
    pub k: usize,
    pub lambda_s: f64,
    pub lambda_b: f64,
    pub sv_input: SvInput,
    pub variant: LossVariant,
    pub multicrop_v: usize,
}

#[derive(Debug, Clone)]
pub struct OptimSection {
    pub optimizer: OptimizerKind,
    pub base_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub exclude: ExclusionRule,
    pub trust_delta: f64,
}

#[derive(Debug, Clone)]
pub struct EmaSection {
    pub tau_base: f64,
    pub bias_correction: bool,
}

#[derive(Debug, Clone)]
pub struct TrainSection {
    pub eval_every: usize,
    pub knn_k: usize,
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone)]
pub struct SimSection {
    pub n_images: usize,
    pub k: usize,
    pub dim: usize,
    pub steps: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub tau: f64,
    pub centroid_weight: f64,
    pub lambda_s: f64,
    pub lambda_b: f64,
    pub sv_input: SvInput,
    pub init: ParticleInit,
    pub init_jitter: f64,
    pub svg: bool,
}

#[derive(Debug, Clone)]
pub struct EvalSection {
    pub protocol: EvalProtocol,
    pub knn_k: usize,
    pub knn_weighted: bool,
    pub knn_temperature: f64,
    pub probe_epochs: usize,
    pub probe_batch_size: usize,
    pub probe_lr: f64,
    pub probe_momentum: f64,
    pub probe_weight_decay: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    pub augment: AugSpec,
    pub model: ModelSection,
    pub loss: LossSection,
    pub optim: OptimSection,
    pub ema: EmaSection,
    pub train: TrainSection,
    pub sim: SimSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run: RunSection { seed: 42, out_dir: "out".into() },
            dataset: DatasetSection {
                kind: DatasetKindCfg::Gaussian,
                num_classes: 8,
                per_class: 64,
                test_per_class: 16,
                dim: 16,
                spread: 0.15,
                idx_train_images: String::new(),
                idx_train_labels: String::new(),
                idx_test_images: String::new(),
                idx_test_labels: String::new(),
            },
            augment: AugSpec::default(),
            model: ModelSection {
                backbone: None,
                projector: None,
                predictor: None,
                norm: NormKind::Batch,
                backbone_norm: None,
            },
            loss: LossSection {
                k: 4,
                lambda_s: 0.004,
                lambda_b: 0.5,
                sv_input: SvInput::RawPredictions,
                variant: LossVariant::Centroid,
                multicrop_v: 6,
            },
            optim: OptimSection {
                optimizer: OptimizerKind::Lars,
                base_lr: 0.4,
                batch_size: 64,
                weight_decay: 1e-5,
                momentum: 0.9,
                warmup_epochs: 10,
                total_epochs: 100,
                exclude: ExclusionRule::BiasAndNorm,
                trust_delta: 0.0,
            },
            ema: EmaSection { tau_base: 0.996, bias_correction: true },
            train: TrainSection { eval_every: 10, knn_k: 5, checkpoint_every: 0 },
            sim: SimSection {
                n_images: 16,
                k: 4,
                dim: 8,
                steps: 1000,
                step_size: 0.05,
                momentum: 0.9,
                tau: 0.99,
                centroid_weight: 1.0,
                lambda_s: 0.004,
                lambda_b: 0.5,
                sv_input: SvInput::RawPredictions,
                init: ParticleInit::Random,
                init_jitter: 0.0,
                svg: false,
            },
            eval: EvalSection {
                protocol: EvalProtocol::Knn,
                knn_k: 5,
                knn_weighted: false,
                knn_temperature: 0.07,
                probe_epochs: 100,
                probe_batch_size: 64,
                probe_lr: 0.5,
                probe_momentum: 0.9,
                probe_weight_decay: 0.0,
            },
        }
    }
}

/// Parse the flat section/key/value layout, preserving order and
/// rejecting malformed lines and duplicate keys.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String, String)>> {
    let mut out: Vec<(String, String, String)> = Vec::new();
    let mut section: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", lineno + 1)))?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let section = section
            .clone()
            .ok_or_else(|| Error::Config(format!("line {}: key before any [section]", lineno + 1)))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if out.iter().any(|(s, k, _)| *s == section && *k == key) {
            return Err(Error::Config(format!(
                "line {}: duplicate key {section}.{key}",
                lineno + 1
            )));
        }
        out.push((section, key, value));
    }
    Ok(out)
}

/// Upsert `section.key=value` override strings into a parsed kv list.
pub fn apply_overrides(
    kv: &mut Vec<(String, String, String)>,
    overrides: &[String],
) -> Result<()> {
    for item in overrides {
        let (path, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not section.key=value")))?;
        let section = section.trim().to_string();
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if let Some(entry) = kv.iter_mut().find(|(s, k, _)| *s == section && *k == key) {
            entry.2 = value;
        } else {
            kv.push((section, key, value));
        }
    }
    Ok(())
}

fn ctx(section: &str, key: &str) -> String {
    format!("{section}.{key}")
}

fn p_f64(section: &str, key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{}: '{v}' is not a number", ctx(section, key))))
}

fn p_usize(section: &str, key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{}: '{v}' is not a non-negative integer", ctx(section, key))))
}

fn p_u64(section: &str, key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{}: '{v}' is not a non-negative integer", ctx(section, key))))
}

fn p_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{}: '{v}' is not true|false",
            ctx(section, key)
        ))),
    }
}

fn p_widths(section: &str, key: &str, v: &str) -> Result<Option<Vec<usize>>> {
    if v.is_empty() {
        return Ok(None);
    }
    let widths: Result<Vec<usize>> = v
        .split(',')
        .map(|part| p_usize(section, key, part.trim()))
        .collect();
    Ok(Some(widths?))
}

impl RunConfig {
    pub fn from_kv(kv: &[(String, String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (section, key, value) in kv {
            cfg.set(section, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut kv = parse_kv(text)?;
        apply_overrides(&mut kv, overrides)?;
        RunConfig::from_kv(&kv)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_text(&text, overrides)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key {}", ctx(section, key)));
        match section {
            "run" => match key {
                "seed" => self.run.seed = p_u64(section, key, v)?,
                "out_dir" => self.run.out_dir = v.to_string(),
                _ => return Err(unknown()),
            },
            "dataset" => match key {
                "kind" => {
                    self.dataset.kind = match v {
                        "gaussian" => DatasetKindCfg::Gaussian,
                        "idx" => DatasetKindCfg::Idx,
                        _ => {
                            return Err(Error::Config(format!(
                                "dataset.kind: '{v}' is not gaussian|idx"
                            )))
                        }
                    }
                }
                "num_classes" => self.dataset.num_classes = p_usize(section, key, v)?,
                "per_class" => self.dataset.per_class = p_usize(section, key, v)?,
                "test_per_class" => self.dataset.test_per_class = p_usize(section, key, v)?,
                "dim" => self.dataset.dim = p_usize(section, key, v)?,
                "spread" => self.dataset.spread = p_f64(section, key, v)?,
                "idx_train_images" => self.dataset.idx_train_images = v.to_string(),
                "idx_train_labels" => self.dataset.idx_train_labels = v.to_string(),
                "idx_test_images" => self.dataset.idx_test_images = v.to_string(),
                "idx_test_labels" => self.dataset.idx_test_labels = v.to_string(),
                _ => return Err(unknown()),
            },
            "augment" => match key {
                "crop_p" => self.augment.crop_p = p_f64(section, key, v)?,
                "crop_scale_lo" => self.augment.crop_scale.0 = p_f64(section, key, v)?,
                "crop_scale_hi" => self.augment.crop_scale.1 = p_f64(section, key, v)?,
                "flip_p" => self.augment.flip_p = p_f64(section, key, v)?,
                "jitter_p" => self.augment.jitter_p = p_f64(section, key, v)?,
                "brightness" => self.augment.brightness = p_f64(section, key, v)?,
                "contrast" => self.augment.contrast = p_f64(section, key, v)?,
                "saturation" => self.augment.saturation = p_f64(section, key, v)?,
                "gray_p" => self.augment.gray_p = p_f64(section, key, v)?,
                "blur_p" => self.augment.blur_p = p_f64(section, key, v)?,
                "blur_sigma_lo" => self.augment.blur_sigma.0 = p_f64(section, key, v)?,
                "blur_sigma_hi" => self.augment.blur_sigma.1 = p_f64(section, key, v)?,
                "solarize_p" => self.augment.solarize_p = p_f64(section, key, v)?,
                "pixel_noise_sigma" => self.augment.pixel_noise_sigma = p_f64(section, key, v)?,
                "vec_noise_sigma" => self.augment.vec_noise_sigma = p_f64(section, key, v)?,
                "vec_dropout_p" => self.augment.vec_dropout_p = p_f64(section, key, v)?,
                "multicrop_low_scale_lo" => {
                    self.augment.multicrop_low_scale.0 = p_f64(section, key, v)?
                }
                "multicrop_low_scale_hi" => {
                    self.augment.multicrop_low_scale.1 = p_f64(section, key, v)?
                }
                _ => return Err(unknown()),
            },
            "model" => match key {
                "backbone" => self.model.backbone = p_widths(section, key, v)?,
                "projector" => self.model.projector = p_widths(section, key, v)?,
                "predictor" => self.model.predictor = p_widths(section, key, v)?,
                "norm" => self.model.norm = NormKind::parse(v)?,
                "backbone_norm" => self.model.backbone_norm = Some(NormKind::parse(v)?),
                _ => return Err(unknown()),
            },
            "loss" => match key {
                "k" => self.loss.k = p_usize(section, key, v)?,
                "lambda_s" => self.loss.lambda_s = p_f64(section, key, v)?,
                "lambda_b" => self.loss.lambda_b = p_f64(section, key, v)?,
                "sv_input" => self.loss.sv_input = SvInput::parse(v)?,
                "variant" => self.loss.variant = LossVariant::parse(v)?,
                "multicrop_v" => self.loss.multicrop_v = p_usize(section, key, v)?,
                _ => return Err(unknown()),
            },
            "optim" => match key {
                "optimizer" => self.optim.optimizer = OptimizerKind::parse(v)?,
                "base_lr" => self.optim.base_lr = p_f64(section, key, v)?,
                "batch_size" => self.optim.batch_size = p_usize(section, key, v)?,
                "weight_decay" => self.optim.weight_decay = p_f64(section, key, v)?,
                "momentum" => self.optim.momentum = p_f64(section, key, v)?,
                "warmup_epochs" => self.optim.warmup_epochs = p_usize(section, key, v)?,
                "total_epochs" => self.optim.total_epochs = p_usize(section, key, v)?,
                "exclude" => self.optim.exclude = ExclusionRule::parse(v)?,
                "trust_delta" => self.optim.trust_delta = p_f64(section, key, v)?,
                _ => return Err(unknown()),
            },
            "ema" => match key {
                "tau_base" => self.ema.tau_base = p_f64(section, key, v)?,
                "bias_correction" => self.ema.bias_correction = p_bool(section, key, v)?,
                _ => return Err(unknown()),
            },
            "train" => match key {
                "eval_every" => self.train.eval_every = p_usize(section, key, v)?,
                "knn_k" => self.train.knn_k = p_usize(section, key, v)?,
                "checkpoint_every" => self.train.checkpoint_every = p_usize(section, key, v)?,
                _ => return Err(unknown()),
            },
            "sim" => match key {
                "n_images" => self.sim.n_images = p_usize(section, key, v)?,
                "k" => self.sim.k = p_usize(section, key, v)?,
                "dim" => self.sim.dim = p_usize(section, key, v)?,
                "steps" => self.sim.steps = p_usize(section, key, v)?,
                "step_size" => self.sim.step_size = p_f64(section, key, v)?,
                "momentum" => self.sim.momentum = p_f64(section, key, v)?,
                "tau" => self.sim.tau = p_f64(section, key, v)?,
                "centroid_weight" => self.sim.centroid_weight = p_f64(section, key, v)?,
                "lambda_s" => self.sim.lambda_s = p_f64(section, key, v)?,
                "lambda_b" => self.sim.lambda_b = p_f64(section, key, v)?,
                "sv_input" => self.sim.sv_input = SvInput::parse(v)?,
                "init" => self.sim.init = ParticleInit::parse(v)?,
                "init_jitter" => self.sim.init_jitter = p_f64(section, key, v)?,
                "svg" => self.sim.svg = p_bool(section, key, v)?,
                _ => return Err(unknown()),
            },
            "eval" => match key {
                "protocol" => self.eval.protocol = EvalProtocol::parse(v)?,
                "knn_k" => self.eval.knn_k = p_usize(section, key, v)?,
                "knn_weighted" => self.eval.knn_weighted = p_bool(section, key, v)?,
                "knn_temperature" => self.eval.knn_temperature = p_f64(section, key, v)?,
                "probe_epochs" => self.eval.probe_epochs = p_usize(section, key, v)?,
                "probe_batch_size" => self.eval.probe_batch_size = p_usize(section, key, v)?,
                "probe_lr" => self.eval.probe_lr = p_f64(section, key, v)?,
                "probe_momentum" => self.eval.probe_momentum = p_f64(section, key, v)?,
                "probe_weight_decay" => self.eval.probe_weight_decay = p_f64(section, key, v)?,
                _ => return Err(unknown()),
            },
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    /// Cross-field validation; every module precondition that can be
    /// checked before compute starts is checked here.
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        if self.dataset.kind == DatasetKindCfg::Gaussian {
            if self.dataset.num_classes == 0 || self.dataset.per_class == 0 || self.dataset.dim == 0
            {
                return Err(Error::Config("gaussian dataset needs nonzero sizes".into()));
            }
            if !(self.dataset.spread.is_finite() && self.dataset.spread > 0.0) {
                return Err(Error::Config("dataset.spread must be > 0".into()));
            }
        } else {
            for (key, v) in [
                ("idx_train_images", &self.dataset.idx_train_images),
                ("idx_train_labels", &self.dataset.idx_train_labels),
                ("idx_test_images", &self.dataset.idx_test_images),
                ("idx_test_labels", &self.dataset.idx_test_labels),
            ] {
                if v.is_empty() {
                    return Err(Error::Config(format!("dataset.{key} required for kind=idx")));
                }
            }
        }
        if self.loss.k < 2 {
            return Err(Error::Config("loss.k must be >= 2".into()));
        }
        if self.loss.variant == LossVariant::Byol && self.loss.k != 2 {
            return Err(Error::Config("loss.variant=byol requires loss.k=2".into()));
        }
        if self.loss.lambda_s < 0.0 || !self.loss.lambda_s.is_finite() {
            return Err(Error::Config("loss.lambda_s must be finite and >= 0".into()));
        }
        if self.loss.lambda_b < 0.0 || !self.loss.lambda_b.is_finite() {
            return Err(Error::Config("loss.lambda_b must be finite and >= 0".into()));
        }
        if self.optim.batch_size < 2 {
            return Err(Error::Config("optim.batch_size must be >= 2".into()));
        }
        if !(self.optim.base_lr.is_finite() && self.optim.base_lr > 0.0) {
            return Err(Error::Config("optim.base_lr must be > 0".into()));
        }
        if self.optim.warmup_epochs > self.optim.total_epochs {
            return Err(Error::Config(
                "optim.warmup_epochs must not exceed optim.total_epochs".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ema.tau_base) {
            return Err(Error::Config("ema.tau_base must lie in [0,1]".into()));
        }
        if self.train.knn_k == 0 || self.eval.knn_k == 0 {
            return Err(Error::Config("knn_k must be >= 1".into()));
        }
        if self.eval.knn_temperature <= 0.0 {
            return Err(Error::Config("eval.knn_temperature must be > 0".into()));
        }
        self.sim_config().validate()?;
        if let Some(b) = &self.model.backbone {
            if b.len() < 2 {
                return Err(Error::Config("model.backbone needs at least two widths".into()));
            }
        }
        Ok(())
    }

    pub fn sim_config(&self) -> DynamicsConfig {
        DynamicsConfig {
            n_images: self.sim.n_images,
            k: self.sim.k,
            dim: self.sim.dim,
            steps: self.sim.steps,
            step_size: self.sim.step_size,
            momentum: self.sim.momentum,
            tau: self.sim.tau,
            centroid_weight: self.sim.centroid_weight,
            lambda_s: self.sim.lambda_s,
            lambda_b: self.sim.lambda_b,
            sv_input: self.sim.sv_input,
            init: self.sim.init,
            init_jitter: self.sim.init_jitter,
            seed: self.run.seed,
        }
    }
}
