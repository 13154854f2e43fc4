//! Line-oriented run configuration. One `key = value` pair per line, `#`
//! comments, every key optional with a pinned default. Unknown and
//! duplicated keys are errors so typos cannot silently fall back to
//! defaults. `to_text` emits every key in a fixed order and round-trips
//! exactly, which is what makes the resolved config file in each run
//! directory both human-readable and byte-reproducible.

use std::path::PathBuf;
use std::str::FromStr;

use qbslt::config::{ModelConfig, OptimConfig, Stage1Config, Stage2Config};
use qbslt::dataset::GeneratorConfig;
use qbslt::stage2::AblationArm;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,

    // corpus generation
    pub content_vocab: usize,
    pub distractor_vocab: usize,
    pub frame_dim: usize,
    pub min_frames_per_gesture: usize,
    pub max_frames_per_gesture: usize,
    pub frame_noise: f64,
    pub informative_rate: f64,
    pub train_count: usize,
    pub dev_count: usize,
    pub test_count: usize,

    // model
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_ff: usize,
    pub proj_dim: usize,

    // optimization
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub momentum: f64,
    pub grad_clip: f64,

    // stage 1
    pub stage1_steps: usize,
    pub stage1_batch: usize,
    pub mask_ratio: f64,
    pub temperature: f64,

    // stage 2
    pub stage2_steps: usize,
    pub stage2_batch: usize,
    pub eval_every: usize,
    pub max_len: usize,
    pub fusion: AblationArm,
    /// Train stage 2 from fresh weights instead of the stage 1 checkpoint.
    pub cold_start: bool,

    // file selection; empty strings mean "use the conventional location"
    pub stage1_checkpoint: String,
    pub checkpoint: String,
    pub eval_split: String,
    pub hyps_file: String,
    pub refs_file: String,
    pub heatmap_sample: String,

    // ablation grid
    pub ablate_arms: Vec<AblationArm>,
    pub ablate_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs"),
            content_vocab: 50,
            distractor_vocab: 50,
            frame_dim: 16,
            min_frames_per_gesture: 2,
            max_frames_per_gesture: 5,
            frame_noise: 0.4,
            informative_rate: 0.8,
            train_count: 500,
            dev_count: 50,
            test_count: 100,
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            d_ff: 128,
            proj_dim: 64,
            stage1_lr: 1e-3,
            stage2_lr: 2e-2,
            momentum: 0.9,
            grad_clip: 1.0,
            stage1_steps: 2000,
            stage1_batch: 16,
            mask_ratio: 0.15,
            temperature: 0.1,
            stage2_steps: 800,
            stage2_batch: 8,
            eval_every: 100,
            max_len: 16,
            fusion: AblationArm::Ssaw,
            cold_start: false,
            stage1_checkpoint: String::new(),
            checkpoint: String::new(),
            eval_split: "test".into(),
            hyps_file: String::new(),
            refs_file: String::new(),
            heatmap_sample: String::new(),
            ablate_arms: vec![AblationArm::Ssaw, AblationArm::Concat],
            ablate_seeds: vec![7, 8, 9],
        }
    }
}

fn parse_value<T: FromStr>(key: &str, ctx: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| {
        CliError::Config(format!("{ctx}: bad value {raw:?} for {key}: {e}"))
    })
}

fn parse_bool(key: &str, ctx: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!(
            "{ctx}: bad value {raw:?} for {key}: expected true or false"
        ))),
    }
}

fn parse_arm(key: &str, ctx: &str, raw: &str) -> Result<AblationArm> {
    raw.parse::<AblationArm>()
        .map_err(|e| CliError::Config(format!("{ctx}: bad value for {key}: {e}")))
}

impl RunConfig {
    /// Parses config text over the defaults. `source` names the input in
    /// error messages.
    pub fn parse(text: &str, source: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{source} line {line_no}: expected key = value, got {content:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(CliError::Config(format!(
                    "{source} line {line_no}: duplicate key {key}"
                )));
            }
            seen.push(key.to_string());
            cfg.set(key, value, &format!("{source} line {line_no}"))?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str, ctx: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, ctx, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "run_dir" => self.run_dir = PathBuf::from(value),
            "content_vocab" => self.content_vocab = parse_value(key, ctx, value)?,
            "distractor_vocab" => self.distractor_vocab = parse_value(key, ctx, value)?,
            "frame_dim" => self.frame_dim = parse_value(key, ctx, value)?,
            "min_frames_per_gesture" => {
                self.min_frames_per_gesture = parse_value(key, ctx, value)?
            }
            "max_frames_per_gesture" => {
                self.max_frames_per_gesture = parse_value(key, ctx, value)?
            }
            "frame_noise" => self.frame_noise = parse_value(key, ctx, value)?,
            "informative_rate" => self.informative_rate = parse_value(key, ctx, value)?,
            "train_count" => self.train_count = parse_value(key, ctx, value)?,
            "dev_count" => self.dev_count = parse_value(key, ctx, value)?,
            "test_count" => self.test_count = parse_value(key, ctx, value)?,
            "d_model" => self.d_model = parse_value(key, ctx, value)?,
            "n_heads" => self.n_heads = parse_value(key, ctx, value)?,
            "enc_layers" => self.enc_layers = parse_value(key, ctx, value)?,
            "dec_layers" => self.dec_layers = parse_value(key, ctx, value)?,
            "d_ff" => self.d_ff = parse_value(key, ctx, value)?,
            "proj_dim" => self.proj_dim = parse_value(key, ctx, value)?,
            "stage1_lr" => self.stage1_lr = parse_value(key, ctx, value)?,
            "stage2_lr" => self.stage2_lr = parse_value(key, ctx, value)?,
            "momentum" => self.momentum = parse_value(key, ctx, value)?,
            "grad_clip" => self.grad_clip = parse_value(key, ctx, value)?,
            "stage1_steps" => self.stage1_steps = parse_value(key, ctx, value)?,
            "stage1_batch" => self.stage1_batch = parse_value(key, ctx, value)?,
            "mask_ratio" => self.mask_ratio = parse_value(key, ctx, value)?,
            "temperature" => self.temperature = parse_value(key, ctx, value)?,
            "stage2_steps" => self.stage2_steps = parse_value(key, ctx, value)?,
            "stage2_batch" => self.stage2_batch = parse_value(key, ctx, value)?,
            "eval_every" => self.eval_every = parse_value(key, ctx, value)?,
            "max_len" => self.max_len = parse_value(key, ctx, value)?,
            "fusion" => self.fusion = parse_arm(key, ctx, value)?,
            "cold_start" => self.cold_start = parse_bool(key, ctx, value)?,
            "stage1_checkpoint" => self.stage1_checkpoint = value.to_string(),
            "checkpoint" => self.checkpoint = value.to_string(),
            "eval_split" => {
                if !["train", "dev", "test"].contains(&value) {
                    return Err(CliError::Config(format!(
                        "{ctx}: eval_split must be train, dev or test, got {value:?}"
                    )));
                }
                self.eval_split = value.to_string();
            }
            "hyps_file" => self.hyps_file = value.to_string(),
            "refs_file" => self.refs_file = value.to_string(),
            "heatmap_sample" => self.heatmap_sample = value.to_string(),
            "ablate_arms" => {
                let arms = value
                    .split(',')
                    .map(|s| parse_arm(key, ctx, s.trim()))
                    .collect::<Result<Vec<_>>>()?;
                if arms.is_empty() {
                    return Err(CliError::Config(format!("{ctx}: ablate_arms is empty")));
                }
                self.ablate_arms = arms;
            }
            "ablate_seeds" => {
                let seeds = value
                    .split(',')
                    .map(|s| parse_value::<u64>(key, ctx, s.trim()))
                    .collect::<Result<Vec<_>>>()?;
                if seeds.is_empty() {
                    return Err(CliError::Config(format!("{ctx}: ablate_seeds is empty")));
                }
                self.ablate_seeds = seeds;
            }
            _ => {
                return Err(CliError::Config(format!("{ctx}: unknown key {key:?}")));
            }
        }
        Ok(())
    }

    /// Every key in canonical order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let arms: Vec<&str> = self.ablate_arms.iter().map(|a| a.name()).collect();
        let seeds: Vec<String> = self.ablate_seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "# run\n\
             seed = {}\n\
             data_dir = {}\n\
             run_dir = {}\n\
             \n# corpus\n\
             content_vocab = {}\n\
             distractor_vocab = {}\n\
             frame_dim = {}\n\
             min_frames_per_gesture = {}\n\
             max_frames_per_gesture = {}\n\
             frame_noise = {}\n\
             informative_rate = {}\n\
             train_count = {}\n\
             dev_count = {}\n\
             test_count = {}\n\
             \n# model\n\
             d_model = {}\n\
             n_heads = {}\n\
             enc_layers = {}\n\
             dec_layers = {}\n\
             d_ff = {}\n\
             proj_dim = {}\n\
             \n# optimization\n\
             stage1_lr = {}\n\
             stage2_lr = {}\n\
             momentum = {}\n\
             grad_clip = {}\n\
             \n# stage 1\n\
             stage1_steps = {}\n\
             stage1_batch = {}\n\
             mask_ratio = {}\n\
             temperature = {}\n\
             \n# stage 2\n\
             stage2_steps = {}\n\
             stage2_batch = {}\n\
             eval_every = {}\n\
             max_len = {}\n\
             fusion = {}\n\
             cold_start = {}\n\
             \n# file selection\n\
             stage1_checkpoint = {}\n\
             checkpoint = {}\n\
             eval_split = {}\n\
             hyps_file = {}\n\
             refs_file = {}\n\
             heatmap_sample = {}\n\
             \n# ablation\n\
             ablate_arms = {}\n\
             ablate_seeds = {}\n",
            self.seed,
            self.data_dir.display(),
            self.run_dir.display(),
            self.content_vocab,
            self.distractor_vocab,
            self.frame_dim,
            self.min_frames_per_gesture,
            self.max_frames_per_gesture,
            self.frame_noise,
            self.informative_rate,
            self.train_count,
            self.dev_count,
            self.test_count,
            self.d_model,
            self.n_heads,
            self.enc_layers,
            self.dec_layers,
            self.d_ff,
            self.proj_dim,
            self.stage1_lr,
            self.stage2_lr,
            self.momentum,
            self.grad_clip,
            self.stage1_steps,
            self.stage1_batch,
            self.mask_ratio,
            self.temperature,
            self.stage2_steps,
            self.stage2_batch,
            self.eval_every,
            self.max_len,
            self.fusion,
            self.cold_start,
            self.stage1_checkpoint,
            self.checkpoint,
            self.eval_split,
            self.hyps_file,
            self.refs_file,
            self.heatmap_sample,
            arms.join(","),
            seeds.join(","),
        )
    }

    pub fn generator_config(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            content_vocab: self.content_vocab,
            distractor_vocab: self.distractor_vocab,
            frame_dim: self.frame_dim,
            min_frames_per_gesture: self.min_frames_per_gesture,
            max_frames_per_gesture: self.max_frames_per_gesture,
            frame_noise: self.frame_noise,
            informative_rate: self.informative_rate,
            train_count: self.train_count,
            dev_count: self.dev_count,
            test_count: self.test_count,
            seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            d_ff: self.d_ff,
            proj_dim: self.proj_dim,
        }
    }

    pub fn stage1_config(&self, seed: u64) -> Stage1Config {
        Stage1Config {
            model: self.model_config(),
            optim: OptimConfig {
                lr: self.stage1_lr,
                momentum: self.momentum,
                grad_clip: self.grad_clip,
            },
            steps: self.stage1_steps,
            batch_size: self.stage1_batch,
            mask_ratio: self.mask_ratio,
            temperature: self.temperature,
            seed,
        }
    }

    pub fn stage2_config(&self, seed: u64) -> Stage2Config {
        Stage2Config {
            model: self.model_config(),
            optim: OptimConfig {
                lr: self.stage2_lr,
                momentum: self.momentum,
                grad_clip: self.grad_clip,
            },
            steps: self.stage2_steps,
            batch_size: self.stage2_batch,
            eval_every: self.eval_every,
            max_len: self.max_len,
            seed,
        }
    }
}
