//! Numeric configuration for models and training stages. Defaults are the
//! desk-scale settings used throughout the test suites.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_ff: usize,
    /// Width of the contrastive projection space.
    pub proj_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            d_ff: 128,
            proj_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.proj_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::Config("layer counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            momentum: 0.9,
            grad_clip: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub mask_ratio: f64,
    /// Softmax temperature of the contrastive loss.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            steps: 2000,
            batch_size: 16,
            mask_ratio: 0.15,
            temperature: 0.1,
            seed: 7,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "mask_ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub steps: usize,
    pub batch_size: usize,
    /// Dev-set scoring interval in steps; also scores at the final step.
    pub eval_every: usize,
    /// Generation length cap, counted in emitted tokens.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            steps: 800,
            batch_size: 8,
            eval_every: 100,
            max_len: 16,
            seed: 7,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "batch_size, eval_every and max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}
