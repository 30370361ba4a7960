//! Shadow-length regressor trained through the height loss.
//!
//! Patches are summarized by [`extract_features`]; a one-hidden-layer network
//! maps standardized features to a shadow length in meters through a scaled
//! softplus, so predictions are never negative. Training pushes each
//! prediction through `H = S·tan σ` and scores the height ([`height_loss`]).

mod features;
mod loss;
mod mlp;
mod optim;
pub mod synthetic;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DatasetError, RasterImage};
use crate::photogrammetry::{elevation_tangent, GeometryError, ShadowLength};
use crate::scalar::Scalar;
use crate::solar::SolarPosition;

pub use features::{extract_features, FeatureVector, FEATURE_COUNT, FEATURE_SPEC};
pub use loss::{height_loss, LossKind};
pub use mlp::Mlp;
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};

pub const HIDDEN_UNITS: usize = 32;
const MODEL_FORMAT: &str = "umbra-regressor";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressorError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite in epoch {epoch}")]
    DivergenceDetected {
        epoch: usize,
        partial: Box<TrainReport>,
    },
    #[error("model was saved with feature spec {found}, this build extracts {expected}")]
    FeatureSpecMismatch { expected: String, found: String },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of samples held out for the final RMSEs.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::L1,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            holdout_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        let bad = |m: &str| Err(RegressorError::InvalidConfig(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout fraction must be in [0, 1)");
        }
        Ok(())
    }

    /// Short content hash recorded in trained models.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_string(self).expect("config serializes"))
    }
}

fn short_hash(s: &str) -> String {
    let digest = Sha256::digest(s.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn feature_spec_hash() -> String {
    short_hash(FEATURE_SPEC)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample training loss of each completed epoch.
    pub epoch_loss: Vec<f64>,
    pub height_rmse_m: f64,
    pub shadow_rmse_m: f64,
    pub n_train: usize,
    pub n_eval: usize,
    /// False when the set was too small to hold anything out and the RMSEs
    /// were computed on the training samples.
    pub evaluated_on_holdout: bool,
}

/// One training example with features already extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: FeatureVector,
    pub sun: SolarPosition,
    pub gt_height_m: f64,
    pub gt_shadow_m: f64,
}

impl TrainSample {
    pub fn from_patch(
        patch: &RasterImage,
        sun: SolarPosition,
        gt_height_m: f64,
        gt_shadow_m: f64,
    ) -> Result<Self, RegressorError> {
        Ok(Self {
            features: extract_features(patch, sun.azimuth_deg())?,
            sun,
            gt_height_m,
            gt_shadow_m,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel<T> {
    format: String,
    version: u32,
    pub feature_spec_hash: String,
    pub config_hash: Option<String>,
    pub feature_mean: Vec<T>,
    pub feature_scale: Vec<T>,
    /// Prediction is `output_scale_m · softplus(z)`.
    pub output_scale_m: T,
    pub net: Mlp<T>,
}

impl<T: Scalar> RegressorModel<T> {
    /// Identity standardization, zero output layer: predicts
    /// `output_scale_m` for every input.
    pub fn untrained(output_scale_m: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            feature_spec_hash: feature_spec_hash(),
            config_hash: None,
            feature_mean: vec![T::zero(); FEATURE_COUNT],
            feature_scale: vec![T::one(); FEATURE_COUNT],
            output_scale_m: T::lit(output_scale_m),
            net: Mlp::init(
                FEATURE_COUNT,
                HIDDEN_UNITS,
                mlp::softplus_inv(T::one()),
                &mut rng,
            ),
        }
    }

    fn standardize(&self, f: &FeatureVector) -> Vec<T> {
        f.0.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(&v, (&m, &s))| (T::lit(v) - m) / s)
            .collect()
    }

    pub fn predict_features(&self, f: &FeatureVector) -> ShadowLength<T> {
        let z = self.net.forward(&self.standardize(f)).z;
        ShadowLength::new(self.output_scale_m * mlp::softplus(z))
            .unwrap_or_else(|_| ShadowLength::zero())
    }

    pub fn predict_shadow_length(
        &self,
        patch: &RasterImage,
        sun_azimuth_deg: f64,
    ) -> Result<ShadowLength<T>, RegressorError> {
        Ok(self.predict_features(&extract_features(patch, sun_azimuth_deg)?))
    }

    pub fn to_json(&self) -> String
    where
        T: Serialize,
    {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Parse a saved model, refusing files written for another feature spec.
    pub fn from_json(text: &str) -> Result<Self, RegressorError>
    where
        T: for<'de> Deserialize<'de>,
    {
        let model: Self =
            serde_json::from_str(text).map_err(|e| RegressorError::Format(e.to_string()))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(RegressorError::Format(format!(
                "unsupported {} v{}",
                model.format, model.version
            )));
        }
        let expected = feature_spec_hash();
        if model.feature_spec_hash != expected {
            return Err(RegressorError::FeatureSpecMismatch {
                expected,
                found: model.feature_spec_hash,
            });
        }
        let n = Mlp::<T>::param_count(FEATURE_COUNT, model.net.hidden);
        if model.net.input != FEATURE_COUNT
            || model.net.params.len() != n
            || model.feature_mean.len() != FEATURE_COUNT
            || model.feature_scale.len() != FEATURE_COUNT
        {
            return Err(RegressorError::Format(
                "parameter shapes do not match".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), RegressorError>
    where
        T: Serialize,
    {
        std::fs::write(path, self.to_json()).map_err(|e| DatasetError::io(path, e).into())
    }

    pub fn load(path: &Path) -> Result<Self, RegressorError>
    where
        T: for<'de> Deserialize<'de>,
    {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RegressorError::from(DatasetError::io(path, e)))?;
        Self::from_json(&text)
    }
}

/// Seeded shuffle of `0..n` split into `(train, holdout)`.
pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((n as f64) * holdout_fraction).floor() as usize;
    let n_hold = n_hold.min(n.saturating_sub(1));
    let holdout = idx.split_off(n - n_hold);
    (idx, holdout)
}

struct Prepared<T> {
    x: Vec<T>,
    tan: T,
    height: T,
    shadow: T,
}

fn rmse_pair<T: Scalar>(model: &RegressorModel<T>, data: &[&Prepared<T>]) -> (f64, f64) {
    let (mut sh, mut ss) = (0.0, 0.0);
    for d in data {
        let z = model.net.forward(&d.x).z;
        let pred = (model.output_scale_m * mlp::softplus(z)).as_f64();
        sh += (pred * d.tan.as_f64() - d.height.as_f64()).powi(2);
        ss += (pred - d.shadow.as_f64()).powi(2);
    }
    let n = data.len() as f64;
    ((sh / n).sqrt(), (ss / n).sqrt())
}

/// Mini-batch training through the height loss, holding out
/// `holdout_fraction` of the samples for the final RMSEs. Deterministic for a
/// given `(samples, config)`.
pub fn train<T: Scalar>(
    samples: &[TrainSample],
    config: &TrainConfig,
) -> Result<(RegressorModel<T>, TrainReport), RegressorError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(RegressorError::EmptyDataset);
    }
    let (train_idx, hold_idx) = split_indices(samples.len(), config.holdout_fraction, config.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    train_with_eval(&pick(&train_idx), &pick(&hold_idx), config)
}

/// Train on `train_set`, report RMSEs on `eval_set` (or on `train_set` when
/// `eval_set` is empty). `holdout_fraction` is ignored.
pub fn train_with_eval<T: Scalar>(
    train_set: &[TrainSample],
    eval_set: &[TrainSample],
    config: &TrainConfig,
) -> Result<(RegressorModel<T>, TrainReport), RegressorError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(RegressorError::EmptyDataset);
    }

    // Standardization and output scale come from the training samples.
    let nt = train_set.len() as f64;
    let mut mean = [0.0; FEATURE_COUNT];
    let mut var = [0.0; FEATURE_COUNT];
    for s in train_set {
        for (m, v) in mean.iter_mut().zip(s.features.0) {
            *m += v / nt;
        }
    }
    for s in train_set {
        for ((acc, m), v) in var.iter_mut().zip(mean).zip(s.features.0) {
            *acc += (v - m).powi(2) / nt;
        }
    }
    let mean_shadow = train_set.iter().map(|s| s.gt_shadow_m).sum::<f64>() / nt;

    let mut model = RegressorModel::<T>::untrained(
        if mean_shadow > 0.0 { mean_shadow } else { 1.0 },
        config.seed,
    );
    model.config_hash = Some(config.hash());
    model.feature_mean = mean.iter().map(|&m| T::lit(m)).collect();
    model.feature_scale = var
        .iter()
        .map(|&v| T::lit(if v > 1e-12 { v.sqrt() } else { 1.0 }))
        .collect();

    let prepare = |set: &[TrainSample]| {
        set.iter()
            .map(|s| {
                Ok(Prepared {
                    x: model.standardize(&s.features),
                    tan: elevation_tangent::<T>(&s.sun)?,
                    height: T::lit(s.gt_height_m),
                    shadow: T::lit(s.gt_shadow_m),
                })
            })
            .collect::<Result<Vec<_>, GeometryError>>()
    };
    let prepared = prepare(train_set)?;
    let held_out = prepare(eval_set)?;
    let evaluated_on_holdout = !held_out.is_empty();
    let eval_refs: Vec<&Prepared<T>> = if evaluated_on_holdout {
        &held_out
    } else {
        &prepared
    }
    .iter()
    .collect();

    let mut optimizer: Box<dyn Optimizer<T>> = match config.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd::new(config.learning_rate, config.weight_decay)),
        OptimizerKind::Adam => Box::new(Adam::new(
            config.learning_rate,
            config.weight_decay,
            model.net.params.len(),
        )),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x05ee_d0fb_a7c4);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut grad = vec![T::zero(); model.net.params.len()];
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut report = TrainReport {
        epoch_loss: Vec::new(),
        height_rmse_m: f64::NAN,
        shadow_rmse_m: f64::NAN,
        n_train: prepared.len(),
        n_eval: eval_refs.len(),
        evaluated_on_holdout,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let inv_b = T::one() / T::lit(batch.len() as f64);
            for &i in batch {
                let d = &prepared[i];
                let fwd = model.net.forward(&d.x);
                let pred = model.output_scale_m * mlp::softplus(fwd.z);
                let (l, dl) = loss::height_loss_with_tan(pred, d.tan, d.height, config.loss);
                total += l.as_f64();
                let dz = dl * model.output_scale_m * mlp::sigmoid(fwd.z) * inv_b;
                model.net.backward(&d.x, &fwd, dz, &mut grad);
            }
            optimizer.step(&mut model.net.params, &grad);
        }
        let mean_loss = total / nt;
        if !mean_loss.is_finite() || model.net.params.iter().any(|p| !p.is_finite()) {
            report.epoch_loss = epoch_loss;
            return Err(RegressorError::DivergenceDetected {
                epoch,
                partial: Box::new(report),
            });
        }
        epoch_loss.push(mean_loss);
    }
    (report.height_rmse_m, report.shadow_rmse_m) = rmse_pair(&model, &eval_refs);
    report.epoch_loss = epoch_loss;
    Ok((model, report))
}
