//! Regressors trained with an RMSE loss: pointwise MLP and random forest,
//! sequence-to-sequence BiLSTM.

pub mod linalg;
pub mod forest;
pub mod lstm;
pub mod mlp;
pub mod optim;
pub mod regressor;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use forest::{forest_train, Aggregation, ForestConfig, ForestModel};
pub use lstm::{lstm_train, BiLstmModel, LstmConfig};
pub use mlp::{mlp_train, Activation, MlpConfig, MlpModel};
pub use optim::{Optimizer, OptimizerKind};
pub use regressor::{load_model, save_model, train_regressor, ModelBody, ModelConfig, ModelKind, Regressor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// epochs without improvement of the training loss before stopping; 0 disables
    pub patience: usize,
    pub min_delta: f64,
    /// keep the parameters of the best epoch
    pub restore_best: bool,
    /// global gradient-norm clip; 0 disables
    pub grad_clip: f64,
    /// cosine decay of the learning rate down to 1% over `epochs`
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            patience: 10,
            min_delta: 0.0,
            restore_best: true,
            grad_clip: 1.0,
            cosine_decay: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if !self.cosine_decay || self.epochs <= 1 {
            return self.learning_rate;
        }
        let floor = 0.01 * self.learning_rate;
        let phase = epoch as f64 / (self.epochs - 1) as f64;
        floor + 0.5 * (self.learning_rate - floor) * (1.0 + (std::f64::consts::PI * phase).cos())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

/// RMSE between predictions and targets.
pub fn rmse_loss(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    (pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n).sqrt()
}

/// Indices `0..n` shuffled and cut into batches of at most `batch` items.
pub(crate) fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 11,
            learning_rate: 0.1,
            cosine_decay: true,
            ..TrainConfig::default()
        };
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-15);
        assert!((cfg.lr_at(10) - 0.001).abs() < 1e-15);
        assert!((cfg.lr_at(5) - 0.0505).abs() < 1e-15);
        let flat = TrainConfig::default();
        assert_eq!(flat.lr_at(7), flat.learning_rate);
    }

    proptest! {
        #[test]
        fn rmse_loss_nonnegative_and_zero_iff_equal(
            a in proptest::collection::vec(-10.0f64..10.0, 1..50),
            shift in -1.0f64..1.0,
        ) {
            let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let l = rmse_loss(&a, &b);
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, shift == 0.0);
            prop_assert_eq!(rmse_loss(&a, &a), 0.0);
        }
    }
}
