use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::{trajectory_gradient, IntentModel, ModelError, ModelShape};
use crate::grid::{Cell, GridSpec};
use crate::labels::{make_label, LabelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            hidden_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::BadConfig("epochs must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(ModelError::BadConfig("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(ModelError::BadConfig("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ModelError::BadConfig(
                "moment coefficients must lie in [0, 1)",
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(ModelError::BadConfig("clip norm must be positive"));
        }
        Ok(())
    }
}

/// One training trajectory: per-frame model inputs and the placement cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub inputs: Vec<Vec<f64>>,
    pub target: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps);
        let bc2 = 1.0 - self.beta2.powi(self.steps);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Per-feature mean and inverse standard deviation over every frame.
/// Constant features get unit scale.
pub(crate) fn fit_normalization(samples: &[TrainingSample], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut count = 0.0;
    for s in samples {
        for x in &s.inputs {
            for i in 0..dim {
                sum[i] += x[i];
                sq[i] += x[i] * x[i];
            }
            count += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let scale = (0..dim)
        .map(|i| {
            let var = (sq[i] / count - mean[i] * mean[i]).max(0.0);
            let sd = var.sqrt();
            if sd > 1e-9 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Trains a fresh model with backpropagation through time on the weighted
/// sequence loss. Deterministic for a given config and dataset.
pub fn train(
    samples: &[TrainingSample],
    grid: &GridSpec,
    labels: &LabelParams,
    config: &TrainConfig,
) -> Result<(IntentModel, TrainReport), ModelError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let input_dim = samples[0].inputs.first().map_or(0, Vec::len);
    for (i, s) in samples.iter().enumerate() {
        if s.inputs.len() < 2 {
            return Err(ModelError::ShortTrajectory(i));
        }
        if let Some(bad) = s.inputs.iter().find(|x| x.len() != input_dim) {
            return Err(ModelError::DimensionMismatch {
                expected: input_dim,
                got: bad.len(),
            });
        }
    }
    let shape = ModelShape::new(input_dim, config.hidden_dim, grid);
    let mut model = IntentModel::init(shape, *grid, config.seed)?;
    let (mean, scale) = fit_normalization(samples, input_dim);
    model.set_input_normalization(mean, scale)?;
    train_from(model, samples, labels, config)
}

/// Continues training an existing model.
pub fn train_from(
    mut model: IntentModel,
    samples: &[TrainingSample],
    labels: &LabelParams,
    config: &TrainConfig,
) -> Result<(IntentModel, TrainReport), ModelError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let grid = model.grid;
    let label_seqs: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|s| {
            let len = s.inputs.len();
            (0..len)
                .map(|t| {
                    make_label(
                        (s.target.x as f64, s.target.y as f64),
                        &grid,
                        labels,
                        t,
                        len,
                    )
                    .map(|h| h.values().to_vec())
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| ModelError::Format(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a1e);
    let mut opt = Adam::new(
        model.params.len(),
        config.lr,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut report = TrainReport { epochs: Vec::new() };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            for &i in batch {
                let loss =
                    trajectory_gradient(&model, &samples[i].inputs, &label_seqs[i], &mut grad)?;
                total += loss;
            }
            let inv = 1.0 / batch.len() as f64;
            let mut norm_sq = 0.0;
            for g in grad.iter_mut() {
                *g *= inv;
                norm_sq += *g * *g;
            }
            if !norm_sq.is_finite() {
                return Err(ModelError::NonFiniteLoss(epoch));
            }
            let norm = norm_sq.sqrt();
            if norm > config.clip_norm {
                let k = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            opt.step(&mut model.params, &grad);
        }
        let mean_loss = total / samples.len() as f64;
        if !mean_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(epoch));
        }
        info!(epoch, mean_loss, "epoch finished");
        report.epochs.push(EpochStats { epoch, mean_loss });
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_samples() -> Vec<TrainingSample> {
        (0..4)
            .map(|k| TrainingSample {
                inputs: (0..6)
                    .map(|t| vec![k as f64 * 0.1, t as f64 * 0.2, 1.0])
                    .collect(),
                target: Cell::new(k % 2, k % 3),
            })
            .collect()
    }

    #[test]
    fn rejects_bad_input() {
        let g = GridSpec::new(2, 3, 0.1, [0.0, 0.0]).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&[], &g, &LabelParams::default(), &cfg),
            Err(ModelError::EmptyDataset)
        ));
        let short = vec![TrainingSample {
            inputs: vec![vec![0.0; 3]],
            target: Cell::new(0, 0),
        }];
        assert!(matches!(
            train(&short, &g, &LabelParams::default(), &cfg),
            Err(ModelError::ShortTrajectory(0))
        ));
        let bad = TrainConfig { epochs: 0, ..cfg };
        assert!(train(&toy_samples(), &g, &LabelParams::default(), &bad).is_err());
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let g = GridSpec::new(2, 3, 0.1, [0.0, 0.0]).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            hidden_dim: 6,
            batch_size: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let (a, ra) = train(&toy_samples(), &g, &LabelParams::default(), &cfg).unwrap();
        let (b, rb) = train(&toy_samples(), &g, &LabelParams::default(), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra, rb);
        let (c, _) = train(
            &toy_samples(),
            &g,
            &LabelParams::default(),
            &TrainConfig { seed: 12, ..cfg },
        )
        .unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn constant_features_keep_unit_scale() {
        let (mean, scale) = fit_normalization(&toy_samples(), 3);
        assert_eq!(mean[2], 1.0);
        assert_eq!(scale[2], 1.0);
        assert!(scale[1] > 1.0);
    }
}
