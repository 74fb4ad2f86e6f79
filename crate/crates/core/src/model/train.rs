//! Mini-batch training with early stopping on validation macro-F1.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamConfig, AdamState, ModelError, ReferenceModel, Result};
use crate::metrics::{macro_f1, row_argmax};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// One iteration is a full pass over the training rows.
    pub max_iterations: usize,
    /// Validation checks without strict improvement before stopping.
    pub patience: usize,
    /// Seeds batch shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 128,
            max_iterations: 100,
            patience: 10,
            seed: 0,
        }
    }
}

/// Feature rows paired with row-stochastic targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStop,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Mean training loss of each iteration.
    pub train_loss: Vec<f64>,
    /// Validation macro-F1 after each iteration.
    pub val_macro_f1: Vec<f64>,
    pub best_check: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_val_macro_f1(&self) -> f64 {
        self.val_macro_f1[self.best_check]
    }
}

fn validation_score(model: &ReferenceModel, val: &ValidationSet) -> Result<f64> {
    let probs = model.predict_proba(&val.features)?;
    let pred: Vec<usize> = probs.rows().into_iter().map(|r| row_argmax(r).0).collect();
    macro_f1(&val.labels, &pred).map_err(|e| ModelError::Data(e.to_string()))
}

/// Trains `model` and returns the snapshot with the best validation macro-F1.
///
/// Patience counts checks without a strict improvement; among equally good
/// checks the latest snapshot is kept.
pub fn train(
    mut model: ReferenceModel,
    data: &TrainingSet,
    val: &ValidationSet,
    config: &TrainConfig,
) -> Result<(ReferenceModel, TrainHistory)> {
    let n = data.features.nrows();
    if n == 0 {
        return Err(ModelError::Data("empty training set".into()));
    }
    if data.targets.nrows() != n {
        return Err(ModelError::Shape(format!(
            "{} targets for {n} rows",
            data.targets.nrows()
        )));
    }
    for (i, row) in data.targets.rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
            return Err(ModelError::Data(format!("target row {i} is not a probability vector")));
        }
    }
    if val.features.nrows() == 0 || val.features.nrows() != val.labels.len() {
        return Err(ModelError::Data(
            "validation set must be non-empty with one label per row".into(),
        ));
    }
    if config.batch_size == 0 || config.max_iterations == 0 {
        return Err(ModelError::Config(
            "batch size and iteration cap must be positive".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.num_params(), config.adam);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_macro_f1: Vec::new(),
        best_check: 0,
        stop_reason: StopReason::MaxIterations,
    };
    let mut best_model = model.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut since_improvement = 0usize;

    for _ in 0..config.max_iterations {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = data.features.select(Axis(0), batch);
            let t = data.targets.select(Axis(0), batch);
            let mask = model.dropout_mask(batch.len(), &mut rng);
            let (loss, grad) = model.loss_and_grad(x.view(), t.view(), mask.as_ref())?;
            adam.update(model.params_mut(), &grad)?;
            loss_sum += loss * batch.len() as f64;
        }
        history.train_loss.push(loss_sum / n as f64);

        let score = validation_score(&model, val)?;
        history.val_macro_f1.push(score);
        let check = history.val_macro_f1.len() - 1;
        if score >= best_score {
            if score > best_score {
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
            best_score = score;
            best_model = model.clone();
            history.best_check = check;
        } else {
            since_improvement += 1;
        }
        if since_improvement >= config.patience {
            history.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok((best_model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::records::NUM_CLASSES;
    use ndarray::Array2;
    use rand::Rng;

    fn one_hot_rows(labels: &[usize]) -> Array2<f64> {
        let mut t = Array2::zeros((labels.len(), NUM_CLASSES));
        for (i, &l) in labels.iter().enumerate() {
            t[[i, l]] = 1.0;
        }
        t
    }

    #[test]
    fn separable_toy_reaches_high_accuracy() {
        // two classes (W and N2) split by the sign of x0 + x1
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 400;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = x
            .rows()
            .into_iter()
            .map(|r| if r[0] + r[1] > 0.0 { 0 } else { 2 })
            .collect();
        let margin_x = x.mapv(|v| v * 3.0);
        let data = TrainingSet {
            features: margin_x.clone(),
            targets: one_hot_rows(&labels),
        };
        let val = ValidationSet {
            features: margin_x.clone(),
            labels: labels.clone(),
        };
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            batch_size: 32,
            patience: 100,
            ..TrainConfig::default()
        };
        let (model, hist) = train(init_model(0, 2, 0, 0.0).unwrap(), &data, &val, &cfg).unwrap();
        let probs = model.predict_proba(&margin_x).unwrap();
        let correct = probs
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(r, &l)| row_argmax(r.view()).0 == l)
            .count();
        assert!(
            correct as f64 / n as f64 >= 0.99,
            "accuracy {}",
            correct as f64 / n as f64
        );
        assert_eq!(
            hist.val_macro_f1[hist.best_check],
            hist.val_macro_f1.iter().cloned().fold(0.0, f64::max)
        );
    }

    #[test]
    fn soft_targets_are_recovered() {
        let sc = [0.6, 0.2, 0.2, 0.0, 0.0];
        let n = 512;
        let features = Array2::from_elem((n, 3), 1.0);
        let targets = Array2::from_shape_fn((n, NUM_CLASSES), |(_, k)| sc[k]);
        let data = TrainingSet { features, targets };
        let val = ValidationSet {
            features: Array2::from_elem((1, 3), 1.0),
            labels: vec![0],
        };
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            patience: 1000,
            ..TrainConfig::default()
        };
        let (model, hist) = train(init_model(3, 3, 8, 0.0).unwrap(), &data, &val, &cfg).unwrap();
        assert_eq!(hist.stop_reason, StopReason::MaxIterations);
        let p = model.predict_proba(&Array2::from_elem((1, 3), 1.0)).unwrap();
        for k in 0..NUM_CLASSES {
            assert!((p[[0, k]] - sc[k]).abs() < 0.02, "{p:?}");
        }
    }

    #[test]
    fn frozen_validation_triggers_early_stop() {
        let features = Array2::from_elem((10, 2), 1.0);
        let data = TrainingSet {
            features: features.clone(),
            targets: one_hot_rows(&[1; 10]),
        };
        let val = ValidationSet {
            features,
            labels: vec![1; 10],
        };
        let cfg = TrainConfig {
            patience: 1,
            ..TrainConfig::default()
        };
        let (_, hist) = train(init_model(0, 2, 0, 0.0).unwrap(), &data, &val, &cfg).unwrap();
        assert_eq!(hist.stop_reason, StopReason::EarlyStop);
        assert!(hist.val_macro_f1.len() < cfg.max_iterations);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((300, 4), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..300).map(|i| i % NUM_CLASSES).collect();
        let data = TrainingSet {
            features: x.clone(),
            targets: one_hot_rows(&labels),
        };
        let val = ValidationSet { features: x, labels };
        let cfg = TrainConfig {
            max_iterations: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(init_model(1, 4, 8, 0.3).unwrap(), &data, &val, &cfg).unwrap();
        let b = train(init_model(1, 4, 8, 0.3).unwrap(), &data, &val, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let val = ValidationSet {
            features: Array2::zeros((1, 2)),
            labels: vec![0],
        };
        let empty = TrainingSet {
            features: Array2::zeros((0, 2)),
            targets: Array2::zeros((0, NUM_CLASSES)),
        };
        let m = init_model(0, 2, 0, 0.0).unwrap();
        assert!(matches!(
            train(m.clone(), &empty, &val, &TrainConfig::default()),
            Err(ModelError::Data(_))
        ));
        let bad = TrainingSet {
            features: Array2::zeros((1, 2)),
            targets: Array2::from_elem((1, NUM_CLASSES), 0.5),
        };
        assert!(train(m, &bad, &val, &TrainConfig::default()).is_err());
    }
}
