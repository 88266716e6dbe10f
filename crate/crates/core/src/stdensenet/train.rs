use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::batchnorm::Mode;
use super::loss::cross_entropy;
use super::model::StDenseNet;
use super::tensor::{Scalar, Tensor5};
use super::NetError;

/// One labelled clip; `clip` has batch size 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub clip: Tensor5<T>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 70,
            batch_size: 10,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 {
            return Err(NetError::Config("batch_size must be >= 1".into()));
        }
        self.adam.validate()
    }
}

/// Per-epoch summary. `accuracy` counts the training-mode predictions made while the
/// epoch ran, before each batch's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn train<T: Scalar>(
    model: &mut StDenseNet<T>,
    data: &[Sample<T>],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, NetError> {
    train_with(model, data, config, |_| {})
}

/// Shuffled mini-batch Adam training. The same seed, data and initial weights give a
/// bitwise identical history. Leaves the model in eval mode.
pub fn train_with<T: Scalar, F: FnMut(&EpochStats)>(
    model: &mut StDenseNet<T>,
    data: &[Sample<T>],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochStats>, NetError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let classes = model.num_classes();
    if let Some(bad) = data.iter().find(|s| s.label >= classes) {
        return Err(NetError::InvalidLabel { label: bad.label, classes });
    }
    let mut adam = AdamState::new(config.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    model.set_mode(Mode::Train);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let clips: Vec<&Tensor5<T>> = batch.iter().map(|&i| &data[i].clip).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data[i].label).collect();
            let x = Tensor5::stack(&clips)?;
            let logits = model.forward_train(&x)?;
            let (loss, grad) = cross_entropy(&logits, &labels, classes)?;
            loss_sum += loss.as_f64() * batch.len() as f64;
            correct += logits
                .chunks(classes)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            model.zero_grad();
            model.backward(&grad)?;
            adam.step(&mut model.params_mut())?;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    model.clear_cache();
    model.set_mode(Mode::Eval);
    Ok(history)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode accuracy over `data`, evaluated in batches of `batch_size`.
pub fn accuracy<T: Scalar>(model: &StDenseNet<T>, data: &[Sample<T>], batch_size: usize) -> Result<f64, NetError> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let mut correct = 0usize;
    for chunk in data.chunks(batch_size.max(1)) {
        let clips: Vec<&Tensor5<T>> = chunk.iter().map(|s| &s.clip).collect();
        let probs = model.forward(&Tensor5::stack(&clips)?)?;
        correct += probs.iter().zip(chunk).filter(|(p, s)| argmax(p) == s.label).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stdensenet::StDenseNetConfig;

    fn clip(value: f64) -> Tensor5<f64> {
        let dims = [1, 3, 4, 8, 8];
        let n: usize = dims.iter().product();
        Tensor5::from_vec(dims, (0..n).map(|i| value * ((i % 7) as f64 - 3.0) / 3.0).collect()).unwrap()
    }

    #[test]
    fn memorizes_a_single_sample() {
        let mut model = StDenseNet::<f64>::new(StDenseNetConfig::gradcheck(), 5).unwrap();
        let data = vec![Sample { clip: clip(1.0), label: 1 }];
        let config = TrainConfig { epochs: 15, ..TrainConfig::default() };
        let history = train(&mut model, &data, &config).unwrap();
        assert_eq!(history.len(), 15);
        assert_eq!(history.last().unwrap().accuracy, 1.0);
        assert_eq!(accuracy(&model, &data, 4).unwrap(), 1.0);
    }

    #[test]
    fn same_seed_same_history() {
        let data: Vec<Sample<f64>> = (0..6)
            .map(|i| Sample { clip: clip(i as f64 * 0.4 - 1.0), label: i % 2 })
            .collect();
        let config = TrainConfig { epochs: 3, batch_size: 4, seed: 9, ..TrainConfig::default() };
        let run = || {
            let mut model = StDenseNet::<f64>::new(StDenseNetConfig::gradcheck(), 6).unwrap();
            train(&mut model, &data, &config).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|s| s.loss.is_finite()));
    }

    #[test]
    fn rejects_empty_and_mislabelled_data() {
        let mut model = StDenseNet::<f64>::new(StDenseNetConfig::gradcheck(), 7).unwrap();
        assert!(matches!(
            train(&mut model, &[], &TrainConfig::default()),
            Err(NetError::EmptyDataset)
        ));
        let bad = vec![Sample { clip: clip(1.0), label: 3 }];
        assert!(matches!(
            train(&mut model, &bad, &TrainConfig::default()),
            Err(NetError::InvalidLabel { .. })
        ));
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.5f32, 0.5]), 0);
        assert_eq!(argmax(&[0.2f32, 0.8]), 1);
    }
}
