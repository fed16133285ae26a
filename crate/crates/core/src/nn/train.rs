use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, AdamState, Tensor};
use crate::error::{ensure, Result};

/// A model whose parameters and gradients are exposed in one fixed order.
pub trait Trainable {
    type Input;

    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Loss for one labelled sample.
    fn loss(&self, input: &Self::Input, label: usize) -> Result<f64>;
    /// Loss and parameter gradients (ordered as `params`) for one labelled sample.
    fn forward_backward(&self, input: &Self::Input, label: usize) -> Result<(f64, Vec<Tensor>)>;
    fn predict_proba(&self, input: &Self::Input) -> Result<Vec<f64>>;

    /// Predicted class, ties resolved toward the lower index.
    fn predict(&self, input: &Self::Input) -> Result<usize> {
        let p = self.predict_proba(input)?;
        Ok(p.iter()
            .enumerate()
            .fold(0, |best, (c, &v)| if v > p[best] { c } else { best }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without loss improvement before stopping; `None` disables early stopping.
    pub patience: Option<usize>,
    /// Minimum decrease that counts as an improvement.
    pub min_delta: f64,
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            patience: Some(5),
            min_delta: 0.0,
            batch_size: 8,
            shuffle: true,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.max_epochs >= 1, InvalidInput, "max_epochs must be at least 1");
        ensure!(self.patience != Some(0), InvalidInput, "patience must be at least 1");
        ensure!(self.batch_size >= 1, InvalidInput, "batch_size must be at least 1");
        ensure!(self.min_delta >= 0.0, InvalidInput, "min_delta must be non-negative");
        self.adam.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of each completed epoch.
    pub losses: Vec<f64>,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.losses.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

pub fn fit<M: Trainable>(model: &mut M, inputs: &[M::Input], labels: &[usize], cfg: &TrainConfig) -> Result<TrainHistory> {
    fit_with(model, inputs, labels, cfg, |_, _, _| EpochControl::Continue)
}

/// Like [`fit`], calling `on_epoch(epoch, loss, model)` after every epoch.
pub fn fit_with<M, F>(
    model: &mut M,
    inputs: &[M::Input],
    labels: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainHistory>
where
    M: Trainable,
    F: FnMut(usize, f64, &M) -> EpochControl,
{
    cfg.validate()?;
    ensure!(!inputs.is_empty(), InvalidInput, "empty training set");
    ensure!(
        inputs.len() == labels.len(),
        InvalidInput,
        "{} inputs but {} labels",
        inputs.len(),
        labels.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = TrainHistory {
        best_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Option<Vec<Tensor>> = None;
            for &i in batch {
                let (loss, g) = model.forward_backward(&inputs[i], labels[i])?;
                ensure!(loss.is_finite(), InvalidInput, "non-finite loss at epoch {epoch}");
                total += loss;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.axpy(1.0, b)),
                }
            }
            let mut grads = grads.expect("batches are non-empty");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(inv));
            adam_step(&cfg.adam, &mut adam, &mut model.params_mut(), &grads)?;
        }
        let loss = total / inputs.len() as f64;
        history.losses.push(loss);
        if loss < history.best_loss - cfg.min_delta {
            history.best_loss = loss;
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        if on_epoch(epoch, loss, model) == EpochControl::Stop {
            break;
        }
        if cfg.patience.is_some_and(|p| stale >= p) {
            history.stopped_early = true;
            break;
        }
    }
    Ok(history)
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy<M: Trainable>(model: &M, inputs: &[M::Input], labels: &[usize]) -> Result<f64> {
    let mut hits = 0;
    for (x, &y) in inputs.iter().zip(labels) {
        hits += usize::from(model.predict(x)? == y);
    }
    Ok(hits as f64 / inputs.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::super::{cross_entropy, softmax, Dense};
    use super::*;

    /// Softmax regression on fixed feature vectors.
    #[derive(Clone)]
    struct Linear(Dense);

    impl Trainable for Linear {
        type Input = Vec<f64>;
        fn params(&self) -> Vec<&Tensor> {
            vec![&self.0.weight, &self.0.bias]
        }
        fn params_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.0.weight, &mut self.0.bias]
        }
        fn loss(&self, x: &Vec<f64>, y: usize) -> Result<f64> {
            Ok(cross_entropy(&self.0.forward(x)?, y)?.0)
        }
        fn forward_backward(&self, x: &Vec<f64>, y: usize) -> Result<(f64, Vec<Tensor>)> {
            let (l, d) = cross_entropy(&self.0.forward(x)?, y)?;
            let (_, gw, gb) = self.0.backward(x, &d);
            Ok((l, vec![gw, gb]))
        }
        fn predict_proba(&self, x: &Vec<f64>) -> Result<Vec<f64>> {
            Ok(softmax(&self.0.forward(x)?))
        }
    }

    fn task() -> (Vec<Vec<f64>>, Vec<usize>) {
        let xs: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let c = i % 2;
                vec![if c == 0 { 1.0 } else { -1.0 }, 0.1 * i as f64, 1.0]
            })
            .collect();
        let ys = (0..8).map(|i| i % 2).collect();
        (xs, ys)
    }

    fn model() -> Linear {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Linear(Dense::new(&mut rng, 3, 2))
    }

    #[test]
    fn zero_gradient_model_stops_after_patience() {
        let mut m = model();
        // zero features kill the weight gradient; one balanced batch pins the bias
        let zeros = vec![vec![0.0; 3]; 8];
        let ys = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let cfg = TrainConfig {
            patience: Some(3),
            ..Default::default()
        };
        let before = m.0.clone();
        let h = fit(&mut m, &zeros, &ys, &cfg).unwrap();
        assert!(h.stopped_early);
        assert_eq!(h.epochs(), 4);
        assert_eq!(m.0, before);
    }

    #[test]
    fn overfits_separable_task() {
        let mut m = model();
        let (xs, ys) = task();
        let cfg = TrainConfig {
            max_epochs: 200,
            patience: None,
            adam: AdamConfig { lr: 1e-2, ..Default::default() },
            ..Default::default()
        };
        let h = fit(&mut m, &xs, &ys, &cfg).unwrap();
        assert_eq!(accuracy(&m, &xs, &ys).unwrap(), 1.0);
        let drops = h.losses.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(drops as f64 >= 0.9 * (h.losses.len() - 1) as f64);
    }

    #[test]
    fn deterministic_given_seed() {
        let (xs, ys) = task();
        let cfg = TrainConfig {
            max_epochs: 20,
            adam: AdamConfig { lr: 1e-2, ..Default::default() },
            ..Default::default()
        };
        let (mut a, mut b) = (model(), model());
        let ha = fit(&mut a, &xs, &ys, &cfg).unwrap();
        let hb = fit(&mut b, &xs, &ys, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn callback_can_stop() {
        let (xs, ys) = task();
        let mut m = model();
        let h = fit_with(&mut m, &xs, &ys, &TrainConfig::default(), |e, _, _| {
            if e == 1 { EpochControl::Stop } else { EpochControl::Continue }
        })
        .unwrap();
        assert_eq!(h.epochs(), 2);
        assert!(!h.stopped_early);
    }

    #[test]
    fn invalid_inputs() {
        let mut m = model();
        assert!(fit(&mut m, &[], &[], &TrainConfig::default()).is_err());
        let (xs, ys) = task();
        assert!(fit(&mut m, &xs, &ys[..3], &TrainConfig::default()).is_err());
        let bad = TrainConfig { patience: Some(0), ..Default::default() };
        assert!(fit(&mut m, &xs, &ys, &bad).is_err());
        let bad = TrainConfig { max_epochs: 0, ..Default::default() };
        assert!(fit(&mut m, &xs, &ys, &bad).is_err());
    }
}
