use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::Reduction;
use super::model::{AlignmentModel, ModelDims, TriModalBatch};
use crate::error::{Error, Result};
use crate::nn::{AdamW, StepLrSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: u32,
    pub gamma: f64,
    pub t_init: f64,
    pub seed: u64,
    pub reduction: Reduction,
    /// Learning rate for the two temperatures; defaults to `lr`.
    pub temperature_lr: Option<f64>,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            lr: 3e-5,
            weight_decay: 1e-6,
            epochs: 10,
            gamma: 0.87,
            t_init: 3.99,
            seed: 0,
            reduction: Reduction::Sum,
            temperature_lr: None,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::usage(format!("invalid training config: {what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be a finite non-negative number");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !self.t_init.is_finite() {
            return bad("t_init must be finite");
        }
        if let Some(t) = self.temperature_lr {
            if !(t >= 0.0 && t.is_finite()) {
                return bad("temperature_lr must be a finite non-negative number");
            }
        }
        StepLrSchedule::new(self.lr, self.gamma)?;
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Single-writer training state: model, optimizers and the shuffle RNG.
pub struct Trainer {
    config: TrainConfig,
    model: AlignmentModel<f32>,
    weights_opt: AdamW<f32>,
    temperature_opt: AdamW<f32>,
    schedule: StepLrSchedule,
    temperature_schedule: StepLrSchedule,
    rng: ChaCha8Rng,
    epoch: u32,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = AlignmentModel::init(config.dims.clone(), config.t_init, config.seed, &mut rng)?;
        let wd = config.weight_decay as f32;
        let schedule = StepLrSchedule::new(config.lr, config.gamma)?;
        let temperature_schedule =
            StepLrSchedule::new(config.temperature_lr.unwrap_or(config.lr), config.gamma)?;
        Ok(Self {
            weights_opt: AdamW::new(config.lr as f32, wd),
            temperature_opt: AdamW::new(temperature_schedule.base_lr as f32, wd),
            config,
            model,
            schedule,
            temperature_schedule,
            rng,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &AlignmentModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> AlignmentModel<f32> {
        self.model
    }

    pub fn epochs_run(&self) -> u32 {
        self.epoch
    }

    /// One optimizer step on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &TriModalBatch<f32>) -> Result<f32> {
        let (loss, grads) = self.model.loss_and_grads(batch, self.config.reduction)?;
        if !loss.total.is_finite() {
            return Err(Error::data(format!("non-finite loss at epoch {}", self.epoch + 1)));
        }
        self.weights_opt.step(self.model.weights_mut(), grads.weights())?;
        let t_grads = grads.temperatures();
        let temps = self.model.temperatures_mut().map(std::slice::from_mut);
        self.temperature_opt
            .step(temps.into_iter().collect(), t_grads.iter().map(std::slice::from_ref).collect())?;
        self.model.clamp_temperatures();
        Ok(loss.total)
    }

    /// Shuffles, then steps through the data in `batch_size` chunks. The last
    /// chunk may be smaller.
    pub fn run_epoch(&mut self, data: &TriModalBatch<f32>) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::usage("cannot train on an empty dataset"));
        }
        let lr = self.schedule.lr(self.epoch);
        self.weights_opt.lr = lr as f32;
        self.temperature_opt.lr = self.temperature_schedule.lr(self.epoch) as f32;

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            total += self.step(&data.select(chunk))? as f64;
            batches += 1;
        }
        self.epoch += 1;
        let log = EpochLog { epoch: self.epoch, lr, mean_loss: total / batches as f64 };
        log::info!("epoch {} lr {:.3e} mean loss {:.4}", log.epoch, log.lr, log.mean_loss);
        Ok(log)
    }
}

/// Trains an alignment model from scratch for `config.epochs` epochs.
pub fn train(
    data: &TriModalBatch<f32>,
    config: &TrainConfig,
) -> Result<(AlignmentModel<f32>, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    let mut trainer = Trainer::new(config.clone())?;
    let logs = (0..config.epochs).map(|_| trainer.run_epoch(data)).collect::<Result<Vec<_>>>()?;
    Ok((trainer.into_model(), logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::model::tests::{tiny_batch, tiny_dims};

    fn config(lr: f64) -> TrainConfig {
        TrainConfig { batch_size: 4, lr, epochs: 3, seed: 3, dims: tiny_dims(), ..Default::default() }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = tiny_batch::<f32>(10, 1);
        let mut trainer = Trainer::new(config(0.0)).unwrap();
        let before = trainer.model().clone();
        trainer.run_epoch(&data).unwrap();
        assert_eq!(trainer.model(), &before);
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let data = tiny_batch::<f32>(10, 2);
        let (a, la) = train(&data, &config(1e-3)).unwrap();
        let (b, lb) = train(&data, &config(1e-3)).unwrap();
        assert_eq!(la, lb);
        assert_eq!(
            a.to_archive().unwrap().to_bytes().unwrap(),
            b.to_archive().unwrap().to_bytes().unwrap()
        );
    }

    #[test]
    fn temperatures_move_unless_frozen() {
        let data = tiny_batch::<f32>(8, 3);
        let (m, _) = train(&data, &config(1e-2)).unwrap();
        assert_ne!(m.t_image_text, 3.99);
        assert_ne!(m.t_image_gps, 3.99);
        let frozen = TrainConfig { temperature_lr: Some(0.0), ..config(1e-2) };
        let (m, _) = train(&data, &frozen).unwrap();
        assert_eq!((m.t_image_text, m.t_image_gps), (3.99, 3.99));
    }

    #[test]
    fn log_has_one_line_per_epoch_with_decayed_lr() {
        let data = tiny_batch::<f32>(9, 4);
        let (_, logs) = train(&data, &config(1e-3)).unwrap();
        assert_eq!(logs.iter().map(|l| l.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(logs[0].lr, 1e-3);
        assert!((logs[2].lr - 1e-3 * 0.87 * 0.87).abs() < 1e-15);
        let line = serde_json::to_string(&logs[0]).unwrap();
        assert!(line.contains("\"mean_loss\""));
    }

    #[test]
    fn rejects_empty_data_and_bad_config() {
        let data = tiny_batch::<f32>(3, 5);
        let empty = data.select(&[]);
        assert!(matches!(train(&empty, &config(1e-3)), Err(Error::Usage(_))));
        assert!(Trainer::new(TrainConfig { batch_size: 0, ..config(1e-3) }).is_err());
        assert!(Trainer::new(TrainConfig { gamma: 0.0, ..config(1e-3) }).is_err());
    }
}
