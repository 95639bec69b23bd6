//! Training loop: decoupled-weight-decay adaptive updates under a linear
//! warmup + cosine decay schedule. One tape per step carries the whole
//! batch, so gradient accumulation order is fixed and runs are
//! bit-reproducible for a given seed.

use crate::error::{Error, Result};
use crate::harness::data::{example_input, DetectionIndex, QaExample, RegionSynthesizer};
use crate::model::Model;
use crate::numerics::store::ParameterStore;
use crate::numerics::tensor::{Real, Tensor};
use crate::seed::stream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Step count used for the full-scale reference runs; desk-scale defaults
/// are much smaller.
pub const REFERENCE_TRAINING_STEPS: usize = 88_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub seed: u64,
    /// Record the running loss every this many steps (1 = every step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 56,
            learning_rate: 5e-5,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 2000,
            total_steps: 2000,
            seed: 1,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::Config("batch size and total steps must be positive".into()));
        }
        if self.learning_rate < 0.0 || self.adam_eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate/eps/weight decay out of range".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup ({}) must not exceed total steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Linear warmup to the base rate, then cosine decay to zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        let lr = self.learning_rate;
        if step < self.warmup_steps {
            return lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.total_steps == self.warmup_steps {
            return lr;
        }
        let progress =
            (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with decoupled weight decay. Parameter state lives in canonical
/// store order.
pub struct AdamW<T: Real> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParameterStore<T>, eps: f64, weight_decay: f64) -> AdamW<T> {
        AdamW {
            m: store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect(),
            v: store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            weight_decay,
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore<T>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        for (i, (_, param, grad)) in store.iter_with_grads_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = param.data_mut();
            let g = grad.data();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + one_m_b1 * g[j];
                v[j] = b2 * v[j] + one_m_b2 * g[j] * g[j];
                let mhat = m[j].as_f64() / bc1;
                let vhat = v[j].as_f64() / bc2;
                let update = lr * (mhat / (vhat.sqrt() + self.eps))
                    + lr * self.weight_decay * p[j].as_f64();
                p[j] = p[j] - T::from_f64(update);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainRecord {
    /// (step, batch loss) at every log point.
    pub losses: Vec<(usize, f64)>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Optimize the model in place. Deterministic for a fixed config seed:
/// data order, batch composition and gradient accumulation are all
/// derived from it.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &[QaExample],
    detections: &DetectionIndex,
    regions: &RegionSynthesizer,
    cfg: &TrainConfig,
) -> Result<TrainRecord> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }

    let mut order_rng = stream(cfg.seed, "data-order");
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0usize;

    let mut optimizer = AdamW::new(&model.store, cfg.adam_eps, cfg.weight_decay);
    let mut record = TrainRecord { losses: Vec::new(), final_loss: f64::NAN, steps: 0 };
    let inv_batch = T::from_f64(1.0 / cfg.batch_size as f64);

    for step in 0..cfg.total_steps {
        let mut tape = crate::numerics::tape::Tape::new();
        let bound = model.store.bind(&mut tape)?;

        let mut batch_ids = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch_ids.push(order[cursor]);
            cursor += 1;
        }

        let mut total: Option<crate::numerics::tape::TensorId> = None;
        for &idx in &batch_ids {
            let input = example_input(model, &data[idx], detections, regions)?;
            let pass = model.forward(&mut tape, &bound, &input).map_err(|e| match e {
                Error::NonFinite { op } => Error::Diverged {
                    step,
                    detail: format!("non-finite activation in {} (question {})", op, data[idx].question_id),
                },
                other => other,
            })?;
            total = Some(match total {
                Some(acc) => tape.add(acc, pass.loss)?,
                None => pass.loss,
            });
        }
        let total = tape.scale(total.expect("batch is non-empty"), inv_batch)?;
        let loss_value = tape.value(total).item().as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Diverged { step, detail: format!("loss = {}", loss_value) });
        }

        model.store.zero_grads();
        let grads = tape.backward(total)?;
        model.store.accumulate_bound(&bound, &grads)?;
        optimizer.step(&mut model.store, cfg.lr_at(step));

        if step % cfg.log_every == 0 || step + 1 == cfg.total_steps {
            record.losses.push((step, loss_value));
        }
        record.final_loss = loss_value;
        record.steps = step + 1;
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            warmup_steps: 10,
            total_steps: 20,
            ..Default::default()
        };
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-12, "warmup starts near zero");
        assert!((cfg.lr_at(9) - 1.0).abs() < 1e-12, "warmup reaches base rate");
        assert!((cfg.lr_at(10) - 1.0).abs() < 1e-12, "cosine starts at base");
        assert!(cfg.lr_at(15) < cfg.lr_at(10));
        assert!(cfg.lr_at(19) < 0.05, "cosine decays toward zero");
    }

    #[test]
    fn warmup_cannot_exceed_total() {
        let cfg = TrainConfig { warmup_steps: 30, total_steps: 20, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 56);
        assert_eq!(cfg.learning_rate, 5e-5);
        assert_eq!(cfg.adam_eps, 1e-8);
        assert_eq!(cfg.weight_decay, 0.0);
        assert_eq!(cfg.warmup_steps, 2000);
        cfg.validate().unwrap();
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        let mut store = ParameterStore::<f32>::new();
        store
            .insert("w", Tensor::new(vec![3], vec![0.25, -1.5, 3.125]).unwrap())
            .unwrap();
        store.add_grad("w", &Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let before = store.get("w").unwrap().data().to_vec();
        let mut opt = AdamW::new(&store, 1e-8, 0.5);
        opt.step(&mut store, 0.0);
        assert_eq!(store.get("w").unwrap().data(), &before[..]);
    }
}
