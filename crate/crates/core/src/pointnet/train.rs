use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::{col, filter_frame, FilterParams};
use crate::ingest::checkpoint::{NetworkCheckpoint, TrainEcho};
use crate::ingest::Dataset;
use crate::pointnet::adam::{adam_step, AdamConfig, AdamState};
use crate::pointnet::arch::ArchitectureSpec;
use crate::pointnet::model::{loss_gradient, Batch, ModelState, Network};
use crate::pointnet::targets::sample_targets;

/// Samples per gradient chunk. Chunks are reduced in a fixed order, so the
/// result does not depend on the number of threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub every_epochs: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    pub lr_decay: Option<LrDecay>,
    /// Standardize the metric columns (x, y, z, w, h) with training-set
    /// statistics.
    pub standardize: bool,
    /// Keep RoIs without an associated instance as all-negative samples.
    pub keep_negatives: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            seed: 0,
            lr_decay: None,
            standardize: false,
            keep_negatives: true,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) if d.every_epochs > 0 => self.learning_rate * d.factor.powi((epoch / d.every_epochs) as i32),
            _ => self.learning_rate,
        }
    }

    fn echo(&self) -> TrainEcho {
        TrainEcho {
            seed: self.seed,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size as u32,
            epochs: self.epochs as u32,
        }
    }
}

/// One RoI's features with its binary targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: Array2<f64>,
    pub targets: Vec<u8>,
}

/// Build training examples from every detection of every frame.
pub fn training_examples(
    dataset: &Dataset,
    filter: &FilterParams,
    keep_negatives: bool,
    exec: Execution,
) -> Result<Vec<TrainingExample>> {
    let per_frame = exec.map(&dataset.samples, |s| -> Result<Vec<TrainingExample>> {
        let rois = filter_frame(&s.frame, &s.detections, filter, &dataset.classes)?;
        Ok(rois
            .into_iter()
            .filter_map(|(_, sample)| {
                let t = sample_targets(&sample, &s.gt, &dataset.classes);
                (keep_negatives || t.instance.is_some()).then(|| TrainingExample {
                    features: sample.features,
                    targets: t.targets,
                })
            })
            .collect())
    });
    let mut out = Vec::new();
    for f in per_frame {
        out.extend(f?);
    }
    Ok(out)
}

/// Mean and inverse standard deviation of the metric feature columns; other
/// columns are left unchanged.
pub fn standardization(examples: &[TrainingExample], width: usize) -> (Array1<f64>, Array1<f64>) {
    let mut shift = Array1::zeros(width);
    let mut scale = Array1::ones(width);
    let rows: usize = examples.iter().map(|e| e.features.nrows()).sum();
    if rows < 2 {
        return (shift, scale);
    }
    for c in [col::X, col::Y, col::Z, col::W, col::H].into_iter().filter(|&c| c < width) {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for e in examples {
            for &v in e.features.column(c) {
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / rows as f64;
        let var = (sq / rows as f64 - mean * mean).max(0.0);
        shift[c] = mean;
        scale[c] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
    }
    (shift, scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_time_s: f64,
}

/// Mean batch loss and parameter gradient over `examples`.
pub fn batch_gradient(
    model: &ModelState,
    examples: &[&TrainingExample],
    exec: Execution,
) -> Result<(f64, ModelState)> {
    let total = examples.len();
    if total == 0 {
        return Err(Error::Empty("batch"));
    }
    let chunks: Vec<&[&TrainingExample]> = examples.chunks(CHUNK).collect();
    let parts = exec.map(&chunks, |chunk| -> Result<(f64, ModelState)> {
        let batch = Batch::stack(chunk.iter().map(|e| e.features.view()))?;
        let targets: Vec<u8> = chunk.iter().flat_map(|e| e.targets.iter().copied()).collect();
        let cache = model.forward_cached(&batch)?;
        let (loss, dlogits) = loss_gradient(cache.logits(), &batch.offsets, &targets, total);
        Ok((loss, model.backward(&cache, &dlogits)))
    });
    let mut loss = 0.0;
    let mut grads: Option<ModelState> = None;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        match grads.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => grads = Some(g),
        }
    }
    Ok((loss, grads.expect("non-empty batch")))
}

/// Mini-batch ADAM trainer with deterministic shuffling.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelState,
    pub moments: AdamState,
    pub config: TrainConfig,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(arch: &ArchitectureSpec, config: TrainConfig, examples: &[TrainingExample]) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = Network::init(arch, &mut rng)?;
        if config.standardize {
            let (shift, scale) = standardization(examples, arch.input_width);
            model.input_shift = shift;
            model.input_scale = scale;
        }
        let moments = AdamState::new(arch.param_count());
        Ok(Trainer {
            model,
            moments,
            config,
            epoch: 0,
        })
    }

    pub fn resume(ckpt: &NetworkCheckpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model: ckpt.model()?,
            moments: ckpt.moments(),
            config,
            epoch: ckpt.epoch as usize,
        })
    }

    pub fn step(&mut self, batch: &[&TrainingExample]) -> Result<f64> {
        let (loss, grads) = batch_gradient(&self.model, batch, self.config.execution)?;
        let lr = self.config.learning_rate_at(self.epoch);
        adam_step(&mut self.model, &mut self.moments, &grads, &self.config.adam(), lr);
        Ok(loss)
    }

    /// Visiting order of epoch `epoch`, a pure function of seed and epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self, examples: &[TrainingExample]) -> Result<EpochLog> {
        if examples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let start = Instant::now();
        let order = self.epoch_order(self.epoch, examples.len());
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &examples[i]).collect();
            loss_sum += self.step(&batch)?;
            batches += 1;
        }
        let log = EpochLog {
            epoch: self.epoch,
            mean_loss: loss_sum / batches as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        Ok(log)
    }

    pub fn checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint::from_model(&self.model, &self.moments, self.epoch as u64, self.config.echo())
    }
}

/// Train on already prepared examples for `config.epochs` epochs.
pub fn train_examples(
    examples: &[TrainingExample],
    arch: &ArchitectureSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(NetworkCheckpoint, Vec<EpochLog>)> {
    if examples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut trainer = Trainer::new(arch, config.clone(), examples)?;
    let mut logs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let log = trainer.run_epoch(examples)?;
        on_epoch(&log);
        logs.push(log);
    }
    Ok((trainer.checkpoint(), logs))
}

/// Build examples from a dataset and train.
pub fn train(
    dataset: &Dataset,
    filter: &FilterParams,
    arch: &ArchitectureSpec,
    config: &TrainConfig,
) -> Result<(NetworkCheckpoint, Vec<EpochLog>)> {
    let examples = training_examples(dataset, filter, config.keep_negatives, config.execution)?;
    train_examples(&examples, arch, config, |_| {})
}

/// Per-epoch mean loss. Wall time is left out so that reruns with the same
/// seed write identical files.
pub fn loss_log_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for l in logs {
        s.push_str(&format!("{},{}\n", l.epoch, l.mean_loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> ArchitectureSpec {
        ArchitectureSpec::new(10, vec![8, 16], vec![16, 2], 0).unwrap()
    }

    fn separable() -> TrainingExample {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut features = Array2::zeros((12, 10));
        let mut targets = Vec::new();
        for i in 0..12 {
            let t = (i % 2) as u8;
            for c in 0..10 {
                features[[i, c]] = rng.random_range(-0.1..0.1);
            }
            features[[i, 0]] = if t == 1 { 1.0 } else { -1.0 };
            targets.push(t);
        }
        TrainingExample { features, targets }
    }

    #[test]
    fn learns_separable_sample() {
        let ex = vec![separable()];
        let cfg = TrainConfig {
            epochs: 200,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, logs) = train_examples(&ex, &tiny(), &cfg, |_| {}).unwrap();
        assert!(logs.last().unwrap().mean_loss < 0.01, "{:?}", logs.last());
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let ex = vec![separable(); 5];
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 8,
            ..TrainConfig::default()
        };
        let (a, _) = train_examples(&ex, &tiny(), &cfg, |_| {}).unwrap();
        let (b, _) = train_examples(&ex, &tiny(), &cfg, |_| {}).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let seq = TrainConfig {
            execution: Execution::Sequential,
            ..cfg
        };
        let (c, _) = train_examples(&ex, &tiny(), &seq, |_| {}).unwrap();
        assert_eq!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn chunked_gradient_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Network::init(&tiny(), &mut rng).unwrap();
        let exs: Vec<TrainingExample> = (0..11).map(|_| separable()).collect();
        let refs: Vec<&TrainingExample> = exs.iter().collect();
        let (l1, g1) = batch_gradient(&model, &refs, Execution::Sequential).unwrap();
        let batch = Batch::stack(exs.iter().map(|e| e.features.view())).unwrap();
        let targets: Vec<u8> = exs.iter().flat_map(|e| e.targets.clone()).collect();
        let cache = model.forward_cached(&batch).unwrap();
        let (l2, dl) = loss_gradient(cache.logits(), &batch.offsets, &targets, exs.len());
        let g2 = model.backward(&cache, &dl);
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.flat_params().iter().zip(g2.flat_params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(
            train_examples(&[], &tiny(), &TrainConfig::default(), |_| {}),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn decay_schedule() {
        let cfg = TrainConfig {
            lr_decay: Some(LrDecay { every_epochs: 10, factor: 0.5 }),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(9), 3e-3);
        assert_eq!(cfg.learning_rate_at(10), 1.5e-3);
    }
}
