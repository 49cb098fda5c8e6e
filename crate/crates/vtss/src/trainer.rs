//! SGD training loops for pretext and downstream phases, with the milestone
//! learning-rate schedule and deterministic seeded shuffling.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{Image, LabeledImageSet};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, batch_from_images, Model};
use crate::nn::{cross_entropy, Network};
use crate::pretext::{expand_batch, inject_transformations, ConflictInjectionSpec, VtssTaskSpec};
use crate::transforms::augment_standard;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub base_lr: f64,
    pub lr_factor: f64,
    pub milestones: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Cumulative milestone multiplication (default false = cumulative).
    /// When true, every stage past the first milestone uses
    /// base_lr * lr_factor instead of compounding the factor.
    #[serde(default)]
    pub staged_lr: bool,
}

impl OptimizerSpec {
    /// Full-length recipe: 200 epochs, milestones at 60/120/180.
    pub fn paper() -> Self {
        OptimizerSpec {
            base_lr: 0.1,
            lr_factor: 0.02,
            milestones: vec![60, 120, 180],
            epochs: 200,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 5e-4,
            staged_lr: false,
        }
    }

    /// Desk-scale recipe: 30 epochs, milestones at 15/25.
    pub fn desk() -> Self {
        OptimizerSpec {
            milestones: vec![15, 25],
            epochs: 30,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Spec("epochs and batch size must be positive".into()));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Spec("milestones must be strictly increasing".into()));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return Err(Error::Spec("milestones must lie before the last epoch".into()));
        }
        if self.base_lr <= 0.0 || self.lr_factor <= 0.0 {
            return Err(Error::Spec("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate in effect at `epoch`: base_lr multiplied by lr_factor once
/// per milestone already reached (cumulative), or base_lr * lr_factor flat
/// after the first milestone in staged mode.
pub fn lr_at(spec: &OptimizerSpec, epoch: usize) -> Result<f64> {
    if epoch >= spec.epochs {
        return Err(Error::Range(format!(
            "epoch {epoch} outside 0..{}",
            spec.epochs
        )));
    }
    let stages = spec.milestones.iter().filter(|&&m| m <= epoch).count();
    Ok(if spec.staged_lr {
        spec.base_lr * spec.lr_factor.powi((stages.min(1)) as i32)
    } else {
        spec.base_lr * spec.lr_factor.powi(stages as i32)
    })
}

/// Classical-momentum SGD with L2 weight decay folded into the gradient.
/// Decay skips batch-norm parameters and biases (their views are flagged).
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, net: &mut Network<f32>, lr: f64) {
        let mom = self.momentum as f32;
        let wd = self.weight_decay as f32;
        let lr = lr as f32;
        let velocity = &mut self.velocity;
        net.visit_params_mut(|p| {
            let buf = velocity
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; p.values.len()]);
            for ((v, &g), b) in p.values.iter_mut().zip(p.grads.iter()).zip(buf.iter_mut()) {
                let mut grad = g;
                if p.decay {
                    grad += wd * *v;
                }
                *b = mom * *b + grad;
                *v -= lr * *b;
            }
        });
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_test_accuracy: Vec<f64>,
    pub wall_clock_s: f64,
    pub final_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub augment: bool,
    pub seed: u64,
    /// Cap on the number of test samples used for the per-epoch accuracy
    /// curve (the final evaluation should use the full set separately).
    pub eval_cap: Option<usize>,
}

/// What the image-space training loop is optimizing.
pub enum TaskKind<'a> {
    Supervised,
    Pretext {
        task: &'a VtssTaskSpec,
        injection: Option<&'a ConflictInjectionSpec>,
    },
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xA076_1D64_78BD_642F))
}

/// Evenly spaced subset indices, deterministic and order-preserving.
pub fn eval_indices(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(cap) if cap < len => (0..cap).map(|i| i * len / cap).collect(),
        _ => (0..len).collect(),
    }
}

/// Generic epoch-driven training loop. `make_epoch` must yield the batches
/// for one epoch in order; `eval_epoch` reports test accuracy after it.
pub fn train_custom(
    net: &mut Network<f32>,
    spec: &OptimizerSpec,
    seed: u64,
    mut make_epoch: impl FnMut(usize, &mut ChaCha8Rng) -> Result<Vec<(Array4<f32>, Vec<usize>)>>,
    mut eval_epoch: impl FnMut(&mut Network<f32>) -> Result<f64>,
) -> Result<TrainReport> {
    spec.validate()?;
    let start = Instant::now();
    let mut sgd = Sgd::new(spec.momentum, spec.weight_decay);
    let mut epoch_loss = Vec::with_capacity(spec.epochs);
    let mut epoch_acc = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let lr = lr_at(spec, epoch)?;
        let mut rng = epoch_rng(seed, epoch);
        let batches = make_epoch(epoch, &mut rng)?;
        let mut loss_sum = 0.0f64;
        for (step, (x, labels)) in batches.iter().enumerate() {
            let logits = net.forward(x, true);
            let (loss, grad) = cross_entropy(&logits.view(), labels);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step,
                    msg: format!("non-finite loss {loss}"),
                });
            }
            loss_sum += loss as f64;
            net.backward(&grad);
            sgd.step(net, lr);
        }
        epoch_loss.push(loss_sum / batches.len().max(1) as f64);
        epoch_acc.push(eval_epoch(net)?);
    }
    Ok(TrainReport {
        epoch_loss,
        epoch_test_accuracy: epoch_acc,
        wall_clock_s: start.elapsed().as_secs_f64(),
        final_hash: net.state_hash(),
    })
}

fn build_image_batches(
    train: &LabeledImageSet,
    kind: &TaskKind<'_>,
    batch_size: usize,
    augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Array4<f32>, Vec<usize>)>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let mut images: Vec<Image> = chunk.iter().map(|&i| train.images()[i].clone()).collect();
        if let TaskKind::Pretext {
            task,
            injection: Some(injection),
        } = kind
        {
            if !injection.is_empty() && injection.shard_count() <= images.len() {
                images = inject_transformations(&images, injection, task.frame())?;
            }
        }
        if augment {
            images = images.iter().map(|img| augment_standard(img, rng)).collect();
        }
        let (x, labels) = match kind {
            TaskKind::Supervised => {
                let refs: Vec<&Image> = images.iter().collect();
                let labels = chunk.iter().map(|&i| train.labels()[i]).collect();
                (batch_from_images(&refs)?, labels)
            }
            TaskKind::Pretext { task, .. } => {
                let (expanded, labels) = expand_batch(&images, task)?;
                let refs: Vec<&Image> = expanded.iter().collect();
                (batch_from_images(&refs)?, labels)
            }
        };
        batches.push((x, labels));
    }
    Ok(batches)
}

/// Train on an image set, supervised or through a pretext expansion.
pub fn train_images(
    model: &mut Model,
    train: &LabeledImageSet,
    test: &LabeledImageSet,
    kind: TaskKind<'_>,
    spec: &OptimizerSpec,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let eval_set = test.select(&eval_indices(test.len(), opts.eval_cap), "epoch-eval");
    train_custom(
        &mut model.net,
        spec,
        opts.seed,
        |_, rng| build_image_batches(train, &kind, spec.batch_size, opts.augment, rng),
        |net| match &kind {
            TaskKind::Supervised => eval_supervised_net(net, &eval_set),
            TaskKind::Pretext { task, .. } => eval_pretext_net(net, &eval_set, task),
        },
    )
}

/// Train a head on precomputed feature tensors.
pub fn train_features(
    model: &mut Model,
    train_x: &Array4<f32>,
    train_y: &[usize],
    test_x: &Array4<f32>,
    test_y: &[usize],
    spec: &OptimizerSpec,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if train_x.dim().0 != train_y.len() || test_x.dim().0 != test_y.len() {
        return Err(Error::Shape("feature/label count mismatch".into()));
    }
    let eval_idx = eval_indices(test_y.len(), opts.eval_cap);
    let eval_x = test_x.select(Axis(0), &eval_idx);
    let eval_y: Vec<usize> = eval_idx.iter().map(|&i| test_y[i]).collect();
    let n = train_y.len();
    train_custom(
        &mut model.net,
        spec,
        opts.seed,
        |_, rng| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            Ok(order
                .chunks(spec.batch_size)
                .map(|chunk| {
                    let x = train_x.select(Axis(0), chunk);
                    let y = chunk.iter().map(|&i| train_y[i]).collect();
                    (x, y)
                })
                .collect())
        },
        |net| Ok(accuracy_on_tensor(net, &eval_x, &eval_y)),
    )
}

const EVAL_CHUNK: usize = 128;

fn accuracy_on_tensor(net: &mut Network<f32>, x: &Array4<f32>, y: &[usize]) -> f64 {
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    let mut at = 0usize;
    while at < n {
        let hi = (at + EVAL_CHUNK).min(n);
        let chunk: Vec<usize> = (at..hi).collect();
        let logits = net.forward(&x.select(Axis(0), &chunk), false);
        for (pred, &label) in argmax_rows(&logits).iter().zip(&y[at..hi]) {
            if *pred == label {
                correct += 1;
            }
        }
        at = hi;
    }
    correct as f64 / n as f64
}

/// Top-1 accuracy fraction on a labeled image set, evaluation mode.
pub fn evaluate_supervised(model: &mut Model, set: &LabeledImageSet) -> Result<f64> {
    eval_supervised_net(&mut model.net, set)
}

fn eval_supervised_net(net: &mut Network<f32>, set: &LabeledImageSet) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (chunk_imgs, chunk_labels) in chunked(set) {
        let x = batch_from_images(&chunk_imgs)?;
        let logits = net.forward(&x, false);
        for (pred, &label) in argmax_rows(&logits).iter().zip(chunk_labels) {
            if *pred == label {
                correct += 1;
            }
        }
        total += chunk_labels.len();
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// N-way pretext accuracy over all (image, instantiation) pairs of the set.
pub fn evaluate_pretext(model: &mut Model, set: &LabeledImageSet, task: &VtssTaskSpec) -> Result<f64> {
    eval_pretext_net(&mut model.net, set, task)
}

fn eval_pretext_net(net: &mut Network<f32>, set: &LabeledImageSet, task: &VtssTaskSpec) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (chunk_imgs, _) in chunked(set) {
        let owned: Vec<Image> = chunk_imgs.iter().map(|&i| i.clone()).collect();
        let (expanded, labels) = expand_batch(&owned, task)?;
        let refs: Vec<&Image> = expanded.iter().collect();
        let x = batch_from_images(&refs)?;
        let logits = net.forward(&x, false);
        for (pred, &label) in argmax_rows(&logits).iter().zip(&labels) {
            if *pred == label {
                correct += 1;
            }
        }
        total += labels.len();
    }
    Ok(correct as f64 / total.max(1) as f64)
}

fn chunked(set: &LabeledImageSet) -> impl Iterator<Item = (Vec<&Image>, &[usize])> {
    (0..set.len()).step_by(EVAL_CHUNK).map(move |at| {
        let hi = (at + EVAL_CHUNK).min(set.len());
        (
            set.images()[at..hi].iter().collect(),
            &set.labels()[at..hi],
        )
    })
}
