//! Experiment orchestration: pretext pretraining, frozen-feature
//! semi-supervised evaluation, the conflict-injection ablation (EXP 1), the
//! combination study (EXP 2), and the appendix ablations.

use std::time::Instant;

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conflict::dataset_fingerprint;
use crate::datasets::{subsample_per_class, subset_classes, Image, LabeledImageSet};
use crate::error::{Error, Result};
use crate::model::{
    batch_from_images, build_backbone, build_classifier_head, channel_statistics, freeze_up_to,
    ArchitectureSpec, Model,
};
use crate::pretext::{
    combine, make_exp1_schedule, make_rotation_task, make_scale_task, make_translation_task,
    ConflictInjectionSpec, VtssTaskSpec,
};
use crate::trainer::{
    evaluate_pretext, evaluate_supervised, train_custom, train_features, train_images,
    OptimizerSpec, TaskKind, TrainOptions, TrainReport,
};
use crate::transforms::{apply, augment_standard, CropFrame, TransformationInstantiation as Inst};

/// Everything a runner needs besides the task itself.
#[derive(Clone)]
pub struct ExperimentContext {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
    pub dataset_name: String,
    pub num_blocks: usize,
    pub convs_per_block: usize,
    pub channels: usize,
    pub optimizer: OptimizerSpec,
    pub head_optimizer: OptimizerSpec,
    pub tap_block: usize,
    pub seed: u64,
    pub augment_pretext: bool,
    pub augment_head: bool,
    /// Per-epoch evaluation subset size (the final numbers always use the
    /// full test split).
    pub eval_cap: Option<usize>,
}

impl ExperimentContext {
    fn arch_for(&self, input_side: usize, num_outputs: usize) -> Result<ArchitectureSpec> {
        let (c, _, _) = self
            .train
            .image_shape()
            .ok_or_else(|| Error::Consistency("empty training split".into()))?;
        Ok(ArchitectureSpec {
            num_blocks: self.num_blocks,
            convs_per_block: self.convs_per_block,
            channels: self.channels,
            input_shape: (c, input_side, input_side),
            num_outputs,
        })
    }

    fn full_side(&self) -> Result<usize> {
        Ok(self
            .train
            .image_shape()
            .ok_or_else(|| Error::Consistency("empty training split".into()))?
            .1)
    }
}

/// One row of a result table, in percent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub row_id: String,
    pub dataset: String,
    pub task: String,
    pub injection: String,
    pub pretext_acc: f64,
    pub semisup_acc: f64,
    pub seed: u64,
    pub runtime_s: f64,
    pub fingerprint: String,
}

fn fingerprint_of(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0]);
    }
    let d = hasher.finalize();
    d.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Crop every image to the frame (identity transform).
pub fn crop_set(set: &LabeledImageSet, frame: CropFrame) -> Result<LabeledImageSet> {
    if frame.margin == 0 {
        return Ok(set.clone());
    }
    let images = set
        .images()
        .iter()
        .map(|img| apply(Inst::Identity, img, frame))
        .collect::<Result<Vec<_>>>()?;
    LabeledImageSet::new(
        images,
        set.labels().to_vec(),
        set.num_classes(),
        set.split_name(),
    )
}

pub struct PretrainOutcome {
    pub model: Model,
    pub pretext_accuracy: f64,
    pub report: TrainReport,
}

/// Train a backbone on the (optionally injected) pretext stream and report
/// the N-way pretext accuracy over the full test split.
pub fn run_pretrain(
    ctx: &ExperimentContext,
    task: &VtssTaskSpec,
    injection: Option<&ConflictInjectionSpec>,
) -> Result<PretrainOutcome> {
    let input_side = task.output_side(ctx.full_side()?)?;
    let arch = ctx.arch_for(input_side, task.num_classes())?;
    let mut model = build_backbone(&arch, ctx.seed)?;
    let framed_train = crop_set(&ctx.train, task.frame())?;
    let refs: Vec<&Image> = framed_train.images().iter().collect();
    let (mean, std) = channel_statistics(&refs)?;
    model.net.set_normalization(mean, std)?;

    let opts = TrainOptions {
        augment: ctx.augment_pretext,
        seed: ctx.seed.wrapping_add(1),
        eval_cap: ctx.eval_cap,
    };
    let report = train_images(
        &mut model,
        &ctx.train,
        &ctx.test,
        TaskKind::Pretext { task, injection },
        &ctx.optimizer,
        &opts,
    )?;
    let pretext_accuracy = evaluate_pretext(&mut model, &ctx.test, task)?;
    Ok(PretrainOutcome {
        model,
        pretext_accuracy,
        report,
    })
}

pub struct SemisupOutcome {
    pub accuracy: f64,
    pub head: Model,
    pub report: TrainReport,
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
    pub head_hash_before: String,
}

fn features_of(
    backbone: &mut Model,
    set: &LabeledImageSet,
    frame: CropFrame,
    tap_block: usize,
) -> Result<(Array4<f32>, Vec<usize>)> {
    let framed = crop_set(set, frame)?;
    let mut chunks = Vec::new();
    let step = 256;
    for at in (0..framed.len()).step_by(step) {
        let hi = (at + step).min(framed.len());
        let refs: Vec<&Image> = framed.images()[at..hi].iter().collect();
        let x = batch_from_images(&refs)?;
        chunks.push(backbone.net.forward_features(&x, tap_block)?);
    }
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    let features = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::Shape(format!("feature concat: {e}")))?;
    Ok((features, framed.labels().to_vec()))
}

/// Freeze the backbone through `tap_block`, train a classifier head on its
/// features over pristine (uninjected) labeled data, and report downstream
/// test accuracy C.
pub fn run_semisup_eval(
    ctx: &ExperimentContext,
    backbone: &mut Model,
    frame: CropFrame,
) -> Result<SemisupOutcome> {
    freeze_up_to(backbone, ctx.tap_block)?;
    let frozen_hash_before = backbone.net.frozen_hash();

    let feat_shape = backbone.arch.feature_shape(ctx.tap_block);
    let mut head = build_classifier_head(
        &backbone.arch,
        feat_shape,
        ctx.train.num_classes(),
        ctx.seed.wrapping_add(2),
    )?;
    let head_hash_before = head.net.state_hash();

    let opts = TrainOptions {
        augment: false,
        seed: ctx.seed.wrapping_add(3),
        eval_cap: ctx.eval_cap,
    };
    let (test_x, test_y) = features_of(backbone, &ctx.test, frame, ctx.tap_block)?;
    let report = if ctx.augment_head {
        // augmentation changes pixels, so features are recomputed per epoch
        let eval_idx = crate::trainer::eval_indices(test_y.len(), opts.eval_cap);
        let eval_x = test_x.select(Axis(0), &eval_idx);
        let eval_y: Vec<usize> = eval_idx.iter().map(|&i| test_y[i]).collect();
        let train_set = ctx.train.clone();
        let batch_size = ctx.head_optimizer.batch_size;
        let tap = ctx.tap_block;
        let head_opt = ctx.head_optimizer.clone();
        let seed = opts.seed;
        train_custom(
            &mut head.net,
            &head_opt,
            seed,
            |_, rng| {
                use rand::seq::SliceRandom;
                let mut order: Vec<usize> = (0..train_set.len()).collect();
                order.shuffle(rng);
                let mut batches = Vec::new();
                for chunk in order.chunks(batch_size) {
                    let images: Vec<Image> = chunk
                        .iter()
                        .map(|&i| augment_standard(&train_set.images()[i], rng))
                        .collect();
                    let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels()[i]).collect();
                    let framed = images
                        .iter()
                        .map(|img| apply(Inst::Identity, img, frame))
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&Image> = framed.iter().collect();
                    let x = batch_from_images(&refs)?;
                    let feats = backbone.net.forward_features(&x, tap)?;
                    batches.push((feats, labels));
                }
                Ok(batches)
            },
            |net| {
                let logits_acc = {
                    let mut correct = 0usize;
                    for (i, row) in eval_x.axis_chunks_iter(Axis(0), 128).enumerate() {
                        let logits = net.forward(&row.to_owned(), false);
                        for (p, &l) in crate::model::argmax_rows(&logits)
                            .iter()
                            .zip(&eval_y[i * 128..(i * 128 + logits.dim().0)])
                        {
                            if *p == l {
                                correct += 1;
                            }
                        }
                    }
                    correct as f64 / eval_y.len().max(1) as f64
                };
                Ok(logits_acc)
            },
        )?
    } else {
        let (train_x, train_y) = features_of(backbone, &ctx.train, frame, ctx.tap_block)?;
        train_features(
            &mut head,
            &train_x,
            &train_y,
            &test_x,
            &test_y,
            &ctx.head_optimizer,
            &opts,
        )?
    };

    // final accuracy over the full test split
    let mut correct = 0usize;
    for at in (0..test_y.len()).step_by(128) {
        let hi = (at + 128).min(test_y.len());
        let idx: Vec<usize> = (at..hi).collect();
        let logits = head.net.forward(&test_x.select(Axis(0), &idx), false);
        for (p, &l) in crate::model::argmax_rows(&logits).iter().zip(&test_y[at..hi]) {
            if *p == l {
                correct += 1;
            }
        }
    }
    let accuracy = correct as f64 / test_y.len().max(1) as f64;
    let frozen_hash_after = backbone.net.frozen_hash();
    Ok(SemisupOutcome {
        accuracy,
        head,
        report,
        frozen_hash_before,
        frozen_hash_after,
        head_hash_before,
    })
}

fn record(
    ctx: &ExperimentContext,
    experiment: &str,
    row_id: &str,
    task: &str,
    injection: &str,
    pretext_acc: f64,
    semisup_acc: f64,
    started: Instant,
) -> ResultRecord {
    let fingerprint = fingerprint_of(&[
        experiment,
        row_id,
        &ctx.dataset_name,
        task,
        injection,
        &dataset_fingerprint(&ctx.train),
        &dataset_fingerprint(&ctx.test),
        &format!("{:?}", ctx.optimizer),
        &format!("{:?}", ctx.head_optimizer),
        &format!(
            "blocks={} convs={} ch={} tap={} seed={} aug=({},{})",
            ctx.num_blocks,
            ctx.convs_per_block,
            ctx.channels,
            ctx.tap_block,
            ctx.seed,
            ctx.augment_pretext,
            ctx.augment_head
        ),
    ]);
    ResultRecord {
        experiment: experiment.to_string(),
        row_id: row_id.to_string(),
        dataset: ctx.dataset_name.clone(),
        task: task.to_string(),
        injection: injection.to_string(),
        pretext_acc: 100.0 * pretext_acc,
        semisup_acc: 100.0 * semisup_acc,
        seed: ctx.seed,
        runtime_s: started.elapsed().as_secs_f64(),
        fingerprint,
    }
}

/// One pretrain + semisup row.
pub fn run_row(
    ctx: &ExperimentContext,
    experiment: &str,
    row_id: &str,
    task: &VtssTaskSpec,
    injection: Option<&ConflictInjectionSpec>,
) -> Result<(ResultRecord, PretrainOutcome, SemisupOutcome)> {
    let started = Instant::now();
    let mut pre = run_pretrain(ctx, task, injection)?;
    let semi = run_semisup_eval(ctx, &mut pre.model, task.frame())?;
    let rec = record(
        ctx,
        experiment,
        row_id,
        task.name(),
        injection.map_or_else(|| "none".to_string(), |i| i.label()).as_str(),
        pre.pretext_accuracy,
        semi.accuracy,
        started,
    );
    Ok((rec, pre, semi))
}

/// Fully supervised baseline over `num_blocks` blocks (3-block parity
/// baseline = backbone blocks 1-2 plus one head block trained end-to-end).
pub fn run_fully_supervised(
    ctx: &ExperimentContext,
    num_blocks: usize,
    frame: CropFrame,
) -> Result<(f64, TrainReport)> {
    let train = crop_set(&ctx.train, frame)?;
    let test = crop_set(&ctx.test, frame)?;
    let side = frame.crop_side(ctx.full_side()?)?;
    let arch = ArchitectureSpec {
        num_blocks,
        ..ctx.arch_for(side, train.num_classes())?
    };
    let mut model = build_backbone(&arch, ctx.seed.wrapping_add(4))?;
    let refs: Vec<&Image> = train.images().iter().collect();
    let (mean, std) = channel_statistics(&refs)?;
    model.net.set_normalization(mean, std)?;
    let opts = TrainOptions {
        augment: ctx.augment_head,
        seed: ctx.seed.wrapping_add(5),
        eval_cap: ctx.eval_cap,
    };
    let report = train_images(
        &mut model,
        &train,
        &test,
        TaskKind::Supervised,
        &ctx.optimizer,
        &opts,
    )?;
    let acc = evaluate_supervised(&mut model, &test)?;
    Ok((acc, report))
}

/// EXP 1: the injection schedule for a single-transformation task, one row
/// per injection run.
pub fn run_exp1(ctx: &ExperimentContext, task: &VtssTaskSpec) -> Result<Vec<ResultRecord>> {
    let schedule = make_exp1_schedule(task)?;
    let mut rows = Vec::with_capacity(schedule.len());
    for (i, injection) in schedule.iter().enumerate() {
        let inj = if injection.is_empty() { None } else { Some(injection) };
        let (rec, _, _) = run_row(ctx, "exp1", &format!("run{}", i + 1), task, inj)?;
        rows.push(rec);
    }
    Ok(rows)
}

/// Build the task for an EXP 2 row name ("R", "T", "S", "R+T", ...).
pub fn exp2_task(
    row: &str,
    margin: usize,
    translation_pixels: usize,
    scale_zooms: &[usize],
) -> Result<VtssTaskSpec> {
    let frame = CropFrame::new(margin);
    let parts: Vec<&str> = row.split('+').collect();
    let mut tasks = Vec::new();
    for part in &parts {
        let t = match *part {
            "R" => make_rotation_task().with_frame(frame)?,
            "T" => make_translation_task(translation_pixels, margin)?,
            "S" => make_scale_task(scale_zooms, margin)?,
            other => {
                return Err(Error::Spec(format!("unknown EXP 2 row component {other}")));
            }
        };
        tasks.push(t);
    }
    if tasks.len() == 1 {
        Ok(tasks.pop().unwrap())
    } else {
        combine(&tasks)
    }
}

/// EXP 2: individual and additive-combination rows, one crop regime per
/// call (all rows share the frame).
pub fn run_exp2(
    ctx: &ExperimentContext,
    rows: &[&str],
    margin: usize,
    translation_pixels: usize,
    scale_zooms: &[usize],
) -> Result<Vec<ResultRecord>> {
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let started = Instant::now();
        match *row {
            "FS3" | "FS4" => {
                let blocks = if *row == "FS3" { 3 } else { 4 };
                let (acc, _) = run_fully_supervised(ctx, blocks, CropFrame::new(margin))?;
                records.push(record(ctx, "exp2", row, row, "none", 0.0, acc, started));
            }
            _ => {
                let task = exp2_task(row, margin, translation_pixels, scale_zooms)?;
                let (rec, _, _) = run_row(ctx, "exp2", row, &task, None)?;
                records.push(rec);
            }
        }
    }
    Ok(records)
}

/// Ablation A: usefulness C per task variant in the grid.
pub fn run_ablation_range(
    ctx: &ExperimentContext,
    grid: &[VtssTaskSpec],
) -> Result<Vec<ResultRecord>> {
    let mut records = Vec::with_capacity(grid.len());
    for (i, task) in grid.iter().enumerate() {
        let (rec, _, _) = run_row(ctx, "ablate-range", &format!("grid{i}"), task, None)?;
        records.push(rec);
    }
    Ok(records)
}

/// Ablation B: C over (pretext samples/class x semisup samples/class).
pub fn run_ablation_samples(
    ctx: &ExperimentContext,
    task: &VtssTaskSpec,
    grid: &[usize],
) -> Result<(Vec<Vec<f64>>, Vec<ResultRecord>)> {
    let mut matrix = vec![vec![f64::NAN; grid.len()]; grid.len()];
    let mut records = Vec::new();
    for (i, &vtss_n) in grid.iter().enumerate() {
        let vtss_train = subsample_per_class(&ctx.train, vtss_n, ctx.seed.wrapping_add(11))?;
        let pre_ctx = ExperimentContext {
            train: vtss_train,
            ..ctx.clone()
        };
        let mut pre = run_pretrain(&pre_ctx, task, None)?;
        for (j, &semi_n) in grid.iter().enumerate() {
            let started = Instant::now();
            let semi_train = subsample_per_class(&ctx.train, semi_n, ctx.seed.wrapping_add(12))?;
            let semi_ctx = ExperimentContext {
                train: semi_train,
                ..ctx.clone()
            };
            let semi = run_semisup_eval(&semi_ctx, &mut pre.model, task.frame())?;
            matrix[i][j] = 100.0 * semi.accuracy;
            records.push(record(
                &semi_ctx,
                "ablate-samples",
                &format!("vtss{vtss_n}-semi{semi_n}"),
                task.name(),
                "none",
                pre.pretext_accuracy,
                semi.accuracy,
                started,
            ));
        }
    }
    Ok((matrix, records))
}

/// Ablation C: C over class-subset sizes; both phases see the subset.
pub fn run_ablation_classes(
    ctx: &ExperimentContext,
    task: &VtssTaskSpec,
    sizes: &[usize],
) -> Result<Vec<ResultRecord>> {
    let mut records = Vec::with_capacity(sizes.len());
    for &k in sizes {
        let sub_ctx = ExperimentContext {
            train: subset_classes(&ctx.train, k, ctx.seed.wrapping_add(21))?,
            test: subset_classes(&ctx.test, k, ctx.seed.wrapping_add(21))?,
            ..ctx.clone()
        };
        let (rec, _, _) = run_row(&sub_ctx, "ablate-classes", &format!("classes{k}"), task, None)?;
        records.push(rec);
    }
    Ok(records)
}

/// Random-feature control: an untrained backbone evaluated the same way.
pub fn run_random_baseline(
    ctx: &ExperimentContext,
    task: &VtssTaskSpec,
) -> Result<(ResultRecord, SemisupOutcome)> {
    let started = Instant::now();
    let input_side = task.output_side(ctx.full_side()?)?;
    let arch = ctx.arch_for(input_side, task.num_classes())?;
    let mut backbone = build_backbone(&arch, ctx.seed)?;
    let framed_train = crop_set(&ctx.train, task.frame())?;
    let refs: Vec<&Image> = framed_train.images().iter().collect();
    let (mean, std) = channel_statistics(&refs)?;
    backbone.net.set_normalization(mean, std)?;
    let semi = run_semisup_eval(ctx, &mut backbone, task.frame())?;
    let rec = record(
        ctx,
        "random-baseline",
        "random",
        task.name(),
        "none",
        0.0,
        semi.accuracy,
        started,
    );
    Ok((rec, semi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_split;

    fn tiny_ctx() -> ExperimentContext {
        let train = generate_split(6, 16, 3, "train").unwrap();
        let test = generate_split(3, 16, 3, "test").unwrap();
        ExperimentContext {
            train,
            test,
            dataset_name: "synth".into(),
            num_blocks: 4,
            convs_per_block: 1,
            channels: 8,
            optimizer: OptimizerSpec {
                epochs: 2,
                milestones: vec![],
                batch_size: 16,
                ..OptimizerSpec::paper()
            },
            head_optimizer: OptimizerSpec {
                epochs: 2,
                milestones: vec![],
                batch_size: 16,
                ..OptimizerSpec::paper()
            },
            tap_block: 2,
            seed: 5,
            augment_pretext: false,
            augment_head: false,
            eval_cap: Some(20),
        }
    }

    #[test]
    fn row_pipeline_respects_freeze_contract() {
        let ctx = tiny_ctx();
        let task = make_rotation_task();
        let (rec, _pre, semi) = run_row(&ctx, "smoke", "r1", &task, None).unwrap();
        assert_eq!(semi.frozen_hash_before, semi.frozen_hash_after);
        assert_ne!(semi.head.net.state_hash(), semi.head_hash_before);
        assert!(rec.pretext_acc >= 0.0 && rec.pretext_acc <= 100.0);
        assert!(rec.semisup_acc >= 0.0 && rec.semisup_acc <= 100.0);
        assert!(!rec.fingerprint.is_empty());
    }

    #[test]
    fn rows_are_deterministic() {
        let ctx = tiny_ctx();
        let task = make_rotation_task();
        let (a, _, _) = run_row(&ctx, "smoke", "r1", &task, None).unwrap();
        let (b, _, _) = run_row(&ctx, "smoke", "r1", &task, None).unwrap();
        assert_eq!(a.pretext_acc, b.pretext_acc);
        assert_eq!(a.semisup_acc, b.semisup_acc);
        assert_eq!(a.fingerprint, b.fingerprint);
    }

    #[test]
    fn exp1_schedule_produces_expected_rows() {
        let ctx = tiny_ctx();
        let task = make_rotation_task();
        let rows = run_exp1(&ctx, &task).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].injection, "none");
        assert_eq!(rows[3].injection, "rot:90+rot:180+rot:270");
    }

    #[test]
    fn exp2_task_builder_matches_class_counts() {
        let r = exp2_task("R", 5, 5, &[2, 4]).unwrap();
        assert_eq!(r.num_classes(), 4);
        let t = exp2_task("T", 5, 5, &[2, 4]).unwrap();
        assert_eq!(t.num_classes(), 5);
        let rt = exp2_task("R+T", 5, 5, &[2, 4]).unwrap();
        assert_eq!(rt.num_classes(), 8);
        let rts = exp2_task("R+T+S", 5, 5, &[2, 4]).unwrap();
        assert_eq!(rts.num_classes(), 10);
        assert!(exp2_task("X", 5, 5, &[2]).is_err());
    }

    #[test]
    fn ablation_runners_produce_full_grids() {
        let mut ctx = tiny_ctx();
        ctx.optimizer.epochs = 1;
        ctx.head_optimizer.epochs = 1;
        let task = make_rotation_task();
        let (matrix, recs) = run_ablation_samples(&ctx, &task, &[2, 4]).unwrap();
        assert_eq!(matrix.len(), 2);
        assert!(matrix.iter().flatten().all(|v| v.is_finite()));
        assert_eq!(recs.len(), 4);
        let curve = run_ablation_classes(&ctx, &task, &[2, 3]).unwrap();
        assert_eq!(curve.len(), 2);
    }
}
