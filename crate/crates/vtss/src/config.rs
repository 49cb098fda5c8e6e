//! JSON experiment configuration: schema-validated parsing with defaults,
//! dataset loading, and construction of an `ExperimentContext`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{
    load_cifar_binary, load_idx, load_raw_tensor, resize_to, subsample_per_class, subset_classes,
    LabeledImageSet,
};
use crate::error::{Error, Result};
use crate::experiments::{exp2_task, ExperimentContext};
use crate::pretext::{make_rotation_task, make_scale_task, make_translation_task, VtssTaskSpec};
use crate::synth::generate_split;
use crate::transforms::CropFrame;
use crate::trainer::OptimizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 192 channels, 3 convs per block, 200-epoch recipe.
    Paper,
    /// 64 channels, 2 convs per block, 30-epoch recipe.
    Desk,
}

impl Profile {
    pub fn channels(self) -> usize {
        match self {
            Profile::Paper => 192,
            Profile::Desk => 64,
        }
    }

    pub fn convs_per_block(self) -> usize {
        match self {
            Profile::Paper => 3,
            Profile::Desk => 2,
        }
    }

    pub fn optimizer(self) -> OptimizerSpec {
        match self {
            Profile::Paper => OptimizerSpec::paper(),
            Profile::Desk => OptimizerSpec::desk(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// One of: fmnist, mnist, cifar10, synth, raw.
    pub name: String,
    /// Root directory for the dataset files; falls back to
    /// $VTSS_DATA_DIR/<name> when unset.
    pub path: Option<PathBuf>,
    /// Balanced subsample of the training split; full split when unset.
    pub samples_per_class: Option<usize>,
    pub test_samples_per_class: Option<usize>,
    /// Images are resized to this side after loading.
    pub side: usize,
    /// Restrict to a class subset of this size.
    pub classes: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "synth".into(),
            path: None,
            samples_per_class: None,
            test_samples_per_class: None,
            side: 32,
            classes: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Task name: rotation | translation | scale, or additive combinations
    /// joined with '+', e.g. "rot+trans" or "rot+trans+scale".
    pub task: String,
    /// Crop-frame margin in pixels; 0 = full-sized crop.
    pub margin: usize,
    pub translation_pixels: usize,
    pub scale_zooms: Vec<usize>,
    pub profile: Profile,
    /// Overrides the profile's recipe when set.
    pub optimizer: Option<OptimizerSpec>,
    pub head_optimizer: Option<OptimizerSpec>,
    pub tap_block: usize,
    pub seed: u64,
    pub augment_pretext: bool,
    pub augment_head: bool,
    /// Per-epoch accuracy-curve evaluation cap.
    pub eval_cap: Option<usize>,
    /// EXP 2 row names; defaults to the full table.
    pub rows: Option<Vec<String>>,
    /// Conflict-scan distance threshold (RMS per pixel).
    pub epsilon: f64,
    /// Ablation A grid: each entry is a list of instantiation encodings
    /// (e.g. ["rot:90"] or ["trans:up:2", "trans:down:2"]); a task-shaped
    /// default grid is used when unset.
    pub range_grid: Option<Vec<Vec<String>>>,
    /// Ablation B sample grid.
    pub samples_grid: Vec<usize>,
    /// Ablation C class-subset sizes.
    pub class_sizes: Vec<usize>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            task: "rotation".into(),
            margin: 0,
            translation_pixels: 5,
            scale_zooms: vec![2, 4],
            profile: Profile::Paper,
            optimizer: None,
            head_optimizer: None,
            tap_block: 2,
            seed: 0,
            augment_pretext: false,
            augment_head: false,
            eval_cap: Some(500),
            rows: None,
            epsilon: 0.05,
            range_grid: None,
            samples_grid: vec![20, 100],
            class_sizes: vec![1, 2, 3, 5, 8, 10],
            output_dir: PathBuf::from("results"),
        }
    }
}

fn config_err(pointer: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.into(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Task row letters ("R+T") from the config's task name.
    pub fn task_row(&self) -> Result<String> {
        self.task
            .split('+')
            .map(|part| match part.trim() {
                "rotation" | "rot" | "R" => Ok("R"),
                "translation" | "trans" | "T" => Ok("T"),
                "scale" | "S" => Ok("S"),
                other => Err(config_err("/task", format!("unknown task component '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(|parts| parts.join("+"))
    }

    /// Build the validated task spec this config describes.
    pub fn task_spec(&self) -> Result<VtssTaskSpec> {
        let row = self.task_row()?;
        exp2_task(&row, self.margin, self.translation_pixels, &self.scale_zooms)
            .map_err(|e| config_err("/task", e.to_string()))
    }

    pub fn optimizer_spec(&self) -> OptimizerSpec {
        self.optimizer.clone().unwrap_or_else(|| self.profile.optimizer())
    }

    pub fn head_optimizer_spec(&self) -> OptimizerSpec {
        self.head_optimizer
            .clone()
            .unwrap_or_else(|| self.optimizer_spec())
    }

    pub fn validate(&self) -> Result<()> {
        self.task_spec()?;
        if self.tap_block == 0 || self.tap_block > 4 {
            return Err(config_err("/tap_block", "must be in 1..=4"));
        }
        if self.dataset.side < 8 {
            return Err(config_err("/dataset/side", "side must be at least 8"));
        }
        self.optimizer_spec()
            .validate()
            .map_err(|e| config_err("/optimizer", e.to_string()))?;
        self.head_optimizer_spec()
            .validate()
            .map_err(|e| config_err("/head_optimizer", e.to_string()))?;
        if self.epsilon < 0.0 {
            return Err(config_err("/epsilon", "epsilon must be non-negative"));
        }
        Ok(())
    }
}

/// Parse and validate a JSON config file; unknown keys are rejected and
/// errors carry a JSON-pointer path.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = if e.path().to_string() == "." {
            "/".to_string()
        } else {
            format!("/{}", e.path().to_string().replace('.', "/"))
        };
        config_err(pointer, e.inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_root(cfg: &DatasetConfig) -> Result<PathBuf> {
    if let Some(path) = &cfg.path {
        return Ok(path.clone());
    }
    if let Ok(root) = std::env::var("VTSS_DATA_DIR") {
        return Ok(PathBuf::from(root).join(&cfg.name));
    }
    Err(config_err(
        "/dataset/path",
        "no dataset path given and VTSS_DATA_DIR is unset",
    ))
}

/// Load the train/test splits this config points at, applying resize,
/// class-subset and per-class subsampling.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let ds = &cfg.dataset;
    let (mut train, mut test) = match ds.name.as_str() {
        "synth" => {
            let train_n = ds.samples_per_class.unwrap_or(300);
            let test_n = ds.test_samples_per_class.unwrap_or(train_n / 3 + 1);
            (
                generate_split(train_n, crate::synth::DEFAULT_SIDE, cfg.seed, "train")?,
                generate_split(test_n, crate::synth::DEFAULT_SIDE, cfg.seed, "test")?,
            )
        }
        "fmnist" | "mnist" => {
            let root = dataset_root(ds)?;
            (
                load_idx(
                    &root.join("train-images-idx3-ubyte"),
                    &root.join("train-labels-idx1-ubyte"),
                )?,
                load_idx(
                    &root.join("t10k-images-idx3-ubyte"),
                    &root.join("t10k-labels-idx1-ubyte"),
                )?,
            )
        }
        "cifar10" => {
            let root = dataset_root(ds)?;
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| root.join(format!("data_batch_{i}.bin")))
                .collect();
            (
                load_cifar_binary(&batches)?,
                load_cifar_binary(&[root.join("test_batch.bin")])?,
            )
        }
        "raw" => {
            let root = dataset_root(ds)?;
            (
                load_raw_tensor(&root.join("train.vtss"))?,
                load_raw_tensor(&root.join("test.vtss"))?,
            )
        }
        other => {
            return Err(config_err(
                "/dataset/name",
                format!("unknown dataset '{other}'"),
            ));
        }
    };
    if let Some(k) = ds.classes {
        train = subset_classes(&train, k, cfg.seed)?;
        test = subset_classes(&test, k, cfg.seed)?;
    }
    if ds.name != "synth" {
        if let Some(n) = ds.samples_per_class {
            train = subsample_per_class(&train, n, cfg.seed)?;
        }
        if let Some(n) = ds.test_samples_per_class {
            test = subsample_per_class(&test, n, cfg.seed.wrapping_add(1))?;
        }
    }
    let train = resize_to(&train, ds.side)?;
    let test = resize_to(&test, ds.side)?;
    Ok((train, test))
}

/// Ablation A task grid: the explicit `range_grid` entries when given,
/// otherwise a default grid shaped by the config's task family (cumulative
/// rotation sets; growing translation shifts; growing zoom ranges).
pub fn range_grid(cfg: &ExperimentConfig) -> Result<Vec<VtssTaskSpec>> {
    use crate::transforms::TransformationInstantiation as Inst;

    if let Some(entries) = &cfg.range_grid {
        let mut tasks = Vec::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            let pointer = format!("/range_grid/{i}");
            let mut insts = vec![Inst::Identity];
            let mut required_margin = cfg.margin;
            for code in entry {
                let inst: Inst = code
                    .parse()
                    .map_err(|e: Error| config_err(pointer.clone(), e.to_string()))?;
                if let Inst::Translation { pixels, .. } = inst {
                    required_margin = required_margin.max(pixels);
                }
                insts.push(inst);
            }
            let frame = CropFrame::new(required_margin);
            let name = entry.join("+");
            tasks.push(
                VtssTaskSpec::new(insts, frame, name)
                    .map_err(|e| config_err(pointer, e.to_string()))?,
            );
        }
        return Ok(tasks);
    }

    let row = cfg.task_row()?;
    let family = row.split('+').next().unwrap_or("R");
    match family {
        "R" => {
            let full = make_rotation_task().with_frame(CropFrame::new(cfg.margin))?;
            let mut tasks = Vec::new();
            for upto in 1..=3u8 {
                let insts: Vec<Inst> = std::iter::once(Inst::Identity)
                    .chain((1..=upto).map(|q| Inst::Rotation { quarter_turns: q }))
                    .collect();
                tasks.push(VtssTaskSpec::new(
                    insts,
                    full.frame(),
                    format!("rotation-upto-{}", 90 * upto as usize),
                )?);
            }
            Ok(tasks)
        }
        "T" => {
            let mut pixels: Vec<usize> = vec![1, 2, cfg.translation_pixels];
            pixels.sort_unstable();
            pixels.dedup();
            pixels
                .into_iter()
                .map(|p| make_translation_task(p, cfg.margin.max(p)))
                .collect()
        }
        _ => (1..=cfg.scale_zooms.len())
            .map(|k| make_scale_task(&cfg.scale_zooms[..k], cfg.margin))
            .collect(),
    }
}

/// Assemble the runner context for this config.
pub fn build_context(
    cfg: &ExperimentConfig,
    train: LabeledImageSet,
    test: LabeledImageSet,
) -> ExperimentContext {
    ExperimentContext {
        train,
        test,
        dataset_name: cfg.dataset.name.clone(),
        num_blocks: 4,
        convs_per_block: cfg.profile.convs_per_block(),
        channels: cfg.profile.channels(),
        optimizer: cfg.optimizer_spec(),
        head_optimizer: cfg.head_optimizer_spec(),
        tap_block: cfg.tap_block,
        seed: cfg.seed,
        augment_pretext: cfg.augment_pretext,
        augment_head: cfg.augment_head,
        eval_cap: cfg.eval_cap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(r#"{"dataset": {"name": "synth"}, "task": "rotation"}"#).unwrap();
        assert_eq!(cfg.margin, 0);
        assert_eq!(cfg.tap_block, 2);
        assert_eq!(cfg.profile, Profile::Paper);
        assert_eq!(cfg.optimizer_spec(), OptimizerSpec::paper());
        assert_eq!(cfg.task_spec().unwrap().num_classes(), 4);
    }

    #[test]
    fn combined_task_class_count() {
        let cfg = parse_config_str(
            r#"{"task": "rot+trans", "margin": 5}"#,
        )
        .unwrap();
        assert_eq!(cfg.task_spec().unwrap().num_classes(), 8);
    }

    #[test]
    fn unknown_keys_rejected_with_pointer() {
        let err = parse_config_str(r#"{"task": "rotation", "nonsense": 1}"#).unwrap_err();
        match err {
            Error::Config { .. } => {}
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn bad_nested_value_reports_path() {
        let err = parse_config_str(r#"{"dataset": {"name": "synth", "side": "wide"}}"#).unwrap_err();
        match err {
            Error::Config { pointer, .. } => assert!(pointer.contains("dataset")),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn oversized_translation_rejected_at_parse_time() {
        let err = parse_config_str(
            r#"{"task": "translation", "margin": 5, "translation_pixels": 8}"#,
        )
        .unwrap_err();
        match err {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/task"),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn synth_data_loads_and_resizes() {
        let cfg = parse_config_str(
            r#"{"dataset": {"name": "synth", "samples_per_class": 4, "test_samples_per_class": 2, "side": 32}}"#,
        )
        .unwrap();
        let (train, test) = load_data(&cfg).unwrap();
        assert_eq!(train.len(), 40);
        assert_eq!(test.len(), 20);
        assert_eq!(train.image_shape(), Some((1, 32, 32)));
        let ctx = build_context(&cfg, train, test);
        assert_eq!(ctx.channels, 192);
    }
}
