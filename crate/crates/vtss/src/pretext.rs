//! N-way pretext task construction, batch expansion and conflict injection.

use serde::{Deserialize, Serialize};

use crate::datasets::Image;
use crate::error::{Error, Result};
use crate::transforms::{
    self, CropFrame, Direction, TransformationInstantiation as Inst,
};

/// An ordered transformation set defining an N-way pretext task. The identity
/// is always present, exactly once, at label 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VtssTaskSpec {
    instantiations: Vec<Inst>,
    frame: CropFrame,
    name: String,
}

impl VtssTaskSpec {
    pub fn new(instantiations: Vec<Inst>, frame: CropFrame, name: impl Into<String>) -> Result<Self> {
        match instantiations.first() {
            Some(Inst::Identity) => {}
            _ => return Err(Error::Spec("identity must sit at label 0".into())),
        }
        if instantiations.len() < 2 {
            return Err(Error::Spec(
                "task needs at least one non-identity instantiation".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for inst in &instantiations {
            inst.validate()?;
            if !seen.insert(inst.encode()) {
                return Err(Error::Spec(format!("duplicate instantiation {inst}")));
            }
        }
        Ok(VtssTaskSpec {
            instantiations,
            frame,
            name: name.into(),
        })
    }

    pub fn instantiations(&self) -> &[Inst] {
        &self.instantiations
    }

    pub fn frame(&self) -> CropFrame {
        self.frame
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.instantiations.len()
    }

    /// Same instantiations under a different crop frame.
    pub fn with_frame(&self, frame: CropFrame) -> Result<Self> {
        VtssTaskSpec::new(self.instantiations.clone(), frame, self.name.clone())
    }

    /// Side length of every expanded image for a `full_side` input.
    pub fn output_side(&self, full_side: usize) -> Result<usize> {
        self.frame.crop_side(full_side)
    }
}

/// The instantiations planted into the original data (the experimentally
/// controlled portion of the pre-existing transformation set). The identity
/// is implied and not listed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConflictInjectionSpec {
    instantiations: Vec<Inst>,
}

impl ConflictInjectionSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(instantiations: Vec<Inst>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for inst in &instantiations {
            if inst.is_identity() {
                return Err(Error::Spec("identity is implied, not listed".into()));
            }
            inst.validate()?;
            if !seen.insert(inst.encode()) {
                return Err(Error::Spec(format!("duplicate injected instantiation {inst}")));
            }
        }
        Ok(ConflictInjectionSpec { instantiations })
    }

    pub fn instantiations(&self) -> &[Inst] {
        &self.instantiations
    }

    pub fn is_empty(&self) -> bool {
        self.instantiations.is_empty()
    }

    /// Shard count: the listed instantiations plus the untouched identity shard.
    pub fn shard_count(&self) -> usize {
        self.instantiations.len() + 1
    }

    pub fn label(&self) -> String {
        if self.is_empty() {
            "none".to_string()
        } else {
            self.instantiations
                .iter()
                .map(|i| i.encode())
                .collect::<Vec<_>>()
                .join("+")
        }
    }
}

/// The 4-way rotation task: [id, rot:90, rot:180, rot:270], full frame.
pub fn make_rotation_task() -> VtssTaskSpec {
    let insts = vec![
        Inst::Identity,
        Inst::Rotation { quarter_turns: 1 },
        Inst::Rotation { quarter_turns: 2 },
        Inst::Rotation { quarter_turns: 3 },
    ];
    VtssTaskSpec::new(insts, CropFrame::full(), "rotation").expect("fixed task spec is valid")
}

/// The 5-way translation task: center plus one shift per direction.
pub fn make_translation_task(pixels: usize, margin: usize) -> Result<VtssTaskSpec> {
    if pixels > margin {
        return Err(Error::Geometry(format!(
            "translation by {pixels} exceeds margin {margin}"
        )));
    }
    if pixels == 0 {
        return Err(Error::Spec("translation pixels must be >= 1".into()));
    }
    let mut insts = vec![Inst::Identity];
    insts.extend(Direction::ALL.map(|direction| Inst::Translation { direction, pixels }));
    VtssTaskSpec::new(insts, CropFrame::new(margin), "translation")
}

/// The (n+1)-way scale task over a strictly increasing zoom list.
pub fn make_scale_task(zooms: &[usize], margin: usize) -> Result<VtssTaskSpec> {
    if zooms.is_empty() {
        return Err(Error::Spec("scale task needs at least one zoom".into()));
    }
    if zooms.iter().any(|&z| z == 0) {
        return Err(Error::Spec("zooms must be strictly positive".into()));
    }
    if zooms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Spec(format!(
            "zooms must be strictly increasing, got {zooms:?}"
        )));
    }
    let mut insts = vec![Inst::Identity];
    insts.extend(zooms.iter().map(|&zoom_pixels| Inst::Scale { zoom_pixels }));
    VtssTaskSpec::new(insts, CropFrame::new(margin), "scale")
}

/// Additive combination: one shared identity at label 0, then each task's
/// non-identity instantiations in task order. Class count is 1 + sum(n_i - 1);
/// rotation(4) + translation(5) gives 8.
pub fn combine(tasks: &[VtssTaskSpec]) -> Result<VtssTaskSpec> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::Spec("combine needs at least one task".into()))?;
    let frame = first.frame();
    let mut insts = vec![Inst::Identity];
    let mut names = Vec::new();
    for task in tasks {
        if task.frame() != frame {
            return Err(Error::Spec(format!(
                "crop frame mismatch: {:?} vs {:?}",
                task.frame(),
                frame
            )));
        }
        names.push(task.name().to_string());
        insts.extend(task.instantiations().iter().skip(1).copied());
    }
    VtssTaskSpec::new(insts, frame, names.join("+"))
}

/// Expand a batch by every instantiation of the task. Output ordering is
/// label-major, then original batch order: all identity copies first, then
/// all label-1 copies, and so on. Size is |batch| * num_classes with an
/// exactly uniform label histogram.
pub fn expand_batch(batch: &[Image], spec: &VtssTaskSpec) -> Result<(Vec<Image>, Vec<usize>)> {
    let mut images = Vec::with_capacity(batch.len() * spec.num_classes());
    let mut labels = Vec::with_capacity(batch.len() * spec.num_classes());
    for (k, &inst) in spec.instantiations().iter().enumerate() {
        for (i, img) in batch.iter().enumerate() {
            let out = transforms::apply(inst, img, spec.frame()).map_err(|e| {
                Error::Spec(format!("expand failed on sample {i} with {inst}: {e}"))
            })?;
            images.push(out);
            labels.push(k);
        }
    }
    Ok((images, labels))
}

/// Size-preserving embedding of an instantiation into original data. Rotation
/// and scale already preserve the side; translation becomes a content shift
/// with edge replication since a crop-window displacement would shrink the
/// image.
pub fn embed_into_original(inst: Inst, img: &Image) -> Result<Image> {
    match inst {
        Inst::Identity => Ok(img.clone()),
        Inst::Rotation { quarter_turns } => transforms::rotate90(img, quarter_turns),
        Inst::RotationInterp { degrees } => transforms::rotate_interp(img, degrees),
        Inst::Translation { direction, pixels } => {
            transforms::shift_edge_replicate(img, direction, pixels)
        }
        Inst::Scale { zoom_pixels } => transforms::scale_zoom(img, zoom_pixels),
    }
}

/// Plant injected instantiations into a batch. The batch is partitioned into
/// K contiguous shards (K = |injection| + 1, remainder spread to the earliest
/// shards); shard 0 stays untouched, shard j is transformed by instantiation
/// j. Replaces samples rather than appending, so per-epoch sample counts stay
/// constant across runs.
pub fn inject_transformations(
    batch: &[Image],
    injection: &ConflictInjectionSpec,
    _frame: CropFrame,
) -> Result<Vec<Image>> {
    let k = injection.shard_count();
    let b = batch.len();
    if k > b {
        return Err(Error::Shard(format!(
            "{k} shards cannot partition a batch of {b}"
        )));
    }
    let sizes = shard_sizes(b, k);
    let mut out = Vec::with_capacity(b);
    let mut cursor = 0usize;
    for (j, &size) in sizes.iter().enumerate() {
        for img in &batch[cursor..cursor + size] {
            if j == 0 {
                out.push(img.clone());
            } else {
                out.push(embed_into_original(injection.instantiations()[j - 1], img)?);
            }
        }
        cursor += size;
    }
    Ok(out)
}

/// Contiguous shard sizes: floor(b/k) each, remainder to the front.
pub fn shard_sizes(b: usize, k: usize) -> Vec<usize> {
    let base = b / k;
    let rem = b % k;
    (0..k).map(|j| base + usize::from(j < rem)).collect()
}

/// Cumulative injection schedule for a single-transformation task.
///
/// Rotation: 4 runs, injecting `{}, {90}, {90,180}, {90,180,270}`.
/// Translation: 5 runs matching the reported row sets
/// `{}, {U}, {U,R}, {U,D,L}, {U,D,L,R}`.
pub fn make_exp1_schedule(task: &VtssTaskSpec) -> Result<Vec<ConflictInjectionSpec>> {
    let non_identity: Vec<Inst> = task.instantiations().iter().skip(1).copied().collect();
    let all_rotations = non_identity
        .iter()
        .all(|i| matches!(i, Inst::Rotation { .. }));
    let all_translations = non_identity
        .iter()
        .all(|i| matches!(i, Inst::Translation { .. }));

    if all_rotations {
        let mut runs = vec![ConflictInjectionSpec::empty()];
        for end in 1..=non_identity.len() {
            runs.push(ConflictInjectionSpec::new(non_identity[..end].to_vec())?);
        }
        return Ok(runs);
    }
    if all_translations {
        let pixels = match non_identity[0] {
            Inst::Translation { pixels, .. } => pixels,
            _ => unreachable!(),
        };
        let t = |direction| Inst::Translation { direction, pixels };
        use Direction::*;
        let rows: [&[Inst]; 5] = [
            &[],
            &[t(Up)],
            &[t(Up), t(Right)],
            &[t(Up), t(Down), t(Left)],
            &[t(Up), t(Down), t(Left), t(Right)],
        ];
        return rows
            .iter()
            .map(|insts| ConflictInjectionSpec::new(insts.to_vec()))
            .collect();
    }
    Err(Error::Spec(format!(
        "no injection schedule for task {:?}",
        task.name()
    )))
}
