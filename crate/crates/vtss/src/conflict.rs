//! Direct measurement of transformation conflict: how often a transformed
//! sample lands within epsilon of another sample's transform (Case A) or of
//! another raw sample (Case B), plus closure-dataset construction that
//! forces Case B by design.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{Image, LabeledImageSet};
use crate::error::{Error, Result};
use crate::pretext::{embed_into_original, VtssTaskSpec};
use crate::transforms::{apply, TransformationInstantiation as Inst};

/// Exact mode examines every (sample, instantiation) probe; sampled mode
/// draws `pairs` probes with a seeded generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum ConflictMode {
    Exact,
    Sampled { pairs: usize, seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConflictReport {
    pub case_a_rate: f64,
    pub case_b_rate: f64,
    pub epsilon: f64,
    pub pairs_examined: usize,
    #[serde(flatten)]
    pub mode: ConflictMode,
    /// 95% binomial half-width in sampled mode.
    pub confidence_half_width: Option<f64>,
    pub dataset_fingerprint: String,
}

impl ConflictReport {
    pub fn combined_rate(&self) -> f64 {
        self.case_a_rate + self.case_b_rate
    }
}

/// Exact mode is all-pairs; beyond this probe count it must be sampled.
pub const EXACT_MODE_PROBE_LIMIT: usize = 2_000;

/// Default number of sampled probes.
pub const SAMPLED_MODE_PAIRS: usize = 100_000;

/// Content fingerprint of a dataset (images and labels, order-sensitive).
pub fn dataset_fingerprint(set: &LabeledImageSet) -> String {
    let mut hasher = Sha256::new();
    for (img, &label) in set.images().iter().zip(set.labels()) {
        hasher.update((label as u64).to_le_bytes());
        for &v in img.data().iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

fn flat(img: &Image) -> Vec<f32> {
    img.data().iter().copied().collect()
}

/// Root-mean-square per-pixel distance between two equally shaped flats.
fn rms(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum();
    (sum / a.len() as f64).sqrt()
}

struct Prepared {
    /// Frame-cropped raw image per sample.
    raws: Vec<Vec<f32>>,
    /// Transformed image per (sample, non-identity instantiation), indexed
    /// `sample * g + k`.
    transforms: Vec<Vec<f32>>,
    n: usize,
    g: usize,
}

fn prepare(set: &LabeledImageSet, spec: &VtssTaskSpec) -> Result<Prepared> {
    let frame = spec.frame();
    let non_identity: Vec<Inst> = spec
        .instantiations()
        .iter()
        .copied()
        .filter(|i| !i.is_identity())
        .collect();
    let mut raws = Vec::with_capacity(set.len());
    let mut transforms = Vec::with_capacity(set.len() * non_identity.len());
    for img in set.images() {
        raws.push(flat(&apply(Inst::Identity, img, frame)?));
        for &inst in &non_identity {
            transforms.push(flat(&apply(inst, img, frame)?));
        }
    }
    Ok(Prepared {
        raws,
        transforms,
        n: set.len(),
        g: non_identity.len(),
    })
}

impl Prepared {
    /// Does probe (sample, k) lie within eps of any other (sample', k')
    /// transform, excluding only itself?
    fn case_a_hit(&self, sample: usize, k: usize, eps: f64) -> bool {
        let probe = &self.transforms[sample * self.g + k];
        self.transforms.iter().enumerate().any(|(idx, other)| {
            idx != sample * self.g + k && rms(probe, other) <= eps
        })
    }

    /// Does probe (sample, k) lie within eps of a different raw sample?
    fn case_b_hit(&self, sample: usize, k: usize, eps: f64) -> bool {
        let probe = &self.transforms[sample * self.g + k];
        self.raws
            .iter()
            .enumerate()
            .any(|(s, raw)| s != sample && rms(probe, raw) <= eps)
    }
}

/// Fractions of (sample, non-identity instantiation) probes in conflict.
pub fn estimate_conflict_rate(
    set: &LabeledImageSet,
    spec: &VtssTaskSpec,
    epsilon: f64,
    mode: ConflictMode,
) -> Result<ConflictReport> {
    if epsilon < 0.0 {
        return Err(Error::Range("epsilon must be non-negative".into()));
    }
    if set.is_empty() {
        return Err(Error::Consistency("empty dataset".into()));
    }
    let prepared = prepare(set, spec)?;
    if prepared.g == 0 {
        return Err(Error::Spec("task has no non-identity instantiations".into()));
    }
    let total_probes = prepared.n * prepared.g;
    let fingerprint = dataset_fingerprint(set);

    match mode {
        ConflictMode::Exact => {
            if total_probes > EXACT_MODE_PROBE_LIMIT {
                return Err(Error::Capacity {
                    class: 0,
                    available: EXACT_MODE_PROBE_LIMIT,
                    requested: total_probes,
                });
            }
            let mut a_hits = 0usize;
            let mut b_hits = 0usize;
            for sample in 0..prepared.n {
                for k in 0..prepared.g {
                    if prepared.case_a_hit(sample, k, epsilon) {
                        a_hits += 1;
                    }
                    if prepared.case_b_hit(sample, k, epsilon) {
                        b_hits += 1;
                    }
                }
            }
            Ok(ConflictReport {
                case_a_rate: a_hits as f64 / total_probes as f64,
                case_b_rate: b_hits as f64 / total_probes as f64,
                epsilon,
                pairs_examined: total_probes,
                mode,
                confidence_half_width: None,
                dataset_fingerprint: fingerprint,
            })
        }
        ConflictMode::Sampled { pairs, seed } => {
            if pairs == 0 {
                return Err(Error::Range("sampled mode needs at least one pair".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a_hits = 0usize;
            let mut b_hits = 0usize;
            for _ in 0..pairs {
                let sample = rng.gen_range(0..prepared.n);
                let k = rng.gen_range(0..prepared.g);
                if prepared.case_a_hit(sample, k, epsilon) {
                    a_hits += 1;
                }
                if prepared.case_b_hit(sample, k, epsilon) {
                    b_hits += 1;
                }
            }
            // widest binomial half-width across the two estimates
            let p = [a_hits, b_hits]
                .iter()
                .map(|&h| h as f64 / pairs as f64)
                .max_by(|x, y| (x * (1.0 - x)).partial_cmp(&(y * (1.0 - y))).unwrap())
                .unwrap();
            let half_width = 1.96 * (p * (1.0 - p) / pairs as f64).sqrt();
            Ok(ConflictReport {
                case_a_rate: a_hits as f64 / pairs as f64,
                case_b_rate: b_hits as f64 / pairs as f64,
                epsilon,
                pairs_examined: pairs,
                mode,
                confidence_half_width: Some(half_width),
                dataset_fingerprint: fingerprint,
            })
        }
    }
}

/// Union of the base set with every closure transform of every base image,
/// deduplicated bit-exactly. When the closure forms a group with identity
/// (e.g. all quarter rotations), the result is closed under each member.
pub fn synthetic_closure_dataset(
    base: &LabeledImageSet,
    closure: &[Inst],
) -> Result<LabeledImageSet> {
    let mut images: Vec<Image> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut seen: std::collections::HashSet<Vec<u8>> = std::collections::HashSet::new();
    let key = |img: &Image| -> Vec<u8> {
        img.data().iter().flat_map(|v| v.to_le_bytes()).collect()
    };
    let mut push = |img: Image, label: usize, images: &mut Vec<Image>, labels: &mut Vec<usize>| {
        if seen.insert(key(&img)) {
            images.push(img);
            labels.push(label);
        }
    };
    for (img, &label) in base.images().iter().zip(base.labels()) {
        push(img.clone(), label, &mut images, &mut labels);
    }
    for (img, &label) in base.images().iter().zip(base.labels()) {
        for &inst in closure {
            inst.validate()?;
            push(embed_into_original(inst, img)?, label, &mut images, &mut labels);
        }
    }
    LabeledImageSet::new(images, labels, base.num_classes(), "closure")
}

/// Tasks sorted ascending by combined conflict rate (the hypothesis's
/// prediction of relative downstream usefulness); ties broken by name.
pub fn rank_tasks_by_predicted_usefulness(
    reports: &[(String, ConflictReport)],
) -> Result<Vec<(String, f64)>> {
    if let Some((_, first)) = reports.first() {
        for (name, r) in reports {
            if r.epsilon != first.epsilon {
                return Err(Error::Consistency(format!(
                    "report {name} uses epsilon {}, expected {}",
                    r.epsilon, first.epsilon
                )));
            }
            if r.dataset_fingerprint != first.dataset_fingerprint {
                return Err(Error::Consistency(format!(
                    "report {name} computed on a different dataset"
                )));
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = reports
        .iter()
        .map(|(name, r)| (name.clone(), r.combined_rate()))
        .collect();
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretext::make_rotation_task;
    use ndarray::Array3;

    fn random_set(n: usize, side: usize, seed: u64) -> LabeledImageSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images: Vec<Image> = (0..n)
            .map(|_| Image::new(Array3::from_shape_fn((1, side, side), |_| rng.gen::<f32>())).unwrap())
            .collect();
        let labels = vec![0usize; n];
        LabeledImageSet::new(images, labels, 1, "fixture").unwrap()
    }

    /// Independent all-pairs oracle, written as a plain double loop over
    /// freshly transformed images.
    fn brute_force(set: &LabeledImageSet, spec: &VtssTaskSpec, eps: f64) -> (f64, f64) {
        let frame = spec.frame();
        let insts: Vec<Inst> = spec
            .instantiations()
            .iter()
            .copied()
            .filter(|i| !i.is_identity())
            .collect();
        let dist = |a: &Image, b: &Image| -> f64 {
            let sum: f64 = a
                .data()
                .iter()
                .zip(b.data().iter())
                .map(|(&x, &y)| ((x - y) as f64).powi(2))
                .sum();
            (sum / a.data().len() as f64).sqrt()
        };
        let mut a_hits = 0usize;
        let mut b_hits = 0usize;
        let mut total = 0usize;
        for (i, x) in set.images().iter().enumerate() {
            for (ki, &g) in insts.iter().enumerate() {
                total += 1;
                let gx = apply(g, x, frame).unwrap();
                let mut hit_a = false;
                let mut hit_b = false;
                for (j, xp) in set.images().iter().enumerate() {
                    for (kj, &gp) in insts.iter().enumerate() {
                        if i == j && ki == kj {
                            continue;
                        }
                        if dist(&gx, &apply(gp, xp, frame).unwrap()) <= eps {
                            hit_a = true;
                        }
                    }
                    if j != i && dist(&gx, &apply(Inst::Identity, xp, frame).unwrap()) <= eps {
                        hit_b = true;
                    }
                }
                a_hits += hit_a as usize;
                b_hits += hit_b as usize;
            }
        }
        (a_hits as f64 / total as f64, b_hits as f64 / total as f64)
    }

    #[test]
    fn exact_mode_matches_brute_force_oracle() {
        let set = random_set(64, 8, 5);
        let task = make_rotation_task();
        for eps in [0.0, 0.05, 0.2] {
            let report = estimate_conflict_rate(&set, &task, eps, ConflictMode::Exact).unwrap();
            let (a, b) = brute_force(&set, &task, eps);
            assert_eq!(report.case_a_rate, a, "case A at eps {eps}");
            assert_eq!(report.case_b_rate, b, "case B at eps {eps}");
            assert_eq!(report.pairs_examined, 64 * 3);
        }
    }

    #[test]
    fn rates_monotone_in_epsilon() {
        let set = random_set(32, 8, 11);
        let task = make_rotation_task();
        let mut last = (0.0, 0.0);
        for eps in [0.0, 0.1, 0.2, 0.4, 0.8] {
            let r = estimate_conflict_rate(&set, &task, eps, ConflictMode::Exact).unwrap();
            assert!(r.case_a_rate >= last.0 && r.case_b_rate >= last.1);
            last = (r.case_a_rate, r.case_b_rate);
        }
        assert_eq!(last, (1.0, 1.0));
    }

    #[test]
    fn closure_dataset_forces_case_b() {
        let base = random_set(10, 8, 3);
        let rotations = [
            Inst::Rotation { quarter_turns: 1 },
            Inst::Rotation { quarter_turns: 2 },
            Inst::Rotation { quarter_turns: 3 },
        ];
        let closed = synthetic_closure_dataset(&base, &rotations).unwrap();
        assert!(closed.len() <= 40);
        // exhaustive closure check: every rotation of every member is a member
        let key = |img: &Image| -> Vec<u8> {
            img.data().iter().flat_map(|v| v.to_le_bytes()).collect()
        };
        let members: std::collections::HashSet<Vec<u8>> =
            closed.images().iter().map(key).collect();
        for img in closed.images() {
            for &inst in &rotations {
                let rotated = embed_into_original(inst, img).unwrap();
                assert!(members.contains(&key(&rotated)));
            }
        }
        let task = make_rotation_task();
        let report = estimate_conflict_rate(&closed, &task, 0.0, ConflictMode::Exact).unwrap();
        assert_eq!(report.case_b_rate, 1.0);
        // empty closure leaves the base unchanged
        let same = synthetic_closure_dataset(&base, &[]).unwrap();
        assert_eq!(same.len(), base.len());
    }

    #[test]
    fn disjoint_supports_have_zero_conflict() {
        // one bright pixel per image, far from every rotation of the others
        let mut images = Vec::new();
        for i in 0..4 {
            let mut data = Array3::zeros((1, 9, 9));
            data[[0, 1 + i, 1]] = 1.0;
            images.push(Image::new(data).unwrap());
        }
        let set = LabeledImageSet::new(images, vec![0; 4], 1, "disjoint").unwrap();
        let task = make_rotation_task();
        let r = estimate_conflict_rate(&set, &task, 0.0, ConflictMode::Exact).unwrap();
        assert_eq!((r.case_a_rate, r.case_b_rate), (0.0, 0.0));
    }

    #[test]
    fn sampled_mode_converges_to_exact() {
        let set = random_set(24, 6, 7);
        let task = make_rotation_task();
        let eps = 0.3;
        let exact = estimate_conflict_rate(&set, &task, eps, ConflictMode::Exact).unwrap();
        let mut within = 0;
        let mut checks = 0;
        for seed in 0..100 {
            let sampled = estimate_conflict_rate(
                &set,
                &task,
                eps,
                ConflictMode::Sampled { pairs: 400, seed },
            )
            .unwrap();
            let hw = sampled.confidence_half_width.unwrap().max(1e-9);
            for (est, truth) in [
                (sampled.case_a_rate, exact.case_a_rate),
                (sampled.case_b_rate, exact.case_b_rate),
            ] {
                checks += 1;
                if (est - truth).abs() <= hw {
                    within += 1;
                }
            }
        }
        assert!(
            within * 100 >= checks * 95,
            "only {within}/{checks} estimates within half-width"
        );
    }

    #[test]
    fn exact_mode_is_order_invariant_and_gated() {
        let set = random_set(16, 6, 2);
        let task = make_rotation_task();
        let reversed: Vec<usize> = (0..set.len()).rev().collect();
        let rev = set.select(&reversed, "rev");
        let a = estimate_conflict_rate(&set, &task, 0.1, ConflictMode::Exact).unwrap();
        let b = estimate_conflict_rate(&rev, &task, 0.1, ConflictMode::Exact).unwrap();
        assert_eq!((a.case_a_rate, a.case_b_rate), (b.case_a_rate, b.case_b_rate));
        let big = random_set(700, 4, 1);
        assert!(estimate_conflict_rate(&big, &task, 0.1, ConflictMode::Exact).is_err());
    }

    #[test]
    fn ranking_sorts_and_checks_consistency() {
        let set = random_set(8, 6, 1);
        let fp = dataset_fingerprint(&set);
        let mk = |a: f64, b: f64, fp: &str| ConflictReport {
            case_a_rate: a,
            case_b_rate: b,
            epsilon: 0.05,
            pairs_examined: 1,
            mode: ConflictMode::Exact,
            confidence_half_width: None,
            dataset_fingerprint: fp.to_string(),
        };
        let reports = vec![
            ("zeta".to_string(), mk(0.0, 0.0, &fp)),
            ("alpha".to_string(), mk(0.0, 0.0, &fp)),
            ("busy".to_string(), mk(0.5, 0.5, &fp)),
        ];
        let ranked = rank_tasks_by_predicted_usefulness(&reports).unwrap();
        assert_eq!(
            ranked.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
            ["alpha", "zeta", "busy"]
        );
        let mut bad = reports.clone();
        bad[1].1.epsilon = 0.2;
        assert!(rank_tasks_by_predicted_usefulness(&bad).is_err());
        let mut bad2 = reports;
        bad2[2].1.dataset_fingerprint = "other".into();
        assert!(rank_tasks_by_predicted_usefulness(&bad2).is_err());
    }
}
