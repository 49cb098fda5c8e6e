//! Deterministic procedural glyph dataset: ten rotation-asymmetric shape
//! classes rendered as grayscale images with per-sample jitter (shift,
//! scale, small tilt, stroke intensity, noise). Serves as a stand-in
//! grayscale dataset when no real files are on disk; everything is a pure
//! function of the seed.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::{Image, LabeledImageSet};
use crate::error::Result;

pub const NUM_CLASSES: usize = 10;
pub const DEFAULT_SIDE: usize = 28;

#[derive(Debug, Clone, Copy)]
enum Prim {
    /// Line segment from a to b with the given half-thickness.
    Seg([f64; 2], [f64; 2], f64),
    /// Filled disc.
    Disc([f64; 2], f64),
    /// Circle outline of radius r and half-thickness t.
    Ring([f64; 2], f64, f64),
}

impl Prim {
    fn dist(&self, p: [f64; 2]) -> f64 {
        match *self {
            Prim::Seg(a, b, t) => {
                let ab = [b[0] - a[0], b[1] - a[1]];
                let ap = [p[0] - a[0], p[1] - a[1]];
                let len2 = ab[0] * ab[0] + ab[1] * ab[1];
                let h = if len2 > 0.0 {
                    ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d = [ap[0] - h * ab[0], ap[1] - h * ab[1]];
                (d[0] * d[0] + d[1] * d[1]).sqrt() - t
            }
            Prim::Disc(c, r) => {
                let d = [p[0] - c[0], p[1] - c[1]];
                (d[0] * d[0] + d[1] * d[1]).sqrt() - r
            }
            Prim::Ring(c, r, t) => {
                let d = [p[0] - c[0], p[1] - c[1]];
                (((d[0] * d[0] + d[1] * d[1]).sqrt() - r).abs()) - t
            }
        }
    }
}

const T: f64 = 0.10; // default stroke half-thickness in unit coordinates

/// Glyphs in [-1,1]^2, deliberately asymmetric under quarter rotations.
fn glyph(class: usize) -> Vec<Prim> {
    match class {
        // L
        0 => vec![
            Prim::Seg([-0.45, -0.65], [-0.45, 0.55], T),
            Prim::Seg([-0.45, 0.55], [0.5, 0.55], T),
        ],
        // T
        1 => vec![
            Prim::Seg([-0.6, -0.55], [0.6, -0.55], T),
            Prim::Seg([0.0, -0.55], [0.0, 0.6], T),
        ],
        // big disc with satellite dot
        2 => vec![
            Prim::Disc([0.15, 0.1], 0.42),
            Prim::Disc([-0.55, -0.5], 0.14),
        ],
        // cross with a right-hand tick
        3 => vec![
            Prim::Seg([-0.55, 0.0], [0.55, 0.0], T),
            Prim::Seg([0.0, -0.55], [0.0, 0.55], T),
            Prim::Seg([0.55, 0.0], [0.62, -0.42], T * 0.8),
        ],
        // leaning triangle
        4 => vec![
            Prim::Seg([-0.55, 0.55], [0.6, 0.55], T),
            Prim::Seg([-0.55, 0.55], [0.2, -0.6], T),
            Prim::Seg([0.2, -0.6], [0.6, 0.55], T),
        ],
        // two bars of unequal length
        5 => vec![
            Prim::Seg([-0.6, -0.3], [0.6, -0.3], T * 1.3),
            Prim::Seg([-0.6, 0.35], [0.1, 0.35], T * 0.8),
        ],
        // staircase
        6 => vec![
            Prim::Seg([-0.6, 0.5], [-0.1, 0.5], T * 0.9),
            Prim::Seg([-0.1, 0.5], [-0.1, 0.0], T * 0.9),
            Prim::Seg([-0.1, 0.0], [0.35, 0.0], T * 0.9),
            Prim::Seg([0.35, 0.0], [0.35, -0.5], T * 0.9),
            Prim::Seg([0.35, -0.5], [0.65, -0.5], T * 0.9),
        ],
        // ring with inner offset dot
        7 => vec![
            Prim::Ring([0.0, 0.0], 0.5, T * 0.8),
            Prim::Disc([0.18, -0.18], 0.12),
        ],
        // diagonal with a blob at the top end
        8 => vec![
            Prim::Seg([-0.55, 0.55], [0.5, -0.5], T),
            Prim::Disc([0.5, -0.5], 0.2),
        ],
        // right-pointing arrow
        _ => vec![
            Prim::Seg([-0.6, 0.0], [0.45, 0.0], T),
            Prim::Seg([0.45, 0.0], [0.05, -0.38], T * 0.9),
            Prim::Seg([0.45, 0.0], [0.05, 0.38], T * 0.9),
        ],
    }
}

struct Jitter {
    dx: f64,
    dy: f64,
    scale: f64,
    tilt: f64,
    intensity: f64,
    noise: f64,
}

fn render(class: usize, side: usize, j: &Jitter, rng: &mut ChaCha8Rng) -> Image {
    let prims = glyph(class);
    let aa = 2.0 / side as f64; // anti-aliasing band, one pixel wide
    let (sin, cos) = j.tilt.sin_cos();
    let data = Array3::from_shape_fn((1, side, side), |(_, y, x)| {
        // pixel center in unit coordinates, then undo jitter
        let px = (x as f64 + 0.5) / side as f64 * 2.0 - 1.0 - j.dx;
        let py = (y as f64 + 0.5) / side as f64 * 2.0 - 1.0 - j.dy;
        let p = [
            (cos * px + sin * py) / j.scale,
            (-sin * px + cos * py) / j.scale,
        ];
        let d = prims
            .iter()
            .map(|prim| prim.dist(p))
            .fold(f64::INFINITY, f64::min);
        let coverage = ((aa - d) / (2.0 * aa)).clamp(0.0, 1.0);
        let noise = rng.gen::<f64>() * j.noise;
        ((j.intensity * coverage + noise).clamp(0.0, 1.0)) as f32
    });
    Image::new(data).expect("rendered values are clamped to [0,1]")
}

fn sample_rng(seed: u64, split_tag: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mix = seed
        ^ split_tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (class as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (index as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(mix)
}

/// One balanced split with `per_class` samples per class.
pub fn generate_split(
    per_class: usize,
    side: usize,
    seed: u64,
    split_name: &str,
) -> Result<LabeledImageSet> {
    let split_tag = match split_name {
        "train" => 1,
        "test" => 2,
        other => 3 + other.len() as u64,
    };
    let mut images = Vec::with_capacity(per_class * NUM_CLASSES);
    let mut labels = Vec::with_capacity(per_class * NUM_CLASSES);
    for index in 0..per_class {
        for class in 0..NUM_CLASSES {
            let mut rng = sample_rng(seed, split_tag, class, index);
            let j = Jitter {
                dx: rng.gen_range(-0.25..0.25),
                dy: rng.gen_range(-0.25..0.25),
                scale: rng.gen_range(0.6..1.2),
                tilt: rng.gen_range(-0.3..0.3),
                intensity: rng.gen_range(0.55..1.0),
                noise: rng.gen_range(0.02..0.18),
            };
            images.push(render(class, side, &j, &mut rng));
            labels.push(class);
        }
    }
    LabeledImageSet::new(images, labels, NUM_CLASSES, split_name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_balanced_and_deterministic() {
        let a = generate_split(12, DEFAULT_SIDE, 7, "train").unwrap();
        let b = generate_split(12, DEFAULT_SIDE, 7, "train").unwrap();
        assert_eq!(a.len(), 120);
        assert_eq!(a.class_histogram(), vec![12; NUM_CLASSES]);
        for (x, y) in a.images().iter().zip(b.images()) {
            assert_eq!(x.data(), y.data());
        }
        let c = generate_split(12, DEFAULT_SIDE, 8, "train").unwrap();
        assert!(a.images()[0].data() != c.images()[0].data());
    }

    #[test]
    fn train_and_test_splits_differ() {
        let tr = generate_split(3, DEFAULT_SIDE, 7, "train").unwrap();
        let te = generate_split(3, DEFAULT_SIDE, 7, "test").unwrap();
        assert!(tr.images()[0].data() != te.images()[0].data());
    }

    #[test]
    fn classes_are_visibly_distinct() {
        // no-jitter-ish render of each class should differ pairwise by a
        // solid pixel margin
        let set = generate_split(1, DEFAULT_SIDE, 0, "train").unwrap();
        for i in 0..NUM_CLASSES {
            for j in (i + 1)..NUM_CLASSES {
                let a = set.images()[i].data();
                let b = set.images()[j].data();
                let rms: f32 = a
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f32>()
                    / a.len() as f32;
                assert!(rms.sqrt() > 0.05, "classes {i} and {j} too similar");
            }
        }
    }

    #[test]
    fn glyphs_are_rotation_asymmetric() {
        use crate::transforms::rotate90;
        let set = generate_split(1, DEFAULT_SIDE, 0, "train").unwrap();
        for (c, img) in set.images().iter().enumerate() {
            for q in 1..=3u8 {
                let rot = rotate90(img, q).unwrap();
                let rms: f32 = img
                    .data()
                    .iter()
                    .zip(rot.data().iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f32>()
                    / (DEFAULT_SIDE * DEFAULT_SIDE) as f32;
                assert!(rms.sqrt() > 0.05, "class {c} nearly symmetric under {q} turns");
            }
        }
    }
}
