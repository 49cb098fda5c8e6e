//! Dataset ingestion and subsampling.
//!
//! All loaders normalize to [`Image`]: a square `(C, H, W)` float tensor with
//! values in `[0, 1]`. Per-channel standardization is deliberately *not* done
//! here; it lives in the model front-end so dataset files stay reusable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const RAW_TENSOR_MAGIC: &[u8; 4] = b"VTSS";
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// One sample: channels x height x width, float values in `[0, 1]`.
/// Images are square; ingestion rejects anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    /// Validating constructor: checks range, squareness and channel count.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if h != w {
            return Err(Error::Shape(format!("image must be square, got {h}x{w}")));
        }
        if c != 1 && c != 3 {
            return Err(Error::Shape(format!("channels must be 1 or 3, got {c}")));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v) || v.is_nan()) {
            return Err(Error::Shape("pixel value outside [0, 1]".into()));
        }
        Ok(Image { data })
    }

    /// Construction for transform outputs that preserve the range by
    /// construction; skips the per-pixel scan.
    pub(crate) fn from_raw(data: Array3<f32>) -> Self {
        debug_assert_eq!(data.dim().1, data.dim().2);
        Image { data }
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    /// Side length (images are square).
    pub fn side(&self) -> usize {
        self.data.dim().1
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Seed-vector dimension d = C * H * W.
    pub fn dim(&self) -> usize {
        let (c, h, w) = self.data.dim();
        c * h * w
    }
}

/// A labeled split: images with uniform shape plus class indices.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    images: Vec<Image>,
    labels: Vec<usize>,
    num_classes: usize,
    split_name: String,
}

impl LabeledImageSet {
    pub fn new(
        images: Vec<Image>,
        labels: Vec<usize>,
        num_classes: usize,
        split_name: impl Into<String>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Consistency("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} >= num_classes {num_classes}"
            )));
        }
        if let Some(first) = images.first() {
            let shape = first.shape();
            if images.iter().any(|im| im.shape() != shape) {
                return Err(Error::Consistency("images differ in shape".into()));
            }
        }
        Ok(LabeledImageSet {
            images,
            labels,
            num_classes,
            split_name: split_name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split_name(&self) -> &str {
        &self.split_name
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|im| im.shape())
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// New set containing the given indices, in order.
    pub fn select(&self, indices: &[usize], split_name: impl Into<String>) -> Self {
        LabeledImageSet {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split_name: split_name.into(),
        }
    }
}

fn read_u32_be(r: &mut impl Read, offset: &mut u64, what: &str) -> Result<u32> {
    let v = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::format(format!("truncated {what}"), *offset))?;
    *offset += 4;
    Ok(v)
}

/// Load an IDX image/label file pair (big-endian, standard magic numbers).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    let mut r = BufReader::new(File::open(images_path)?);
    let mut off = 0u64;
    let magic = read_u32_be(&mut r, &mut off, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            format!("bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
            0,
        ));
    }
    let count = read_u32_be(&mut r, &mut off, "image count")? as usize;
    let rows = read_u32_be(&mut r, &mut off, "row count")? as usize;
    let cols = read_u32_be(&mut r, &mut off, "column count")? as usize;
    if count > 0 && rows != cols {
        return Err(Error::format(
            format!("non-square IDX images {rows}x{cols}"),
            8,
        ));
    }
    let mut pixels = vec![0u8; count * rows * cols];
    r.read_exact(&mut pixels)
        .map_err(|_| Error::format("truncated IDX pixel payload", off))?;

    let mut r = BufReader::new(File::open(labels_path)?);
    let mut off = 0u64;
    let magic = read_u32_be(&mut r, &mut off, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            format!("bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
            0,
        ));
    }
    let label_count = read_u32_be(&mut r, &mut off, "label count")? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let mut label_bytes = vec![0u8; count];
    r.read_exact(&mut label_bytes)
        .map_err(|_| Error::format("truncated IDX label payload", off))?;

    let images = pixels
        .chunks_exact(rows * cols)
        .map(|chunk| {
            let data = Array3::from_shape_vec(
                (1, rows, cols),
                chunk.iter().map(|&b| b as f32 / 255.0).collect(),
            )
            .expect("shape matches chunk length");
            Image::from_raw(data)
        })
        .collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(10, |&m| m.max(9) + 1);
    LabeledImageSet::new(images, labels, num_classes, "idx")
}

/// Load CIFAR-10 style binary batches: records of 1 label byte followed by
/// 3072 pixel bytes in per-channel row-major order.
pub fn load_cifar_binary(batch_paths: &[impl AsRef<Path>]) -> Result<LabeledImageSet> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::format(
                format!(
                    "{} length {} is not a multiple of record size {CIFAR_RECORD_LEN}",
                    path.display(),
                    bytes.len()
                ),
                (bytes.len() - bytes.len() % CIFAR_RECORD_LEN) as u64,
            ));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            let label = record[0] as usize;
            if label > 9 {
                return Err(Error::Consistency(format!("CIFAR label {label} > 9")));
            }
            let data = Array3::from_shape_vec(
                (3, 32, 32),
                record[1..].iter().map(|&b| b as f32 / 255.0).collect(),
            )
            .expect("record payload is 3*32*32 bytes");
            images.push(Image::from_raw(data));
            labels.push(label);
        }
    }
    LabeledImageSet::new(images, labels, 10, "cifar")
}

/// Load the raw-tensor escape-hatch format.
///
/// Layout (little-endian): magic `VTSS`, u32 count, u32 C, u32 H, u32 W,
/// u32 num_classes, then `count` records of 1 label byte + C*H*W pixel bytes.
pub fn load_raw_tensor(path: &Path) -> Result<LabeledImageSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("truncated magic", 0))?;
    if &magic != RAW_TENSOR_MAGIC {
        return Err(Error::format(
            format!("bad magic {magic:?}, expected VTSS"),
            0,
        ));
    }
    let mut off = 4u64;
    let read_u32 = |r: &mut BufReader<File>, off: &mut u64, what: &str| -> Result<u32> {
        let v = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::format(format!("truncated {what}"), *off))?;
        *off += 4;
        Ok(v)
    };
    let count = read_u32(&mut r, &mut off, "count")? as usize;
    let c = read_u32(&mut r, &mut off, "channels")? as usize;
    let h = read_u32(&mut r, &mut off, "height")? as usize;
    let w = read_u32(&mut r, &mut off, "width")? as usize;
    let num_classes = read_u32(&mut r, &mut off, "num_classes")? as usize;

    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut pixel_buf = vec![0u8; c * h * w];
    for i in 0..count {
        let mut label = [0u8; 1];
        r.read_exact(&mut label)
            .map_err(|_| Error::format(format!("truncated record {i}"), off))?;
        off += 1;
        r.read_exact(&mut pixel_buf)
            .map_err(|_| Error::format(format!("truncated record {i}"), off))?;
        off += pixel_buf.len() as u64;
        let data = Array3::from_shape_vec(
            (c, h, w),
            pixel_buf.iter().map(|&b| b as f32 / 255.0).collect(),
        )
        .expect("buffer length is c*h*w");
        if h != w || (c != 1 && c != 3) {
            return Err(Error::Shape(format!("unsupported raw tensor shape {c}x{h}x{w}")));
        }
        images.push(Image::from_raw(data));
        labels.push(label[0] as usize);
    }
    LabeledImageSet::new(images, labels, num_classes.max(1), "raw")
}

/// Write a set in the raw-tensor format. Pixels are quantized to bytes
/// (`round(v * 255)`); byte-derived sets round-trip bit-exactly.
pub fn write_raw_tensor(set: &LabeledImageSet, path: &Path) -> Result<()> {
    let (c, h, w) = set.image_shape().unwrap_or((1, 0, 0));
    let mut wtr = BufWriter::new(File::create(path)?);
    wtr.write_all(RAW_TENSOR_MAGIC)?;
    wtr.write_u32::<LittleEndian>(set.len() as u32)?;
    wtr.write_u32::<LittleEndian>(c as u32)?;
    wtr.write_u32::<LittleEndian>(h as u32)?;
    wtr.write_u32::<LittleEndian>(w as u32)?;
    wtr.write_u32::<LittleEndian>(set.num_classes() as u32)?;
    for (image, &label) in set.images().iter().zip(set.labels()) {
        wtr.write_all(&[label as u8])?;
        let bytes: Vec<u8> = image
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        wtr.write_all(&bytes)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Draw exactly `n_per_class` samples from every class, deterministically in
/// `seed`. Selection is a per-class index shuffle with ChaCha8 streams, so
/// the same `(set, n, seed)` always yields the same subset.
pub fn subsample_per_class(
    set: &LabeledImageSet,
    n_per_class: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    if n_per_class == 0 {
        return Err(Error::Spec("n_per_class must be positive".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); set.num_classes()];
    for (i, &l) in set.labels().iter().enumerate() {
        per_class[l].push(i);
    }
    let mut selected = Vec::with_capacity(n_per_class * set.num_classes());
    for (class, indices) in per_class.iter_mut().enumerate() {
        if indices.len() < n_per_class {
            return Err(Error::Capacity {
                class,
                available: indices.len(),
                requested: n_per_class,
            });
        }
        // One independent stream per class keeps selections stable when the
        // class iteration order is fixed.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        indices.shuffle(&mut rng);
        selected.extend_from_slice(&indices[..n_per_class]);
    }
    Ok(set.select(&selected, format!("{}-sub{}", set.split_name(), n_per_class)))
}

/// Restrict a set to `k` classes chosen deterministically in `seed`, and
/// relabel them to `0..k` preserving the original class order.
pub fn subset_classes(set: &LabeledImageSet, k: usize, seed: u64) -> Result<LabeledImageSet> {
    if k == 0 || k > set.num_classes() {
        return Err(Error::Spec(format!(
            "class subset size {k} not in 1..={}",
            set.num_classes()
        )));
    }
    let mut classes: Vec<usize> = (0..set.num_classes()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut rng);
    let mut chosen = classes[..k].to_vec();
    chosen.sort_unstable();
    let remap: Vec<Option<usize>> = (0..set.num_classes())
        .map(|c| chosen.iter().position(|&x| x == c))
        .collect();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (image, &label) in set.images().iter().zip(set.labels()) {
        if let Some(new) = remap[label] {
            images.push(image.clone());
            labels.push(new);
        }
    }
    LabeledImageSet::new(images, labels, k, format!("{}-c{k}", set.split_name()))
}

/// Bilinear sample at fractional coordinates, clamped to the image border.
/// Sample positions map pixel centers proportionally (align-corners=false):
/// `src = (dst + 0.5) * in/out - 0.5`.
pub(crate) fn bilinear_sample(plane: ndarray::ArrayView2<f32>, y: f32, x: f32) -> f32 {
    let (h, w) = plane.dim();
    let y = y.clamp(0.0, (h - 1) as f32);
    let x = x.clamp(0.0, (w - 1) as f32);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let top = plane[[y0, x0]] * (1.0 - fx) + plane[[y0, x1]] * fx;
    let bot = plane[[y1, x0]] * (1.0 - fx) + plane[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

pub(crate) fn resize_image(image: &Image, side: usize) -> Image {
    let (c, h, _) = image.shape();
    if side == image.side() {
        return image.clone();
    }
    let mut out = Array3::<f32>::zeros((c, side, side));
    let scale = h as f32 / side as f32;
    for ch in 0..c {
        let plane = image.data().index_axis(ndarray::Axis(0), ch);
        for i in 0..side {
            let sy = (i as f32 + 0.5) * scale - 0.5;
            for j in 0..side {
                let sx = (j as f32 + 0.5) * scale - 0.5;
                out[[ch, i, j]] = bilinear_sample(plane, sy, sx).clamp(0.0, 1.0);
            }
        }
    }
    Image::from_raw(out)
}

/// Bilinear resize of every image to `side x side`. A same-side resize is the
/// identity, bit-exact.
pub fn resize_to(set: &LabeledImageSet, side: usize) -> Result<LabeledImageSet> {
    if side == 0 {
        return Err(Error::Spec("side must be positive".into()));
    }
    let images = set.images().iter().map(|im| resize_image(im, side)).collect();
    LabeledImageSet::new(
        images,
        set.labels().to_vec(),
        set.num_classes(),
        set.split_name().to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx_fixture(dir: &Path, pixels: &[u8], labels: &[u8], side: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let images_path = dir.join("images-idx3");
        let labels_path = dir.join("labels-idx1");
        let mut f = File::create(&images_path).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&(side as u32).to_be_bytes()).unwrap();
        f.write_all(&(side as u32).to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
        let mut f = File::create(&labels_path).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (images_path, labels_path)
    }

    #[test]
    fn idx_two_image_fixture_decodes_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        // 2 images of 2x2, bytes chosen by hand.
        let pixels = [0u8, 255, 128, 64, 10, 20, 30, 40];
        let (ip, lp) = write_idx_fixture(dir.path(), &pixels, &[3, 7], 2);
        let set = load_idx(&ip, &lp).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.labels(), &[3, 7]);
        // Independent check: every pixel equals its source byte / 255.
        for (img_idx, image) in set.images().iter().enumerate() {
            for (k, &v) in image.data().iter().enumerate() {
                let byte = pixels[img_idx * 4 + k];
                assert_eq!(v, byte as f32 / 255.0);
            }
        }
    }

    #[test]
    fn idx_zero_items_is_empty_not_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_fixture(dir.path(), &[], &[], 28);
        let set = load_idx(&ip, &lp).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn idx_bad_magic_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("bad");
        let mut f = File::create(&images_path).unwrap();
        f.write_all(&0xdead_beefu32.to_be_bytes()).unwrap();
        let labels_path = dir.path().join("labels");
        File::create(&labels_path).unwrap();
        match load_idx(&images_path, &labels_path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn idx_count_mismatch_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = write_idx_fixture(dir.path(), &[0; 8], &[0, 0], 2);
        // Label file with a different count.
        let lp = dir.path().join("short-labels");
        let mut f = File::create(&lp).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&1u32.to_be_bytes()).unwrap();
        f.write_all(&[0]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Consistency(_))));
    }

    #[test]
    fn cifar_single_black_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut record = vec![7u8];
        record.extend_from_slice(&[0u8; 3072]);
        File::create(&path).unwrap().write_all(&record).unwrap();
        let set = load_cifar_binary(&[&path]).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.labels(), &[7]);
        assert!(set.images()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cifar_offset_arithmetic_matches_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let bytes: Vec<u8> = (0..3 * CIFAR_RECORD_LEN).map(|i| (i % 251) as u8).collect();
        let mut bytes = bytes;
        for r in 0..3 {
            bytes[r * CIFAR_RECORD_LEN] %= 10; // keep labels valid
        }
        File::create(&path).unwrap().write_all(&bytes).unwrap();
        let set = load_cifar_binary(&[&path]).unwrap();
        assert_eq!(set.len(), 3);
        // Pixel (0,0,0) of record 2 lives at byte 1 + 2*record_len of the file.
        let expected = bytes[1 + 2 * CIFAR_RECORD_LEN] as f32 / 255.0;
        assert_eq!(set.images()[2].data()[[0, 0, 0]], expected);
    }

    #[test]
    fn cifar_bad_length_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truncated.bin");
        File::create(&path).unwrap().write_all(&[0u8; 100]).unwrap();
        assert!(matches!(
            load_cifar_binary(&[&path]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn raw_tensor_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vtss");
        let mut f = File::create(&path).unwrap();
        f.write_all(b"VTSS").unwrap();
        for v in [1u32, 1, 2, 2, 10] {
            f.write_all(&v.to_le_bytes()).unwrap();
        }
        f.write_all(&[5u8, 0, 255, 128, 64]).unwrap();
        let set = load_raw_tensor(&path).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.labels(), &[5]);
        let img = set.images()[0].data();
        assert!((img[[0, 0, 0]] - 0.0).abs() < 1e-6);
        assert!((img[[0, 0, 1]] - 1.0).abs() < 1e-6);
        assert!((img[[0, 1, 0]] - 0.50196).abs() < 1e-5);
        assert!((img[[0, 1, 1]] - 0.25098).abs() < 1e-5);
    }

    #[test]
    fn raw_tensor_empty_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.vtss");
        let mut f = File::create(&path).unwrap();
        f.write_all(b"VTSS").unwrap();
        for v in [0u32, 1, 8, 8, 10] {
            f.write_all(&v.to_le_bytes()).unwrap();
        }
        let set = load_raw_tensor(&path).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn raw_tensor_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.vtss");
        let mut f = File::create(&path).unwrap();
        f.write_all(b"VTSS").unwrap();
        for v in [2u32, 1, 2, 2, 10] {
            f.write_all(&v.to_le_bytes()).unwrap();
        }
        f.write_all(&[1u8, 0, 0, 0, 0]).unwrap(); // only one record
        assert!(matches!(load_raw_tensor(&path), Err(Error::Format { .. })));
    }

    fn byte_set(n: usize, side: usize, num_classes: usize, seed: u64) -> LabeledImageSet {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..n)
            .map(|_| {
                let data = Array3::from_shape_fn((1, side, side), |_| {
                    rng.gen_range(0u16..=255) as f32 / 255.0
                });
                Image::from_raw(data)
            })
            .collect();
        let labels = (0..n).map(|i| i % num_classes).collect();
        LabeledImageSet::new(images, labels, num_classes, "synthetic").unwrap()
    }

    #[test]
    fn raw_tensor_round_trip_is_identity_on_byte_sets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.vtss");
        let set = byte_set(13, 5, 4, 99);
        write_raw_tensor(&set, &path).unwrap();
        let back = load_raw_tensor(&path).unwrap();
        assert_eq!(back.len(), set.len());
        assert_eq!(back.labels(), set.labels());
        assert_eq!(back.num_classes(), set.num_classes());
        for (a, b) in set.images().iter().zip(back.images()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn subsample_exact_histogram_and_determinism() {
        let set = byte_set(100, 4, 5, 7);
        let a = subsample_per_class(&set, 7, 42).unwrap();
        let b = subsample_per_class(&set, 7, 42).unwrap();
        assert_eq!(a.class_histogram(), vec![7; 5]);
        for (x, y) in a.images().iter().zip(b.images()) {
            assert_eq!(x.data(), y.data());
        }
        // Different seeds give different selections on a 100-sample set.
        let c = subsample_per_class(&set, 7, 43).unwrap();
        let same = a
            .images()
            .iter()
            .zip(c.images())
            .all(|(x, y)| x.data() == y.data());
        assert!(!same, "two seeds produced identical selections");
    }

    #[test]
    fn subsample_full_class_is_permutation() {
        let set = byte_set(30, 4, 3, 11);
        let full = subsample_per_class(&set, 10, 5).unwrap();
        assert_eq!(full.len(), set.len());
        // Every original image appears exactly once.
        for image in set.images() {
            let count = full.images().iter().filter(|im| im.data() == image.data()).count();
            assert_eq!(count, 1);
        }
    }

    #[test]
    fn subsample_insufficient_names_class() {
        let set = byte_set(10, 4, 5, 3); // 2 per class
        match subsample_per_class(&set, 3, 0) {
            Err(Error::Capacity { class, .. }) => assert!(class < 5),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let set = byte_set(3, 8, 2, 1);
        let same = resize_to(&set, 8).unwrap();
        for (a, b) in set.images().iter().zip(same.images()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn resize_constant_stays_constant() {
        let data = Array3::from_elem((1, 4, 4), 0.37f32);
        let set = LabeledImageSet::new(vec![Image::from_raw(data)], vec![0], 1, "c").unwrap();
        let big = resize_to(&set, 8).unwrap();
        assert_eq!(big.images()[0].side(), 8);
        for &v in big.images()[0].data() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_28_to_32() {
        let set = byte_set(2, 28, 2, 5);
        let resized = resize_to(&set, 32).unwrap();
        assert_eq!(resized.images()[0].side(), 32);
        assert!(resized
            .images()
            .iter()
            .flat_map(|im| im.data().iter())
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn subset_classes_deterministic_and_relabeled() {
        let set = byte_set(60, 4, 6, 2);
        let a = subset_classes(&set, 3, 9).unwrap();
        let b = subset_classes(&set, 3, 9).unwrap();
        assert_eq!(a.num_classes(), 3);
        assert_eq!(a.labels(), b.labels());
        assert!(a.labels().iter().all(|&l| l < 3));
        assert_eq!(a.len(), 30);
    }
}
