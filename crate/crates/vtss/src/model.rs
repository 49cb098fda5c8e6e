//! Backbone and classifier-head construction, feature taps, freezing, and
//! checkpoint persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::Image;
use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec};

/// Backbone family: `num_blocks` conv blocks (each `convs_per_block`
/// conv/bn/relu triples at `channels` width) with 3x3/s2/p1 average pooling
/// between blocks, then global average pooling and a linear layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub num_blocks: usize,
    pub convs_per_block: usize,
    pub channels: usize,
    pub input_shape: (usize, usize, usize),
    pub num_outputs: usize,
}

impl ArchitectureSpec {
    /// Full-size profile: 4 blocks of 3 convs at 192 channels.
    pub fn paper(input_shape: (usize, usize, usize), num_outputs: usize) -> Self {
        ArchitectureSpec {
            num_blocks: 4,
            convs_per_block: 3,
            channels: 192,
            input_shape,
            num_outputs,
        }
    }

    /// Desk-scale profile: 64 channels, 2 convs per block.
    pub fn desk(input_shape: (usize, usize, usize), num_outputs: usize) -> Self {
        ArchitectureSpec {
            num_blocks: 4,
            convs_per_block: 2,
            channels: 64,
            input_shape,
            num_outputs,
        }
    }

    fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            num_blocks: self.num_blocks,
            convs_per_block: self.convs_per_block,
            channels: self.channels,
            input_shape: self.input_shape,
            num_outputs: self.num_outputs,
        }
    }

    /// Shape of the feature tensor produced by `forward_features` at
    /// `tap_block` for a batch of size n.
    pub fn feature_shape(&self, tap_block: usize) -> (usize, usize, usize) {
        let pools = tap_block.min(self.num_blocks.saturating_sub(1));
        let side = self.network_spec().side_after_pools(pools);
        (self.channels, side, side)
    }
}

/// A network instance paired with the spec that built it and the seed used.
pub struct Model {
    pub arch: ArchitectureSpec,
    pub net: Network<f32>,
    pub seed: u64,
}

/// Deterministically initialized backbone.
pub fn build_backbone(arch: &ArchitectureSpec, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::build(arch.network_spec(), &mut rng)?;
    Ok(Model {
        arch: arch.clone(),
        net,
        seed,
    })
}

/// One conv block, global average pooling and a linear layer; the head sits
/// on top of frozen backbone features.
pub fn build_classifier_head(
    arch: &ArchitectureSpec,
    in_shape: (usize, usize, usize),
    num_classes: usize,
    seed: u64,
) -> Result<Model> {
    let head_arch = ArchitectureSpec {
        num_blocks: 1,
        convs_per_block: arch.convs_per_block,
        channels: arch.channels,
        input_shape: in_shape,
        num_outputs: num_classes,
    };
    build_backbone(&head_arch, seed)
}

/// Activations after block `tap_block` (including its trailing pool).
pub fn forward_features(model: &mut Model, batch: &Array4<f32>, tap_block: usize) -> Result<Array4<f32>> {
    model.net.forward_features(batch, tap_block)
}

/// Mark blocks 1..=block as non-trainable.
pub fn freeze_up_to(model: &mut Model, block: usize) -> Result<()> {
    if block == 0 || block > model.arch.num_blocks {
        return Err(Error::Range(format!(
            "freeze block {block} outside 1..={}",
            model.arch.num_blocks
        )));
    }
    model.net.freeze_up_to(block)
}

/// Pack images (all the same shape) into an (N, C, H, W) tensor.
pub fn batch_from_images(images: &[&Image]) -> Result<Array4<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Consistency("empty batch".into()))?;
    let (c, h, w) = first.shape();
    let mut out = Array4::<f32>::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.shape() != (c, h, w) {
            return Err(Error::Shape(format!(
                "batch image {i} has shape {:?}, expected {:?}",
                img.shape(),
                (c, h, w)
            )));
        }
        out.index_axis_mut(ndarray::Axis(0), i).assign(img.data());
    }
    Ok(out)
}

/// Per-channel mean and standard deviation over a stack of images.
pub fn channel_statistics(images: &[&Image]) -> Result<(Vec<f32>, Vec<f32>)> {
    let first = images
        .first()
        .ok_or_else(|| Error::Consistency("no images for statistics".into()))?;
    let (c, _, _) = first.shape();
    let mut mean = vec![0.0f64; c];
    let mut count = vec![0usize; c];
    for img in images {
        for ch in 0..c {
            let lane = img.data().index_axis(ndarray::Axis(0), ch);
            mean[ch] += lane.iter().map(|&v| v as f64).sum::<f64>();
            count[ch] += lane.len();
        }
    }
    for ch in 0..c {
        mean[ch] /= count[ch] as f64;
    }
    let mut var = vec![0.0f64; c];
    for img in images {
        for ch in 0..c {
            let m = mean[ch];
            var[ch] += img
                .data()
                .index_axis(ndarray::Axis(0), ch)
                .iter()
                .map(|&v| (v as f64 - m).powi(2))
                .sum::<f64>();
        }
    }
    let std: Vec<f32> = var
        .iter()
        .zip(&count)
        .map(|(&v, &n)| ((v / n as f64).sqrt().max(1e-6)) as f32)
        .collect();
    Ok((mean.iter().map(|&m| m as f32).collect(), std))
}

const CKPT_MAGIC: &[u8; 8] = b"VTSSCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: ArchitectureSpec,
    seed: u64,
    norm_mean: Vec<f32>,
    norm_std: Vec<f32>,
    tensors: Vec<(String, usize)>,
}

/// Write a self-describing checkpoint: magic, version, JSON header,
/// little-endian f32 payload, SHA-256 of everything before the digest.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<String> {
    let mut tensors = Vec::new();
    model
        .net
        .visit_state(|p| tensors.push((p.name.clone(), p.values.to_vec())));
    let header = CheckpointHeader {
        arch: model.arch.clone(),
        seed: model.seed,
        norm_mean: model.net.norm_mean.clone(),
        norm_std: model.net.norm_std.clone(),
        tensors: tensors.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut body = Vec::new();
    body.extend_from_slice(CKPT_MAGIC);
    body.write_u32::<LittleEndian>(CKPT_VERSION)?;
    body.write_u64::<LittleEndian>(header_json.len() as u64)?;
    body.extend_from_slice(&header_json);
    for (_, values) in &tensors {
        for &v in values {
            body.write_f32::<LittleEndian>(v)?;
        }
    }
    let digest = Sha256::digest(&body);
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(&body)?;
    file.write_all(&digest)?;
    file.flush()?;
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Reload a checkpoint bit-exactly; verifies the stored digest.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut file = BufReader::new(File::open(path)?);
    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    if body.len() < 32 + CKPT_MAGIC.len() + 12 {
        return Err(Error::format("checkpoint truncated", 0));
    }
    let (payload, digest) = body.split_at(body.len() - 32);
    let expected = Sha256::digest(payload);
    if digest != expected.as_slice() {
        return Err(Error::Consistency("checkpoint digest mismatch".into()));
    }
    let mut cursor = std::io::Cursor::new(payload);
    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::format("bad checkpoint magic", 0));
    }
    let version = cursor.read_u32::<LittleEndian>()?;
    if version != CKPT_VERSION {
        return Err(Error::format(
            &format!("unsupported checkpoint version {version}"),
            8,
        ));
    }
    let header_len = cursor.read_u64::<LittleEndian>()? as usize;
    let mut header_json = vec![0u8; header_len];
    cursor.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)?;

    let mut model = build_backbone(&header.arch, header.seed)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (name, len) in &header.tensors {
        let mut buf = vec![0f32; *len];
        cursor.read_f32_into::<LittleEndian>(&mut buf)?;
        tensors.push((name.clone(), buf));
    }
    let mut rest = Vec::new();
    cursor.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Consistency(format!(
            "{} trailing bytes after checkpoint payload",
            rest.len()
        )));
    }
    model.net.load_state(&tensors)?;
    model
        .net
        .set_normalization(header.norm_mean, header.norm_std)?;
    Ok(model)
}

/// Top-1 predictions for a logits matrix.
pub fn argmax_rows(logits: &Array2<f32>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}
