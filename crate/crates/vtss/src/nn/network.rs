use ndarray::{Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    AvgPool, BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, Phase, Relu,
};
use super::{cast, Scalar};
use crate::error::{Error, Result};

/// Shape of a backbone: `num_blocks` blocks of `convs_per_block`
/// conv/bn/relu triples at a fixed width, average pooling between blocks,
/// then global average pooling and a linear output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub num_blocks: usize,
    pub convs_per_block: usize,
    pub channels: usize,
    /// (C, H, W) of the input tensor.
    pub input_shape: (usize, usize, usize),
    pub num_outputs: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.convs_per_block == 0 {
            return Err(Error::Spec(
                "network needs at least one block with one conv".into(),
            ));
        }
        if self.channels == 0 || self.num_outputs == 0 {
            return Err(Error::Spec("channels and outputs must be positive".into()));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Spec("input shape must be positive".into()));
        }
        if h != w {
            return Err(Error::Spec(format!(
                "input must be square, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Spatial side of the feature map after `pools` pooling stages.
    pub fn side_after_pools(&self, pools: usize) -> usize {
        let mut side = self.input_shape.1;
        for _ in 0..pools {
            side = AvgPool::out_side(side);
        }
        side
    }
}

/// Read-only view of one parameter or statistics tensor.
pub struct ParamView<'a, F: Scalar> {
    pub name: String,
    pub values: &'a [F],
    /// True for running statistics (not trainable, still part of state).
    pub is_stat: bool,
}

/// Mutable view of one trainable parameter and its gradient.
pub struct ParamViewMut<'a, F: Scalar> {
    pub name: String,
    pub values: &'a mut [F],
    pub grads: &'a mut [F],
    /// Whether weight decay applies (convs and linear weights; not
    /// batch-norm parameters or biases).
    pub decay: bool,
}

/// A backbone or head instance: the layer stack plus the input
/// normalization constants and the freeze boundary.
pub struct Network<F: Scalar> {
    pub spec: NetworkSpec,
    layers: Vec<Layer<F>>,
    /// `block_ends[b]` is the layer index one past block `b` (including the
    /// pool that follows it, when there is one).
    block_ends: Vec<usize>,
    frozen_prefix: usize,
    pub norm_mean: Vec<F>,
    pub norm_std: Vec<F>,
}

fn normal<F: Scalar>(rng: &mut ChaCha8Rng, std: f64) -> F {
    // Box-Muller; two uniform draws per sample keeps the stream simple and
    // reproducible across element types.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    cast((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std)
}

impl<F: Scalar> Network<F> {
    pub fn build(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut layers: Vec<Layer<F>> = Vec::new();
        let mut block_ends = Vec::with_capacity(spec.num_blocks);
        let mut in_ch = spec.input_shape.0;
        for b in 0..spec.num_blocks {
            for _ in 0..spec.convs_per_block {
                let mut conv = Conv2d::new(in_ch, spec.channels);
                let std = (2.0 / (in_ch * 9) as f64).sqrt();
                for v in conv.weight.iter_mut() {
                    *v = normal(rng, std);
                }
                layers.push(Layer::Conv(conv));
                layers.push(Layer::BatchNorm(BatchNorm2d::new(spec.channels)));
                layers.push(Layer::Relu(Relu::new()));
                in_ch = spec.channels;
            }
            if b + 1 < spec.num_blocks {
                layers.push(Layer::AvgPool(AvgPool::new()));
            }
            block_ends.push(layers.len());
        }
        layers.push(Layer::GlobalAvgPool(GlobalAvgPool::new()));
        let mut linear = Linear::new(spec.channels, spec.num_outputs);
        for v in linear.weight.iter_mut() {
            *v = normal(rng, 0.01);
        }
        layers.push(Layer::Linear(linear));
        let (c, _, _) = spec.input_shape;
        Ok(Network {
            spec,
            layers,
            block_ends,
            frozen_prefix: 0,
            norm_mean: vec![F::zero(); c],
            norm_std: vec![F::one(); c],
        })
    }

    pub fn set_normalization(&mut self, mean: Vec<F>, std: Vec<F>) -> Result<()> {
        let c = self.spec.input_shape.0;
        if mean.len() != c || std.len() != c {
            return Err(Error::Spec(format!(
                "normalization constants must have {c} channels"
            )));
        }
        if std.iter().any(|&s| s <= F::zero()) {
            return Err(Error::Spec("normalization std must be positive".into()));
        }
        self.norm_mean = mean;
        self.norm_std = std;
        Ok(())
    }

    /// Freeze all layers through block `block` (1-based); 0 unfreezes
    /// everything.
    pub fn freeze_up_to(&mut self, block: usize) -> Result<()> {
        if block > self.spec.num_blocks {
            return Err(Error::Spec(format!(
                "cannot freeze {block} of {} blocks",
                self.spec.num_blocks
            )));
        }
        self.frozen_prefix = if block == 0 { 0 } else { self.block_ends[block - 1] };
        Ok(())
    }

    pub fn frozen_blocks(&self) -> usize {
        self.block_ends
            .iter()
            .take_while(|&&e| e <= self.frozen_prefix)
            .count()
    }

    /// Force batch-norm layers to normalize with running statistics during
    /// training (for finite-difference gradient checks).
    pub fn set_fixed_bn_stats(&mut self, fixed: bool) {
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                bn.fixed_stats = fixed;
            }
        }
    }

    fn normalize_input(&self, x: &Array4<F>) -> Array4<F> {
        let mut out = x.clone();
        for (c, (&m, &s)) in self.norm_mean.iter().zip(&self.norm_std).enumerate() {
            out.slice_mut(ndarray::s![.., c, .., ..])
                .mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    fn run(&mut self, x: &Array4<F>, train: bool, until: usize) -> Array4<F> {
        let mut cur = self.normalize_input(x);
        for (i, layer) in self.layers.iter_mut().take(until).enumerate() {
            let phase = if train && i >= self.frozen_prefix {
                Phase::Train
            } else {
                Phase::Eval
            };
            cur = layer.forward(cur, phase);
        }
        cur
    }

    /// Full forward pass; returns logits (N, num_outputs).
    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array2<F> {
        let n = x.dim().0;
        let until = self.layers.len();
        let out = self.run(x, train, until);
        out.into_shape_with_order((n, self.spec.num_outputs)).unwrap()
    }

    /// Activations right after block `tap_block` (1-based), including the
    /// pool that follows it. Always evaluation mode.
    pub fn forward_features(&mut self, x: &Array4<F>, tap_block: usize) -> Result<Array4<F>> {
        if tap_block == 0 || tap_block > self.spec.num_blocks {
            return Err(Error::Spec(format!(
                "tap block {tap_block} outside 1..={}",
                self.spec.num_blocks
            )));
        }
        Ok(self.run(x, false, self.block_ends[tap_block - 1]))
    }

    /// Backward pass from the logits gradient; stops at the freeze boundary.
    pub fn backward(&mut self, grad_logits: &Array2<F>) {
        let (n, k) = grad_logits.dim();
        let mut g = grad_logits
            .to_owned()
            .into_shape_with_order((n, k, 1, 1))
            .unwrap();
        for i in (self.frozen_prefix..self.layers.len()).rev() {
            g = self.layers[i].backward(&g);
        }
    }

    /// Visit trainable parameters above the freeze boundary, in layer order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(ParamViewMut<'_, F>)) {
        let frozen = self.frozen_prefix;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if i < frozen {
                continue;
            }
            match layer {
                Layer::Conv(l) => f(ParamViewMut {
                    name: format!("layer{i}.conv.weight"),
                    values: l.weight.as_slice_mut().unwrap(),
                    grads: l.grad_weight.as_slice_mut().unwrap(),
                    decay: true,
                }),
                Layer::BatchNorm(l) => {
                    f(ParamViewMut {
                        name: format!("layer{i}.bn.gamma"),
                        values: l.gamma.as_slice_mut().unwrap(),
                        grads: l.grad_gamma.as_slice_mut().unwrap(),
                        decay: false,
                    });
                    f(ParamViewMut {
                        name: format!("layer{i}.bn.beta"),
                        values: l.beta.as_slice_mut().unwrap(),
                        grads: l.grad_beta.as_slice_mut().unwrap(),
                        decay: false,
                    });
                }
                Layer::Linear(l) => {
                    f(ParamViewMut {
                        name: format!("layer{i}.linear.weight"),
                        values: l.weight.as_slice_mut().unwrap(),
                        grads: l.grad_weight.as_slice_mut().unwrap(),
                        decay: true,
                    });
                    f(ParamViewMut {
                        name: format!("layer{i}.linear.bias"),
                        values: l.bias.as_slice_mut().unwrap(),
                        grads: l.grad_bias.as_slice_mut().unwrap(),
                        decay: false,
                    });
                }
                _ => {}
            }
        }
    }

    /// Visit every state tensor (parameters and running statistics) in a
    /// fixed order, frozen or not.
    pub fn visit_state(&self, mut f: impl FnMut(ParamView<'_, F>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(l) => f(ParamView {
                    name: format!("layer{i}.conv.weight"),
                    values: l.weight.as_slice().unwrap(),
                    is_stat: false,
                }),
                Layer::BatchNorm(l) => {
                    f(ParamView {
                        name: format!("layer{i}.bn.gamma"),
                        values: l.gamma.as_slice().unwrap(),
                        is_stat: false,
                    });
                    f(ParamView {
                        name: format!("layer{i}.bn.beta"),
                        values: l.beta.as_slice().unwrap(),
                        is_stat: false,
                    });
                    f(ParamView {
                        name: format!("layer{i}.bn.running_mean"),
                        values: l.running_mean.as_slice().unwrap(),
                        is_stat: true,
                    });
                    f(ParamView {
                        name: format!("layer{i}.bn.running_var"),
                        values: l.running_var.as_slice().unwrap(),
                        is_stat: true,
                    });
                }
                Layer::Linear(l) => {
                    f(ParamView {
                        name: format!("layer{i}.linear.weight"),
                        values: l.weight.as_slice().unwrap(),
                        is_stat: false,
                    });
                    f(ParamView {
                        name: format!("layer{i}.linear.bias"),
                        values: l.bias.as_slice().unwrap(),
                        is_stat: false,
                    });
                }
                _ => {}
            }
        }
    }

    /// Overwrite state tensors in visit order from a list of flat buffers.
    pub fn load_state(&mut self, tensors: &[(String, Vec<F>)]) -> Result<()> {
        let mut expected = Vec::new();
        self.visit_state(|p| expected.push((p.name, p.values.len())));
        if expected.len() != tensors.len() {
            return Err(Error::Consistency(format!(
                "state has {} tensors, checkpoint has {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, len), (got_name, buf)) in expected.iter().zip(tensors) {
            if name != got_name || *len != buf.len() {
                return Err(Error::Consistency(format!(
                    "tensor mismatch: expected {name}[{len}], got {got_name}[{}]",
                    buf.len()
                )));
            }
        }
        let mut it = tensors.iter();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => {
                    l.weight
                        .as_slice_mut()
                        .unwrap()
                        .copy_from_slice(&it.next().unwrap().1);
                }
                Layer::BatchNorm(l) => {
                    l.gamma
                        .as_slice_mut()
                        .unwrap()
                        .copy_from_slice(&it.next().unwrap().1);
                    l.beta
                        .as_slice_mut()
                        .unwrap()
                        .copy_from_slice(&it.next().unwrap().1);
                    l.running_mean
                        .as_slice_mut()
                        .unwrap()
                        .copy_from_slice(&it.next().unwrap().1);
                    l.running_var
                        .as_slice_mut()
                        .unwrap()
                        .copy_from_slice(&it.next().unwrap().1);
                }
                Layer::Linear(l) => {
                    l.weight
                        .as_slice_mut()
                        .unwrap()
                        .copy_from_slice(&it.next().unwrap().1);
                    l.bias
                        .as_slice_mut()
                        .unwrap()
                        .copy_from_slice(&it.next().unwrap().1);
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit_state(|p| {
            if !p.is_stat {
                total += p.values.len();
            }
        });
        total
    }

    /// SHA-256 over every state tensor's little-endian bytes, in visit
    /// order, prefixed by each tensor's name. Frozen-region hashes use the
    /// same encoding restricted to layers before the freeze boundary.
    pub fn state_hash(&self) -> String {
        self.hash_layers(self.layers.len())
    }

    /// Hash of the frozen region only (layers before the freeze boundary).
    pub fn frozen_hash(&self) -> String {
        self.hash_layers(self.frozen_prefix)
    }

    fn hash_layers(&self, until: usize) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (i, layer) in self.layers.iter().take(until).enumerate() {
            let mut feed = |name: String, values: &[F]| {
                hasher.update(name.as_bytes());
                for &v in values {
                    hasher.update(F::to_le_bytes_vec(v));
                }
            };
            match layer {
                Layer::Conv(l) => feed(
                    format!("layer{i}.conv.weight"),
                    l.weight.as_slice().unwrap(),
                ),
                Layer::BatchNorm(l) => {
                    feed(format!("layer{i}.bn.gamma"), l.gamma.as_slice().unwrap());
                    feed(format!("layer{i}.bn.beta"), l.beta.as_slice().unwrap());
                    feed(
                        format!("layer{i}.bn.running_mean"),
                        l.running_mean.as_slice().unwrap(),
                    );
                    feed(
                        format!("layer{i}.bn.running_var"),
                        l.running_var.as_slice().unwrap(),
                    );
                }
                Layer::Linear(l) => {
                    feed(
                        format!("layer{i}.linear.weight"),
                        l.weight.as_slice().unwrap(),
                    );
                    feed(format!("layer{i}.linear.bias"), l.bias.as_slice().unwrap());
                }
                _ => {}
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::cross_entropy;
    use rand::SeedableRng;

    fn micro_spec() -> NetworkSpec {
        NetworkSpec {
            num_blocks: 1,
            convs_per_block: 1,
            channels: 4,
            input_shape: (1, 8, 8),
            num_outputs: 3,
        }
    }

    #[test]
    fn shapes_follow_pooling_chain() {
        let spec = NetworkSpec {
            num_blocks: 4,
            convs_per_block: 2,
            channels: 8,
            input_shape: (3, 32, 32),
            num_outputs: 10,
        };
        assert_eq!(spec.side_after_pools(0), 32);
        assert_eq!(spec.side_after_pools(1), 16);
        assert_eq!(spec.side_after_pools(2), 8);
        assert_eq!(spec.side_after_pools(3), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Network::<f32>::build(spec, &mut rng).unwrap();
        let x = Array4::<f32>::zeros((2, 3, 32, 32));
        let feats = net.forward_features(&x, 2).unwrap();
        assert_eq!(feats.dim(), (2, 8, 8, 8));
        let logits = net.forward(&x, false);
        assert_eq!(logits.dim(), (2, 10));
    }

    #[test]
    fn forward_is_deterministic_for_same_seed() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(3);
        let mut rng_b = ChaCha8Rng::seed_from_u64(3);
        let mut a = Network::<f32>::build(micro_spec(), &mut rng_a).unwrap();
        let mut b = Network::<f32>::build(micro_spec(), &mut rng_b).unwrap();
        assert_eq!(a.state_hash(), b.state_hash());
        let x = Array4::from_shape_fn((2, 1, 8, 8), |(n, _, y, xx)| {
            ((n * 64 + y * 8 + xx) % 17) as f32 / 17.0
        });
        assert_eq!(a.forward(&x, false), b.forward(&x, false));
    }

    #[test]
    fn load_state_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::<f32>::build(micro_spec(), &mut rng).unwrap();
        let mut tensors = Vec::new();
        net.visit_state(|p| tensors.push((p.name.clone(), p.values.to_vec())));
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let mut other = Network::<f32>::build(micro_spec(), &mut rng2).unwrap();
        assert_ne!(net.state_hash(), other.state_hash());
        other.load_state(&tensors).unwrap();
        assert_eq!(net.state_hash(), other.state_hash());
    }

    #[test]
    fn gradients_match_finite_differences_in_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(69);
        let mut net = Network::<f64>::build(micro_spec(), &mut rng).unwrap();
        net.set_fixed_bn_stats(true);
        // non-trivial running stats so fixed-stat normalization is exercised
        let x = Array4::from_shape_fn((3, 1, 8, 8), |(n, _, y, xx)| {
            (((n * 31 + y * 7 + xx * 3) % 23) as f64 / 23.0) - 0.4
        });
        let labels = vec![0usize, 2, 1];
        let logits = net.forward(&x, true);
        let (_, grad_logits) = cross_entropy(&logits.view(), &labels);
        net.backward(&grad_logits);

        // collect analytic grads, then probe a spread of parameters
        let mut params: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        net.visit_params_mut(|p| {
            params.push((p.name.clone(), p.values.to_vec(), p.grads.to_vec()));
        });
        let h = 1e-3;
        for (pi, (name, values, grads)) in params.iter().enumerate() {
            let stride = (values.len() / 5).max(1);
            for j in (0..values.len()).step_by(stride) {
                let eval = |delta: f64, net: &mut Network<f64>| {
                    let mut k = 0;
                    net.visit_params_mut(|p| {
                        if k == pi {
                            p.values[j] += delta;
                        }
                        k += 1;
                    });
                    let logits = net.forward(&x, true);
                    let (loss, _) = cross_entropy(&logits.view(), &labels);
                    let mut k = 0;
                    net.visit_params_mut(|p| {
                        if k == pi {
                            p.values[j] -= delta;
                        }
                        k += 1;
                    });
                    loss
                };
                let lp = eval(h, &mut net);
                let lm = eval(-h, &mut net);
                let fd = (lp - lm) / (2.0 * h);
                let analytic = grads[j];
                let denom = fd.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (fd - analytic).abs() / denom < 1e-3,
                    "{name}[{j}]: analytic {analytic}, fd {fd}"
                );
            }
        }
    }
}

