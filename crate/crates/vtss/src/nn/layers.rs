use ndarray::{Array1, Array2, Array4, Axis};

use super::{cast, matmul, Scalar};

/// How a layer should treat a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Cache activations for backward; batch-norm uses batch statistics.
    Train,
    /// No caching; batch-norm uses running statistics.
    Eval,
}

/// 3x3 convolution, stride 1, padding 1, no bias (batch norm follows every
/// conv in this family). Weight is stored flattened as (out, in*9); images
/// are im2col'd in chunks so each chunk is a single wide GEMM.
pub struct Conv2d<F: Scalar> {
    pub weight: Array2<F>,
    pub grad_weight: Array2<F>,
    pub in_channels: usize,
    pub out_channels: usize,
    cached_input: Option<Array4<F>>,
}

/// Column-buffer budget in elements (512 KB of f32; sized to stay cache-friendly).
const COL_BUFFER_ELEMS: usize = 1 << 17;

impl<F: Scalar> Conv2d<F> {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Conv2d {
            weight: Array2::zeros((out_channels, in_channels * 9)),
            grad_weight: Array2::zeros((out_channels, in_channels * 9)),
            in_channels,
            out_channels,
            cached_input: None,
        }
    }

    fn chunk_len(c_in: usize, hw: usize) -> usize {
        (COL_BUFFER_ELEMS / (c_in * 9 * hw)).clamp(1, 128)
    }

    /// Fill `cols` (c_in*9, chunk*hw) with the patches of images
    /// [start, start+m); image j occupies columns [j*hw, (j+1)*hw).
    fn im2col_chunk(x: &Array4<F>, start: usize, m: usize, cols: &mut Array2<F>) {
        let (_, c_in, h, w) = x.dim();
        let hw = h * w;
        let width = cols.dim().1;
        cols.fill(F::zero());
        let cols_slice = cols.as_slice_mut().expect("cols is standard layout");
        for j in 0..m {
            for c in 0..c_in {
                let plane = x.slice(ndarray::s![start + j, c, .., ..]);
                let plane_slice = plane.to_slice().expect("input plane is contiguous");
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let row = (c * 9 + ky * 3 + kx) * width + j * hw;
                        // Source row is y + ky - 1; valid x span depends on kx.
                        let (x0, x1) = match kx {
                            0 => (1usize, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src = &plane_slice[sy as usize * w + (x0 + kx) - 1..];
                            let dst = &mut cols_slice[row + y * w + x0..row + y * w + x1];
                            dst.copy_from_slice(&src[..x1 - x0]);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add patch gradients back into image layout; the mirror of
    /// [`Self::im2col_chunk`].
    fn col2im_chunk(gcols: &Array2<F>, start: usize, m: usize, gin: &mut Array4<F>) {
        let (_, c_in, h, w) = gin.dim();
        let hw = h * w;
        let width = gcols.dim().1;
        let gcols_slice = gcols.as_slice().expect("gcols is standard layout");
        for j in 0..m {
            for c in 0..c_in {
                let mut plane = gin.slice_mut(ndarray::s![start + j, c, .., ..]);
                let plane_slice = plane.as_slice_mut().expect("gin plane is contiguous");
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let row = (c * 9 + ky * 3 + kx) * width + j * hw;
                        let (x0, x1) = match kx {
                            0 => (1usize, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let dst = &mut plane_slice
                                [sy as usize * w + (x0 + kx) - 1..sy as usize * w + (x1 + kx) - 1];
                            let src = &gcols_slice[row + y * w + x0..row + y * w + x1];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = *d + *s;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: Array4<F>, phase: Phase) -> Array4<F> {
        let (n, c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.in_channels);
        let hw = h * w;
        let chunk = Self::chunk_len(c_in, hw);
        let mut out = Array4::<F>::zeros((n, self.out_channels, h, w));
        let mut cols = Array2::<F>::zeros((c_in * 9, chunk * hw));
        let mut prod = Array2::<F>::zeros((self.out_channels, chunk * hw));
        for start in (0..n).step_by(chunk) {
            let m = chunk.min(n - start);
            Self::im2col_chunk(&x, start, m, &mut cols);
            matmul(&mut prod.view_mut(), &self.weight.view(), &cols.view(), false);
            for j in 0..m {
                let src = prod.slice(ndarray::s![.., j * hw..(j + 1) * hw]);
                let mut dst_i = out.index_axis_mut(Axis(0), start + j);
                let mut dst = ndarray::ArrayViewMut2::from_shape(
                    (self.out_channels, hw),
                    dst_i.as_slice_mut().expect("output is standard layout"),
                )
                .unwrap();
                dst.assign(&src);
            }
        }
        if phase == Phase::Train {
            self.cached_input = Some(x);
        }
        out
    }

    pub fn backward(&mut self, gout: &Array4<F>) -> Array4<F> {
        let x = self
            .cached_input
            .take()
            .expect("backward without cached forward");
        let (n, c_in, h, w) = x.dim();
        let hw = h * w;
        let chunk = Self::chunk_len(c_in, hw);
        self.grad_weight.fill(F::zero());
        let mut gin = Array4::<F>::zeros((n, c_in, h, w));
        let mut cols = Array2::<F>::zeros((c_in * 9, chunk * hw));
        let mut gcols = Array2::<F>::zeros((c_in * 9, chunk * hw));
        let mut gmat = Array2::<F>::zeros((self.out_channels, chunk * hw));
        for start in (0..n).step_by(chunk) {
            let m = chunk.min(n - start);
            if m < chunk {
                // stale columns would pollute the dW accumulation below
                gmat.fill(F::zero());
            }
            for j in 0..m {
                let gout_i = gout.index_axis(Axis(0), start + j);
                let src = ndarray::ArrayView2::from_shape(
                    (self.out_channels, hw),
                    gout_i.to_slice().expect("gout is standard layout"),
                )
                .unwrap();
                gmat.slice_mut(ndarray::s![.., j * hw..(j + 1) * hw]).assign(&src);
            }
            // dW += G . cols^T, one wide GEMM per chunk
            Self::im2col_chunk(&x, start, m, &mut cols);
            matmul(&mut self.grad_weight.view_mut(), &gmat.view(), &cols.t(), true);
            // dcols = W^T . G, then scatter back to image layout
            matmul(&mut gcols.view_mut(), &self.weight.t(), &gmat.view(), false);
            Self::col2im_chunk(&gcols, start, m, &mut gin);
        }
        gin
    }
}

/// Per-channel batch normalization with running statistics.
pub struct BatchNorm2d<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub grad_gamma: Array1<F>,
    pub grad_beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub eps: F,
    pub momentum: F,
    /// Normalize with running statistics even in the train phase while still
    /// producing gradients (finite-difference checks need a deterministic,
    /// input-independent normalization).
    pub fixed_stats: bool,
    cached_xhat: Option<Array4<F>>,
    cached_inv_std: Option<Array1<F>>,
    cached_batch_stats: bool,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: cast(1e-5),
            momentum: cast(0.1),
            fixed_stats: false,
            cached_xhat: None,
            cached_inv_std: None,
            cached_batch_stats: false,
        }
    }

    pub fn forward(&mut self, x: Array4<F>, phase: Phase) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let m = cast::<F>((n * h * w) as f64);
        let use_batch_stats = phase == Phase::Train && !self.fixed_stats;

        let (mean, var) = if use_batch_stats {
            let mut mean = Array1::<F>::zeros(c);
            let mut var = Array1::<F>::zeros(c);
            // accumulate over contiguous (sample, channel) planes
            for i in 0..n {
                for ch in 0..c {
                    let plane = x.slice(ndarray::s![i, ch, .., ..]);
                    let plane = plane.to_slice().expect("input plane is contiguous");
                    let mut s = F::zero();
                    for &v in plane {
                        s = s + v;
                    }
                    mean[ch] = mean[ch] + s;
                }
            }
            mean.mapv_inplace(|s| s / m);
            for i in 0..n {
                for ch in 0..c {
                    let plane = x.slice(ndarray::s![i, ch, .., ..]);
                    let plane = plane.to_slice().expect("input plane is contiguous");
                    let mu = mean[ch];
                    let mut acc = F::zero();
                    for &v in plane {
                        let d = v - mu;
                        acc = acc + d * d;
                    }
                    var[ch] = var[ch] + acc;
                }
            }
            var.mapv_inplace(|s| s / m); // biased, matches the normalization
            // running <- (1 - momentum) * running + momentum * batch
            let om = F::one() - self.momentum;
            for ch in 0..c {
                self.running_mean[ch] = om * self.running_mean[ch] + self.momentum * mean[ch];
                self.running_var[ch] = om * self.running_var[ch] + self.momentum * var[ch];
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };

        let inv_std: Array1<F> = var.mapv(|v| F::one() / (v + self.eps).sqrt());
        let mut xhat = x;
        let mut out = Array4::<F>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                let mu = mean[ch];
                let is = inv_std[ch];
                let g = self.gamma[ch];
                let b = self.beta[ch];
                let mut xp = xhat.slice_mut(ndarray::s![i, ch, .., ..]);
                let xp = xp.as_slice_mut().expect("plane is contiguous");
                let mut op = out.slice_mut(ndarray::s![i, ch, .., ..]);
                let op = op.as_slice_mut().expect("plane is contiguous");
                for (xv, ov) in xp.iter_mut().zip(op.iter_mut()) {
                    let nv = (*xv - mu) * is;
                    *xv = nv;
                    *ov = g * nv + b;
                }
            }
        }
        if phase == Phase::Train {
            self.cached_xhat = Some(xhat);
            self.cached_inv_std = Some(inv_std);
            self.cached_batch_stats = use_batch_stats;
        }
        out
    }

    pub fn backward(&mut self, gout: &Array4<F>) -> Array4<F> {
        let xhat = self.cached_xhat.take().expect("backward without forward");
        let inv_std = self.cached_inv_std.take().unwrap();
        let (n, c, h, w) = xhat.dim();
        let m = cast::<F>((n * h * w) as f64);

        let mut gin = Array4::<F>::zeros((n, c, h, w));
        let mut sum_g = vec![F::zero(); c];
        let mut sum_gx = vec![F::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                let g = gout.slice(ndarray::s![i, ch, .., ..]);
                let g = g.to_slice().expect("gout plane is contiguous");
                let xh = xhat.slice(ndarray::s![i, ch, .., ..]);
                let xh = xh.to_slice().expect("xhat plane is contiguous");
                let mut sg = F::zero();
                let mut sgx = F::zero();
                for (&gv, &xv) in g.iter().zip(xh) {
                    sg = sg + gv;
                    sgx = sgx + gv * xv;
                }
                sum_g[ch] = sum_g[ch] + sg;
                sum_gx[ch] = sum_gx[ch] + sgx;
            }
        }
        for ch in 0..c {
            self.grad_beta[ch] = sum_g[ch];
            self.grad_gamma[ch] = sum_gx[ch];
        }
        for i in 0..n {
            for ch in 0..c {
                let g = gout.slice(ndarray::s![i, ch, .., ..]);
                let g = g.to_slice().expect("gout plane is contiguous");
                let xh = xhat.slice(ndarray::s![i, ch, .., ..]);
                let xh = xh.to_slice().expect("xhat plane is contiguous");
                let mut target = gin.slice_mut(ndarray::s![i, ch, .., ..]);
                let target = target.as_slice_mut().expect("gin plane is contiguous");
                let scale = self.gamma[ch] * inv_std[ch];
                if self.cached_batch_stats {
                    // Full batch-norm backward through mean and variance.
                    let mg = sum_g[ch] / m;
                    let mgx = sum_gx[ch] / m;
                    for ((t, &gv), &xv) in target.iter_mut().zip(g.iter()).zip(xh) {
                        *t = scale * (gv - mg - xv * mgx);
                    }
                } else {
                    // Fixed statistics: the transform is a per-channel affine map.
                    for (t, &gv) in target.iter_mut().zip(g.iter()) {
                        *t = scale * gv;
                    }
                }
            }
        }
        gin
    }
}

/// Rectified-linear activation. Backward only needs the activity pattern,
/// so a bit mask is cached instead of the whole output.
pub struct Relu<F: Scalar> {
    cached_mask: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> Relu<F> {
    pub fn new() -> Self {
        Relu {
            cached_mask: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, mut x: Array4<F>, phase: Phase) -> Array4<F> {
        let slice = x.as_slice_mut().expect("activations are standard layout");
        if phase == Phase::Train {
            let mut mask = vec![false; slice.len()];
            for (v, m) in slice.iter_mut().zip(mask.iter_mut()) {
                if *v > F::zero() {
                    *m = true;
                } else {
                    *v = F::zero();
                }
            }
            self.cached_mask = Some(mask);
        } else {
            for v in slice.iter_mut() {
                if *v <= F::zero() {
                    *v = F::zero();
                }
            }
        }
        x
    }

    pub fn backward(&mut self, gout: &Array4<F>) -> Array4<F> {
        let mask = self.cached_mask.take().expect("backward without forward");
        let mut gin = gout.clone();
        let slice = gin.as_slice_mut().expect("gradients are standard layout");
        for (g, &alive) in slice.iter_mut().zip(&mask) {
            if !alive {
                *g = F::zero();
            }
        }
        gin
    }
}

/// Average pooling, kernel 3, stride 2, padding 1; padded cells count toward
/// the divisor, so every output is a sum over 9 slots divided by 9. Output
/// side is ceil(H / 2).
pub struct AvgPool {
    cached_input_dim: Option<(usize, usize, usize, usize)>,
}

impl AvgPool {
    pub fn new() -> Self {
        AvgPool { cached_input_dim: None }
    }

    pub fn out_side(h: usize) -> usize {
        (h + 1) / 2
    }

    pub fn forward<F: Scalar>(&mut self, x: Array4<F>, phase: Phase) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let oh = Self::out_side(h);
        let ow = Self::out_side(w);
        let ninth = F::one() / cast::<F>(9.0);
        let mut out = Array4::<F>::zeros((n, c, oh, ow));
        for i in 0..n {
            for ch in 0..c {
                let plane = x.slice(ndarray::s![i, ch, .., ..]);
                let plane = plane.to_slice().expect("input plane is contiguous");
                let mut op = out.slice_mut(ndarray::s![i, ch, .., ..]);
                let op = op.as_slice_mut().expect("output plane is contiguous");
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = F::zero();
                        for ky in 0..3isize {
                            let sy = oy as isize * 2 + ky - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let base = sy as usize * w;
                            for kx in 0..3isize {
                                let sx = ox as isize * 2 + kx - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc = acc + plane[base + sx as usize];
                            }
                        }
                        op[oy * ow + ox] = acc * ninth;
                    }
                }
            }
        }
        if phase == Phase::Train {
            self.cached_input_dim = Some((n, c, h, w));
        }
        out
    }

    pub fn backward<F: Scalar>(&mut self, gout: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = self.cached_input_dim.take().expect("backward without forward");
        let (_, _, oh, ow) = gout.dim();
        let ninth = F::one() / cast::<F>(9.0);
        let mut gin = Array4::<F>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                let gp = gout.slice(ndarray::s![i, ch, .., ..]);
                let gp = gp.to_slice().expect("gout plane is contiguous");
                let mut ip = gin.slice_mut(ndarray::s![i, ch, .., ..]);
                let ip = ip.as_slice_mut().expect("gin plane is contiguous");
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gp[oy * ow + ox] * ninth;
                        for ky in 0..3isize {
                            let sy = oy as isize * 2 + ky - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let base = sy as usize * w;
                            for kx in 0..3isize {
                                let sx = ox as isize * 2 + kx - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                ip[base + sx as usize] = ip[base + sx as usize] + g;
                            }
                        }
                    }
                }
            }
        }
        gin
    }
}

/// Global average pooling to (N, C, 1, 1).
pub struct GlobalAvgPool {
    cached_input_dim: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { cached_input_dim: None }
    }

    pub fn forward<F: Scalar>(&mut self, x: Array4<F>, phase: Phase) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let inv = F::one() / cast::<F>((h * w) as f64);
        let mut out = Array4::<F>::zeros((n, c, 1, 1));
        for i in 0..n {
            for ch in 0..c {
                out[[i, ch, 0, 0]] = x.slice(ndarray::s![i, ch, .., ..]).sum() * inv;
            }
        }
        if phase == Phase::Train {
            self.cached_input_dim = Some((n, c, h, w));
        }
        out
    }

    pub fn backward<F: Scalar>(&mut self, gout: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = self.cached_input_dim.take().expect("backward without forward");
        let inv = F::one() / cast::<F>((h * w) as f64);
        let mut gin = Array4::<F>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                let g = gout[[i, ch, 0, 0]] * inv;
                gin.slice_mut(ndarray::s![i, ch, .., ..]).fill(g);
            }
        }
        gin
    }
}

/// Fully connected layer on (N, C, 1, 1) inputs.
pub struct Linear<F: Scalar> {
    pub weight: Array2<F>, // (out, in)
    pub bias: Array1<F>,
    pub grad_weight: Array2<F>,
    pub grad_bias: Array1<F>,
    cached_input: Option<Array2<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: Array2::zeros((out_features, in_features)),
            bias: Array1::zeros(out_features),
            grad_weight: Array2::zeros((out_features, in_features)),
            grad_bias: Array1::zeros(out_features),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: Array4<F>, phase: Phase) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        debug_assert_eq!((h, w), (1, 1));
        let flat = x.into_shape_with_order((n, c)).unwrap();
        let (out_f, _) = self.weight.dim();
        let mut out = Array2::<F>::zeros((n, out_f));
        matmul(&mut out.view_mut(), &flat.view(), &self.weight.t(), false);
        for mut row in out.rows_mut() {
            row += &self.bias;
        }
        if phase == Phase::Train {
            self.cached_input = Some(flat);
        }
        out.into_shape_with_order((n, out_f, 1, 1)).unwrap()
    }

    pub fn backward(&mut self, gout: &Array4<F>) -> Array4<F> {
        let x = self.cached_input.take().expect("backward without forward");
        let (n, in_f) = x.dim();
        let (_, out_f, _, _) = gout.dim();
        let g = gout
            .view()
            .into_shape_with_order((n, out_f))
            .unwrap();
        matmul(&mut self.grad_weight.view_mut(), &g.t(), &x.view(), false);
        self.grad_bias = g.sum_axis(Axis(0));
        let mut gin = Array2::<F>::zeros((n, in_f));
        matmul(&mut gin.view_mut(), &g, &self.weight.view(), false);
        gin.into_shape_with_order((n, in_f, 1, 1)).unwrap()
    }
}

/// A network layer; the backbone family only needs these six kinds.
pub enum Layer<F: Scalar> {
    Conv(Conv2d<F>),
    BatchNorm(BatchNorm2d<F>),
    Relu(Relu<F>),
    AvgPool(AvgPool),
    GlobalAvgPool(GlobalAvgPool),
    Linear(Linear<F>),
}

impl<F: Scalar> Layer<F> {
    pub fn forward(&mut self, x: Array4<F>, phase: Phase) -> Array4<F> {
        match self {
            Layer::Conv(l) => l.forward(x, phase),
            Layer::BatchNorm(l) => l.forward(x, phase),
            Layer::Relu(l) => l.forward(x, phase),
            Layer::AvgPool(l) => l.forward(x, phase),
            Layer::GlobalAvgPool(l) => l.forward(x, phase),
            Layer::Linear(l) => l.forward(x, phase),
        }
    }

    pub fn backward(&mut self, gout: &Array4<F>) -> Array4<F> {
        match self {
            Layer::Conv(l) => l.backward(gout),
            Layer::BatchNorm(l) => l.backward(gout),
            Layer::Relu(l) => l.backward(gout),
            Layer::AvgPool(l) => l.backward(gout),
            Layer::GlobalAvgPool(l) => l.backward(gout),
            Layer::Linear(l) => l.backward(gout),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Relu(_) => "relu",
            Layer::AvgPool(_) => "avgpool",
            Layer::GlobalAvgPool(_) => "gap",
            Layer::Linear(_) => "linear",
        }
    }
}
