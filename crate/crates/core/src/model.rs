//! Three-layer fully-convolutional segmentation network with exact reverse-mode
//! gradients, plus Adam.
//!
//! Layers are 3×3, stride 1, zero padding 1: `1→8`, ReLU, `8→8`, ReLU, `8→1`.
//! The network emits pre-sigmoid logits of the same spatial size as the input.
//!
//! Parameters live in one flat vector, layer by layer, each layer laid out as
//! weights `[out][in][ky][kx]` followed by biases `[out]`. The same layout is
//! used for gradients, the Adam moments and the checkpoint file.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, SeededRng};
use crate::scalar::Real;

/// `(in_channels, out_channels)` per layer.
pub const ARCHITECTURE: [(usize, usize); 3] = [(1, 8), (8, 8), (8, 1)];
pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// RNG stream reserved for weight initialization.
pub const INIT_STREAM: u64 = 0x1417;

/// Total number of parameters: 1·8·9 + 8 + 8·8·9 + 8 + 8·1·9 + 1 = 737.
pub const PARAM_COUNT: usize = {
    let mut n = 0;
    let mut i = 0;
    while i < ARCHITECTURE.len() {
        let (cin, cout) = ARCHITECTURE[i];
        n += cin * cout * TAPS + cout;
        i += 1;
    }
    n
};

const fn layer_offset(layer: usize) -> usize {
    let mut n = 0;
    let mut i = 0;
    while i < layer {
        let (cin, cout) = ARCHITECTURE[i];
        n += cin * cout * TAPS + cout;
        i += 1;
    }
    n
}

/// Parameters (or a gradient with the same shape).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNetParams<T> {
    data: Vec<T>,
}

impl<T: Real> ConvNetParams<T> {
    pub fn zeros() -> Self {
        Self { data: vec![T::zero(); PARAM_COUNT] }
    }

    /// Glorot-uniform weights in `±sqrt(6/(fan_in + fan_out))`, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed, INIT_STREAM);
        let mut p = Self::zeros();
        for (layer, &(cin, cout)) in ARCHITECTURE.iter().enumerate() {
            let bound = (6.0 / ((cin + cout) * TAPS) as f64).sqrt();
            for w in p.weights_mut(layer) {
                *w = T::lit(rng.uniform_in(-bound, bound));
            }
        }
        p
    }

    pub fn from_flat(data: Vec<T>) -> Result<Self> {
        if data.len() != PARAM_COUNT {
            return Err(Error::domain(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                data.len()
            )));
        }
        Ok(Self { data })
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn weights(&self, layer: usize) -> &[T] {
        let (cin, cout) = ARCHITECTURE[layer];
        let o = layer_offset(layer);
        &self.data[o..o + cin * cout * TAPS]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [T] {
        let (cin, cout) = ARCHITECTURE[layer];
        let o = layer_offset(layer);
        &mut self.data[o..o + cin * cout * TAPS]
    }

    pub fn biases(&self, layer: usize) -> &[T] {
        let (cin, cout) = ARCHITECTURE[layer];
        let o = layer_offset(layer) + cin * cout * TAPS;
        &self.data[o..o + cout]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [T] {
        let (cin, cout) = ARCHITECTURE[layer];
        let o = layer_offset(layer) + cin * cout * TAPS;
        &mut self.data[o..o + cout]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|a| *a *= k);
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|v| v.abs()).fold(T::zero(), T::max)
    }

    pub fn cast<U: Real>(&self) -> ConvNetParams<U> {
        ConvNetParams { data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

// --- convolution kernels ----------------------------------------------------

/// Valid index range along one axis for a tap offset `o ∈ {-1, 0, 1}`:
/// destination indices `[lo, hi)` read source index `d + o`.
#[inline]
fn valid_range(n: usize, o: isize) -> (usize, usize) {
    let lo = if o < 0 { (-o) as usize } else { 0 };
    let hi = if o > 0 { n - o as usize } else { n };
    (lo, hi.max(lo))
}

/// `dst[y][x] += k · src[y+oy][x+ox]` over the in-bounds region.
#[inline]
fn shifted_axpy<T: Real>(dst: &mut [T], src: &[T], k: T, h: usize, w: usize, oy: isize, ox: isize) {
    let (y0, y1) = valid_range(h, oy);
    let (x0, x1) = valid_range(w, ox);
    for y in y0..y1 {
        let sy = (y as isize + oy) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + (x0 as isize + ox) as usize..sy * w + (x1 as isize + ox) as usize];
        for (a, &b) in d.iter_mut().zip(s) {
            *a += k * b;
        }
    }
}

/// `Σ a[y][x] · b[y+oy][x+ox]` over the in-bounds region.
#[inline]
fn shifted_dot<T: Real>(a: &[T], b: &[T], h: usize, w: usize, oy: isize, ox: isize) -> T {
    let (y0, y1) = valid_range(h, oy);
    let (x0, x1) = valid_range(w, ox);
    let mut acc = T::zero();
    for y in y0..y1 {
        let sy = (y as isize + oy) as usize;
        let ra = &a[y * w + x0..y * w + x1];
        let rb = &b[sy * w + (x0 as isize + ox) as usize..sy * w + (x1 as isize + ox) as usize];
        acc += ra.iter().zip(rb).fold(T::zero(), |s, (&p, &q)| s + p * q);
    }
    acc
}

#[inline]
fn tap_offsets(t: usize) -> (isize, isize) {
    ((t / KERNEL) as isize - 1, (t % KERNEL) as isize - 1)
}

fn conv_forward<T: Real>(
    input: &[T],
    cin: usize,
    cout: usize,
    weights: &[T],
    biases: &[T],
    h: usize,
    w: usize,
) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); cout * hw];
    for co in 0..cout {
        let plane = &mut out[co * hw..(co + 1) * hw];
        plane.iter_mut().for_each(|v| *v = biases[co]);
        for ci in 0..cin {
            let src = &input[ci * hw..(ci + 1) * hw];
            let kern = &weights[(co * cin + ci) * TAPS..(co * cin + ci + 1) * TAPS];
            for (t, &k) in kern.iter().enumerate() {
                if k == T::zero() {
                    continue;
                }
                let (oy, ox) = tap_offsets(t);
                shifted_axpy(plane, src, k, h, w, oy, ox);
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients and optionally returns the input
/// gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    input: &[T],
    grad_out: &[T],
    cin: usize,
    cout: usize,
    weights: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    h: usize,
    w: usize,
    want_input_grad: bool,
) -> Option<Vec<T>> {
    let hw = h * w;
    for co in 0..cout {
        let g = &grad_out[co * hw..(co + 1) * hw];
        grad_b[co] += g.iter().copied().sum::<T>();
        for ci in 0..cin {
            let src = &input[ci * hw..(ci + 1) * hw];
            let base = (co * cin + ci) * TAPS;
            for t in 0..TAPS {
                let (oy, ox) = tap_offsets(t);
                grad_w[base + t] += shifted_dot(g, src, h, w, oy, ox);
            }
        }
    }
    if !want_input_grad {
        return None;
    }
    let mut grad_in = vec![T::zero(); cin * hw];
    for ci in 0..cin {
        let dst = &mut grad_in[ci * hw..(ci + 1) * hw];
        for co in 0..cout {
            let g = &grad_out[co * hw..(co + 1) * hw];
            let kern = &weights[(co * cin + ci) * TAPS..(co * cin + ci + 1) * TAPS];
            for (t, &k) in kern.iter().enumerate() {
                if k == T::zero() {
                    continue;
                }
                let (oy, ox) = tap_offsets(t);
                // out[y] reads in[y+o]  ⇒  in[y'] receives out[y'-o]
                shifted_axpy(dst, g, k, h, w, -oy, -ox);
            }
        }
    }
    Some(grad_in)
}

/// Activations retained by [`forward_pass`] for the backward sweep.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    height: usize,
    width: usize,
    input: Vec<T>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<T>>,
    /// Post-ReLU activations of the hidden layers.
    post: Vec<Vec<T>>,
    logits: Grid2D<T>,
}

impl<T: Real> ForwardPass<T> {
    pub fn logits(&self) -> &Grid2D<T> {
        &self.logits
    }

    pub fn into_logits(self) -> Grid2D<T> {
        self.logits
    }

    /// Pre-ReLU activations of each hidden layer, channel-major.
    pub fn hidden_preactivations(&self) -> &[Vec<T>] {
        &self.pre
    }
}

fn check_forward_inputs<T: Real>(params: &ConvNetParams<T>, image: &Grid2D<T>) -> Result<()> {
    if image.height() < KERNEL || image.width() < KERNEL {
        return Err(Error::domain("image must be at least 3x3"));
    }
    if !params.is_finite() {
        return Err(Error::domain("non-finite network parameter"));
    }
    Ok(())
}

pub fn forward_pass<T: Real>(params: &ConvNetParams<T>, image: &Grid2D<T>) -> Result<ForwardPass<T>> {
    check_forward_inputs(params, image)?;
    let (h, w) = image.dims();
    let input = image.as_slice().to_vec();
    let mut pre = Vec::with_capacity(ARCHITECTURE.len() - 1);
    let mut post = Vec::with_capacity(ARCHITECTURE.len() - 1);
    let mut current = input.clone();
    let last = ARCHITECTURE.len() - 1;
    for (layer, &(cin, cout)) in ARCHITECTURE.iter().enumerate() {
        let z = conv_forward(&current, cin, cout, params.weights(layer), params.biases(layer), h, w);
        if layer == last {
            current = z;
        } else {
            let a: Vec<T> = z.iter().map(|&v| v.max(T::zero())).collect();
            pre.push(z);
            post.push(a.clone());
            current = a;
        }
    }
    let logits = Grid2D::new(h, w, current)?;
    Ok(ForwardPass { height: h, width: w, input, pre, post, logits })
}

/// Pre-sigmoid logits, same spatial size as `image`.
pub fn forward<T: Real>(params: &ConvNetParams<T>, image: &Grid2D<T>) -> Result<Grid2D<T>> {
    forward_pass(params, image).map(ForwardPass::into_logits)
}

/// Gradient of a scalar loss with respect to every parameter, given the loss
/// gradient with respect to the logits of a retained forward pass.
pub fn backward_pass<T: Real>(
    params: &ConvNetParams<T>,
    pass: &ForwardPass<T>,
    loss_grad: &Grid2D<T>,
) -> Result<ConvNetParams<T>> {
    if loss_grad.dims() != (pass.height, pass.width) {
        return Err(Error::Shape { expected: (pass.height, pass.width), got: loss_grad.dims() });
    }
    let (h, w) = (pass.height, pass.width);
    let mut grad = ConvNetParams::zeros();
    let mut upstream = loss_grad.as_slice().to_vec();
    for layer in (0..ARCHITECTURE.len()).rev() {
        let (cin, cout) = ARCHITECTURE[layer];
        let input: &[T] = if layer == 0 { &pass.input } else { &pass.post[layer - 1] };
        let o = layer_offset(layer);
        let nw = cin * cout * TAPS;
        let (gw, gb) = grad.data[o..o + nw + cout].split_at_mut(nw);
        let grad_in = conv_backward(
            input,
            &upstream,
            cin,
            cout,
            params.weights(layer),
            gw,
            gb,
            h,
            w,
            layer > 0,
        );
        if let Some(mut g) = grad_in {
            // ReLU gate of the layer below
            for (gv, &z) in g.iter_mut().zip(&pass.pre[layer - 1]) {
                if z <= T::zero() {
                    *gv = T::zero();
                }
            }
            upstream = g;
        }
    }
    Ok(grad)
}

/// Recomputes the forward pass and returns the parameter gradient.
pub fn backward<T: Real>(
    params: &ConvNetParams<T>,
    image: &Grid2D<T>,
    loss_grad: &Grid2D<T>,
) -> Result<ConvNetParams<T>> {
    image.check_same_dims(loss_grad)?;
    let pass = forward_pass(params, image)?;
    backward_pass(params, &pass, loss_grad)
}

/// Gradient of a summed loss over several `(image, dL/dlogits)` pairs,
/// accumulated in order.
pub fn batch_backward<T: Real>(
    params: &ConvNetParams<T>,
    batch: &[(&Grid2D<T>, &Grid2D<T>)],
) -> Result<ConvNetParams<T>> {
    let mut total = ConvNetParams::zeros();
    for (image, g) in batch {
        total.add_assign(&backward(params, image, g)?);
    }
    Ok(total)
}

// --- Adam -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> AdamState<T> {
    /// β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new() -> Self {
        Self {
            m: vec![T::zero(); PARAM_COUNT],
            v: vec![T::zero(); PARAM_COUNT],
            step: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(
    params: &mut ConvNetParams<T>,
    grads: &ConvNetParams<T>,
    state: &mut AdamState<T>,
    lr: T,
) {
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for i in 0..params.data.len() {
        let g = grads.data[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params.data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

// --- checkpoint file --------------------------------------------------------

pub const CHECKPOINT_FORMAT: &str = "curriseg-convnet";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub kernel: usize,
    pub padding: usize,
    /// Channel counts from input to output, e.g. `[1, 8, 8, 1]`.
    pub channels: Vec<usize>,
    pub hidden_activation: String,
    pub output: String,
}

impl ArchitectureDescriptor {
    pub fn current() -> Self {
        let mut channels = vec![ARCHITECTURE[0].0];
        channels.extend(ARCHITECTURE.iter().map(|&(_, cout)| cout));
        Self {
            kernel: KERNEL,
            padding: 1,
            channels,
            hidden_activation: "relu".into(),
            output: "logits".into(),
        }
    }
}

/// JSON checkpoint: parameters in the flat layout described at the top of this
/// module, plus the architecture and the optimizer step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: ArchitectureDescriptor,
    pub epoch: usize,
    pub step: u64,
    pub parameter_count: usize,
    pub parameters: Vec<f64>,
}

impl Checkpoint {
    pub fn new<T: Real>(params: &ConvNetParams<T>, epoch: usize, step: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: ArchitectureDescriptor::current(),
            epoch,
            step,
            parameter_count: PARAM_COUNT,
            parameters: params.as_flat().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn params<T: Real>(&self) -> Result<ConvNetParams<T>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.architecture != ArchitectureDescriptor::current() {
            return Err(Error::Format("checkpoint architecture does not match".into()));
        }
        let p = ConvNetParams::from_flat(self.parameters.iter().map(|&v| T::lit(v)).collect())?;
        if !p.is_finite() {
            return Err(Error::Format("checkpoint contains non-finite parameters".into()));
        }
        Ok(p)
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read(r: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}
