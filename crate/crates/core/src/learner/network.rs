use rand::distributions::{Distribution, Uniform};

use super::arch::{ArchitectureDescriptor, LayerSpec};
use crate::datasets::stream_rng;
use crate::error::{domain_err, Error, Result};
use crate::imaging::ImageTensor;
use crate::scalar::Real;

/// Weights and biases of one parametrized layer.
///
/// Convolution weights are `[out][in][kh][kw]`, dense weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    fn zeros(counts: (usize, usize)) -> Self {
        LayerParams {
            weights: vec![T::zero(); counts.0],
            bias: vec![T::zero(); counts.1],
        }
    }
}

/// Per-layer parameter slots, `None` for layers without parameters.
pub type ParamSet<T> = Vec<Option<LayerParams<T>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: ArchitectureDescriptor,
    shapes: Vec<[usize; 3]>,
    params: ParamSet<T>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<T> {
    n: usize,
    /// `acts[0]` is the input batch, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<T>>,
    /// Per max-pool layer: flat input offset of each output's maximum.
    argmax: Vec<Vec<u32>>,
}

impl<T> ForwardCache<T> {
    /// Class probabilities, `n × K` row-major.
    pub fn probabilities(&self) -> &[T] {
        self.acts.last().expect("non-empty")
    }
}

/// Loss and gradients for one batch.
pub struct BatchGradients<T> {
    /// Sum of per-sample cross-entropy in f64.
    pub loss_sum: f64,
    pub correct: usize,
    pub grads: ParamSet<T>,
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.col_cols();
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.oh {
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < g.w as isize {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.col_cols();
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            let v = cols[row + oy * g.ow + ox];
                            let d = &mut dx[base + ix as usize];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

fn len3(s: [usize; 3]) -> usize {
    s[0] * s[1] * s[2]
}

/// Cross-entropy of one probability row; probabilities are floored to keep it finite.
pub(crate) fn cross_entropy<T: Real>(row: &[T], label: usize) -> f64 {
    let p = row[label].to_f64();
    if p.is_nan() {
        return f64::NAN;
    }
    -p.max(1e-300).ln()
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> Network<T> {
    /// Glorot-uniform weights and zero biases; layer `i` draws from its own
    /// stream of `seed`.
    pub fn new(arch: ArchitectureDescriptor, seed: u64) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut net = Network {
            params: arch
                .layers
                .iter()
                .map(|l| l.param_counts().map(LayerParams::zeros))
                .collect(),
            arch,
            shapes,
        };
        for i in 0..net.arch.layers.len() {
            if net.params[i].is_some() {
                net.reinit_layer(i, seed)?;
            }
        }
        Ok(net)
    }

    pub fn from_params(arch: ArchitectureDescriptor, params: ParamSet<T>) -> Result<Self> {
        let shapes = arch.shapes()?;
        if params.len() != arch.layers.len() {
            return Err(domain_err(format!(
                "{} parameter slots for {} layers",
                params.len(),
                arch.layers.len()
            )));
        }
        for (i, (layer, p)) in arch.layers.iter().zip(&params).enumerate() {
            let ok = match (layer.param_counts(), p) {
                (None, None) => true,
                (Some((w, b)), Some(p)) => p.weights.len() == w && p.bias.len() == b,
                _ => false,
            };
            if !ok {
                return Err(Error::Shape {
                    layer: i,
                    kind: layer.kind(),
                    detail: "parameter count does not match the layer".into(),
                });
            }
        }
        Ok(Network {
            arch,
            shapes,
            params,
        })
    }

    pub fn reinit_layer(&mut self, index: usize, seed: u64) -> Result<()> {
        let layer = self
            .arch
            .layers
            .get(index)
            .ok_or_else(|| domain_err(format!("no layer {index}")))?;
        let (Some((fan_in, fan_out)), Some(p)) = (layer.fans(), self.params[index].as_mut()) else {
            return Err(domain_err(format!(
                "layer {index} ({}) has no parameters",
                layer.kind()
            )));
        };
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        let mut rng = stream_rng(seed, index as u64);
        for w in &mut p.weights {
            *w = T::from_f64(dist.sample(&mut rng));
        }
        p.bias.iter_mut().for_each(|b| *b = T::zero());
        Ok(())
    }

    pub fn arch(&self) -> &ArchitectureDescriptor {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        len3(self.arch.input)
    }

    pub fn class_count(&self) -> usize {
        self.shapes.last().expect("validated")[0]
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weights: p
                            .weights
                            .iter()
                            .map(|v| U::from_f64(Real::to_f64(*v)))
                            .collect(),
                        bias: p
                            .bias
                            .iter()
                            .map(|v| U::from_f64(Real::to_f64(*v)))
                            .collect(),
                    })
                })
                .collect(),
        }
    }

    fn in_shape(&self, i: usize) -> [usize; 3] {
        if i == 0 {
            self.arch.input
        } else {
            self.shapes[i - 1]
        }
    }

    fn geom(&self, i: usize) -> ConvGeom {
        let [c, h, w] = self.in_shape(i);
        let [_, oh, ow] = self.shapes[i];
        match self.arch.layers[i] {
            LayerSpec::Convolution {
                kernel_h,
                kernel_w,
                stride,
                padding,
                ..
            } => ConvGeom {
                c,
                h,
                w,
                kh: kernel_h,
                kw: kernel_w,
                stride,
                pad: padding,
                oh,
                ow,
            },
            LayerSpec::MaxPool { size, stride } => ConvGeom {
                c,
                h,
                w,
                kh: size,
                kw: size,
                stride,
                pad: 0,
                oh,
                ow,
            },
            _ => unreachable!("geometry of a shapeless layer"),
        }
    }

    /// Class probabilities for one image.
    pub fn forward(&self, x: &ImageTensor<T>) -> Result<Vec<T>> {
        if x.shape() != self.arch.input {
            return Err(Error::Shape {
                layer: 0,
                kind: "input",
                detail: format!(
                    "network expects {:?}, tensor is {:?}",
                    self.arch.input,
                    x.shape()
                ),
            });
        }
        self.forward_batch(&x.values, 1)
    }

    /// Class probabilities for `n` samples laid out back to back.
    pub fn forward_batch(&self, inputs: &[T], n: usize) -> Result<Vec<T>> {
        let mut cache = self.forward_cached(inputs, n)?;
        Ok(cache.acts.pop().expect("non-empty"))
    }

    pub fn forward_cached(&self, inputs: &[T], n: usize) -> Result<ForwardCache<T>> {
        if inputs.len() != n * self.input_len() {
            return Err(Error::Shape {
                layer: 0,
                kind: "input",
                detail: format!(
                    "{} values for {n} samples of {}",
                    inputs.len(),
                    self.input_len()
                ),
            });
        }
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.arch.layers.len() + 1);
        acts.push(inputs.to_vec());
        let mut argmax_cache = Vec::new();
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let x = acts.last().expect("non-empty");
            let in_len = len3(self.in_shape(i));
            let out_len = len3(self.shapes[i]);
            let mut y = vec![T::zero(); n * out_len];
            match *layer {
                LayerSpec::Convolution { out_channels, .. } => {
                    let g = self.geom(i);
                    let p = self.params[i].as_ref().expect("conv params");
                    let (ck, pp) = (g.col_rows(), g.col_cols());
                    let mut cols = vec![T::zero(); ck * pp];
                    for s in 0..n {
                        im2col(&x[s * in_len..(s + 1) * in_len], &g, &mut cols);
                        let ys = &mut y[s * out_len..(s + 1) * out_len];
                        for (o, chunk) in ys.chunks_mut(pp).enumerate() {
                            chunk.fill(p.bias[o]);
                        }
                        T::gemm(
                            out_channels,
                            ck,
                            pp,
                            T::one(),
                            &p.weights,
                            (ck as isize, 1),
                            &cols,
                            (pp as isize, 1),
                            T::one(),
                            ys,
                            (pp as isize, 1),
                        );
                    }
                }
                LayerSpec::Relu => {
                    for (o, v) in y.iter_mut().zip(x) {
                        *o = if *v > T::zero() { *v } else { T::zero() };
                    }
                }
                LayerSpec::MaxPool { .. } => {
                    let g = self.geom(i);
                    let mut idx = vec![0u32; n * out_len];
                    for s in 0..n {
                        let xs = &x[s * in_len..(s + 1) * in_len];
                        for c in 0..g.c {
                            for oy in 0..g.oh {
                                for ox in 0..g.ow {
                                    let mut best = (c * g.h + oy * g.stride) * g.w + ox * g.stride;
                                    for ky in 0..g.kh {
                                        for kx in 0..g.kw {
                                            let at = (c * g.h + oy * g.stride + ky) * g.w
                                                + ox * g.stride
                                                + kx;
                                            if xs[at] > xs[best] {
                                                best = at;
                                            }
                                        }
                                    }
                                    let o = s * out_len + (c * g.oh + oy) * g.ow + ox;
                                    y[o] = xs[best];
                                    idx[o] = best as u32;
                                }
                            }
                        }
                    }
                    argmax_cache.push(idx);
                }
                LayerSpec::Flatten => y.copy_from_slice(x),
                LayerSpec::FullyConnected { inputs, outputs } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    for row in y.chunks_mut(outputs) {
                        row.copy_from_slice(&p.bias);
                    }
                    T::gemm(
                        n,
                        inputs,
                        outputs,
                        T::one(),
                        x,
                        (inputs as isize, 1),
                        &p.weights,
                        (1, inputs as isize),
                        T::one(),
                        &mut y,
                        (outputs as isize, 1),
                    );
                }
                LayerSpec::Softmax => {
                    for (row_in, row_out) in x.chunks(out_len).zip(y.chunks_mut(out_len)) {
                        let m = row_in
                            .iter()
                            .fold(T::neg_infinity(), |a, &b| if b > a { b } else { a });
                        let mut sum = 0.0f64;
                        for (o, &v) in row_out.iter_mut().zip(row_in) {
                            let e = (v - m).to_f64().exp();
                            sum += e;
                            *o = T::from_f64(e);
                        }
                        for o in row_out.iter_mut() {
                            *o = T::from_f64(o.to_f64() / sum);
                        }
                    }
                }
            }
            acts.push(y);
        }
        Ok(ForwardCache {
            n,
            acts,
            argmax: argmax_cache,
        })
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(&self, inputs: &[T], labels: &[usize]) -> Result<f64> {
        let probs = self.forward_batch(inputs, labels.len())?;
        let k = self.class_count();
        let mut total = 0.0;
        for (row, &l) in probs.chunks(k).zip(labels) {
            total += cross_entropy(row, l);
        }
        Ok(total / labels.len() as f64)
    }

    /// Gradients of the mean cross-entropy of the batch.
    pub fn gradients(&self, inputs: &[T], labels: &[usize]) -> Result<BatchGradients<T>> {
        let cache = self.forward_cached(inputs, labels.len())?;
        self.backward(&cache, labels)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, labels: &[usize]) -> Result<BatchGradients<T>> {
        let n = cache.n;
        let k = self.class_count();
        if labels.len() != n {
            return Err(domain_err(format!(
                "{} labels for {n} samples",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(domain_err(format!("label {bad} outside {k} classes")));
        }
        let probs = cache.probabilities();
        let inv_n = T::from_f64(1.0 / n as f64);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        // softmax and cross-entropy fused: d logits = (p - onehot) / n
        let mut grad = probs.to_vec();
        for (s, &l) in labels.iter().enumerate() {
            let row = &probs[s * k..(s + 1) * k];
            loss_sum += cross_entropy(row, l);
            if argmax(row) == l {
                correct += 1;
            }
            grad[s * k + l] = grad[s * k + l] - T::one();
        }
        grad.iter_mut().for_each(|g| *g = *g * inv_n);

        let mut grads: ParamSet<T> = self
            .arch
            .layers
            .iter()
            .map(|l| l.param_counts().map(LayerParams::zeros))
            .collect();
        let mut pool_slot = cache.argmax.len();
        let last = self.arch.layers.len() - 1;
        for i in (0..last).rev() {
            let x = &cache.acts[i];
            let in_len = len3(self.in_shape(i));
            let out_len = len3(self.shapes[i]);
            let need_dx = i > 0;
            let mut dx = if need_dx {
                vec![T::zero(); n * in_len]
            } else {
                Vec::new()
            };
            match self.arch.layers[i] {
                LayerSpec::Convolution { out_channels, .. } => {
                    let g = self.geom(i);
                    let p = self.params[i].as_ref().expect("conv params");
                    let gp = grads[i].as_mut().expect("conv grads");
                    let (ck, pp) = (g.col_rows(), g.col_cols());
                    let mut cols = vec![T::zero(); ck * pp];
                    let mut dcols = vec![T::zero(); ck * pp];
                    for s in 0..n {
                        let dy = &grad[s * out_len..(s + 1) * out_len];
                        for (o, chunk) in dy.chunks(pp).enumerate() {
                            gp.bias[o] = chunk.iter().fold(gp.bias[o], |a, &b| a + b);
                        }
                        im2col(&x[s * in_len..(s + 1) * in_len], &g, &mut cols);
                        // dW += dY · colsᵀ
                        T::gemm(
                            out_channels,
                            pp,
                            ck,
                            T::one(),
                            dy,
                            (pp as isize, 1),
                            &cols,
                            (1, pp as isize),
                            T::one(),
                            &mut gp.weights,
                            (ck as isize, 1),
                        );
                        if need_dx {
                            // dcols = Wᵀ · dY
                            T::gemm(
                                ck,
                                out_channels,
                                pp,
                                T::one(),
                                &p.weights,
                                (1, ck as isize),
                                dy,
                                (pp as isize, 1),
                                T::zero(),
                                &mut dcols,
                                (pp as isize, 1),
                            );
                            col2im(&dcols, &g, &mut dx[s * in_len..(s + 1) * in_len]);
                        }
                    }
                }
                LayerSpec::Relu => {
                    if need_dx {
                        for ((d, &g), &v) in dx.iter_mut().zip(&grad).zip(x) {
                            *d = if v > T::zero() { g } else { T::zero() };
                        }
                    }
                }
                LayerSpec::MaxPool { .. } => {
                    pool_slot -= 1;
                    if need_dx {
                        let idx = &cache.argmax[pool_slot];
                        for s in 0..n {
                            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
                            for j in 0..out_len {
                                let o = s * out_len + j;
                                let at = idx[o] as usize;
                                dxs[at] = dxs[at] + grad[o];
                            }
                        }
                    }
                }
                LayerSpec::Flatten => {
                    if need_dx {
                        dx.copy_from_slice(&grad);
                    }
                }
                LayerSpec::FullyConnected { inputs, outputs } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let gp = grads[i].as_mut().expect("dense grads");
                    for row in grad.chunks(outputs) {
                        for (b, &g) in gp.bias.iter_mut().zip(row) {
                            *b = *b + g;
                        }
                    }
                    // dW = dYᵀ · X
                    T::gemm(
                        outputs,
                        n,
                        inputs,
                        T::one(),
                        &grad,
                        (1, outputs as isize),
                        x,
                        (inputs as isize, 1),
                        T::zero(),
                        &mut gp.weights,
                        (inputs as isize, 1),
                    );
                    if need_dx {
                        // dX = dY · W
                        T::gemm(
                            n,
                            outputs,
                            inputs,
                            T::one(),
                            &grad,
                            (outputs as isize, 1),
                            &p.weights,
                            (inputs as isize, 1),
                            T::zero(),
                            &mut dx,
                            (inputs as isize, 1),
                        );
                    }
                }
                LayerSpec::Softmax => {
                    return Err(Error::Invariant("softmax before the final layer".into()));
                }
            }
            if !need_dx {
                break;
            }
            grad = dx;
        }
        Ok(BatchGradients {
            loss_sum,
            correct,
            grads,
        })
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v ← μ·v + g`, `w ← w − η·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: ParamSet<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(net: &Network<T>, learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate: T::from_f64(learning_rate),
            momentum: T::from_f64(momentum),
            velocity: net
                .arch
                .layers
                .iter()
                .map(|l| l.param_counts().map(LayerParams::zeros))
                .collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &ParamSet<T>) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((p, v), g) in net.params.iter_mut().zip(&mut self.velocity).zip(grads) {
            if let (Some(p), Some(v), Some(g)) = (p.as_mut(), v.as_mut(), g.as_ref()) {
                for ((w, vel), &d) in p
                    .weights
                    .iter_mut()
                    .chain(p.bias.iter_mut())
                    .zip(v.weights.iter_mut().chain(v.bias.iter_mut()))
                    .zip(g.weights.iter().chain(&g.bias))
                {
                    *vel = mu * *vel + d;
                    *w = *w - lr * *vel;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchitectureDescriptor {
        ArchitectureDescriptor {
            input: [2, 5, 5],
            layers: vec![
                LayerSpec::Convolution {
                    kernel_h: 3,
                    kernel_w: 3,
                    in_channels: 2,
                    out_channels: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::FullyConnected {
                    inputs: 12,
                    outputs: 4,
                },
                LayerSpec::Softmax,
            ],
        }
    }

    fn inputs(n: usize, len: usize) -> Vec<f64> {
        (0..n * len)
            .map(|i| ((i * 37 % 101) as f64 / 101.0) - 0.4)
            .collect()
    }

    /// Direct-loop convolution used as an independent reference.
    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom, out_c: usize) -> Vec<f64> {
        let mut y = vec![0.0; out_c * g.oh * g.ow];
        for o in 0..out_c {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = b[o];
                    for c in 0..g.c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w
                                {
                                    acc += w[((o * g.c + c) * g.kh + ky) * g.kw + kx]
                                        * x[(c * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                    }
                    y[(o * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let arch = ArchitectureDescriptor {
            input: [2, 6, 7],
            layers: vec![
                LayerSpec::Convolution {
                    kernel_h: 3,
                    kernel_w: 2,
                    in_channels: 2,
                    out_channels: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::Flatten,
                LayerSpec::FullyConnected {
                    inputs: 3 * 3 * 4,
                    outputs: 2,
                },
                LayerSpec::Softmax,
            ],
        };
        let mut net: Network<f64> = Network::new(arch, 3).unwrap();
        net.params_mut()[0].as_mut().unwrap().bias = vec![0.1, -0.2, 0.3];
        let x = inputs(1, 2 * 6 * 7);
        let cache = net.forward_cached(&x, 1).unwrap();
        let p = net.params()[0].as_ref().unwrap();
        let expect = naive_conv(&x, &p.weights, &p.bias, &net.geom(0), 3);
        for (a, b) in cache.acts[1].iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_form_a_simplex() {
        let net: Network<f32> = Network::new(tiny(), 1).unwrap();
        let x: Vec<f32> = inputs(3, 50).into_iter().map(|v| v as f32).collect();
        let p = net.forward_batch(&x, 3).unwrap();
        for row in p.chunks(4) {
            let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net: Network<f64> = Network::new(tiny(), 9).unwrap();
        let x = inputs(3, 50);
        let labels = [0, 3, 1];
        let g = net.gradients(&x, &labels).unwrap();
        let h = 1e-5;
        for (li, slot) in g.grads.iter().enumerate() {
            let Some(gp) = slot else { continue };
            for (wi, &analytic) in gp.weights.iter().enumerate().step_by(5) {
                let mut plus = net.clone();
                plus.params_mut()[li].as_mut().unwrap().weights[wi] += h;
                let mut minus = net.clone();
                minus.params_mut()[li].as_mut().unwrap().weights[wi] -= h;
                let numeric = (plus.loss(&x, &labels).unwrap() - minus.loss(&x, &labels).unwrap())
                    / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "layer {li} weight {wi}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn input_shape_checked() {
        let net: Network<f32> = Network::new(tiny(), 1).unwrap();
        let t = ImageTensor {
            channels: 3,
            height: 5,
            width: 5,
            values: vec![0.0; 75],
        };
        assert!(matches!(net.forward(&t), Err(Error::Shape { .. })));
        assert!(net.forward_batch(&[0.0; 49], 1).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a: Network<f32> = Network::new(tiny(), 5).unwrap();
        let b: Network<f32> = Network::new(tiny(), 5).unwrap();
        let c: Network<f32> = Network::new(tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f32 / (18.0 + 27.0)).sqrt();
        let p = a.params()[0].as_ref().unwrap();
        assert!(p.weights.iter().all(|w| w.abs() <= bound));
        assert!(p.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn sgd_descends() {
        let mut net: Network<f64> = Network::new(tiny(), 2).unwrap();
        let x = inputs(4, 50);
        let labels = [0, 1, 2, 3];
        let before = net.loss(&x, &labels).unwrap();
        let mut opt = Sgd::new(&net, 0.1, 0.9);
        for _ in 0..30 {
            let g = net.gradients(&x, &labels).unwrap();
            opt.step(&mut net, &g.grads);
        }
        assert!(net.loss(&x, &labels).unwrap() < before * 0.5);
    }
}
