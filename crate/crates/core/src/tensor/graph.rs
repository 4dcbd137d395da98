//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its output value and
//! whatever activations its backward rule needs. Nodes are appended in
//! execution order, so the node list is already a topological order and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use egdarts::tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0), true);
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```

use super::kernels::{self, ConvDims, ConvGeom, PoolDims};
use super::Tensor;
use crate::error::{Error, Result};

/// Epsilon of the affine-free batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, f64),
    /// Tensor times a one-element tensor.
    Scale(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Conv2d { input: Var, weight: Var, dims: ConvDims },
    BatchNorm { input: Var, inv_std: Vec<f64> },
    MaxPool { input: Var, argmax: Vec<usize> },
    AvgPool { input: Var, dims: PoolDims },
    GlobalAvgPool(Var),
    Linear { input: Var, weight: Var, bias: Var },
    Concat { inputs: Vec<Var> },
    Reshape(Var),
    ChannelGate { input: Var, gate: Var },
    Softmax(Var),
    Select(Var, usize),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; build a fresh graph per step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    flops: u64,
}

/// Gradient of a scalar loss with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `None` when the node does not require grad or is not on a path to the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, with exact zeros when it has no path to the loss.
    pub fn get_or_zeros(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.shapes[v.0].iter().product()],
        }
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn add_into_vec(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => d.iter_mut().zip(&src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Floating-point operations (2 per multiply-accumulate) executed by
    /// convolution and dense nodes so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.with_requires_grad(false),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same_shape("add", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same_shape("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::MulConst(a, c), rg)
    }

    /// `x * s` where `s` holds exactly one element.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("scale", format!("scale factor has shape {:?}", self.shape(s))));
        }
        let k = self.value(s).data()[0];
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * k).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::Scale(x, s), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let out = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Convolution with "same" padding (`dilation * (k - 1) / 2` per axis).
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, dilation: usize, groups: usize) -> Result<Var> {
        let ws = self.shape(weight).to_vec();
        if ws.len() != 4 {
            return Err(Error::shape("conv2d", format!("weight must be 4-D, got {ws:?}")));
        }
        let geom = ConvGeom::same((ws[2], ws[3]), (stride, stride), (dilation, dilation), groups);
        self.conv2d_geom(input, weight, geom)
    }

    pub fn conv2d_geom(&mut self, input: Var, weight: Var, geom: ConvGeom) -> Result<Var> {
        let inp = self.value(input).dims4("conv2d")?;
        let wt = self.value(weight).dims4("conv2d weight")?;
        let dims = ConvDims::new(inp, wt, geom)?;
        let data = kernels::conv2d_forward(&dims, self.value(input).data(), self.value(weight).data());
        let out = Tensor::new(vec![dims.n, dims.c_out, dims.oh, dims.ow], data)?;
        self.flops += 2 * dims.macs();
        let rg = self.rg(input) || self.rg(weight);
        Ok(self.push(out, Op::Conv2d { input, weight, dims }, rg))
    }

    /// Affine-free batch normalization over (N, H, W) per channel.
    pub fn batch_norm(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("batch_norm")?;
        let x = self.value(input).data();
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut out = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(c);
        for ch in 0..c {
            let mut mean = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * plane;
                mean += x[base..base + plane].iter().sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * plane;
                var += x[base..base + plane].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= m;
            let is = 1.0 / (var + BN_EPS).sqrt();
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    out[i] = (x[i] - mean) * is;
                }
            }
            inv_std.push(is);
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::BatchNorm { input, inv_std }, rg))
    }

    pub fn max_pool(&mut self, input: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let dims = PoolDims::new(self.value(input).dims4("max_pool")?, k, stride, pad)?;
        let (data, argmax) = kernels::max_pool_forward(&dims, self.value(input).data());
        let out = Tensor::new(vec![dims.n, dims.c, dims.oh, dims.ow], data)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn avg_pool(&mut self, input: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let dims = PoolDims::new(self.value(input).dims4("avg_pool")?, k, stride, pad)?;
        let data = kernels::avg_pool_forward(&dims, self.value(input).data());
        let out = Tensor::new(vec![dims.n, dims.c, dims.oh, dims.ow], data)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::AvgPool { input, dims }, rg))
    }

    /// NCHW -> NC mean over spatial positions.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("global_avg_pool")?;
        let plane = h * w;
        let x = self.value(input).data();
        let data = (0..n * c)
            .map(|p| x[p * plane..(p + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::GlobalAvgPool(input), rg))
    }

    /// `input (N x I) * weight^T (O x I) + bias (O)`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        let (&[n, i], &[o, wi], &[bo]) = (xs, ws, bs) else {
            return Err(Error::shape(
                "linear",
                format!("expected (N,I),(O,I),(O); got {xs:?},{ws:?},{bs:?}"),
            ));
        };
        if wi != i || bo != o {
            return Err(Error::shape(
                "linear",
                format!("input features {i}, weight {o}x{wi}, bias {bo}"),
            ));
        }
        let (x, w, b) = (self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let mut data = Vec::with_capacity(n * o);
        for r in 0..n {
            let row = &x[r * i..(r + 1) * i];
            for k in 0..o {
                data.push(b[k] + row.iter().zip(&w[k * i..(k + 1) * i]).map(|(a, c)| a * c).sum::<f64>());
            }
        }
        self.flops += 2 * (n * i * o) as u64;
        let out = Tensor::new(vec![n, o], data)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    /// Channel-wise concatenation of NCHW tensors with equal N, H, W.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let [n, _, h, w] = self.value(first).dims4("concat")?;
        let mut channels = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4("concat")?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape(
                    "concat",
                    format!("input {:?} does not match N,H,W = {n},{h},{w}", self.shape(v)),
                ));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (&v, &c) in inputs.iter().zip(&channels) {
                let x = self.value(v).data();
                data.extend_from_slice(&x[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let out = Tensor::new(vec![n, total, h, w], data)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// `input (N,C,H,W) * gate (N,C,1,1)` broadcast over spatial positions.
    pub fn channel_gate(&mut self, input: Var, gate: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("channel_gate")?;
        if self.shape(gate) != [n, c, 1, 1] {
            return Err(Error::shape(
                "channel_gate",
                format!("gate {:?} does not match input {:?}", self.shape(gate), [n, c, h, w]),
            ));
        }
        let plane = h * w;
        let (x, g) = (self.value(input).data(), self.value(gate).data());
        let data = x.iter().enumerate().map(|(i, v)| v * g[i / plane]).collect();
        let out = Tensor::new(vec![n, c, h, w], data)?;
        let rg = self.rg(input) || self.rg(gate);
        Ok(self.push(out, Op::ChannelGate { input, gate }, rg))
    }

    /// Softmax of a 1-D tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape().len() != 1 || vx.numel() == 0 {
            return Err(Error::shape("softmax", format!("expected non-empty 1-D, got {:?}", vx.shape())));
        }
        let data = softmax(vx.data());
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// One element of a tensor as a one-element tensor.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let vx = self.value(x);
        let v = *vx
            .data()
            .get(index)
            .ok_or_else(|| Error::shape("select", format!("index {index} out of {}", vx.numel())))?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::Select(x, index), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let &[n, c] = vl.shape() else {
            return Err(Error::shape("cross_entropy", format!("logits must be N x C, got {:?}", vl.shape())));
        };
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", format!("{} labels for batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &vl.data()[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if want(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if want(*a) {
                    add_into_vec(&mut grads[a.0], g.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if want(*b) {
                    add_into_vec(&mut grads[b.0], g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::MulConst(a, c) => {
                if want(*a) {
                    add_into_vec(&mut grads[a.0], g.iter().map(|g| g * c).collect());
                }
            }
            Op::Scale(x, s) => {
                let k = self.value(*s).data()[0];
                if want(*x) {
                    add_into_vec(&mut grads[x.0], g.iter().map(|g| g * k).collect());
                }
                if want(*s) {
                    let ds = g.iter().zip(self.value(*x).data()).map(|(g, v)| g * v).sum::<f64>();
                    add_into(&mut grads[s.0], &[ds]);
                }
            }
            Op::Relu(x) => {
                if want(*x) {
                    let vx = self.value(*x).data();
                    add_into_vec(
                        &mut grads[x.0],
                        g.iter().zip(vx).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect(),
                    );
                }
            }
            Op::Sigmoid(x) => {
                if want(*x) {
                    let y = node.value.data();
                    add_into_vec(&mut grads[x.0], g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
                }
            }
            Op::Conv2d { input, weight, dims } => {
                let (gi, gw) = kernels::conv2d_backward(
                    dims,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    want(*input),
                    want(*weight),
                );
                if let Some(gi) = gi {
                    add_into_vec(&mut grads[input.0], gi);
                }
                if let Some(gw) = gw {
                    add_into_vec(&mut grads[weight.0], gw);
                }
            }
            Op::BatchNorm { input, inv_std } => {
                if !want(*input) {
                    return;
                }
                let [n, c, h, w] = self.value(*input).dims4("batch_norm").expect("checked in forward");
                let plane = h * w;
                let m = (n * plane) as f64;
                let xhat = node.value.data();
                let mut gx = vec![0.0; g.len()];
                for ch in 0..c {
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for b in 0..n {
                        let base = (b * c + ch) * plane;
                        for i in base..base + plane {
                            sg += g[i];
                            sgx += g[i] * xhat[i];
                        }
                    }
                    let k = inv_std[ch] / m;
                    for b in 0..n {
                        let base = (b * c + ch) * plane;
                        for i in base..base + plane {
                            gx[i] = k * (m * g[i] - sg - xhat[i] * sgx);
                        }
                    }
                }
                add_into_vec(&mut grads[input.0], gx);
            }
            Op::MaxPool { input, argmax } => {
                if want(*input) {
                    let mut gx = vec![0.0; self.value(*input).numel()];
                    for (go, &src) in g.iter().zip(argmax) {
                        gx[src] += go;
                    }
                    add_into_vec(&mut grads[input.0], gx);
                }
            }
            Op::AvgPool { input, dims } => {
                if want(*input) {
                    add_into_vec(&mut grads[input.0], kernels::avg_pool_backward(dims, g));
                }
            }
            Op::GlobalAvgPool(x) => {
                if want(*x) {
                    let [_, _, h, w] = self.value(*x).dims4("global_avg_pool").expect("checked");
                    let plane = h * w;
                    let gx = (0..self.value(*x).numel()).map(|i| g[i / plane] / plane as f64).collect();
                    add_into_vec(&mut grads[x.0], gx);
                }
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(*input).data(), self.value(*weight).data());
                let &[n, i] = self.shape(*input) else { unreachable!() };
                let o = self.shape(*weight)[0];
                if want(*input) {
                    let mut gx = vec![0.0; n * i];
                    for r in 0..n {
                        for k in 0..o {
                            let gv = g[r * o + k];
                            gx[r * i..(r + 1) * i]
                                .iter_mut()
                                .zip(&w[k * i..(k + 1) * i])
                                .for_each(|(d, wv)| *d += gv * wv);
                        }
                    }
                    add_into_vec(&mut grads[input.0], gx);
                }
                if want(*weight) {
                    let mut gw = vec![0.0; o * i];
                    for r in 0..n {
                        for k in 0..o {
                            let gv = g[r * o + k];
                            gw[k * i..(k + 1) * i]
                                .iter_mut()
                                .zip(&x[r * i..(r + 1) * i])
                                .for_each(|(d, xv)| *d += gv * xv);
                        }
                    }
                    add_into_vec(&mut grads[weight.0], gw);
                }
                if want(*bias) {
                    let mut gb = vec![0.0; o];
                    for r in 0..n {
                        gb.iter_mut().zip(&g[r * o..(r + 1) * o]).for_each(|(d, gv)| *d += gv);
                    }
                    add_into_vec(&mut grads[bias.0], gb);
                }
            }
            Op::Concat { inputs } => {
                let &[n, total, h, w] = node.value.shape() else { unreachable!() };
                let plane = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.shape(v)[1];
                    if want(v) {
                        let mut gx = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let start = (b * total + offset) * plane;
                            gx.extend_from_slice(&g[start..start + c * plane]);
                        }
                        add_into_vec(&mut grads[v.0], gx);
                    }
                    offset += c;
                }
            }
            Op::Reshape(x) => {
                if want(*x) {
                    add_into(&mut grads[x.0], g);
                }
            }
            Op::ChannelGate { input, gate } => {
                let &[_, _, h, w] = node.value.shape() else { unreachable!() };
                let plane = h * w;
                let (x, gt) = (self.value(*input).data(), self.value(*gate).data());
                if want(*input) {
                    add_into_vec(&mut grads[input.0], g.iter().enumerate().map(|(i, gv)| gv * gt[i / plane]).collect());
                }
                if want(*gate) {
                    let gg = (0..gt.len())
                        .map(|p| {
                            g[p * plane..(p + 1) * plane]
                                .iter()
                                .zip(&x[p * plane..(p + 1) * plane])
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                        })
                        .collect();
                    add_into_vec(&mut grads[gate.0], gg);
                }
            }
            Op::Softmax(x) => {
                if want(*x) {
                    let y = node.value.data();
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    add_into_vec(&mut grads[x.0], y.iter().zip(g).map(|(y, g)| y * (g - dot)).collect());
                }
            }
            Op::Select(x, index) => {
                if want(*x) {
                    let mut gx = vec![0.0; self.value(*x).numel()];
                    gx[*index] = g[0];
                    add_into_vec(&mut grads[x.0], gx);
                }
            }
            Op::Sum(x) => {
                if want(*x) {
                    add_into_vec(&mut grads[x.0], vec![g[0]; self.value(*x).numel()]);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if want(*logits) {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = g[0] / n as f64;
                    let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        gx[r * c + l] -= scale;
                    }
                    add_into_vec(&mut grads[logits.0], gx);
                }
            }
        }
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_two_x() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn sum_of_two_has_unit_grads() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5), true);
        let y = g.leaf(Tensor::scalar(-2.0), true);
        let z = g.add(x, y).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0]);
        assert_eq!(grads.get(y).unwrap(), &[1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unreachable_leaf_gets_exact_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0), true);
        let unused = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused), vec![0.0; 3]);
    }

    #[test]
    fn paths_accumulate() {
        // y = x*x + x  => dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(4.0), true);
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        assert_eq!(g.backward(y).unwrap().get(x).unwrap(), &[9.0]);
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[3, 10]), true);
        let loss = g.cross_entropy(logits, &[0, 4, 9]).unwrap();
        assert!((g.value(loss).data()[0] - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_tiny_loss() {
        let mut t = Tensor::zeros(&[1, 4]);
        t.data_mut()[2] = 50.0;
        let mut g = Graph::new();
        let logits = g.leaf(t, true);
        let loss = g.cross_entropy(logits, &[2]).unwrap();
        assert!(g.value(loss).data()[0] < 1e-9);
    }

    #[test]
    fn label_out_of_range_is_error() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[1, 3]), true);
        assert!(g.cross_entropy(logits, &[3]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let t = Tensor::randn(&[4, 5], 2.0, &mut rng);
        let labels = [0, 3, 4, 1];
        let mut g = Graph::new();
        let logits = g.leaf(t.clone(), true);
        let loss = g.cross_entropy(logits, &labels).unwrap();
        let got = g.backward(loss).unwrap().get_or_zeros(logits);
        for r in 0..4 {
            let p = softmax(&t.data()[r * 5..(r + 1) * 5]);
            for k in 0..5 {
                let onehot = if k == labels[r] { 1.0 } else { 0.0 };
                assert!((got[r * 5 + k] - (p[k] - onehot) / 4.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_pointwise_conv_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[2, 3, 5, 5], 1.0, &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w);
        let y = g.conv2d(xv, wv, 1, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn strided_same_conv_halves() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let w = g.constant(Tensor::zeros(&[5, 3, 3, 3]));
        let y = g.conv2d(x, w, 2, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 5, 4, 4]);
        let y1 = g.conv2d(x, w, 1, 1, 1).unwrap();
        assert_eq!(g.shape(y1), &[1, 5, 8, 8]);
    }

    #[test]
    fn conv_shape_error_names_dimension() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let w = g.constant(Tensor::zeros(&[4, 2, 3, 3]));
        let err = g.conv2d(x, w, 1, 1, 1).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "conv2d", .. }), "{err}");
    }
}
