use super::conv::{col2im, gemm, im2col, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op whose backward rule lives outside the graph (e.g. a solved QP).
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Adjoints of each input given the adjoint of the output. `None` means zero.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    StopGradient,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    SubScalar(Var, Var),
    Square(Var),
    Exp(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Dense(Var, Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        padding: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        padding: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Reshape(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    SqDist(Var, Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGradient => "stop_gradient",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::SubScalar(..) => "sub_scalar",
            Op::Square(..) => "square",
            Op::Exp(..) => "exp",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MatMul(..) => "matmul",
            Op::Dense(..) => "dense",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::MaxPool2 { .. } => "max_pool2",
            Op::Upsample2(..) => "upsample2",
            Op::Reshape(..) => "reshape",
            Op::SliceRows { .. } => "slice_rows",
            Op::SqDist(..) => "sq_dist",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-channel statistics measured by a training-mode batch-norm op.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Define-by-run tape. Nodes are appended in topological order, so the
/// backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Adjoint of `v`; zero when no gradient reached it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// True when some non-zero-length adjoint was propagated into `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[n, c, h, w] => Ok((n, c, h, w)),
        s => Err(Error::usage(format!("{what}: expected [N,C,H,W], got {s:?}"))),
    }
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::usage(format!("{what}: expected a matrix, got {s:?}"))),
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that receives an adjoint in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// Identity in the forward pass, zero adjoint in the backward pass.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone();
        self.push(value, Op::StopGradient, false)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::usage(format!(
                "elementwise op on shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x + y)?;
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x - y)?;
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x * y)?;
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, factor), ng)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    /// Adds a constant tensor (same shape); the constant gets no adjoint.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != c.shape() {
            return Err(Error::usage("add_const shape mismatch"));
        }
        let data = tx.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.any_grad(&[x]);
        self.push(value, Op::AddConst(x), ng)
    }

    /// `x − s` with a one-element `s` broadcast over `x`.
    pub fn sub_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::usage("sub_scalar needs a one-element subtrahend"));
        }
        let sv = self.value(s).data()[0];
        let value = self.value(x).map(|v| v - sv);
        let ng = self.any_grad(&[x, s]);
        self.push(value, Op::SubScalar(x, s), ng)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v * v);
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Square(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::exp);
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Exp(x), ng)
    }

    /// `max(0, x)`.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.any_grad(&[x]);
        self.push(value, Op::LeakyRelu(x, slope), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(gelu);
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::usage("mean of an empty tensor"));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Mean(x), ng)
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul lhs")?;
        let (k2, n) = dims2(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::usage(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let ng = self.any_grad(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng)
    }

    /// Fully connected layer: `x: [N,in]`, `w: [out,in]`, `b: [out]` → `[N,out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fan_in) = dims2(self.value(x), "dense input")?;
        let (fan_out, w_in) = dims2(self.value(w), "dense weight")?;
        if w_in != fan_in || self.value(b).len() != fan_out {
            return Err(Error::usage(format!(
                "dense: input width {fan_in}, weight {:?}, bias {}",
                self.value(w).shape(),
                self.value(b).len()
            )));
        }
        let mut out = vec![0.0; n * fan_out];
        for row in out.chunks_mut(fan_out) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            n,
            fan_in,
            fan_out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            true,
        );
        let ng = self.any_grad(&[x, w, b]);
        self.push(Tensor::new(vec![n, fan_out], out)?, Op::Dense(x, w, b), ng)
    }

    /// Stride-1 convolution: `x: [N,Cin,H,W]`, `w: [Cout,Cin,k,k]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (n, cin, h, wd) = dims4(self.value(x), "conv2d input")?;
        let (cout, wcin, k, k2) = dims4(self.value(w), "conv2d weight")?;
        if wcin != cin || k != k2 || self.value(b).len() != cout {
            return Err(Error::usage(format!(
                "conv2d: input {:?}, weight {:?}, bias {}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).len()
            )));
        }
        if h + 2 * padding < k || wd + 2 * padding < k {
            return Err(Error::usage("conv2d kernel larger than padded input"));
        }
        let g = ConvGeometry {
            channels: cin,
            height: h,
            width: wd,
            kernel: k,
            padding,
        };
        let (ho, wo) = (g.out_height(), g.out_width());
        let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
        let mut out = vec![0.0; n * cout * ho * wo];
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let bias = self.value(b).data();
        for s in 0..n {
            im2col(&xin[s * cin * h * wd..(s + 1) * cin * h * wd], g, &mut cols);
            let dst = &mut out[s * cout * ho * wo..(s + 1) * cout * ho * wo];
            for (c, plane) in dst.chunks_mut(ho * wo).enumerate() {
                plane.fill(bias[c]);
            }
            gemm(cout, g.col_rows(), ho * wo, wt, false, &cols, false, dst, true);
        }
        let ng = self.any_grad(&[x, w, b]);
        self.push(
            Tensor::new(vec![n, cout, ho, wo], out)?,
            Op::Conv2d { x, w, b, padding },
            ng,
        )
    }

    /// Stride-1 transposed convolution: `x: [N,Cin,H,W]`, `w: [Cin,Cout,k,k]`,
    /// output spatial size `H + k − 1 − 2·padding`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (n, cin, h, wd) = dims4(self.value(x), "conv_transpose2d input")?;
        let (wcin, cout, k, k2) = dims4(self.value(w), "conv_transpose2d weight")?;
        if wcin != cin || k != k2 || self.value(b).len() != cout {
            return Err(Error::usage(format!(
                "conv_transpose2d: input {:?}, weight {:?}, bias {}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).len()
            )));
        }
        if h + k <= 1 + 2 * padding || wd + k <= 1 + 2 * padding {
            return Err(Error::usage("conv_transpose2d padding too large"));
        }
        let gy = ConvGeometry {
            channels: cout,
            height: h + k - 1 - 2 * padding,
            width: wd + k - 1 - 2 * padding,
            kernel: k,
            padding,
        };
        let (hy, wy) = (gy.height, gy.width);
        let mut cols = vec![0.0; gy.col_rows() * h * wd];
        let mut out = vec![0.0; n * cout * hy * wy];
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let bias = self.value(b).data();
        for s in 0..n {
            gemm(
                gy.col_rows(),
                cin,
                h * wd,
                wt,
                true,
                &xin[s * cin * h * wd..(s + 1) * cin * h * wd],
                false,
                &mut cols,
                false,
            );
            let dst = &mut out[s * cout * hy * wy..(s + 1) * cout * hy * wy];
            for (c, plane) in dst.chunks_mut(hy * wy).enumerate() {
                plane.fill(bias[c]);
            }
            col2im(&cols, gy, dst);
        }
        let ng = self.any_grad(&[x, w, b]);
        self.push(
            Tensor::new(vec![n, cout, hy, wy], out)?,
            Op::ConvTranspose2d { x, w, b, padding },
            ng,
        )
    }

    /// Batch normalization over every axis but the channel axis (axis 1),
    /// using the statistics of this batch. Returns the measured statistics
    /// (biased variance) so callers can maintain running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (n, c, spatial) = self.channel_layout(x, gamma, beta)?;
        let count = (n * spatial) as f64;
        let xin = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * spatial;
                mean[ch] += xin[off..off + spatial].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * spatial;
                var[ch] += xin[off..off + spatial]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (value, normalized) = self.bn_apply(x, gamma, beta, &mean, &inv_std, n, c, spatial)?;
        let ng = self.any_grad(&[x, gamma, beta]);
        let out = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats: true,
            },
            ng,
        )?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Batch normalization with frozen statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, spatial) = self.channel_layout(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::usage("batch_norm_eval statistics length"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (value, normalized) = self.bn_apply(x, gamma, beta, mean, &inv_std, n, c, spatial)?;
        let ng = self.any_grad(&[x, gamma, beta]);
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats: false,
            },
            ng,
        )
    }

    fn channel_layout(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let shape = self.value(x).shape();
        if shape.len() < 2 {
            return Err(Error::usage("batch_norm needs [N,C,...]"));
        }
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::usage("batch_norm affine parameters must have C entries"));
        }
        if n * spatial == 0 {
            return Err(Error::usage("batch_norm on an empty batch"));
        }
        Ok((n, c, spatial))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        n: usize,
        c: usize,
        spatial: usize,
    ) -> Result<(Tensor, Vec<f64>)> {
        let xin = self.value(x).data();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut normalized = vec![0.0; xin.len()];
        let mut out = vec![0.0; xin.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * spatial;
                for i in off..off + spatial {
                    let xh = (xin[i] - mean[ch]) * inv_std[ch];
                    normalized[i] = xh;
                    out[i] = gm[ch] * xh + bt[ch];
                }
            }
        }
        Ok((Tensor::new(self.value(x).shape().to_vec(), out)?, normalized))
    }

    /// 2×2 max pooling with stride 2 (even spatial sizes only).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "max_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::usage(format!("max_pool2 needs even sizes, got {h}×{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xin = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xin[idx] > xin[best] {
                            best = idx;
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    out[o] = xin[best];
                    argmax[o] = best;
                }
            }
        }
        let ng = self.any_grad(&[x]);
        self.push(
            Tensor::new(vec![n, c, ho, wo], out)?,
            Op::MaxPool2 { x, argmax },
            ng,
        )
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "upsample2")?;
        let xin = self.value(x).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[plane * ho * wo + oy * wo + ox] = xin[plane * h * w + (oy / 2) * w + ox / 2];
                }
            }
        }
        let ng = self.any_grad(&[x]);
        self.push(Tensor::new(vec![n, c, ho, wo], out)?, Op::Upsample2(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Reshape(x), ng)
    }

    /// Rows `start..end` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let rows = *t.shape().first().ok_or_else(|| Error::usage("slice of a 0-d tensor"))?;
        if start > end || end > rows {
            return Err(Error::usage(format!("rows {start}..{end} out of 0..{rows}")));
        }
        let width = t.len() / rows.max(1);
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        let value = Tensor::new(shape, t.data()[start * width..end * width].to_vec())?;
        let ng = self.any_grad(&[x]);
        self.push(value, Op::SliceRows { x, start }, ng)
    }

    /// Pairwise squared euclidean distances between rows: `[n,d] × [m,d] → [n,m]`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = dims2(self.value(a), "sq_dist lhs")?;
        let (m, d2) = dims2(self.value(b), "sq_dist rhs")?;
        if d != d2 {
            return Err(Error::usage(format!("sq_dist dims {d} vs {d2}")));
        }
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ai = &ta[i * d..(i + 1) * d];
            for j in 0..m {
                let bj = &tb[j * d..(j + 1) * d];
                out[i * m + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        let ng = self.any_grad(&[a, b]);
        self.push(Tensor::new(vec![n, m], out)?, Op::SqDist(a, b), ng)
    }

    /// Records an externally computed output together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let ng = self.any_grad(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads)?;
        }
        // Only leaves keep their adjoints; interior entries were consumed.
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        let same = |f: &dyn Fn(usize, f64) -> f64| -> Tensor {
            let data = g.data().iter().enumerate().map(|(i, &gv)| f(i, gv)).collect();
            Tensor::new(g.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, same(&|i, gv| gv * tb[i]));
                self.accumulate(grads, *b, same(&|i, gv| gv * ta[i]));
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * f)),
            Op::AddConst(x) | Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshaped(shape)?);
            }
            Op::SubScalar(x, s) => {
                self.accumulate(grads, *x, g.clone());
                self.accumulate(grads, *s, Tensor::full(self.value(*s).shape(), -g.sum()));
            }
            Op::Square(x) => {
                let tx = self.value(*x).data();
                self.accumulate(grads, *x, same(&|i, gv| 2.0 * tx[i] * gv));
            }
            Op::Exp(x) => {
                let ty = out.data();
                self.accumulate(grads, *x, same(&|i, gv| ty[i] * gv));
            }
            Op::Relu(x) => {
                let tx = self.value(*x).data();
                self.accumulate(grads, *x, same(&|i, gv| if tx[i] > 0.0 { gv } else { 0.0 }));
            }
            Op::LeakyRelu(x, slope) => {
                let tx = self.value(*x).data();
                self.accumulate(grads, *x, same(&|i, gv| if tx[i] > 0.0 { gv } else { slope * gv }));
            }
            Op::Gelu(x) => {
                let tx = self.value(*x).data();
                self.accumulate(grads, *x, same(&|i, gv| gelu_grad(tx[i]) * gv));
            }
            Op::Sigmoid(x) => {
                let ty = out.data();
                self.accumulate(grads, *x, same(&|i, gv| ty[i] * (1.0 - ty[i]) * gv));
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                let gv = g.data()[0] / tx.len() as f64;
                self.accumulate(grads, *x, Tensor::full(tx.shape(), gv));
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a), "matmul")?;
                let n = self.value(*b).shape()[1];
                if self.needs_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut ga, false);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                }
                if self.needs_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut gb, false);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Dense(x, w, b) => {
                let (n, fan_in) = dims2(self.value(*x), "dense")?;
                let fan_out = self.value(*b).len();
                if self.needs_grad(*x) {
                    let mut gx = vec![0.0; n * fan_in];
                    gemm(n, fan_out, fan_in, g.data(), false, self.value(*w).data(), false, &mut gx, false);
                    self.accumulate(grads, *x, Tensor::new(vec![n, fan_in], gx)?);
                }
                if self.needs_grad(*w) {
                    let mut gw = vec![0.0; fan_out * fan_in];
                    gemm(fan_out, n, fan_in, g.data(), true, self.value(*x).data(), false, &mut gw, false);
                    self.accumulate(grads, *w, Tensor::new(vec![fan_out, fan_in], gw)?);
                }
                if self.needs_grad(*b) {
                    let mut gb = vec![0.0; fan_out];
                    for row in g.data().chunks(fan_out) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(gb));
                }
            }
            Op::Conv2d { x, w, b, padding } => {
                let (n, cin, h, wd) = dims4(self.value(*x), "conv2d")?;
                let (cout, _, k, _) = dims4(self.value(*w), "conv2d")?;
                let geom = ConvGeometry {
                    channels: cin,
                    height: h,
                    width: wd,
                    kernel: k,
                    padding: *padding,
                };
                let hw = geom.col_cols();
                let kk = geom.col_rows();
                let xin = self.value(*x).data();
                let wt = self.value(*w).data();
                let (need_x, need_w) = (self.needs_grad(*x), self.needs_grad(*w));
                let mut cols = vec![0.0; kk * hw];
                let mut dcols = vec![0.0; kk * hw];
                let mut gw = vec![0.0; cout * kk];
                let mut gx = vec![0.0; if need_x { xin.len() } else { 0 }];
                let mut gb = vec![0.0; cout];
                for s in 0..n {
                    let gs = &g.data()[s * cout * hw..(s + 1) * cout * hw];
                    for (c, plane) in gs.chunks(hw).enumerate() {
                        gb[c] += plane.iter().sum::<f64>();
                    }
                    if need_w {
                        im2col(&xin[s * cin * h * wd..(s + 1) * cin * h * wd], geom, &mut cols);
                        gemm(cout, hw, kk, gs, false, &cols, true, &mut gw, true);
                    }
                    if need_x {
                        gemm(kk, cout, hw, wt, true, gs, false, &mut dcols, false);
                        col2im(&dcols, geom, &mut gx[s * cin * h * wd..(s + 1) * cin * h * wd]);
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), gx)?);
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(self.value(*w).shape().to_vec(), gw)?);
                }
                self.accumulate(grads, *b, Tensor::from_vec(gb));
            }
            Op::ConvTranspose2d { x, w, b, padding } => {
                let (n, cin, h, wd) = dims4(self.value(*x), "conv_transpose2d")?;
                let (_, cout, k, _) = dims4(self.value(*w), "conv_transpose2d")?;
                let (_, _, hy, wy) = dims4(out, "conv_transpose2d")?;
                let gy = ConvGeometry {
                    channels: cout,
                    height: hy,
                    width: wy,
                    kernel: k,
                    padding: *padding,
                };
                let kk = gy.col_rows();
                let hw = h * wd;
                let xin = self.value(*x).data();
                let wt = self.value(*w).data();
                let (need_x, need_w) = (self.needs_grad(*x), self.needs_grad(*w));
                let mut gcols = vec![0.0; kk * hw];
                let mut gw = vec![0.0; cin * kk];
                let mut gx = vec![0.0; if need_x { xin.len() } else { 0 }];
                let mut gb = vec![0.0; cout];
                for s in 0..n {
                    let gs = &g.data()[s * cout * hy * wy..(s + 1) * cout * hy * wy];
                    for (c, plane) in gs.chunks(hy * wy).enumerate() {
                        gb[c] += plane.iter().sum::<f64>();
                    }
                    im2col(gs, gy, &mut gcols);
                    if need_x {
                        gemm(cin, kk, hw, wt, false, &gcols, false, &mut gx[s * cin * hw..(s + 1) * cin * hw], false);
                    }
                    if need_w {
                        gemm(cin, hw, kk, &xin[s * cin * hw..(s + 1) * cin * hw], false, &gcols, true, &mut gw, true);
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), gx)?);
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(self.value(*w).shape().to_vec(), gw)?);
                }
                self.accumulate(grads, *b, Tensor::from_vec(gb));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let shape = self.value(*x).shape();
                let (n, c) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product();
                let count = (n * spatial) as f64;
                let gm = self.value(*gamma).data();
                let gd = g.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * spatial;
                        for i in off..off + spatial {
                            dgamma[ch] += gd[i] * normalized[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                if self.needs_grad(*x) {
                    let mut gx = vec![0.0; gd.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * spatial;
                            for i in off..off + spatial {
                                let dxh = gd[i] * gm[ch];
                                gx[i] = if *batch_stats {
                                    // d x̂ pushed through the batch mean and variance.
                                    inv_std[ch] / count
                                        * (count * dxh
                                            - dbeta[ch] * gm[ch]
                                            - normalized[i] * dgamma[ch] * gm[ch])
                                } else {
                                    dxh * inv_std[ch]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(shape.to_vec(), gx)?);
                }
                self.accumulate(grads, *gamma, Tensor::from_vec(dgamma));
                self.accumulate(grads, *beta, Tensor::from_vec(dbeta));
            }
            Op::MaxPool2 { x, argmax } => {
                let mut gx = Tensor::zeros(self.value(*x).shape());
                for (o, &src) in argmax.iter().enumerate() {
                    gx.data_mut()[src] += g.data()[o];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Upsample2(x) => {
                let (n, c, h, w) = dims4(self.value(*x), "upsample2")?;
                let (ho, wo) = (2 * h, 2 * w);
                let mut gx = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            gx[plane * h * w + (oy / 2) * w + ox / 2] += g.data()[plane * ho * wo + oy * wo + ox];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![n, c, h, w], gx)?);
            }
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let width = tx.len() / tx.shape()[0].max(1);
                let mut gx = Tensor::zeros(tx.shape());
                gx.data_mut()[start * width..start * width + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, gx);
            }
            Op::SqDist(a, b) => {
                let (n, d) = dims2(self.value(*a), "sq_dist")?;
                let m = self.value(*b).shape()[0];
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![0.0; n * d];
                let mut gb = vec![0.0; m * d];
                for i in 0..n {
                    for j in 0..m {
                        let gij = 2.0 * g.data()[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let diff = gij * (ta[i * d + k] - tb[j * d + k]);
                            ga[i * d + k] += diff;
                            gb[j * d + k] -= diff;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(vec![n, d], ga)?);
                self.accumulate(grads, *b, Tensor::new(vec![m, d], gb)?);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let input_grads = op.backward(&values, out, g)?;
                for (v, gi) in inputs.iter().zip(input_grads) {
                    if let Some(gi) = gi {
                        self.accumulate(grads, *v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}
