use super::kernels::{self, MatmulPlan};
use super::{gemm, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var, MatmulPlan),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, F),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    AdaptivePool(Var),
    Concat(Var, Var, usize),
    Narrow(Var, usize, usize),
    Mse(Var, Var),
    RowCosine(Var, Var),
    Mean(Var),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>, Vec<F>),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Record of performed operations, replayed once by [`Graph::backward`].
///
/// Leaves created with [`Graph::param`] receive gradients; leaves created
/// with [`Graph::constant`] do not, though gradients still flow *through*
/// ops that consume them.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    consumed: bool,
}

/// Gradients of every `requires_grad` leaf, keyed by its [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Element> Gradients<F> {
    /// `None` for vars that are not trainable leaves.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for a list of leaves, in order.
    pub fn collect(&self, vars: &[Var]) -> Result<Vec<Tensor<F>>> {
        vars.iter()
            .map(|&v| {
                self.get(v)
                    .cloned()
                    .ok_or_else(|| Error::Contract(format!("var {} is not a trainable leaf", v.0)))
            })
            .collect()
    }
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = kernels::matmul_plan(self.shape(a), self.shape(b))?;
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b, plan), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        self.same_shape(a, b, what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds a vector along the last dimension.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).last_dim();
        if self.value(bias).len() != cols || self.value(bias).rank() != 1 {
            return Err(Error::Shape(format!(
                "add_bias: {:?} with bias {:?}",
                self.shape(x),
                self.shape(bias)
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols) {
            for (d, &bv) in row.iter_mut().zip(b) {
                *d = *d + bv;
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    /// `x·scale + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: F, shift: F) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * scale + shift).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(out, Op::Affine(x, scale), ng)
    }

    pub fn scale(&mut self, x: Var, scale: F) -> Var {
        self.affine(x, scale, F::zero())
    }

    /// `x@w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = kernels::gelu(self.value(x));
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_lastdim(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Softmax over the last dim with future positions masked; the backward
    /// rule is the plain softmax one since masked outputs are exactly zero.
    pub fn softmax_causal(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_causal(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let cols = kernels::check_norm_params(self.shape(x), self.value(gain), self.value(bias))?;
        let stats = kernels::normalize_rows(self.value(x).data(), cols, eps);
        let out = kernels::affine_rows(&stats.xhat, self.value(gain).data(), self.value(bias).data());
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat: stats.xhat,
                inv_std: stats.inv_std,
            },
            ng,
        ))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = kernels::permute(self.value(x), perm)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Permute(x, perm.to_vec()), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    pub fn adaptive_pool(&mut self, x: Var, target: usize) -> Result<Var> {
        let out = kernels::adaptive_pool(self.value(x), target)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::AdaptivePool(x), ng))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let out = kernels::concat(self.value(a), self.value(b), axis)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Concat(a, b, axis), ng))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = kernels::narrow(self.value(x), axis, start, len)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Narrow(x, axis, start), ng))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = F::of(va.len().max(1) as f64);
        let s = va.iter().zip(vb).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>() / n;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), ng))
    }

    /// Cosine similarity of matching last-dim rows, shape `shape[..-1]`.
    /// A row pair where either side is the zero vector has cosine 0.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_cosine")?;
        let cols = self.value(a).last_dim();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let cos: Vec<F> = va
            .chunks(cols)
            .zip(vb.chunks(cols))
            .map(|(x, y)| row_cos(x, y).0)
            .collect();
        let mut shape = self.shape(a).to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, cos)?, Op::RowCosine(a, b), ng))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x).data();
        let m = v.iter().copied().sum::<F>() / F::of(v.len().max(1) as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<F>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (one target per last-dim row).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let cols = self.value(logits).last_dim();
        let rows = self.value(logits).len() / cols.max(1);
        if rows != targets.len() || rows == 0 {
            return Err(Error::Shape(format!(
                "cross_entropy: {rows} logit rows for {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Index {
                what: "cross_entropy classes",
                index: bad,
                size: cols,
            });
        }
        let probs = kernels::softmax_rows(self.value(logits).data(), cols, false);
        let nll = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -probs[r * cols + t].max(F::min_positive_value()).ln())
            .sum::<F>()
            / F::of(rows as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(nll),
            Op::CrossEntropy(logits, targets.to_vec(), probs),
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape: a second call
    /// returns [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut acc: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<F>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            acc[loss.0] = Some(vec![F::one()]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = acc[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.backprop_node(i, &g, &mut acc);
        }
        // Trainable leaves the loss never reached get exact zeros.
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && leaf_grads[i].is_none() {
                leaf_grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn backprop_node(&self, i: usize, g: &[F], acc: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let mut send = |v: Var, contrib: Vec<F>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut acc[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e = *e + c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| nodes[v.0].value.data();
        let wants = |v: Var| nodes[v.0].needs_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b, plan) => {
                let &MatmulPlan { batch, m, k, n, .. } = plan;
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    let mut ga = vec![F::zero(); if plan.a_batched { batch * m * k } else { m * k }];
                    if !plan.b_batched {
                        gemm(batch * m, n, k, g, false, bv, true, &mut ga, false);
                    } else {
                        for bi in 0..batch {
                            let dst = if plan.a_batched {
                                &mut ga[bi * m * k..(bi + 1) * m * k]
                            } else {
                                &mut ga[..]
                            };
                            gemm(
                                m,
                                n,
                                k,
                                &g[bi * m * n..(bi + 1) * m * n],
                                false,
                                &bv[bi * k * n..(bi + 1) * k * n],
                                true,
                                dst,
                                !plan.a_batched && bi > 0,
                            );
                        }
                    }
                    send(*a, ga);
                }
                if wants(*b) {
                    let mut gb = vec![F::zero(); if plan.b_batched { batch * k * n } else { k * n }];
                    if !plan.b_batched && plan.a_batched {
                        gemm(k, batch * m, n, av, true, g, false, &mut gb, false);
                    } else {
                        for bi in 0..batch {
                            let a_slice = if plan.a_batched {
                                &av[bi * m * k..(bi + 1) * m * k]
                            } else {
                                av
                            };
                            let dst = if plan.b_batched {
                                &mut gb[bi * k * n..(bi + 1) * k * n]
                            } else {
                                &mut gb[..]
                            };
                            gemm(
                                k,
                                m,
                                n,
                                a_slice,
                                true,
                                &g[bi * m * n..(bi + 1) * m * n],
                                false,
                                dst,
                                false,
                            );
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    send(*a, g.to_vec());
                }
                if wants(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    send(*a, g.to_vec());
                }
                if wants(*b) {
                    send(*b, g.iter().map(|&x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    send(*a, g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
                }
                if wants(*b) {
                    send(*b, g.iter().zip(av).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::AddBias(x, bias) => {
                if wants(*x) {
                    send(*x, g.to_vec());
                }
                if wants(*bias) {
                    let cols = val(*bias).len();
                    let mut gb = vec![F::zero(); cols];
                    for row in g.chunks(cols) {
                        for (d, &v) in gb.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    send(*bias, gb);
                }
            }
            Op::Affine(x, scale) => send(*x, g.iter().map(|&v| v * *scale).collect()),
            Op::Gelu(x) => send(
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(&gv, &xv)| gv * kernels::gelu_grad_scalar(xv))
                    .collect(),
            ),
            Op::Softmax(x) => {
                let y = node.value.data();
                let cols = node.value.last_dim();
                let mut gx = vec![F::zero(); y.len()];
                for ((yr, gr), dst) in y.chunks(cols).zip(g.chunks(cols)).zip(gx.chunks_mut(cols)) {
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<F>();
                    for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                send(*x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gamma = val(*gain);
                let cols = gamma.len();
                if wants(*gain) {
                    let mut gg = vec![F::zero(); cols];
                    for (gr, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((d, &gv), &xv) in gg.iter_mut().zip(gr).zip(xr) {
                            *d = *d + gv * xv;
                        }
                    }
                    send(*gain, gg);
                }
                if wants(*bias) {
                    let mut gb = vec![F::zero(); cols];
                    for gr in g.chunks(cols) {
                        for (d, &gv) in gb.iter_mut().zip(gr) {
                            *d = *d + gv;
                        }
                    }
                    send(*bias, gb);
                }
                if wants(*x) {
                    let nf = F::of(cols as f64);
                    let mut gx = vec![F::zero(); g.len()];
                    let rows = g.chunks(cols).zip(xhat.chunks(cols)).zip(gx.chunks_mut(cols));
                    for (r, ((gr, xr), dst)) in rows.enumerate() {
                        let mut mean_gh = F::zero();
                        let mut mean_ghx = F::zero();
                        for ((&gv, &gm), &xv) in gr.iter().zip(gamma).zip(xr) {
                            let gh = gv * gm;
                            mean_gh = mean_gh + gh;
                            mean_ghx = mean_ghx + gh * xv;
                        }
                        mean_gh = mean_gh / nf;
                        mean_ghx = mean_ghx / nf;
                        let is = inv_std[r];
                        for (((d, &gv), &gm), &xv) in dst.iter_mut().zip(gr).zip(gamma).zip(xr) {
                            *d = is * (gv * gm - mean_gh - xv * mean_ghx);
                        }
                    }
                    send(*x, gx);
                }
            }
            Op::Permute(x, perm) => {
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("shape");
                let back = kernels::permute(&gt, &kernels::inverse_perm(perm)).expect("valid perm");
                send(*x, back.into_vec());
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::AdaptivePool(x) => {
                let &[b, n, h] = nodes[x.0].value.shape() else {
                    unreachable!("checked in forward")
                };
                let t = node.value.shape()[1];
                let mut gx = vec![F::zero(); b * n * h];
                for bi in 0..b {
                    for i in 0..t {
                        let (s, e) = kernels::pool_bin(i, n, t);
                        let inv = F::one() / F::of((e - s) as f64);
                        let src = &g[(bi * t + i) * h..(bi * t + i + 1) * h];
                        for j in s..e {
                            let dst = &mut gx[(bi * n + j) * h..(bi * n + j + 1) * h];
                            for (d, &v) in dst.iter_mut().zip(src) {
                                *d = *d + v * inv;
                            }
                        }
                    }
                }
                send(*x, gx);
            }
            Op::Concat(a, b, axis) => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let out_shape = node.value.shape();
                if wants(*a) {
                    let gt = Tensor::new(out_shape.to_vec(), g.to_vec()).expect("shape");
                    send(*a, kernels::narrow(&gt, *axis, 0, sa[*axis]).expect("in range").into_vec());
                }
                if wants(*b) {
                    let gt = Tensor::new(out_shape.to_vec(), g.to_vec()).expect("shape");
                    let part = kernels::narrow(&gt, *axis, sa[*axis], sb[*axis]).expect("in range");
                    send(*b, part.into_vec());
                }
            }
            Op::Narrow(x, axis, start) => {
                let len = node.value.shape()[*axis];
                let in_shape = nodes[x.0].value.shape();
                send(*x, kernels::narrow_backward(g, in_shape, *axis, *start, len));
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let c = F::of(2.0) * g[0] / F::of(av.len().max(1) as f64);
                let ga: Vec<F> = av.iter().zip(bv).map(|(&x, &y)| c * (x - y)).collect();
                if wants(*b) {
                    send(*b, ga.iter().map(|&v| -v).collect());
                }
                if wants(*a) {
                    send(*a, ga);
                }
            }
            Op::RowCosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let cols = nodes[a.0].value.last_dim();
                let mut ga = vec![F::zero(); av.len()];
                let mut gb = vec![F::zero(); bv.len()];
                for (r, &gr) in g.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let (x, y) = (&av[span.clone()], &bv[span.clone()]);
                    let (cos, nx, ny) = row_cos(x, y);
                    if nx == F::zero() || ny == F::zero() {
                        continue;
                    }
                    let inv = F::one() / (nx * ny);
                    for j in 0..cols {
                        ga[span.start + j] = gr * (y[j] * inv - cos * x[j] / (nx * nx));
                        gb[span.start + j] = gr * (x[j] * inv - cos * y[j] / (ny * ny));
                    }
                }
                if wants(*a) {
                    send(*a, ga);
                }
                if wants(*b) {
                    send(*b, gb);
                }
            }
            Op::Mean(x) => {
                let n = nodes[x.0].value.len();
                send(*x, vec![g[0] / F::of(n.max(1) as f64); n]);
            }
            Op::Sum(x) => send(*x, vec![g[0]; nodes[x.0].value.len()]),
            Op::CrossEntropy(logits, targets, probs) => {
                let cols = nodes[logits.0].value.last_dim();
                let scale = g[0] / F::of(targets.len() as f64);
                let mut gl: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * cols + t] = gl[r * cols + t] - scale;
                }
                send(*logits, gl);
            }
        }
    }
}

/// (cosine, |x|, |y|), with cosine 0 when either norm vanishes.
fn row_cos<F: Element>(x: &[F], y: &[F]) -> (F, F, F) {
    let (mut dot, mut xx, mut yy) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in x.iter().zip(y) {
        dot = dot + a * b;
        xx = xx + a * a;
        yy = yy + b * b;
    }
    let (nx, ny) = (xx.sqrt(), yy.sqrt());
    if nx == F::zero() || ny == F::zero() {
        (F::zero(), nx, ny)
    } else {
        (dot / (nx * ny), nx, ny)
    }
}
