use super::gemm::{gemm, Layout};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    padding: usize,
    stride: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits every (patch row, output cell, input offset) triple whose input
    /// position lies inside the unpadded image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.out_len();
        for ci in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    for oh in 0..self.out_h {
                        let ih = (oh * self.stride + ki) as isize - self.padding as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        for ow in 0..self.out_w {
                            let iw = (ow * self.stride + kj) as isize - self.padding as isize;
                            if iw < 0 || iw >= self.w as isize {
                                continue;
                            }
                            let src = (ci * self.h + ih as usize) * self.w + iw as usize;
                            f(row * n, oh * self.out_w + ow, src);
                        }
                    }
                }
            }
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Affine {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MatMul {
        lhs: Var,
        rhs: Var,
    },
    Aggregate {
        input: Var,
        weights: Vec<f64>,
    },
    Relu {
        input: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    SelectRow {
        table: Var,
        row: usize,
    },
    L1Loss {
        pred: Var,
        target: Var,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Accumulated gradient; only leaves that require grad carry one.
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in evaluation order, so every operation's inputs precede
/// it and a reverse sweep is a valid topological order for the chain rule.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| vec![0.0; value.numel()]);
        self.push(value, requires_grad, grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` unless the leaf requires grad.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    /// Moves a leaf's gradient out, leaving zeros behind.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        let node = &mut self.nodes[v.0];
        let len = node.value.numel();
        node.grad.as_mut().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: std::mem::replace(g, vec![0.0; len]),
        })
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, grad: Option<Vec<f64>>, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, None, op)
    }

    fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Cross-correlation of a `[Cin, H, W]` image with `[Cout, Cin, Kh, Kw]`
    /// kernels plus a per-output-channel bias.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, padding: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernels).to_vec();
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        if self.shape(bias) != [ks[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: ks,
                rhs: self.shape(bias).to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                reason: "stride must be at least 1".into(),
            });
        }
        let (hp, wp) = (xs[1] + 2 * padding, xs[2] + 2 * padding);
        if ks[2] > hp || ks[3] > wp {
            return Err(TensorError::Invalid {
                op: "conv2d",
                reason: format!("kernel {}x{} exceeds padded input {hp}x{wp}", ks[2], ks[3]),
            });
        }
        let geom = ConvGeom {
            cin: xs[0],
            h: xs[1],
            w: xs[2],
            cout: ks[0],
            kh: ks[2],
            kw: ks[3],
            out_h: (hp - ks[2]) / stride + 1,
            out_w: (wp - ks[3]) / stride + 1,
            padding,
            stride,
        };
        let (k, n) = (geom.patch_len(), geom.out_len());
        let mut cols = vec![0.0; k * n];
        {
            let x = &self.nodes[input.0].value.data;
            geom.for_each_tap(|row_off, cell, src| cols[row_off + cell] = x[src]);
        }
        let mut out = vec![0.0; geom.cout * n];
        for (co, row) in out.chunks_mut(n).enumerate() {
            row.fill(self.nodes[bias.0].value.data[co]);
        }
        gemm(
            geom.cout,
            k,
            n,
            &self.nodes[kernels.0].value.data,
            Layout::Normal,
            &cols,
            Layout::Normal,
            1.0,
            &mut out,
        );
        let value = Tensor {
            shape: vec![geom.cout, geom.out_h, geom.out_w],
            data: out,
        };
        Ok(self.push_op(
            value,
            &[input, kernels, bias],
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
        ))
    }

    /// Per-channel max pooling over `window x window` patches.
    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 {
            return Err(TensorError::Invalid {
                op: "maxpool2d",
                reason: format!("expected [C, H, W], got {xs:?}"),
            });
        }
        if window == 0 || stride == 0 {
            return Err(TensorError::Invalid {
                op: "maxpool2d",
                reason: "window and stride must be at least 1".into(),
            });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if window > h || window > w {
            return Err(TensorError::Invalid {
                op: "maxpool2d",
                reason: format!("window {window} larger than input {h}x{w}"),
            });
        }
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let x = &self.nodes[input.0].value.data;
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = usize::MAX;
                    let mut best_val = f64::NEG_INFINITY;
                    for di in 0..window {
                        for dj in 0..window {
                            let idx = (ch * h + i * stride + di) * w + j * stride + dj;
                            if best == usize::MAX || x[idx] > best_val {
                                best = idx;
                                best_val = x[idx];
                            }
                        }
                    }
                    out.push(best_val);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor {
            shape: vec![c, oh, ow],
            data: out,
        };
        Ok(self.push_op(value, &[input], Op::MaxPool { input, argmax }))
    }

    /// `input · weight (+ bias)` applied along the trailing dimension.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: xs,
                rhs: ws,
            });
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = bias {
            if self.shape(b) != [dout] {
                return Err(TensorError::ShapeMismatch {
                    op: "affine bias",
                    lhs: ws,
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let rows = self.nodes[input.0].value.numel() / din;
        let mut out = vec![0.0; rows * dout];
        if let Some(b) = bias {
            let bv = &self.nodes[b.0].value.data;
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            rows,
            din,
            dout,
            &self.nodes[input.0].value.data,
            Layout::Normal,
            &self.nodes[weight.0].value.data,
            Layout::Normal,
            1.0,
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push_op(Tensor { shape, data: out }, &inputs, Op::Affine { input, weight, bias }))
    }

    /// Plain 2-D matrix product.
    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let a = self.shape(lhs).to_vec();
        let b = self.shape(rhs).to_vec();
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a,
                rhs: b,
            });
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[lhs.0].value.data,
            Layout::Normal,
            &self.nodes[rhs.0].value.data,
            Layout::Normal,
            0.0,
            &mut out,
        );
        Ok(self.push_op(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            &[lhs, rhs],
            Op::MatMul { lhs, rhs },
        ))
    }

    /// `weights · input` for a fixed `[S, S]` weight matrix and `[S, D]` input.
    ///
    /// Each output entry sums its non-zero terms in ascending value order, so
    /// relabelling the rows of both operands relabels the result bit-for-bit.
    pub fn aggregate(&mut self, weights: &Tensor, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = weights.shape();
        if ws.len() != 2 || ws[0] != ws[1] || xs.len() != 2 || xs[0] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "aggregate",
                lhs: ws.to_vec(),
                rhs: xs,
            });
        }
        let (s, d) = (xs[0], xs[1]);
        let x = &self.nodes[input.0].value.data;
        let w = weights.data();
        let mut out = vec![0.0; s * d];
        let mut terms = Vec::with_capacity(s);
        for i in 0..s {
            for k in 0..d {
                terms.clear();
                terms.extend((0..s).filter(|&j| w[i * s + j] != 0.0).map(|j| w[i * s + j] * x[j * d + k]));
                terms.sort_unstable_by(f64::total_cmp);
                out[i * d + k] = terms.iter().sum();
            }
        }
        Ok(self.push_op(
            Tensor {
                shape: vec![s, d],
                data: out,
            },
            &[input],
            Op::Aggregate {
                input,
                weights: w.to_vec(),
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = &self.nodes[input.0].value;
        let value = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.push_op(value, &[input], Op::Relu { input })
    }

    /// Joins tensors along `axis`; every other dimension must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => {
                return Err(TensorError::Invalid {
                    op: "concat",
                    reason: "no parts given".into(),
                })
            }
        };
        if axis >= first.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                reason: format!("axis {axis} out of range for rank {}", first.len()),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let agrees = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !agrees {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.nodes[p.0].value.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push_op(
            Tensor { shape, data },
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[input.0].value.clone().reshape(shape)?;
        Ok(self.push_op(value, &[input], Op::Reshape { input }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.nodes[input.0].value.data.iter().sum();
        self.push_op(Tensor::scalar(total), &[input], Op::Sum { input })
    }

    /// Row `row` of a `[R, D]` table as a `[D]` vector.
    pub fn select_row(&mut self, table: Var, row: usize) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || row >= ts[0] {
            return Err(TensorError::Invalid {
                op: "select_row",
                reason: format!("row {row} not in table of shape {ts:?}"),
            });
        }
        let d = ts[1];
        let data = self.nodes[table.0].value.data[row * d..(row + 1) * d].to_vec();
        Ok(self.push_op(Tensor { shape: vec![d], data }, &[table], Op::SelectRow { table, row }))
    }

    /// Mean absolute difference, as a `[1]` tensor.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(TensorError::ShapeMismatch {
                op: "l1_loss",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let p = &self.nodes[pred.0].value.data;
        let t = &self.nodes[target.0].value.data;
        let loss = p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
        Ok(self.push_op(Tensor::scalar(loss), &[pred, target], Op::L1Loss { pred, target }))
    }

    /// Propagates d(loss)/d(node) back to every leaf that requires grad.
    /// Leaf gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarRoot(ls.to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if let Some(acc) = self.nodes[i].grad.as_mut() {
                    acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                continue;
            }
            self.backward_op(i, &g, &mut adj);
        }
        Ok(())
    }

    fn backward_op(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            } => {
                let (k, n) = (geom.patch_len(), geom.out_len());
                if needs(*kernels) {
                    let dk = slot(adj, nodes, *kernels);
                    gemm(geom.cout, n, k, g, Layout::Normal, cols, Layout::Transposed, 1.0, dk);
                }
                if needs(*bias) {
                    let db = slot(adj, nodes, *bias);
                    for (co, row) in g.chunks(n).enumerate() {
                        db[co] += row.iter().sum::<f64>();
                    }
                }
                if needs(*input) {
                    let mut dcols = vec![0.0; k * n];
                    gemm(
                        k,
                        geom.cout,
                        n,
                        &nodes[kernels.0].value.data,
                        Layout::Transposed,
                        g,
                        Layout::Normal,
                        0.0,
                        &mut dcols,
                    );
                    let dx = slot(adj, nodes, *input);
                    geom.for_each_tap(|row_off, cell, src| dx[src] += dcols[row_off + cell]);
                }
            }
            Op::MaxPool { input, argmax } => {
                let dx = slot(adj, nodes, *input);
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
            }
            Op::Affine { input, weight, bias } => {
                let (din, dout) = {
                    let ws = &nodes[weight.0].value.shape;
                    (ws[0], ws[1])
                };
                let rows = g.len() / dout;
                if needs(*input) {
                    let dx = slot(adj, nodes, *input);
                    gemm(
                        rows,
                        dout,
                        din,
                        g,
                        Layout::Normal,
                        &nodes[weight.0].value.data,
                        Layout::Transposed,
                        1.0,
                        dx,
                    );
                }
                if needs(*weight) {
                    let dw = slot(adj, nodes, *weight);
                    gemm(
                        din,
                        rows,
                        dout,
                        &nodes[input.0].value.data,
                        Layout::Transposed,
                        g,
                        Layout::Normal,
                        1.0,
                        dw,
                    );
                }
                if let Some(b) = bias {
                    if needs(*b) {
                        let db = slot(adj, nodes, *b);
                        for row in g.chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    }
                }
            }
            Op::MatMul { lhs, rhs } => {
                let (m, k) = {
                    let s = &nodes[lhs.0].value.shape;
                    (s[0], s[1])
                };
                let n = nodes[rhs.0].value.shape[1];
                if needs(*lhs) {
                    let da = slot(adj, nodes, *lhs);
                    gemm(m, n, k, g, Layout::Normal, &nodes[rhs.0].value.data, Layout::Transposed, 1.0, da);
                }
                if needs(*rhs) {
                    let db = slot(adj, nodes, *rhs);
                    gemm(k, m, n, &nodes[lhs.0].value.data, Layout::Transposed, g, Layout::Normal, 1.0, db);
                }
            }
            Op::Aggregate { input, weights } => {
                let (s, d) = {
                    let sh = &nodes[input.0].value.shape;
                    (sh[0], sh[1])
                };
                let dx = slot(adj, nodes, *input);
                gemm(s, s, d, weights, Layout::Transposed, g, Layout::Normal, 1.0, dx);
            }
            Op::Relu { input } => {
                let x = &nodes[input.0].value.data;
                let dx = slot(adj, nodes, *input);
                for ((d, &xv), &gv) in dx.iter_mut().zip(x).zip(g) {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = &nodes[i].value.shape;
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = nodes[p.0].value.shape[*axis] * inner;
                    if needs(p) {
                        let dp = slot(adj, nodes, p);
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            dp[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, v)| *a += v);
                        }
                    }
                    offset += block;
                }
            }
            Op::Reshape { input } => {
                let dx = slot(adj, nodes, *input);
                dx.iter_mut().zip(g).for_each(|(a, v)| *a += v);
            }
            Op::Sum { input } => {
                let dx = slot(adj, nodes, *input);
                dx.iter_mut().for_each(|a| *a += g[0]);
            }
            Op::SelectRow { table, row } => {
                let d = g.len();
                let dt = slot(adj, nodes, *table);
                dt[row * d..(row + 1) * d]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, v)| *a += v);
            }
            Op::L1Loss { pred, target } => {
                let p = &nodes[pred.0].value.data;
                let t = &nodes[target.0].value.data;
                let scale = g[0] / p.len() as f64;
                let signs: Vec<f64> = p.iter().zip(t).map(|(a, b)| sign(a - b) * scale).collect();
                if needs(*pred) {
                    let dp = slot(adj, nodes, *pred);
                    dp.iter_mut().zip(&signs).for_each(|(a, v)| *a += v);
                }
                if needs(*target) {
                    let dt = slot(adj, nodes, *target);
                    dt.iter_mut().zip(&signs).for_each(|(a, v)| *a -= v);
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn slot<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
}
