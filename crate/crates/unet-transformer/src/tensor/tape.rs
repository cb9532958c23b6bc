//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends one record to the tape; records therefore sit in
//! topological order and a single reverse sweep visits each exactly once.
//! Shape violations are contract bugs and panic with both shapes in the
//! message. A tape belongs to one logical execution stream.

use std::collections::HashMap;
use std::sync::Arc;

use crate::mask::AttnMask;
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::ceil_div;

/// Layer-norm variance floor. Keeps constant rows finite.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<F: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddBias(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Gather {
        table: Var,
        ids: Arc<Vec<usize>>,
    },
    Conv1d {
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    Deconv1d {
        x: Var,
        w: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ZeroRows {
        x: Var,
        keep: Arc<Vec<bool>>,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    Sum(Var),
    CrossEntropyRows {
        logits: Var,
        targets: Arc<Vec<usize>>,
        valid: Arc<Vec<bool>>,
        probs: Vec<F>,
    },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

/// Recording of one forward computation plus buffers for its reverse sweep.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    bound: HashMap<usize, Var>,
    trainable: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bound: HashMap::new(),
            trainable: true,
        }
    }

    /// Tape that binds parameters without gradient bookkeeping.
    pub fn for_inference() -> Self {
        Tape {
            trainable: false,
            ..Tape::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a named parameter onto the tape, once; repeated binds of the same
    /// parameter return the same variable so gradient contributions from all
    /// uses accumulate together.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id.index()) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), self.trainable);
        self.bound.insert(id.index(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last [`Tape::backward`] run.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()))
    }

    /// Gradient for a bound parameter; zeros if the parameter never joined
    /// the computation or sat off the loss path.
    pub fn param_grad(&self, store: &ParamStore<F>, id: ParamId) -> Tensor<F> {
        match self.bound.get(&id.index()).and_then(|&v| self.grad(v)) {
            Some(g) => g,
            None => Tensor::zeros(store.value(id).shape().to_vec()),
        }
    }

    // ---- element-wise and linear ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.shape(),
            vb.shape(),
            "add: shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.shape(),
            vb.shape(),
            "sub: shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.shape(),
            vb.shape(),
            "mul: shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = F::of(c);
        let out = self.value(x).map(|v| v * c);
        let rg = self.requires(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// `x[n,d] + b[d]`, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(b));
        assert_eq!(vx.ndim(), 2, "add_bias: x must be 2-D, got {:?}", vx.shape());
        assert_eq!(
            vb.shape(),
            &[vx.cols()],
            "add_bias: bias shape {:?} does not match {:?}",
            vb.shape(),
            vx.shape()
        );
        let (n, d) = (vx.rows(), vx.cols());
        let mut data = vx.data().to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] += vb.data()[c];
            }
        }
        let out = Tensor::new(vec![n, d], data);
        let rg = self.requires(x) || self.requires(b);
        self.push(out, Op::AddBias(x, b), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(
            va.ndim() == 2 && vb.ndim() == 2 && va.cols() == vb.rows(),
            "matmul: incompatible shapes {:?} @ {:?}",
            va.shape(),
            vb.shape()
        );
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![F::ZERO; m * n];
        gemm_nn(va.data(), vb.data(), m, k, n, &mut out);
        let rg = self.requires(a) || self.requires(b);
        self.push(Tensor::new(vec![m, n], out), Op::Matmul(a, b), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.ndim(), 2, "transpose: need 2-D, got {:?}", vx.shape());
        let (n, d) = (vx.rows(), vx.cols());
        let mut data = vec![F::ZERO; n * d];
        for r in 0..n {
            for c in 0..d {
                data[c * n + r] = vx.data()[r * d + c];
            }
        }
        let rg = self.requires(x);
        self.push(Tensor::new(vec![d, n], data), Op::Transpose(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(F::ZERO));
        let rg = self.requires(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| F::ONE / (F::ONE + (-v).exp()));
        let rg = self.requires(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.requires(x);
        self.push(out, Op::Tanh(x), rg)
    }

    /// Softmax over the last axis, with max subtraction for stability.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        assert!(
            vx.ndim() == 1 || vx.ndim() == 2,
            "softmax: need 1-D or 2-D, got {:?}",
            vx.shape()
        );
        let d = *vx.shape().last().unwrap();
        let n = vx.len() / d;
        let mut data = vec![F::ZERO; vx.len()];
        for r in 0..n {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mx = row.iter().fold(row[0], |m, &v| m.max(v));
            let mut sum = F::ZERO;
            for c in 0..d {
                let e = (row[c] - mx).exp();
                data[r * d + c] = e;
                sum += e;
            }
            for c in 0..d {
                data[r * d + c] = data[r * d + c] / sum;
            }
        }
        let rg = self.requires(x);
        self.push(Tensor::new(vx.shape().to_vec(), data), Op::Softmax(x), rg)
    }

    /// Row softmax restricted to permitted entries; forbidden entries come out
    /// exactly zero, not merely small. A query row with no permitted key is an
    /// upstream pad-mask bug and is rejected.
    pub fn masked_softmax(&mut self, x: Var, mask: &AttnMask) -> Var {
        let vx = self.value(x);
        assert_eq!(
            vx.shape(),
            &[mask.n_queries(), mask.n_keys()],
            "masked_softmax: scores {:?} vs mask {}x{}",
            vx.shape(),
            mask.n_queries(),
            mask.n_keys()
        );
        let (n, d) = (vx.rows(), vx.cols());
        let mut data = vec![F::ZERO; n * d];
        for r in 0..n {
            let row = &vx.data()[r * d..(r + 1) * d];
            let allow = mask.row(r);
            let mut mx: Option<F> = None;
            for c in 0..d {
                if allow[c] {
                    mx = Some(match mx {
                        Some(m) => m.max(row[c]),
                        None => row[c],
                    });
                }
            }
            let mx = mx.unwrap_or_else(|| {
                panic!("masked_softmax: fully-masked query row {r} (upstream pad-mask bug)")
            });
            let mut sum = F::ZERO;
            for c in 0..d {
                if allow[c] {
                    let e = (row[c] - mx).exp();
                    data[r * d + c] = e;
                    sum += e;
                }
            }
            for c in 0..d {
                if allow[c] {
                    data[r * d + c] = data[r * d + c] / sum;
                }
            }
        }
        let rg = self.requires(x);
        self.push(Tensor::new(vec![n, d], data), Op::MaskedSoftmax(x), rg)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        assert_eq!(vx.ndim(), 2, "layer_norm: x must be 2-D, got {:?}", vx.shape());
        let (n, d) = (vx.rows(), vx.cols());
        assert!(
            vg.shape() == [d] && vb.shape() == [d],
            "layer_norm: gain {:?} / bias {:?} do not match width {d}",
            vg.shape(),
            vb.shape()
        );
        let eps = F::of(LAYER_NORM_EPS);
        let inv_d = F::of(1.0 / d as f64);
        let mut xhat = vec![F::ZERO; n * d];
        let mut inv_std = vec![F::ZERO; n];
        let mut data = vec![F::ZERO; n * d];
        for r in 0..n {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let mut var = F::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let is = F::ONE / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                data[r * d + c] = vg.data()[c] * h + vb.data()[c];
            }
        }
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        self.push(
            Tensor::new(vec![n, d], data),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Row lookup: `out[t] = table[ids[t]]`. Backward accumulates into rows,
    /// so repeated ids sum their contributions.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let vt = self.value(table);
        assert_eq!(vt.ndim(), 2, "gather: table must be 2-D, got {:?}", vt.shape());
        let (v, d) = (vt.rows(), vt.cols());
        for &id in ids {
            assert!(
                id < v,
                "gather: token id {id} out of range for table of {v} rows"
            );
        }
        let mut data = vec![F::ZERO; ids.len() * d];
        for (t, &id) in ids.iter().enumerate() {
            data[t * d..(t + 1) * d].copy_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let rg = self.requires(table);
        self.push(
            Tensor::new(vec![ids.len(), d], data),
            Op::Gather {
                table,
                ids: Arc::new(ids.to_vec()),
            },
            rg,
        )
    }

    /// Same-padded k=3 1-D convolution over the sequence axis.
    /// `x[N,d_in] * w[3,d_in,d_out] + bias`, stride 1 or 2; out-of-range
    /// positions read as zero. Output length is `N` (stride 1) or
    /// `ceil(N/2)` (stride 2).
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var, stride: usize) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(bias));
        assert!(
            stride == 1 || stride == 2,
            "conv1d: stride {stride} unsupported (1 or 2)"
        );
        assert_eq!(vx.ndim(), 2, "conv1d: x must be 2-D, got {:?}", vx.shape());
        assert!(
            vw.ndim() == 3 && vw.shape()[0] == 3,
            "conv1d: kernel must be [3, d_in, d_out], got {:?}",
            vw.shape()
        );
        let (n, d_in) = (vx.rows(), vx.cols());
        let d_out = vw.shape()[2];
        assert_eq!(
            vw.shape()[1],
            d_in,
            "conv1d: kernel {:?} does not accept input width {d_in}",
            vw.shape()
        );
        assert_eq!(
            vb.shape(),
            &[d_out],
            "conv1d: bias {:?} vs d_out {d_out}",
            vb.shape()
        );
        let m = if stride == 1 { n } else { ceil_div(n, 2) };
        let mut data = vec![F::ZERO; m * d_out];
        for t in 0..m {
            let orow = &mut data[t * d_out..(t + 1) * d_out];
            orow.copy_from_slice(vb.data());
            for r in 0..3usize {
                let s = (stride * t + r) as isize - 1;
                if s < 0 || s as usize >= n {
                    continue;
                }
                let xrow = &vx.data()[s as usize * d_in..(s as usize + 1) * d_in];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == F::ZERO {
                        continue;
                    }
                    let wrow = &vw.data()[(r * d_in + c) * d_out..(r * d_in + c + 1) * d_out];
                    for (o, &wv) in wrow.iter().enumerate() {
                        orow[o] += xv * wv;
                    }
                }
            }
        }
        let rg = self.requires(x) || self.requires(w) || self.requires(bias);
        self.push(
            Tensor::new(vec![m, d_out], data),
            Op::Conv1d { x, w, bias, stride },
            rg,
        )
    }

    /// Per-channel k=3, stride-2 max pooling with one-position edge padding
    /// (edge positions count as minus infinity). Output length `ceil(N/2)`.
    /// Gradient flows only to the argmax; ties go to the lowest index.
    pub fn max_pool1d(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.ndim(), 2, "max_pool1d: x must be 2-D, got {:?}", vx.shape());
        let (n, d) = (vx.rows(), vx.cols());
        let m = ceil_div(n, 2);
        let mut data = vec![F::ZERO; m * d];
        let mut argmax = vec![0usize; m * d];
        for j in 0..m {
            for c in 0..d {
                let mut best: Option<(F, usize)> = None;
                for r in 0..3usize {
                    let t = (2 * j + r) as isize - 1;
                    if t < 0 || t as usize >= n {
                        continue;
                    }
                    let v = vx.data()[t as usize * d + c];
                    match best {
                        Some((bv, _)) if v <= bv => {}
                        _ => best = Some((v, t as usize)),
                    }
                }
                let (v, t) = best.expect("pool window always has an in-range position");
                data[j * d + c] = v;
                argmax[j * d + c] = t * d + c;
            }
        }
        let rg = self.requires(x);
        self.push(
            Tensor::new(vec![m, d], data),
            Op::MaxPool1d { x, argmax },
            rg,
        )
    }

    /// Stride-2 transposed convolution: the adjoint of the same-padded
    /// stride-2 [`Tape::conv1d`]. Scatters `x[j]·w[r]` into `t = 2j + r - 1`,
    /// keeping `t` in `[0, 2M)`; output length is exactly `2M`.
    pub fn deconv1d(&mut self, x: Var, w: Var) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vx.ndim(), 2, "deconv1d: x must be 2-D, got {:?}", vx.shape());
        assert!(
            vw.ndim() == 3 && vw.shape()[0] == 3,
            "deconv1d: kernel must be [3, d_in, d_out], got {:?}",
            vw.shape()
        );
        let (m, d_in) = (vx.rows(), vx.cols());
        let d_out = vw.shape()[2];
        assert_eq!(
            vw.shape()[1],
            d_in,
            "deconv1d: kernel {:?} does not accept input width {d_in}",
            vw.shape()
        );
        let out_len = 2 * m;
        let mut data = vec![F::ZERO; out_len * d_out];
        for j in 0..m {
            for r in 0..3usize {
                let t = (2 * j + r) as isize - 1;
                if t < 0 || t as usize >= out_len {
                    continue;
                }
                let orow = &mut data[t as usize * d_out..(t as usize + 1) * d_out];
                let xrow = &vx.data()[j * d_in..(j + 1) * d_in];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == F::ZERO {
                        continue;
                    }
                    let wrow = &vw.data()[(r * d_in + c) * d_out..(r * d_in + c + 1) * d_out];
                    for (o, &wv) in wrow.iter().enumerate() {
                        orow[o] += xv * wv;
                    }
                }
            }
        }
        let rg = self.requires(x) || self.requires(w);
        self.push(
            Tensor::new(vec![out_len, d_out], data),
            Op::Deconv1d { x, w },
            rg,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.ndim(), 2, "slice_cols: need 2-D, got {:?}", vx.shape());
        let (n, d) = (vx.rows(), vx.cols());
        assert!(
            start + len <= d,
            "slice_cols: [{start}, {}) out of width {d}",
            start + len
        );
        let mut data = vec![F::ZERO; n * len];
        for r in 0..n {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&vx.data()[r * d + start..r * d + start + len]);
        }
        let rg = self.requires(x);
        self.push(Tensor::new(vec![n, len], data), Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let n = self.value(parts[0]).rows();
        let total: usize = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                assert_eq!(
                    v.rows(),
                    n,
                    "concat_cols: row mismatch {:?} vs {n} rows",
                    v.shape()
                );
                v.cols()
            })
            .sum();
        let mut data = vec![F::ZERO; n * total];
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let d = v.cols();
            for r in 0..n {
                data[r * total + offset..r * total + offset + d]
                    .copy_from_slice(&v.data()[r * d..(r + 1) * d]);
            }
            offset += d;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(
            Tensor::new(vec![n, total], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.ndim(), 2, "slice_rows: need 2-D, got {:?}", vx.shape());
        let (n, d) = (vx.rows(), vx.cols());
        assert!(
            start + len <= n,
            "slice_rows: [{start}, {}) out of {n} rows",
            start + len
        );
        let data = vx.data()[start * d..(start + len) * d].to_vec();
        let rg = self.requires(x);
        self.push(Tensor::new(vec![len, d], data), Op::SliceRows { x, start }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let d = self.value(parts[0]).cols();
        let total: usize = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                assert_eq!(
                    v.cols(),
                    d,
                    "concat_rows: col mismatch {:?} vs width {d}",
                    v.shape()
                );
                v.rows()
            })
            .sum();
        let mut data = Vec::with_capacity(total * d);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(
            Tensor::new(vec![total, d], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    /// Zeroes the rows where `keep` is false. Used to pin padding rows to the
    /// zero representation at layer boundaries.
    pub fn zero_rows(&mut self, x: Var, keep: &[bool]) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.ndim(), 2, "zero_rows: need 2-D, got {:?}", vx.shape());
        let (n, d) = (vx.rows(), vx.cols());
        assert_eq!(keep.len(), n, "zero_rows: {} flags for {n} rows", keep.len());
        let mut data = vx.data().to_vec();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                data[r * d..(r + 1) * d].fill(F::ZERO);
            }
        }
        let rg = self.requires(x);
        self.push(
            Tensor::new(vec![n, d], data),
            Op::ZeroRows {
                x,
                keep: Arc::new(keep.to_vec()),
            },
            rg,
        )
    }

    /// Inverted dropout: survivors are scaled by `1/keep` so expectations
    /// match at evaluation time. `keep = 1` is the identity and records no op.
    pub fn dropout(&mut self, x: Var, keep: f64, rng: &mut Rng) -> Var {
        assert!(keep > 0.0 && keep <= 1.0, "dropout: keep {keep} out of (0,1]");
        if keep >= 1.0 {
            return x;
        }
        let vx = self.value(x);
        let inv = F::of(1.0 / keep);
        let mask: Vec<F> = (0..vx.len())
            .map(|_| if rng.uniform() < keep { inv } else { F::ZERO })
            .collect();
        let data = vx
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Tensor::new(vx.shape().to_vec(), data);
        let rg = self.requires(x);
        self.push(out, Op::Dropout { x, mask }, rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<F>();
        let rg = self.requires(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Negative log-likelihood summed over the valid rows of `logits[T,V]`,
    /// returned with the number of rows that contributed. Rows are normalized
    /// with a max-subtracted log-sum-exp.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        targets: &[usize],
        valid: &[bool],
    ) -> (Var, usize) {
        let vl = self.value(logits);
        assert_eq!(vl.ndim(), 2, "cross_entropy: logits must be 2-D");
        let (t_len, v) = (vl.rows(), vl.cols());
        assert!(
            targets.len() == t_len && valid.len() == t_len,
            "cross_entropy: {t_len} rows vs {} targets / {} flags",
            targets.len(),
            valid.len()
        );
        let count = valid.iter().filter(|&&f| f).count();
        assert!(count > 0, "cross_entropy: no valid target positions");
        let mut probs = vec![F::ZERO; t_len * v];
        let mut nll = F::ZERO;
        for t in 0..t_len {
            if !valid[t] {
                continue;
            }
            let y = targets[t];
            assert!(y < v, "cross_entropy: target id {y} out of range {v}");
            let row = &vl.data()[t * v..(t + 1) * v];
            let mx = row.iter().fold(row[0], |m, &x| m.max(x));
            let mut sum = F::ZERO;
            for c in 0..v {
                let e = (row[c] - mx).exp();
                probs[t * v + c] = e;
                sum += e;
            }
            for c in 0..v {
                probs[t * v + c] = probs[t * v + c] / sum;
            }
            nll += mx + sum.ln() - row[y];
        }
        let rg = self.requires(logits);
        let var = self.push(
            Tensor::scalar(nll),
            Op::CrossEntropyRows {
                logits,
                targets: Arc::new(targets.to_vec()),
                valid: Arc::new(valid.to_vec()),
                probs,
            },
            rg,
        );
        (var, count)
    }

    // ---- reverse sweep ----

    /// Runs reverse-mode accumulation from a scalar loss. Gradients land on
    /// every recorded variable that requires them; everything off the loss
    /// path keeps a zero (absent) gradient.
    pub fn backward(&mut self, loss: Var) {
        let n = loss.0;
        assert!(
            self.nodes[n].value.is_scalar(),
            "backward: loss must be scalar, got shape {:?}",
            self.nodes[n].value.shape()
        );
        if !self.nodes[n].requires_grad {
            return;
        }
        self.nodes[n].grad = Some(vec![F::ONE]);
        for i in (0..=n).rev() {
            let (before, at) = self.nodes.split_at_mut(i);
            let node = &mut at[0];
            let Some(g) = node.grad.take() else { continue };
            apply_backward(&node.op, &node.value, &g, before);
            node.grad = Some(g);
        }
    }
}

fn grad_buf<'a, F: Scalar>(nodes: &'a mut [Node<F>], v: Var) -> Option<&'a mut [F]> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(node.grad.get_or_insert_with(|| vec![F::ZERO; len]))
}

#[allow(clippy::too_many_lines)]
fn apply_backward<F: Scalar>(op: &Op<F>, out: &Tensor<F>, g: &[F], nodes: &mut [Node<F>]) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(buf) = grad_buf(nodes, *a) {
                for (d, &gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if let Some(buf) = grad_buf(nodes, *b) {
                for (d, &gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(buf) = grad_buf(nodes, *a) {
                for (d, &gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if let Some(buf) = grad_buf(nodes, *b) {
                for (d, &gv) in buf.iter_mut().zip(g) {
                    *d -= gv;
                }
            }
        }
        Op::Mul(a, b) => {
            let vb = nodes[b.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *a) {
                for ((d, &gv), &bv) in buf.iter_mut().zip(g).zip(&vb) {
                    *d += gv * bv;
                }
            }
            let va = nodes[a.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *b) {
                for ((d, &gv), &av) in buf.iter_mut().zip(g).zip(&va) {
                    *d += gv * av;
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(buf) = grad_buf(nodes, *x) {
                for (d, &gv) in buf.iter_mut().zip(g) {
                    *d += gv * *c;
                }
            }
        }
        Op::AddBias(x, b) => {
            let d = nodes[b.0].value.len();
            if let Some(buf) = grad_buf(nodes, *x) {
                for (dst, &gv) in buf.iter_mut().zip(g) {
                    *dst += gv;
                }
            }
            if let Some(buf) = grad_buf(nodes, *b) {
                for (i, &gv) in g.iter().enumerate() {
                    buf[i % d] += gv;
                }
            }
        }
        Op::Matmul(a, b) => {
            let (m, k) = {
                let va = &nodes[a.0].value;
                (va.rows(), va.cols())
            };
            let n = nodes[b.0].value.cols();
            let vb = nodes[b.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *a) {
                gemm_nt(g, &vb, m, n, k, buf);
            }
            let va = nodes[a.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *b) {
                gemm_tn(&va, g, k, m, n, buf);
            }
        }
        Op::Transpose(x) => {
            let (n, d) = {
                let vx = &nodes[x.0].value;
                (vx.rows(), vx.cols())
            };
            if let Some(buf) = grad_buf(nodes, *x) {
                // out is [d, n]; g[c * n + r] flows to x[r * d + c]
                for c in 0..d {
                    for r in 0..n {
                        buf[r * d + c] += g[c * n + r];
                    }
                }
            }
        }
        Op::Relu(x) => {
            let vx = nodes[x.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *x) {
                for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(&vx) {
                    if xv > F::ZERO {
                        *d += gv;
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let s = out.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *x) {
                for ((d, &gv), &sv) in buf.iter_mut().zip(g).zip(&s) {
                    *d += gv * sv * (F::ONE - sv);
                }
            }
        }
        Op::Tanh(x) => {
            let t = out.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *x) {
                for ((d, &gv), &tv) in buf.iter_mut().zip(g).zip(&t) {
                    *d += gv * (F::ONE - tv * tv);
                }
            }
        }
        Op::Softmax(x) | Op::MaskedSoftmax(x) => {
            // dx_i = y_i * (g_i - sum_j g_j y_j), per row. Masked entries have
            // y = 0, so they receive and contribute exactly nothing.
            let d = *out.shape().last().unwrap();
            let n = out.len() / d;
            let y = out.data();
            if let Some(buf) = grad_buf(nodes, *x) {
                for r in 0..n {
                    let ys = &y[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let dot = ys
                        .iter()
                        .zip(gs)
                        .map(|(&yv, &gv)| yv * gv)
                        .sum::<F>();
                    let row = &mut buf[r * d..(r + 1) * d];
                    for c in 0..d {
                        row[c] += ys[c] * (gs[c] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let d = nodes[gain.0].value.len();
            let n = out.len() / d;
            let vg = nodes[gain.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *x) {
                let inv_d = F::of(1.0 / d as f64);
                for r in 0..n {
                    let gs = &g[r * d..(r + 1) * d];
                    let hs = &xhat[r * d..(r + 1) * d];
                    let mut mean_h = F::ZERO;
                    let mut mean_hx = F::ZERO;
                    for c in 0..d {
                        let h = vg[c] * gs[c];
                        mean_h += h;
                        mean_hx += h * hs[c];
                    }
                    mean_h *= inv_d;
                    mean_hx *= inv_d;
                    let row = &mut buf[r * d..(r + 1) * d];
                    for c in 0..d {
                        let h = vg[c] * gs[c];
                        row[c] += inv_std[r] * (h - mean_h - hs[c] * mean_hx);
                    }
                }
            }
            if let Some(buf) = grad_buf(nodes, *gain) {
                for r in 0..n {
                    for c in 0..d {
                        buf[c] += g[r * d + c] * xhat[r * d + c];
                    }
                }
            }
            if let Some(buf) = grad_buf(nodes, *bias) {
                for r in 0..n {
                    for c in 0..d {
                        buf[c] += g[r * d + c];
                    }
                }
            }
        }
        Op::Gather { table, ids } => {
            let d = nodes[table.0].value.cols();
            if let Some(buf) = grad_buf(nodes, *table) {
                for (t, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        buf[id * d + c] += g[t * d + c];
                    }
                }
            }
        }
        Op::Conv1d { x, w, bias, stride } => {
            let (n, d_in) = {
                let vx = &nodes[x.0].value;
                (vx.rows(), vx.cols())
            };
            let d_out = out.cols();
            let m = out.rows();
            let vw = nodes[w.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *x) {
                for t in 0..m {
                    let gs = &g[t * d_out..(t + 1) * d_out];
                    for r in 0..3usize {
                        let s = (stride * t + r) as isize - 1;
                        if s < 0 || s as usize >= n {
                            continue;
                        }
                        let xrow = &mut buf[s as usize * d_in..(s as usize + 1) * d_in];
                        for (c, slot) in xrow.iter_mut().enumerate() {
                            let wrow = &vw[(r * d_in + c) * d_out..(r * d_in + c + 1) * d_out];
                            let mut acc = F::ZERO;
                            for (o, &wv) in wrow.iter().enumerate() {
                                acc += gs[o] * wv;
                            }
                            *slot += acc;
                        }
                    }
                }
            }
            let vx = nodes[x.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *w) {
                for t in 0..m {
                    let gs = &g[t * d_out..(t + 1) * d_out];
                    for r in 0..3usize {
                        let s = (stride * t + r) as isize - 1;
                        if s < 0 || s as usize >= n {
                            continue;
                        }
                        for c in 0..d_in {
                            let xv = vx[s as usize * d_in + c];
                            if xv == F::ZERO {
                                continue;
                            }
                            let wrow = &mut buf[(r * d_in + c) * d_out..(r * d_in + c + 1) * d_out];
                            for (o, slot) in wrow.iter_mut().enumerate() {
                                *slot += xv * gs[o];
                            }
                        }
                    }
                }
            }
            if let Some(buf) = grad_buf(nodes, *bias) {
                for t in 0..m {
                    for o in 0..d_out {
                        buf[o] += g[t * d_out + o];
                    }
                }
            }
        }
        Op::MaxPool1d { x, argmax } => {
            if let Some(buf) = grad_buf(nodes, *x) {
                for (i, &src) in argmax.iter().enumerate() {
                    buf[src] += g[i];
                }
            }
        }
        Op::Deconv1d { x, w } => {
            let (m, d_in) = {
                let vx = &nodes[x.0].value;
                (vx.rows(), vx.cols())
            };
            let d_out = out.cols();
            let out_len = out.rows();
            let vw = nodes[w.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *x) {
                for j in 0..m {
                    let xrow = &mut buf[j * d_in..(j + 1) * d_in];
                    for r in 0..3usize {
                        let t = (2 * j + r) as isize - 1;
                        if t < 0 || t as usize >= out_len {
                            continue;
                        }
                        let gs = &g[t as usize * d_out..(t as usize + 1) * d_out];
                        for (c, slot) in xrow.iter_mut().enumerate() {
                            let wrow = &vw[(r * d_in + c) * d_out..(r * d_in + c + 1) * d_out];
                            let mut acc = F::ZERO;
                            for (o, &wv) in wrow.iter().enumerate() {
                                acc += gs[o] * wv;
                            }
                            *slot += acc;
                        }
                    }
                }
            }
            let vx = nodes[x.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, *w) {
                for j in 0..m {
                    for r in 0..3usize {
                        let t = (2 * j + r) as isize - 1;
                        if t < 0 || t as usize >= out_len {
                            continue;
                        }
                        let gs = &g[t as usize * d_out..(t as usize + 1) * d_out];
                        for c in 0..d_in {
                            let xv = vx[j * d_in + c];
                            if xv == F::ZERO {
                                continue;
                            }
                            let wrow = &mut buf[(r * d_in + c) * d_out..(r * d_in + c + 1) * d_out];
                            for (o, slot) in wrow.iter_mut().enumerate() {
                                *slot += xv * gs[o];
                            }
                        }
                    }
                }
            }
        }
        Op::SliceCols { x, start } => {
            let d = nodes[x.0].value.cols();
            let len = out.cols();
            let n = out.rows();
            if let Some(buf) = grad_buf(nodes, *x) {
                for r in 0..n {
                    for c in 0..len {
                        buf[r * d + start + c] += g[r * len + c];
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = out.cols();
            let n = out.rows();
            let mut offset = 0;
            for &p in parts {
                let d = nodes[p.0].value.cols();
                if let Some(buf) = grad_buf(nodes, p) {
                    for r in 0..n {
                        for c in 0..d {
                            buf[r * d + c] += g[r * total + offset + c];
                        }
                    }
                }
                offset += d;
            }
        }
        Op::SliceRows { x, start } => {
            let d = out.cols();
            let len = out.rows();
            if let Some(buf) = grad_buf(nodes, *x) {
                for r in 0..len {
                    for c in 0..d {
                        buf[(start + r) * d + c] += g[r * d + c];
                    }
                }
            }
        }
        Op::ConcatRows(parts) => {
            let d = out.cols();
            let mut offset = 0;
            for &p in parts {
                let rows = nodes[p.0].value.rows();
                if let Some(buf) = grad_buf(nodes, p) {
                    for (slot, &gv) in buf.iter_mut().zip(&g[offset * d..(offset + rows) * d]) {
                        *slot += gv;
                    }
                }
                offset += rows;
            }
        }
        Op::ZeroRows { x, keep } => {
            let d = out.cols();
            if let Some(buf) = grad_buf(nodes, *x) {
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        continue;
                    }
                    for c in 0..d {
                        buf[r * d + c] += g[r * d + c];
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(buf) = grad_buf(nodes, *x) {
                for ((d, &gv), &mv) in buf.iter_mut().zip(g).zip(mask) {
                    *d += gv * mv;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(buf) = grad_buf(nodes, *x) {
                for d in buf.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::CrossEntropyRows {
            logits,
            targets,
            valid,
            probs,
        } => {
            let v = nodes[logits.0].value.cols();
            if let Some(buf) = grad_buf(nodes, *logits) {
                for (t, (&y, &ok)) in targets.iter().zip(valid.iter()).enumerate() {
                    if !ok {
                        continue;
                    }
                    let row = &mut buf[t * v..(t + 1) * v];
                    let ps = &probs[t * v..(t + 1) * v];
                    for c in 0..v {
                        let indicator = if c == y { F::ONE } else { F::ZERO };
                        row[c] += g[0] * (ps[c] - indicator);
                    }
                }
            }
        }
    }
}

// ---- dense kernels ----

/// `out[m,n] += a[m,k] @ b[k,n]`
fn gemm_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == F::ZERO {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,s] @ b[n,s]ᵀ`
fn gemm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, s: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * s..(i + 1) * s];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * s..(j + 1) * s];
            let mut acc = F::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// `out[m,n] += a[s,m]ᵀ @ b[s,n]`
fn gemm_tn<F: Scalar>(a: &[F], b: &[F], m: usize, s: usize, n: usize, out: &mut [F]) {
    for p in 0..s {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == F::ZERO {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, vals)
    }

    #[test]
    fn matmul_identity() {
        let mut tape: Tape<f64> = Tape::new();
        let i2 = tape.constant(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let a = tape.constant(t2(2, 2, &[2.0, 3.0, 4.0, 5.0]));
        let y = tape.matmul(i2, a);
        assert_eq!(tape.value(y).to_f64_vec(), vec![2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.constant(t2(1, 2, &[1.0, 2.0]));
        let b = tape.constant(t2(2, 1, &[3.0, 4.0]));
        let y = tape.matmul(a, b);
        assert_eq!(tape.value(y).to_f64_vec(), vec![11.0]);
    }

    #[test]
    #[should_panic(expected = "incompatible shapes [2, 3] @ [2, 3]")]
    fn matmul_shape_mismatch_reports_both() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        tape.matmul(a, b);
    }

    #[test]
    fn matmul_grad_is_ones_times_b_transposed() {
        // d/dA sum(A@B) = ones @ Bᵀ
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]), true);
        let b = tape.constant(t2(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let y = tape.matmul(a, b);
        let loss = tape.sum(y);
        tape.backward(loss);
        // row sums of B: [11, 15] broadcast over rows of A
        assert_eq!(
            tape.grad(a).unwrap().to_f64_vec(),
            vec![11.0, 15.0, 11.0, 15.0]
        );
    }

    #[test]
    fn softmax_cases() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::vector(&[0.0, 0.0]));
        let y = tape.softmax(x);
        assert_eq!(tape.value(y).to_f64_vec(), vec![0.5, 0.5]);

        let x = tape.constant(Tensor::vector(&[0.0, 3f64.ln()]));
        let y = tape.softmax(x);
        let got = tape.value(y).to_f64_vec();
        assert!((got[0] - 0.25).abs() < 1e-12 && (got[1] - 0.75).abs() < 1e-12);

        // stability under large magnitudes
        let x = tape.constant(Tensor::vector(&[1000.0, 0.0]));
        let y = tape.softmax(x);
        let got = tape.value(y).to_f64_vec();
        assert!(got.iter().all(|v| v.is_finite()));
        assert!((got[0] - 1.0).abs() < 1e-12 && got[1] < 1e-300);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(5);
        let mut tape: Tape<f64> = Tape::new();
        let data: Vec<f64> = (0..35).map(|_| rng.normal() * 3.0).collect();
        let x = tape.constant(Tensor::matrix(5, 7, &data));
        let y = tape.softmax(x);
        let v = tape.value(y).to_f64_vec();
        for r in 0..5 {
            let s: f64 = v[r * 7..(r + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn conv1d_hand_case() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t2(4, 1, &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(Tensor::new(vec![3, 1, 1], vec![1.0, 1.0, 1.0]));
        let b = tape.constant(Tensor::vector(&[0.0]));
        let y = tape.conv1d(x, w, b, 1);
        assert_eq!(tape.value(y).to_f64_vec(), vec![3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn conv1d_center_identity_kernel() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t2(5, 1, &[0.5, -1.0, 2.0, 0.0, 3.0]));
        let w = tape.constant(Tensor::new(vec![3, 1, 1], vec![0.0, 1.0, 0.0]));
        let b = tape.constant(Tensor::vector(&[0.0]));
        let y = tape.conv1d(x, w, b, 1);
        assert_eq!(tape.value(y).to_f64_vec(), tape.value(x).to_f64_vec());
    }

    #[test]
    fn conv1d_zero_input_gives_bias() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![3, 2]));
        let w = tape.constant(Tensor::full(vec![3, 2, 2], 1.0));
        let b = tape.constant(Tensor::vector(&[0.25, -0.5]));
        let y = tape.conv1d(x, w, b, 1);
        assert_eq!(
            tape.value(y).to_f64_vec(),
            vec![0.25, -0.5, 0.25, -0.5, 0.25, -0.5]
        );
    }

    #[test]
    #[should_panic(expected = "kernel must be [3, d_in, d_out]")]
    fn conv1d_rejects_other_kernel_sizes() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![3, 1]));
        let w = tape.constant(Tensor::zeros(vec![5, 1, 1]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        tape.conv1d(x, w, b, 1);
    }

    #[test]
    fn max_pool_hand_case() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t2(5, 1, &[1.0, 5.0, 2.0, 4.0, 3.0]));
        let y = tape.max_pool1d(x);
        assert_eq!(tape.value(y).to_f64_vec(), vec![5.0, 5.0, 4.0]);
    }

    #[test]
    fn max_pool_constant_and_degenerate() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::full(vec![6, 3], 2.5));
        let y = tape.max_pool1d(x);
        assert_eq!(tape.value(y).shape(), &[3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.5));

        let x1 = tape.constant(t2(1, 2, &[7.0, -3.0]));
        let y1 = tape.max_pool1d(x1);
        assert_eq!(tape.value(y1).shape(), &[1, 2]);
        assert_eq!(tape.value(y1).to_f64_vec(), vec![7.0, -3.0]);
    }

    #[test]
    fn max_pool_backward_routes_to_lowest_tied_index() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t2(4, 1, &[2.0, 2.0, 1.0, 1.0]), true);
        let y = tape.max_pool1d(x);
        let loss = tape.sum(y);
        tape.backward(loss);
        // window 0 = {x0, x1} tie -> x0; window 1 = {x1, x2, x3} max x1.
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn deconv_hand_scatter() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t2(2, 1, &[1.0, 2.0]));
        let w = tape.constant(Tensor::new(vec![3, 1, 1], vec![1.0, 1.0, 1.0]));
        let y = tape.deconv1d(x, w);
        assert_eq!(tape.value(y).to_f64_vec(), vec![1.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn deconv_output_lengths() {
        for m in [1usize, 2, 5, 19] {
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.constant(Tensor::zeros(vec![m, 2]));
            let w = tape.constant(Tensor::zeros(vec![3, 2, 3]));
            let y = tape.deconv1d(x, w);
            assert_eq!(tape.value(y).shape(), &[2 * m, 3]);
            assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn deconv_equals_strided_conv_backward() {
        // Forward deconv with swapped in/out kernel axes reproduces the
        // input gradient of the stride-2 convolution.
        let mut rng = Rng::new(11);
        for &(n, d_in, d_out) in &[(6usize, 3usize, 4usize), (9, 2, 5), (1, 1, 1)] {
            let m = n.div_ceil(2);
            let xv: Vec<f64> = (0..n * d_in).map(|_| rng.normal()).collect();
            let wv: Vec<f64> = (0..3 * d_in * d_out).map(|_| rng.normal()).collect();
            let gv: Vec<f64> = (0..m * d_out).map(|_| rng.normal()).collect();

            let mut tape: Tape<f64> = Tape::new();
            let x = tape.leaf(Tensor::new(vec![n, d_in], xv), true);
            let w = tape.constant(Tensor::new(vec![3, d_in, d_out], wv.clone()));
            let b = tape.constant(Tensor::zeros(vec![d_out]));
            let z = tape.conv1d(x, w, b, 2);
            let gt = tape.constant(Tensor::new(vec![m, d_out], gv.clone()));
            let weighted = tape.mul(z, gt);
            let loss = tape.sum(weighted);
            tape.backward(loss);
            let conv_dx = tape.grad(x).unwrap();

            // swap (d_in, d_out) axes of the kernel
            let mut wswap = vec![0.0; 3 * d_out * d_in];
            for r in 0..3 {
                for c in 0..d_in {
                    for o in 0..d_out {
                        wswap[(r * d_out + o) * d_in + c] = wv[(r * d_in + c) * d_out + o];
                    }
                }
            }
            let mut tape2: Tape<f64> = Tape::new();
            let gvar = tape2.constant(Tensor::new(vec![m, d_out], gv));
            let wvar = tape2.constant(Tensor::new(vec![3, d_out, d_in], wswap));
            let y = tape2.deconv1d(gvar, wvar);
            let deconv = tape2.value(y);
            // deconv output has 2M rows; the conv input had N rows. They
            // agree on the first N rows, and coincide entirely for even N.
            for r in 0..n {
                for c in 0..d_in {
                    let a = conv_dx.data()[r * d_in + c];
                    let b = deconv.data()[r * d_in + c];
                    assert!((a - b).abs() < 1e-10, "mismatch at ({r},{c}): {a} vs {b}");
                }
            }
            if n % 2 == 0 {
                assert_eq!(deconv.shape(), conv_dx.shape());
            }
        }
    }

    #[test]
    fn relu_values() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::vector(&[-2.0, 3.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).to_f64_vec(), vec![0.0, 3.0]);
    }

    #[test]
    fn layer_norm_constant_row_is_bias() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::full(vec![2, 4], 3.0));
        let gain = tape.constant(Tensor::full(vec![4], 1.0));
        let bias = tape.constant(Tensor::zeros(vec![4]));
        let y = tape.layer_norm(x, gain, bias);
        assert!(tape.value(y).data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant(Tensor::zeros(vec![2, 4]));
        let (loss, count) = tape.cross_entropy_rows(logits, &[1, 3], &[true, true]);
        assert_eq!(count, 2);
        let per_row = tape.value(loss).item() / 2.0;
        assert!((per_row - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "no valid target positions")]
    fn cross_entropy_rejects_all_pad() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant(Tensor::zeros(vec![2, 4]));
        tape.cross_entropy_rows(logits, &[0, 0], &[false, false]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t2(2, 3, &[1.0; 6]), true);
        let loss = tape.sum(x);
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![1.0; 6]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 2.0]), true);
        let sq = tape.mul(x, x);
        let loss = tape.sum(sq);
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![2.0, 4.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero_grad() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0]), true);
        let other = tape.leaf(Tensor::vector(&[5.0]), true);
        let loss = tape.sum(other);
        tape.backward(loss);
        assert!(tape.grad(x).is_none());
    }

    #[test]
    #[should_panic(expected = "loss must be scalar")]
    fn backward_rejects_non_scalar() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 2.0]), true);
        tape.backward(x);
    }

    #[test]
    fn masked_softmax_exact_zeros() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t2(1, 3, &[5.0, 1.0, -2.0]));
        let mask = AttnMask::from_fn(1, 3, |_, k| k != 1);
        let y = tape.masked_softmax(x, &mask);
        let v = tape.value(y).to_f64_vec();
        assert_eq!(v[1], 0.0, "masked weight must be exactly zero");
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "fully-masked query row")]
    fn masked_softmax_rejects_empty_row() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t2(1, 2, &[0.0, 0.0]));
        let mask = AttnMask::from_fn(1, 2, |_, _| false);
        tape.masked_softmax(x, &mask);
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = Rng::new(9);
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::full(vec![1000], 1.0));
        let y = tape.dropout(x, 0.8, &mut rng);
        let v = tape.value(y).to_f64_vec();
        assert!(v.iter().all(|&e| e == 0.0 || (e - 1.25).abs() < 1e-12));
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 1.0).abs() < 0.1);
        // keep = 1 is a no-op
        let z = tape.dropout(x, 1.0, &mut rng);
        assert_eq!(z, x);
    }

    #[test]
    fn gather_accumulates_repeated_ids() {
        let mut tape: Tape<f64> = Tape::new();
        let table = tape.leaf(t2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let y = tape.gather(table, &[1, 1, 2]);
        let loss = tape.sum(y);
        tape.backward(loss);
        assert_eq!(
            tape.grad(table).unwrap().to_f64_vec(),
            vec![0.0, 0.0, 2.0, 2.0, 1.0, 1.0]
        );
    }

    #[test]
    #[should_panic(expected = "token id 7 out of range for table of 3 rows")]
    fn gather_rejects_out_of_range() {
        let mut tape: Tape<f64> = Tape::new();
        let table = tape.constant(Tensor::zeros(vec![3, 2]));
        tape.gather(table, &[7]);
    }

    #[test]
    fn forward_outputs_finite_on_finite_inputs() {
        let mut rng = Rng::new(21);
        let mut tape: Tape<f64> = Tape::new();
        let data: Vec<f64> = (0..24).map(|_| rng.normal() * 50.0).collect();
        let x = tape.constant(Tensor::matrix(6, 4, &data));
        let gain = tape.constant(Tensor::full(vec![4], 1.0));
        let bias = tape.constant(Tensor::zeros(vec![4]));
        let candidates = vec![
            tape.relu(x),
            tape.sigmoid(x),
            tape.tanh(x),
            tape.softmax(x),
            tape.layer_norm(x, gain, bias),
            tape.max_pool1d(x),
        ];
        for v in candidates {
            assert!(tape.value(v).all_finite());
        }
    }
}
