//! The tape: a linear record of tensor operations with reverse-mode backprop.

use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, IxDyn};

/// Handle to a node on a [`Tape`]. Cheap to copy; only valid for the tape
/// that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

/// Normalization applied by the fused weighted NLL loss.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NllNorm {
    /// Divide the weighted sum by the sum of the row weights.
    WeightSum,
    /// Report the raw weighted sum.
    Sum,
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    MulConst(Var, ArrayD<f64>),
    MulScalar(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    SumAll(Var),
    SoftmaxLast(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: ArrayD<f64>,
        inv_std: Array1<f64>,
    },
    Embedding {
        table: Var,
        ids: Array2<usize>,
    },
    MaskedMeanPool {
        hidden: Var,
        mask: Array2<f64>,
    },
    WeightedNll {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        divisor: f64,
        probs: Array2<f64>,
    },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Records operations as they are applied and replays them in reverse to
/// compute gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, if `v` contributed
    /// to it.
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::wrt`] but returns zeros (shaped like `v`'s value)
    /// for nodes the root does not depend on.
    pub fn wrt_or_zeros(&self, tape: &Tape, v: Var) -> ArrayD<f64> {
        match self.wrt(v) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(tape.value(v).raw_dim()),
        }
    }
}

/// View an `[..., d]` tensor as rows of length `d`.
fn to_rows(a: &ArrayD<f64>) -> Array2<f64> {
    let d = *a.shape().last().expect("rank >= 1 required");
    let r = a.len() / d;
    Array2::from_shape_vec((r, d), a.iter().copied().collect()).unwrap()
}

fn from_rows(rows: Array2<f64>, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(shape), rows.into_iter().collect()).unwrap()
}

/// Flatten leading axes of an `[..., m, n]` tensor into one batch axis.
fn to_batches(a: &ArrayD<f64>) -> ndarray::Array3<f64> {
    let nd = a.ndim();
    assert!(nd >= 2, "batched matmul needs rank >= 2, got {nd}");
    let (m, n) = (a.shape()[nd - 2], a.shape()[nd - 1]);
    let l = a.len() / (m * n);
    ndarray::Array3::from_shape_vec((l, m, n), a.iter().copied().collect()).unwrap()
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

    /// The forward value at `v`.
    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// The forward value at `v`, which must hold exactly one element.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "scalar() on a non-scalar node");
        *value.iter().next().unwrap()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Introduce an input or parameter tensor.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Introduce a rank-0 scalar leaf.
    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), value))
    }

    /// Elementwise `a + b` (same shape).
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "add shape mismatch"
        );
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// `a + c` for a constant tensor `c` (same shape; not differentiated).
    pub fn add_const(&mut self, a: Var, c: &ArrayD<f64>) -> Var {
        assert_eq!(self.value(a).shape(), c.shape(), "add_const shape mismatch");
        let out = self.value(a) + c;
        self.push(out, Op::AddConst(a))
    }

    /// Elementwise `a * b` (same shape).
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "mul shape mismatch"
        );
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `a * c` elementwise for a constant tensor `c` (dropout masks etc.).
    pub fn mul_const(&mut self, a: Var, c: &ArrayD<f64>) -> Var {
        assert_eq!(self.value(a).shape(), c.shape(), "mul_const shape mismatch");
        let out = self.value(a) * c;
        self.push(out, Op::MulConst(a, c.clone()))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(out, Op::MulScalar(a, s))
    }

    /// `a + b` where `b` is a rank-1 bias broadcast over the last axis of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let bv = self
            .value(b)
            .clone()
            .into_dimensionality::<Ix1>()
            .expect("bias must be rank 1");
        let av = self.value(a);
        assert_eq!(
            av.shape().last(),
            Some(&bv.len()),
            "add_bias dimension mismatch"
        );
        let mut out = av.clone();
        let last = out.ndim() - 1;
        for mut lane in out.lanes_mut(Axis(last)) {
            lane += &bv;
        }
        self.push(out, Op::AddBias(a, b))
    }

    /// `[m, k] x [k, n]` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self
            .value(a)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul lhs must be rank 2");
        let bv = self
            .value(b)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul rhs must be rank 2");
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dimension mismatch");
        let out = av.dot(&bv).into_dyn();
        self.push(out, Op::MatMul(a, b))
    }

    /// `[..., m, k] x [..., k, n]` with identical leading axes.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let nd = av.ndim();
        assert_eq!(nd, bv.ndim(), "batch_matmul rank mismatch");
        assert_eq!(
            &av.shape()[..nd - 2],
            &bv.shape()[..nd - 2],
            "batch_matmul leading axes mismatch"
        );
        assert_eq!(
            av.shape()[nd - 1],
            bv.shape()[nd - 2],
            "batch_matmul inner dimension mismatch"
        );
        let a3 = to_batches(av);
        let b3 = to_batches(bv);
        let (l, m, n) = (a3.shape()[0], a3.shape()[1], b3.shape()[2]);
        let mut out3 = ndarray::Array3::<f64>::zeros((l, m, n));
        for i in 0..l {
            out3.index_axis_mut(Axis(0), i)
                .assign(&a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i)));
        }
        let mut shape: Vec<usize> = av.shape()[..nd - 2].to_vec();
        shape.push(m);
        shape.push(n);
        let out = ArrayD::from_shape_vec(IxDyn(&shape), out3.into_iter().collect()).unwrap();
        self.push(out, Op::BatchMatMul(a, b))
    }

    /// Reorder axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        assert_eq!(
            axes.len(),
            self.value(a).ndim(),
            "permute axes rank mismatch"
        );
        let out = self
            .value(a)
            .view()
            .permuted_axes(axes)
            .as_standard_layout()
            .into_owned();
        self.push(out, Op::Permute(a, axes.to_vec()))
    }

    /// Reinterpret the elements of `a` in row-major order under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(
            av.len(),
            shape.iter().product::<usize>(),
            "reshape element count mismatch"
        );
        let out = ArrayD::from_shape_vec(IxDyn(shape), av.iter().copied().collect()).unwrap();
        self.push(out, Op::Reshape(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    /// Softmax over the last axis, numerically stabilized.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let last = out.ndim() - 1;
        for mut lane in out.lanes_mut(Axis(last)) {
            let max = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lane.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = lane.sum();
            lane.mapv_inplace(|x| x / sum);
        }
        self.push(out, Op::SoftmaxLast(a))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = *xv.shape().last().expect("layer_norm needs rank >= 1");
        let gv = self
            .value(gamma)
            .clone()
            .into_dimensionality::<Ix1>()
            .expect("gamma must be rank 1");
        let bv = self
            .value(beta)
            .clone()
            .into_dimensionality::<Ix1>()
            .expect("beta must be rank 1");
        assert_eq!(gv.len(), d, "layer_norm gamma dimension mismatch");
        assert_eq!(bv.len(), d, "layer_norm beta dimension mismatch");

        let rows = to_rows(xv);
        let r = rows.nrows();
        let mut xhat = Array2::<f64>::zeros((r, d));
        let mut inv_std = Array1::<f64>::zeros(r);
        let mut out = Array2::<f64>::zeros((r, d));
        for i in 0..r {
            let row = rows.row(i);
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..d {
                let h = (row[j] - mean) * istd;
                xhat[[i, j]] = h;
                out[[i, j]] = h * gv[j] + bv[j];
            }
        }
        let shape = xv.shape().to_vec();
        let value = from_rows(out, &shape);
        let xhat = from_rows(xhat, &shape);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row lookup: `ids [B, T]` into `table [V, d]` gives `[B, T, d]`.
    pub fn embedding(&mut self, table: Var, ids: &Array2<usize>) -> Var {
        let tv = self
            .value(table)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("embedding table must be rank 2");
        let (vocab, d) = (tv.nrows(), tv.ncols());
        let (b, t) = (ids.nrows(), ids.ncols());
        let mut out = ndarray::Array3::<f64>::zeros((b, t, d));
        for bi in 0..b {
            for ti in 0..t {
                let id = ids[[bi, ti]];
                assert!(id < vocab, "token id {id} out of vocabulary range {vocab}");
                out.slice_mut(ndarray::s![bi, ti, ..]).assign(&tv.row(id));
            }
        }
        self.push(
            out.into_dyn(),
            Op::Embedding {
                table,
                ids: ids.clone(),
            },
        )
    }

    /// Mean of `hidden [B, T, d]` over unmasked positions of `mask [B, T]`.
    ///
    /// Every row must have at least one unmasked position; callers reject
    /// degenerate masks before building the node.
    pub fn masked_mean_pool(&mut self, hidden: Var, mask: &Array2<f64>) -> Var {
        let hv = self.value(hidden);
        assert_eq!(hv.ndim(), 3, "masked_mean_pool expects [B, T, d]");
        let (b, t, d) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
        assert_eq!(mask.dim(), (b, t), "mask shape mismatch");
        let mut out = Array2::<f64>::zeros((b, d));
        for bi in 0..b {
            let denom: f64 = mask.row(bi).sum();
            assert!(denom > 0.0, "masked_mean_pool row {bi} is fully masked");
            for ti in 0..t {
                let w = mask[[bi, ti]];
                if w == 0.0 {
                    continue;
                }
                for di in 0..d {
                    out[[bi, di]] += w * hv[[bi, ti, di]];
                }
            }
            out.row_mut(bi).mapv_inplace(|v| v / denom);
        }
        self.push(
            out.into_dyn(),
            Op::MaskedMeanPool {
                hidden,
                mask: mask.clone(),
            },
        )
    }

    /// Fused softmax cross-entropy: `sum_i w_i * (-log softmax(logits_i)[t_i])`
    /// divided by `sum_i w_i` (`WeightSum`) or reported raw (`Sum`).
    ///
    /// Rows with weight zero contribute nothing. With `WeightSum` the weight
    /// sum must be positive; callers reject all-zero weights up front.
    pub fn weighted_nll(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
        norm: NllNorm,
    ) -> Var {
        let lv = self
            .value(logits)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("weighted_nll logits must be rank 2");
        let (n, v) = (lv.nrows(), lv.ncols());
        assert_eq!(targets.len(), n, "weighted_nll target count mismatch");
        assert_eq!(weights.len(), n, "weighted_nll weight count mismatch");

        let weight_sum: f64 = weights.iter().sum();
        let divisor = match norm {
            NllNorm::WeightSum => {
                assert!(weight_sum > 0.0, "weighted_nll weight sum must be positive");
                weight_sum
            }
            NllNorm::Sum => 1.0,
        };

        let mut probs = Array2::<f64>::zeros((n, v));
        let mut total = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[[i, j]] = e;
                sum += e;
            }
            probs.row_mut(i).mapv_inplace(|p| p / sum);
            let target = targets[i];
            assert!(target < v, "weighted_nll target {target} out of range {v}");
            if weights[i] != 0.0 {
                let log_p = (row[target] - max) - sum.ln();
                total += weights[i] * (-log_p);
            }
        }
        let value = ArrayD::from_elem(IxDyn(&[]), total / divisor);
        self.push(
            value,
            Op::WeightedNll {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                divisor,
                probs,
            },
        )
    }

    /// Backpropagate from `root`, which must hold a single element.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::ones(self.value(root).raw_dim()));

        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Gradients { grads }
    }

    fn backward_node(&self, idx: usize, gy: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let accumulate =
            |grads: &mut [Option<ArrayD<f64>>], v: Var, delta: ArrayD<f64>| match &mut grads[v.0] {
                Some(g) => *g += &delta,
                slot @ None => *slot = Some(delta),
            };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, gy.clone());
                accumulate(grads, *b, gy.clone());
            }
            Op::AddConst(a) => accumulate(grads, *a, gy.clone()),
            Op::Mul(a, b) => {
                accumulate(grads, *a, gy * self.value(*b));
                accumulate(grads, *b, gy * self.value(*a));
            }
            Op::MulConst(a, c) => accumulate(grads, *a, gy * c),
            Op::MulScalar(a, s) => accumulate(grads, *a, gy * *s),
            Op::AddBias(a, b) => {
                accumulate(grads, *a, gy.clone());
                let rows = to_rows(gy);
                accumulate(grads, *b, rows.sum_axis(Axis(0)).into_dyn());
            }
            Op::MatMul(a, b) => {
                let g = gy.view().into_dimensionality::<Ix2>().unwrap();
                let av = self.value(*a).view().into_dimensionality::<Ix2>().unwrap();
                let bv = self.value(*b).view().into_dimensionality::<Ix2>().unwrap();
                accumulate(grads, *a, g.dot(&bv.t()).into_dyn());
                accumulate(grads, *b, av.t().dot(&g).into_dyn());
            }
            Op::BatchMatMul(a, b) => {
                let a3 = to_batches(self.value(*a));
                let b3 = to_batches(self.value(*b));
                let g3 = to_batches(gy);
                let l = a3.shape()[0];
                let mut da = ndarray::Array3::<f64>::zeros(a3.raw_dim());
                let mut db = ndarray::Array3::<f64>::zeros(b3.raw_dim());
                for i in 0..l {
                    let gi = g3.index_axis(Axis(0), i);
                    da.index_axis_mut(Axis(0), i)
                        .assign(&gi.dot(&b3.index_axis(Axis(0), i).t()));
                    db.index_axis_mut(Axis(0), i)
                        .assign(&a3.index_axis(Axis(0), i).t().dot(&gi));
                }
                let ashape = self.value(*a).shape().to_vec();
                let bshape = self.value(*b).shape().to_vec();
                accumulate(
                    grads,
                    *a,
                    ArrayD::from_shape_vec(IxDyn(&ashape), da.into_iter().collect()).unwrap(),
                );
                accumulate(
                    grads,
                    *b,
                    ArrayD::from_shape_vec(IxDyn(&bshape), db.into_iter().collect()).unwrap(),
                );
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let da = gy
                    .view()
                    .permuted_axes(inverse.as_slice())
                    .as_standard_layout()
                    .into_owned();
                accumulate(grads, *a, da);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                let da =
                    ArrayD::from_shape_vec(IxDyn(&shape), gy.iter().copied().collect()).unwrap();
                accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                accumulate(grads, *a, gy * &mask);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                accumulate(grads, *a, gy * &(y * &y.mapv(|v| 1.0 - v)));
            }
            Op::Exp(a) => {
                accumulate(grads, *a, gy * &self.nodes[idx].value);
            }
            Op::SumAll(a) => {
                let g = *gy.iter().next().unwrap();
                accumulate(grads, *a, ArrayD::from_elem(self.value(*a).raw_dim(), g));
            }
            Op::SoftmaxLast(a) => {
                // dx = y * (gy - sum_last(gy * y))
                let y = &self.nodes[idx].value;
                let last = y.ndim() - 1;
                let dots = (gy * y).sum_axis(Axis(last));
                let mut da = gy.clone();
                for (mut lane, dot) in da.lanes_mut(Axis(last)).into_iter().zip(dots.iter()) {
                    lane.mapv_inplace(|g| g - dot);
                }
                accumulate(grads, *a, &da * y);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *self.value(*x).shape().last().unwrap();
                let gv = self
                    .value(*gamma)
                    .view()
                    .into_dimensionality::<Ix1>()
                    .unwrap();
                let gy_rows = to_rows(gy);
                let xhat_rows = to_rows(xhat);
                let r = gy_rows.nrows();

                let mut dx = Array2::<f64>::zeros((r, d));
                let mut dgamma = Array1::<f64>::zeros(d);
                let mut dbeta = Array1::<f64>::zeros(d);
                for i in 0..r {
                    let gy_row = gy_rows.row(i);
                    let xh_row = xhat_rows.row(i);
                    let g: Vec<f64> = (0..d).map(|j| gy_row[j] * gv[j]).collect();
                    let mean_g: f64 = g.iter().sum::<f64>() / d as f64;
                    let mean_gx: f64 =
                        g.iter().zip(xh_row.iter()).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[[i, j]] = inv_std[i] * (g[j] - mean_g - xh_row[j] * mean_gx);
                        dgamma[j] += gy_row[j] * xh_row[j];
                        dbeta[j] += gy_row[j];
                    }
                }
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, from_rows(dx, &shape));
                accumulate(grads, *gamma, dgamma.into_dyn());
                accumulate(grads, *beta, dbeta.into_dyn());
            }
            Op::Embedding { table, ids } => {
                let tshape = self.value(*table).shape().to_vec();
                let d = tshape[1];
                let mut dtable = Array2::<f64>::zeros((tshape[0], d));
                let (b, t) = ids.dim();
                for bi in 0..b {
                    for ti in 0..t {
                        let id = ids[[bi, ti]];
                        for di in 0..d {
                            dtable[[id, di]] += gy[[bi, ti, di]];
                        }
                    }
                }
                accumulate(grads, *table, dtable.into_dyn());
            }
            Op::MaskedMeanPool { hidden, mask } => {
                let hshape = self.value(*hidden).shape().to_vec();
                let (b, t, d) = (hshape[0], hshape[1], hshape[2]);
                let mut dh = ndarray::Array3::<f64>::zeros((b, t, d));
                for bi in 0..b {
                    let denom: f64 = mask.row(bi).sum();
                    for ti in 0..t {
                        let w = mask[[bi, ti]];
                        if w == 0.0 {
                            continue;
                        }
                        for di in 0..d {
                            dh[[bi, ti, di]] = w * gy[[bi, di]] / denom;
                        }
                    }
                }
                accumulate(grads, *hidden, dh.into_dyn());
            }
            Op::WeightedNll {
                logits,
                targets,
                weights,
                divisor,
                probs,
            } => {
                let g = *gy.iter().next().unwrap();
                let (n, v) = probs.dim();
                let mut dl = Array2::<f64>::zeros((n, v));
                for i in 0..n {
                    if weights[i] == 0.0 {
                        continue;
                    }
                    let scale = g * weights[i] / divisor;
                    for j in 0..v {
                        let indicator = if j == targets[i] { 1.0 } else { 0.0 };
                        dl[[i, j]] = scale * (probs[[i, j]] - indicator);
                    }
                }
                accumulate(grads, *logits, dl.into_dyn());
            }
        }
    }
}
