//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends one node holding its output value and whatever it
//! needs for the reverse sweep. Nodes are only ever appended, so the node
//! order is a topological order and `backward` walks it in reverse.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Add {
        a: usize,
        b: usize,
        map: Broadcast,
    },
    Mul {
        a: usize,
        b: usize,
        map: Broadcast,
    },
    Scale {
        a: usize,
        factor: T,
    },
    Reshape {
        a: usize,
    },
    Permute {
        a: usize,
        axes: Vec<usize>,
    },
    Softmax {
        a: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        a: usize,
    },
    Tanh {
        a: usize,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    Dropout {
        a: usize,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
}

/// How the right operand of a broadcasting binary op lines up with the left.
enum Broadcast {
    Same,
    /// `b` repeats every `period` elements of `a`.
    Suffix(usize),
    /// Explicit `b` index for each element of `a`.
    Map(Vec<usize>),
}

impl Broadcast {
    fn build(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Broadcast::Same);
        }
        let mismatch = || TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if b.len() > a.len() {
            return Err(mismatch());
        }
        let offset = a.len() - b.len();
        for (i, &bd) in b.iter().enumerate() {
            if bd != 1 && bd != a[offset + i] {
                return Err(mismatch());
            }
        }
        // Drop leading ones of b; if the rest equals the trailing dims of a
        // the mapping is periodic.
        let trimmed: Vec<usize> = b.iter().copied().skip_while(|&d| d == 1).collect();
        if trimmed.as_slice() == &a[a.len() - trimmed.len()..] {
            let period = trimmed.iter().product::<usize>().max(1);
            return Ok(Broadcast::Suffix(period));
        }
        let mut b_strides = vec![0usize; a.len()];
        let mut stride = 1;
        for i in (0..b.len()).rev() {
            if b[i] != 1 {
                b_strides[offset + i] = stride;
            }
            stride *= b[i];
        }
        let numel: usize = a.iter().product();
        let mut map = Vec::with_capacity(numel);
        let mut idx = vec![0usize; a.len()];
        for _ in 0..numel {
            map.push(idx.iter().zip(&b_strides).map(|(i, s)| i * s).sum());
            for d in (0..a.len()).rev() {
                idx[d] += 1;
                if idx[d] < a[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Broadcast::Map(map))
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Suffix(p) => i % p,
            Broadcast::Map(m) => m[i],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of primitive ops for one forward pass.
pub struct Tape<T> {
    id: u64,
    mode: Mode,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(|g| g.take())
    }
}

/// `out[m,n] = op(a)[m,k] * op(b)[k,n] (+ out when accumulate)`, where
/// `a_cols`/`b_cols` are the stored column counts.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_cols: usize,
    ta: bool,
    b: &[T],
    b_cols: usize,
    tb: bool,
    out: &mut [T],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let (rsa, csa) = if ta { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    // SAFETY: slice lengths were checked above and `out` is a distinct
    // mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_into<T: Float>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) {
    match slot {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += *g;
            }
        }
        None => *slot = Some(grad),
    }
}

fn gelu_cdf<T: Float>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_pdf<T: Float>(x: T) -> T {
    (-(x * x) * T::from_f64(0.5)).exp() * T::from_f64(0.398_942_280_401_432_7)
}

impl<T: Float> Tape<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            mode,
            nodes: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVariable);
        }
        Ok(v.index)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input (a parameter or a value under a gradient check).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Matrix product of the last two axes, optionally transposing either
    /// operand. Rank-3 inputs are batched over their (equal) leading axis.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ash, bsh) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: ash.to_vec(),
            rhs: bsh.to_vec(),
        };
        if ash.len() != bsh.len() || !(ash.len() == 2 || ash.len() == 3) {
            return Err(mismatch());
        }
        let batch = if ash.len() == 3 {
            if ash[0] != bsh[0] {
                return Err(mismatch());
            }
            ash[0]
        } else {
            1
        };
        let (ar, ac) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (br, bc) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (self.nodes[ai].value.data(), self.nodes[bi].value.data());
            for bt in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &ad[bt * m * k..(bt + 1) * m * k],
                    ac,
                    ta,
                    &bd[bt * k * n..(bt + 1) * k * n],
                    bc,
                    tb,
                    &mut out[bt * m * n..(bt + 1) * m * n],
                    false,
                );
            }
        }
        let shape = if ash.len() == 3 { vec![batch, m, n] } else { vec![m, n] };
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a: ai, b: bi, ta, tb }, needs))
    }

    /// `a + b` where `b` broadcasts onto `a` (right-aligned, size-1 axes stretch).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let map = Broadcast::build("add", self.nodes[ai].value.shape(), self.nodes[bi].value.shape())?;
        let av = &self.nodes[ai].value;
        let bd = self.nodes[bi].value.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[map.index(i)])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(value, Op::Add { a: ai, b: bi, map }, needs))
    }

    /// Elementwise `a * b` with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let map = Broadcast::build("mul", self.nodes[ai].value.shape(), self.nodes[bi].value.shape())?;
        let av = &self.nodes[ai].value;
        let bd = self.nodes[bi].value.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bd[map.index(i)])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(value, Op::Mul { a: ai, b: bi, map }, needs))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = &self.nodes[ai].value;
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| x * factor).collect())?;
        let needs = self.needs(ai);
        Ok(self.push(value, Op::Scale { a: ai, factor }, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.clone().reshaped(shape)?;
        let needs = self.needs(ai);
        Ok(self.push(value, Op::Reshape { a: ai }, needs))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ai = self.idx(a)?;
        let shape = self.nodes[ai].value.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes
                .iter()
                .all(|&x| x < shape.len() && !std::mem::replace(&mut seen[x], true));
        if !valid {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                msg: format!("axes {:?} are not a permutation for shape {:?}", axes, shape),
            });
        }
        let data = permute_data(self.nodes[ai].value.data(), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
        let needs = self.needs(ai);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Permute {
                a: ai,
                axes: axes.to_vec(),
            },
            needs,
        ))
    }

    /// Softmax over the last axis. Entries equal to `-inf` get probability 0.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = &self.nodes[ai].value;
        let width = last_dim("softmax", av)?;
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(ai);
        Ok(self.push(value, Op::Softmax { a: ai }, needs))
    }

    /// Layer normalization over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let xv = &self.nodes[xi].value;
        let width = last_dim("layer_norm", xv)?;
        for p in [gi, bi] {
            if self.nodes[p].value.shape() != [width] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.nodes[p].value.shape().to_vec(),
                });
            }
        }
        let g = self.nodes[gi].value.data();
        let b = self.nodes[bi].value.data();
        let n = T::from_f64(width as f64);
        let eps = T::from_f64(eps);
        let rows = xv.numel() / width;
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for (r, row) in xv.data().chunks(width).enumerate() {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..width {
                let h = (row[j] - mean) * rs;
                xhat[r * width + j] = h;
                out[r * width + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let needs = self.needs(xi) || self.needs(gi) || self.needs(bi);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = &self.nodes[ai].value;
        let value = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|&x| x * gelu_cdf(x)).collect(),
        )?;
        let needs = self.needs(ai);
        Ok(self.push(value, Op::Gelu { a: ai }, needs))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = &self.nodes[ai].value;
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| x.tanh()).collect())?;
        let needs = self.needs(ai);
        Ok(self.push(value, Op::Tanh { a: ai }, needs))
    }

    /// Rows of a `[rows, width]` table selected by `ids`; used both for
    /// embedding lookup and for picking positions out of hidden states.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ti = self.idx(table)?;
        let tv = &self.nodes[ti].value;
        if tv.rank() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                msg: format!("table must be rank 2, got {:?}", tv.shape()),
            });
        }
        let (rows, width) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    len: rows,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let value = Tensor::new(vec![ids.len(), width], data)?;
        let needs = self.needs(ti);
        Ok(self.push(
            value,
            Op::GatherRows {
                table: ti,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Inverted dropout. The mask is a pure function of `key`; in eval mode
    /// (or with `rate == 0`) this returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, rate: f64, key: u64) -> Result<Var> {
        let ai = self.idx(a)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                msg: format!("rate {} outside [0, 1)", rate),
            });
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let av = &self.nodes[ai].value;
        let mask: Vec<T> = (0..av.numel())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let value = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
        )?;
        let needs = self.needs(ai);
        Ok(self.push(value, Op::Dropout { a: ai, mask }, needs))
    }

    /// Mean negative log-likelihood over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let li = self.idx(logits)?;
        let lv = &self.nodes[li].value;
        if lv.rank() != 2 || lv.shape()[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let classes = lv.shape()[1];
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(TensorError::EmptyAverage);
        }
        let mut probs = vec![T::zero(); lv.numel()];
        let mut total = T::zero();
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= classes {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: classes,
                });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            total += log_z - row[t];
            for (j, &v) in row.iter().enumerate() {
                probs[r * classes + j] = (v - log_z).exp();
            }
        }
        let loss = total / T::from_f64(count as f64);
        let needs = self.needs(li);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: li,
                targets: targets.to_vec(),
                probs,
                count,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s = self.nodes[ai].value.sum();
        let needs = self.needs(ai);
        Ok(self.push(Tensor::scalar(s), Op::Sum { a: ai }, needs))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = &self.nodes[ai].value;
        if av.numel() == 0 {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let s = av.sum() / T::from_f64(av.numel() as f64);
        let needs = self.needs(ai);
        Ok(self.push(Tensor::scalar(s), Op::Mean { a: ai }, needs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[li].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[li] = Some(Tensor::full(self.nodes[li].value.shape(), T::one()));

        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                let ash = av.shape();
                let bsh = bv.shape();
                let r = ash.len();
                let batch = if r == 3 { ash[0] } else { 1 };
                let (ar, ac) = (ash[r - 2], ash[r - 1]);
                let (br, bc) = (bsh[r - 2], bsh[r - 1]);
                let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                let n = if *tb { br } else { bc };
                if self.needs(*a) {
                    let mut da = vec![T::zero(); av.numel()];
                    for bt in 0..batch {
                        let gs = &gd[bt * m * n..(bt + 1) * m * n];
                        let bs = &bv.data()[bt * k * n..(bt + 1) * k * n];
                        let out = &mut da[bt * m * k..(bt + 1) * m * k];
                        if !*ta {
                            // dA = dC * op(B)^T
                            gemm(m, n, k, gs, n, false, bs, bc, !*tb, out, false);
                        } else {
                            // dA = op(B) * dC^T
                            gemm(k, n, m, bs, bc, *tb, gs, n, true, out, false);
                        }
                    }
                    add_into(&mut grads[*a], Tensor::new(ash.to_vec(), da).unwrap());
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); bv.numel()];
                    for bt in 0..batch {
                        let gs = &gd[bt * m * n..(bt + 1) * m * n];
                        let as_ = &av.data()[bt * m * k..(bt + 1) * m * k];
                        let out = &mut db[bt * k * n..(bt + 1) * k * n];
                        if !*tb {
                            // dB = op(A)^T * dC
                            gemm(k, m, n, as_, ac, !*ta, gs, n, false, out, false);
                        } else {
                            // dB = dC^T * op(A)
                            gemm(n, m, k, gs, n, true, as_, ac, *ta, out, false);
                        }
                    }
                    add_into(&mut grads[*b], Tensor::new(bsh.to_vec(), db).unwrap());
                }
            }
            Op::Add { a, b, map } => {
                if self.needs(*a) {
                    add_into(&mut grads[*a], g.clone());
                }
                if self.needs(*b) {
                    let bv = val(*b);
                    let mut db = vec![T::zero(); bv.numel()];
                    for (i, &gv) in gd.iter().enumerate() {
                        db[map.index(i)] += gv;
                    }
                    add_into(&mut grads[*b], Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
            }
            Op::Mul { a, b, map } => {
                let (av, bv) = (val(*a), val(*b));
                if self.needs(*a) {
                    let da = gd
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * bv.data()[map.index(i)])
                        .collect();
                    add_into(&mut grads[*a], Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); bv.numel()];
                    for (i, &gv) in gd.iter().enumerate() {
                        db[map.index(i)] += gv * av.data()[i];
                    }
                    add_into(&mut grads[*b], Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
            }
            Op::Scale { a, factor } => {
                if self.needs(*a) {
                    let da = gd.iter().map(|&v| v * *factor).collect();
                    add_into(&mut grads[*a], Tensor::new(g.shape().to_vec(), da).unwrap());
                }
            }
            Op::Reshape { a } => {
                if self.needs(*a) {
                    let da = g.clone().reshaped(val(*a).shape()).unwrap();
                    add_into(&mut grads[*a], da);
                }
            }
            Op::Permute { a, axes } => {
                if self.needs(*a) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &x) in axes.iter().enumerate() {
                        inverse[x] = i;
                    }
                    let da = permute_data(gd, g.shape(), &inverse);
                    add_into(&mut grads[*a], Tensor::new(val(*a).shape().to_vec(), da).unwrap());
                }
            }
            Op::Softmax { a } => {
                if self.needs(*a) {
                    let p = &node.value;
                    let width = *p.shape().last().unwrap();
                    let mut da = vec![T::zero(); p.numel()];
                    for ((prow, grow), drow) in p.data().chunks(width).zip(gd.chunks(width)).zip(da.chunks_mut(width)) {
                        let dot: T = prow.iter().zip(grow).map(|(&pv, &gv)| pv * gv).sum();
                        for j in 0..width {
                            drow[j] = prow[j] * (grow[j] - dot);
                        }
                    }
                    add_into(&mut grads[*a], Tensor::new(p.shape().to_vec(), da).unwrap());
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = val(*gamma).data();
                let width = gv.len();
                let n = T::from_f64(width as f64);
                if self.needs(*gamma) {
                    let mut dg = vec![T::zero(); width];
                    for (grow, hrow) in gd.chunks(width).zip(xhat.chunks(width)) {
                        for j in 0..width {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                    add_into(&mut grads[*gamma], Tensor::new(vec![width], dg).unwrap());
                }
                if self.needs(*beta) {
                    let mut db = vec![T::zero(); width];
                    for grow in gd.chunks(width) {
                        for j in 0..width {
                            db[j] += grow[j];
                        }
                    }
                    add_into(&mut grads[*beta], Tensor::new(vec![width], db).unwrap());
                }
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); gd.len()];
                    for (r, ((grow, hrow), drow)) in gd
                        .chunks(width)
                        .zip(xhat.chunks(width))
                        .zip(dx.chunks_mut(width))
                        .enumerate()
                    {
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..width {
                            let d = grow[j] * gv[j];
                            sum_d += d;
                            sum_dh += d * hrow[j];
                        }
                        let scale = rstd[r] / n;
                        for j in 0..width {
                            let d = grow[j] * gv[j];
                            drow[j] = scale * (n * d - sum_d - hrow[j] * sum_dh);
                        }
                    }
                    add_into(&mut grads[*x], Tensor::new(g.shape().to_vec(), dx).unwrap());
                }
            }
            Op::Gelu { a } => {
                if self.needs(*a) {
                    let av = val(*a);
                    let da = av
                        .data()
                        .iter()
                        .zip(gd)
                        .map(|(&x, &gv)| gv * (gelu_cdf(x) + x * gelu_pdf(x)))
                        .collect();
                    add_into(&mut grads[*a], Tensor::new(av.shape().to_vec(), da).unwrap());
                }
            }
            Op::Tanh { a } => {
                if self.needs(*a) {
                    let y = &node.value;
                    let da = y
                        .data()
                        .iter()
                        .zip(gd)
                        .map(|(&yv, &gv)| gv * (T::one() - yv * yv))
                        .collect();
                    add_into(&mut grads[*a], Tensor::new(y.shape().to_vec(), da).unwrap());
                }
            }
            Op::GatherRows { table, ids } => {
                if self.needs(*table) {
                    let tv = val(*table);
                    let width = tv.shape()[1];
                    let mut dt = vec![T::zero(); tv.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gd[r * width..(r + 1) * width];
                        let dst = &mut dt[id * width..(id + 1) * width];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                    add_into(&mut grads[*table], Tensor::new(tv.shape().to_vec(), dt).unwrap());
                }
            }
            Op::Dropout { a, mask } => {
                if self.needs(*a) {
                    let da = gd.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    add_into(&mut grads[*a], Tensor::new(g.shape().to_vec(), da).unwrap());
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if self.needs(*logits) {
                    let lv = val(*logits);
                    let classes = lv.shape()[1];
                    let scale = g.item() / T::from_f64(*count as f64);
                    let mut dl = vec![T::zero(); lv.numel()];
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        for j in 0..classes {
                            dl[r * classes + j] = probs[r * classes + j] * scale;
                        }
                        dl[r * classes + t] -= scale;
                    }
                    add_into(&mut grads[*logits], Tensor::new(lv.shape().to_vec(), dl).unwrap());
                }
            }
            Op::Sum { a } => {
                if self.needs(*a) {
                    let av = val(*a);
                    add_into(&mut grads[*a], Tensor::full(av.shape(), g.item()));
                }
            }
            Op::Mean { a } => {
                if self.needs(*a) {
                    let av = val(*a);
                    let v = g.item() / T::from_f64(av.numel() as f64);
                    add_into(&mut grads[*a], Tensor::full(av.shape(), v));
                }
            }
        }
    }
}

fn last_dim<T: Float>(op: &'static str, t: &Tensor<T>) -> Result<usize> {
    match t.shape().last() {
        Some(&w) if w > 0 => Ok(w),
        _ => Err(TensorError::InvalidArgument {
            op,
            msg: format!("needs a non-empty last axis, got shape {:?}", t.shape()),
        }),
    }
}

fn permute_data<T: Float>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
    let strides: Vec<usize> = axes.iter().map(|&x| in_strides[x]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
