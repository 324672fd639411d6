//! Tape of differentiable operations. Every forward call appends a node;
//! `backward` walks the tape in reverse and leaves one gradient per node.

use matrixmultiply::dgemm;

use crate::error::{NnError, Result};
use crate::params::{BufferId, ParamId, ParamStore};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddTimeBroadcast(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    OneMinus(Var),
    Scale(Var, f64),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    TimeStep {
        x: Var,
        t: usize,
    },
    StackTime(Vec<Var>),
    MeanTime(Var),
    Reshape(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Dot {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub mean_buffer: BufferId,
    pub var_buffer: BufferId,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance.
    pub batch_var: Vec<f64>,
    /// Biased batch variance, the one used for normalization.
    pub batch_var_biased: Vec<f64>,
}

impl BnUpdate {
    /// Replaces the running statistics by the batch statistics, so that
    /// inference reproduces this batch's training-mode normalization.
    pub fn assign(&self, store: &mut ParamStore) {
        store.buffer_mut(self.mean_buffer).copy_from_slice(&self.batch_mean);
        store.buffer_mut(self.var_buffer).copy_from_slice(&self.batch_var_biased);
    }

    /// Exponential moving-average update.
    pub fn apply(&self, store: &mut ParamStore) {
        for (r, b) in store.buffer_mut(self.mean_buffer).iter_mut().zip(&self.batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in store.buffer_mut(self.var_buffer).iter_mut().zip(&self.batch_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// `C[m,n] = A[m,k] B[k,n]` with optional transposes given as strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the caller passes slices holding m*k, k*n and m*n elements laid
    // out with the given strides; `c` is exclusively borrowed.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    training: bool,
    bn_updates: Vec<BnUpdate>,
}

impl Graph {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training,
            bn_updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Structural(format!(
                "constant of shape {shape:?} given {} values",
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf(None)))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf(Some(id)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Structural(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `[m, k] x [k, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NnError::Structural(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (n as isize, 1),
            &mut out,
            false,
        );
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// Adds a bias over the last axis.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = *self.shape(a).last().unwrap_or(&0);
        if self.shape(b) != [n] {
            return Err(NnError::Structural(format!(
                "bias {:?} does not match last axis of {:?}",
                self.shape(b),
                self.shape(a)
            )));
        }
        let bias = self.value(b);
        let out = self
            .value(a)
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddBias(a, b)))
    }

    fn binary(&mut self, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(self.shape(a).to_vec(), out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    /// `a[B,T,C] + g[B,1,C]` broadcast over time.
    pub fn add_time_broadcast(&mut self, a: Var, g: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sg = self.shape(g);
        if sa.len() != 3 || sg != [sa[0], 1, sa[2]] {
            return Err(NnError::Structural(format!("cannot broadcast {sg:?} over {sa:?}")));
        }
        let (bsz, t, c) = (sa[0], sa[1], sa[2]);
        let (av, gv) = (self.value(a), self.value(g));
        let mut out = vec![0.0; av.len()];
        for b in 0..bsz {
            for s in 0..t {
                for ch in 0..c {
                    let i = (b * t + s) * c + ch;
                    out[i] = av[i] + gv[b * c + ch];
                }
            }
        }
        Ok(self.push(sa, out, Op::AddTimeBroadcast(a, g)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|v| f(*v)).collect();
        self.push(self.shape(x).to_vec(), out, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 - v, Op::OneMinus(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| k * v, Op::Scale(x, k))
    }

    /// `x[B, L, C]`, `w[p, C, C_out]`, `b[C_out]`; output length
    /// `floor((L + 2 pad - p) / stride) + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[2] || self.shape(b) != [sw[2]] || stride == 0 {
            return Err(NnError::Structural(format!(
                "conv1d input {sx:?}, kernel {sw:?}, bias {:?}, stride {stride}",
                self.shape(b)
            )));
        }
        let (bsz, l, c) = (sx[0], sx[1], sx[2]);
        let (p, co) = (sw[0], sw[2]);
        if p > l + 2 * pad {
            return Err(NnError::Structural(format!("kernel size {p} exceeds input length {l}")));
        }
        let lo = (l + 2 * pad - p) / stride + 1;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![0.0; bsz * lo * co];
        for bi in 0..bsz {
            for j in 0..lo {
                let y = &mut out[(bi * lo + j) * co..(bi * lo + j + 1) * co];
                y.copy_from_slice(bv);
                for k in 0..p {
                    let pos = (j * stride + k) as isize - pad as isize;
                    if pos < 0 || pos >= l as isize {
                        continue;
                    }
                    let xr = &xv[(bi * l + pos as usize) * c..(bi * l + pos as usize + 1) * c];
                    for (ci, xval) in xr.iter().enumerate() {
                        let wr = &wv[(k * c + ci) * co..(k * c + ci + 1) * co];
                        for (yo, wo) in y.iter_mut().zip(wr) {
                            *yo += wo * xval;
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![bsz, lo, co], out, Op::Conv1d { x, w, b, stride, pad }))
    }

    /// Columns `start..start+len` of a matrix `[m, n]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[1] {
            return Err(NnError::Structural(format!("slice {start}..{} of {s:?}", start + len)));
        }
        let n = s[1];
        let out = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(vec![s[0], len], out, Op::SliceCols { x, start }))
    }

    /// `x[B, T, C]` at time `t` as `[B, C]`.
    pub fn time_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || t >= s[1] {
            return Err(NnError::Structural(format!("time step {t} of {s:?}")));
        }
        let (bsz, tl, c) = (s[0], s[1], s[2]);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(bsz * c);
        for b in 0..bsz {
            out.extend_from_slice(&xv[(b * tl + t) * c..(b * tl + t + 1) * c]);
        }
        Ok(self.push(vec![bsz, c], out, Op::TimeStep { x, t }))
    }

    /// Stacks `[B, C]` steps into `[B, T, C]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        let first = self.shape(*steps.first().ok_or_else(|| NnError::Structural("empty stack".into()))?);
        let (bsz, c) = match first {
            [b, c] => (*b, *c),
            s => return Err(NnError::Structural(format!("stack_time of {s:?}"))),
        };
        if steps.iter().any(|v| self.shape(*v) != [bsz, c]) {
            return Err(NnError::Structural("stack_time with mismatched steps".into()));
        }
        let t = steps.len();
        let mut out = vec![0.0; bsz * t * c];
        for (s, v) in steps.iter().enumerate() {
            let val = self.value(*v);
            for b in 0..bsz {
                out[(b * t + s) * c..(b * t + s + 1) * c].copy_from_slice(&val[b * c..(b + 1) * c]);
            }
        }
        Ok(self.push(vec![bsz, t, c], out, Op::StackTime(steps.to_vec())))
    }

    /// Global average over time: `[B, T, C] -> [B, 1, C]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] == 0 {
            return Err(NnError::Structural(format!("mean_time of {s:?}")));
        }
        let (bsz, t, c) = (s[0], s[1], s[2]);
        let xv = self.value(x);
        let mut out = vec![0.0; bsz * c];
        for b in 0..bsz {
            for st in 0..t {
                for ch in 0..c {
                    out[b * c + ch] += xv[(b * t + st) * c + ch];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= t as f64);
        Ok(self.push(vec![bsz, 1, c], out, Op::MeanTime(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(NnError::Structural(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let data = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x)))
    }

    /// Per-channel normalization over every leading axis. In training mode
    /// batch statistics are used and a running-statistics update is
    /// recorded; otherwise the running buffers are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (BufferId, BufferId),
        store: &ParamStore,
    ) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&0);
        if c == 0 || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(NnError::Structural(format!("batch norm over {:?}", self.shape(x))));
        }
        let xv = self.value(x);
        let rows = xv.len() / c;
        let (mean, var) = if self.training {
            let mut mean = vec![0.0; c];
            for row in xv.chunks(c) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for row in xv.chunks(c) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let unbiased: Vec<f64> = var
                .iter()
                .map(|s| if rows > 1 { s / (rows - 1) as f64 } else { 0.0 })
                .collect();
            var.iter_mut().for_each(|s| *s /= rows as f64);
            self.bn_updates.push(BnUpdate {
                mean_buffer: running.0,
                var_buffer: running.1,
                batch_mean: mean.clone(),
                batch_var: unbiased,
                batch_var_biased: var.clone(),
            });
            (mean, var)
        } else {
            (store.buffer(running.0).to_vec(), store.buffer(running.1).to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xv = self.value(x);
        let mut xhat = vec![0.0; xv.len()];
        for (hr, row) in xhat.chunks_mut(c).zip(xv.chunks(c)) {
            for ch in 0..c {
                hr[ch] = (row[ch] - mean[ch]) * inv_std[ch];
            }
        }
        let (g, bt) = (self.value(gamma), self.value(beta));
        let out = xhat
            .chunks(c)
            .flat_map(|row| (0..c).map(move |ch| g[ch] * row[ch] + bt[ch]))
            .collect();
        let batch_stats = self.training;
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.is_empty() {
            return Err(NnError::Structural(format!(
                "mse between {} predictions and {} targets",
                pv.len(),
                target.len()
            )));
        }
        let loss = pv.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pv.len() as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// `sum_i w_i x_i`; scalar output.
    pub fn dot(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(NnError::Structural("dot weights do not match tensor".into()));
        }
        let s = self.value(x).iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(vec![1], vec![s], Op::Dot { x, weights }))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(NnError::Structural("backward needs a scalar root".into()));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        grads[root.0][0] = 1.0;
        for i in (0..=root.0).rev() {
            if grads[i].iter().all(|g| *g == 0.0) {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let gy = &rest[0];
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            let val = |v: Var| nodes[v.0].data.as_slice();
            match &node.op {
                Op::Leaf(_) => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    // dA = dY B^T, dB = A^T dY
                    gemm(m, n, k, gy, (n as isize, 1), val(*b), (1, n as isize), &mut before[a.0], true);
                    gemm(k, m, n, val(*a), (1, k as isize), gy, (n as isize, 1), &mut before[b.0], true);
                }
                Op::AddBias(a, b) => {
                    let n = nodes[b.0].data.len();
                    before[a.0].iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                    for row in gy.chunks(n) {
                        before[b.0].iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
                Op::Add(a, b) => {
                    before[a.0].iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                    before[b.0].iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                Op::Sub(a, b) => {
                    before[a.0].iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                    before[b.0].iter_mut().zip(gy).for_each(|(g, d)| *g -= d);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    for j in 0..gy.len() {
                        before[a.0][j] += gy[j] * bv[j];
                    }
                    for j in 0..gy.len() {
                        before[b.0][j] += gy[j] * av[j];
                    }
                }
                Op::AddTimeBroadcast(a, g) => {
                    let s = &node.shape;
                    let (bsz, t, c) = (s[0], s[1], s[2]);
                    before[a.0].iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                    for b in 0..bsz {
                        for st in 0..t {
                            for ch in 0..c {
                                before[g.0][b * c + ch] += gy[(b * t + st) * c + ch];
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    for (j, y) in node.data.iter().enumerate() {
                        before[x.0][j] += gy[j] * y * (1.0 - y);
                    }
                }
                Op::Tanh(x) => {
                    for (j, y) in node.data.iter().enumerate() {
                        before[x.0][j] += gy[j] * (1.0 - y * y);
                    }
                }
                Op::Relu(x) => {
                    for (j, xv) in val(*x).iter().enumerate() {
                        if *xv > 0.0 {
                            before[x.0][j] += gy[j];
                        }
                    }
                }
                Op::OneMinus(x) => {
                    before[x.0].iter_mut().zip(gy).for_each(|(g, d)| *g -= d);
                }
                Op::Scale(x, k) => {
                    before[x.0].iter_mut().zip(gy).for_each(|(g, d)| *g += k * d);
                }
                Op::Conv1d { x, w, b, stride, pad } => {
                    let sx = &nodes[x.0].shape;
                    let (bsz, l, c) = (sx[0], sx[1], sx[2]);
                    let (p, co) = (nodes[w.0].shape[0], nodes[w.0].shape[2]);
                    let lo = node.shape[1];
                    let (xv, wv) = (val(*x), val(*w));
                    for bi in 0..bsz {
                        for j in 0..lo {
                            let dy = &gy[(bi * lo + j) * co..(bi * lo + j + 1) * co];
                            before[b.0].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                            for k in 0..p {
                                let pos = (j * stride + k) as isize - *pad as isize;
                                if pos < 0 || pos >= l as isize {
                                    continue;
                                }
                                let base = (bi * l + pos as usize) * c;
                                for ci in 0..c {
                                    let wr = &wv[(k * c + ci) * co..(k * c + ci + 1) * co];
                                    let mut acc = 0.0;
                                    for o in 0..co {
                                        acc += wr[o] * dy[o];
                                    }
                                    before[x.0][base + ci] += acc;
                                    let xval = xv[base + ci];
                                    let gw = &mut before[w.0][(k * c + ci) * co..(k * c + ci + 1) * co];
                                    for o in 0..co {
                                        gw[o] += xval * dy[o];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let n = nodes[x.0].shape[1];
                    let len = node.shape[1];
                    for (r, row) in gy.chunks(len).enumerate() {
                        let dst = &mut before[x.0][r * n + start..r * n + start + len];
                        dst.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
                Op::TimeStep { x, t } => {
                    let s = &nodes[x.0].shape;
                    let (bsz, tl, c) = (s[0], s[1], s[2]);
                    for b in 0..bsz {
                        let dst = &mut before[x.0][(b * tl + t) * c..(b * tl + t + 1) * c];
                        dst.iter_mut().zip(&gy[b * c..(b + 1) * c]).for_each(|(g, d)| *g += d);
                    }
                }
                Op::StackTime(steps) => {
                    let (bsz, t, c) = (node.shape[0], node.shape[1], node.shape[2]);
                    for (s, v) in steps.iter().enumerate() {
                        for b in 0..bsz {
                            let src = &gy[(b * t + s) * c..(b * t + s + 1) * c];
                            let dst = &mut before[v.0][b * c..(b + 1) * c];
                            dst.iter_mut().zip(src).for_each(|(g, d)| *g += d);
                        }
                    }
                }
                Op::MeanTime(x) => {
                    let s = &nodes[x.0].shape;
                    let (bsz, t, c) = (s[0], s[1], s[2]);
                    let inv = 1.0 / t as f64;
                    for b in 0..bsz {
                        for st in 0..t {
                            for ch in 0..c {
                                before[x.0][(b * t + st) * c + ch] += gy[b * c + ch] * inv;
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    before[x.0].iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let c = inv_std.len();
                    let rows = xhat.len() / c;
                    let gv = val(*gamma);
                    let mut sum_dy = vec![0.0; c];
                    let mut sum_dy_xhat = vec![0.0; c];
                    for (dy, xh) in gy.chunks(c).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            sum_dy[ch] += dy[ch];
                            sum_dy_xhat[ch] += dy[ch] * xh[ch];
                        }
                    }
                    before[gamma.0].iter_mut().zip(&sum_dy_xhat).for_each(|(g, d)| *g += d);
                    before[beta.0].iter_mut().zip(&sum_dy).for_each(|(g, d)| *g += d);
                    let n = rows as f64;
                    for (r, (dy, xh)) in gy.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        for ch in 0..c {
                            let dx = if *batch_stats {
                                gv[ch] * inv_std[ch] * (dy[ch] - sum_dy[ch] / n - xh[ch] * sum_dy_xhat[ch] / n)
                            } else {
                                gv[ch] * inv_std[ch] * dy[ch]
                            };
                            before[x.0][r * c + ch] += dx;
                        }
                    }
                }
                Op::Mse { pred, target } => {
                    let pv = val(*pred);
                    let k = 2.0 * gy[0] / pv.len() as f64;
                    for (j, (p, t)) in pv.iter().zip(target).enumerate() {
                        before[pred.0][j] += k * (p - t);
                    }
                }
                Op::Dot { x, weights } => {
                    before[x.0].iter_mut().zip(weights).for_each(|(g, w)| *g += gy[0] * w);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients of every parameter leaf into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let Op::Leaf(Some(id)) = node.op {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }
}
