use rand::Rng;

use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    GatherRows { input: Var, index: Vec<usize> },
    Reshape(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    MaskedMean { input: Var, mask: Vec<bool>, group: usize },
    Dropout { input: Var, keep: Vec<f64> },
    Sum(Var),
    Bce { y: Var, targets: Vec<f64>, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order; `backward` replays them in
/// reverse, visiting each node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

/// `a[m,k] · b[k,n]` with optional transposes folded into the indexing.
fn matmul_raw(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (ar, ac) = a.dims2().expect("rank checked");
    let (br, bc) = b.dims2().expect("rank checked");
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if ta { a.data[p * ac + i] } else { a.data[i * ac + p] };
            if av == 0.0 {
                continue;
            }
            if tb {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o += av * b.data[j * bc + p];
                }
            } else {
                let brow = &b.data[p * bc..(p + 1) * bc];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
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

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, requires_grad: bool) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        self.nodes[v.0].value.dims2().map_err(|_| TensorError::Rank {
            op,
            rank: self.nodes[v.0].value.shape.len(),
        })
    }

    /// A tracked input whose gradient is kept after `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (_, ak) = self.dims("matmul", a)?;
        let (bk, _) = self.dims("matmul", b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ak != bk {
            return Err(mismatch("matmul", av, bv));
        }
        let out = matmul_raw(av, false, bv, false);
        let rg = self.rg(&[a, b]);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims("transpose", a)?;
        let av = &self.nodes[a.0].value;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = av.data[i * c + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push("transpose", Tensor { shape: vec![c, r], data }, Op::Transpose(a), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape != bv.shape {
            return Err(mismatch(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push("add", out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push("sub", out, Op::Sub(a, b), rg)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    /// `x[m,n] + b[1,n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims("add_row", x)?;
        let (br, bc) = self.dims("add_row", b)?;
        if br != 1 || bc != n {
            return Err(mismatch("add_row", &self.nodes[x.0].value, &self.nodes[b.0].value));
        }
        let mut out = self.nodes[x.0].value.clone();
        out.shape = vec![m, n];
        let bias = &self.nodes[b.0].value.data;
        for row in out.data.chunks_mut(n.max(1)) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, b]);
        self.push("add_row", out, Op::AddRow(x, b), rg)
    }

    /// `x[m,n] * c[m,1]` broadcast over columns.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims("mul_col", x)?;
        let (cr, cc) = self.dims("mul_col", c)?;
        if cr != m || cc != 1 {
            return Err(mismatch("mul_col", &self.nodes[x.0].value, &self.nodes[c.0].value));
        }
        let mut out = self.nodes[x.0].value.clone();
        out.shape = vec![m, n];
        let col = &self.nodes[c.0].value.data;
        for (row, &cv) in out.data.chunks_mut(n.max(1)).zip(col) {
            for o in row {
                *o *= cv;
            }
        }
        let rg = self.rg(&[x, c]);
        self.push("mul_col", out, Op::MulCol(x, c), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        let out = map(&self.nodes[x.0].value, |v| v * s);
        let rg = self.rg(&[x]);
        self.push("scale", out, Op::Scale(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        let out = map(&self.nodes[x.0].value, |v| v + s);
        let rg = self.rg(&[x]);
        self.push("add_scalar", out, Op::AddScalar(x), rg)
    }

    /// Joins 2-D values along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        if axis > 1 {
            return Err(TensorError::Rank { op: "concat", rank: axis + 1 });
        }
        let first = *inputs.first().ok_or(TensorError::ShapeMismatch {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let (r0, c0) = self.dims("concat", first)?;
        let mut total = 0;
        for &v in inputs {
            let (r, c) = self.dims("concat", v)?;
            let ok = if axis == 0 { c == c0 } else { r == r0 };
            if !ok {
                return Err(mismatch("concat", &self.nodes[first.0].value, &self.nodes[v.0].value));
            }
            total += if axis == 0 { r } else { c };
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(total * c0);
            for &v in inputs {
                data.extend_from_slice(&self.nodes[v.0].value.data);
            }
            Tensor { shape: vec![total, c0], data }
        } else {
            let mut data = Vec::with_capacity(r0 * total);
            for i in 0..r0 {
                for &v in inputs {
                    let t = &self.nodes[v.0].value;
                    data.extend_from_slice(t.row_slice(i));
                }
            }
            Tensor { shape: vec![r0, total], data }
        };
        let rg = self.rg(inputs);
        self.push("concat", out, Op::Concat { inputs: inputs.to_vec(), axis }, rg)
    }

    /// `start..end` along `axis` of a 2-D value.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let (r, c) = self.dims("slice", x)?;
        let bound = if axis == 0 { r } else { c };
        if axis > 1 || start > end || end > bound {
            return Err(TensorError::Index { op: "slice", index: end, bound });
        }
        let t = &self.nodes[x.0].value;
        let out = if axis == 0 {
            Tensor {
                shape: vec![end - start, c],
                data: t.data[start * c..end * c].to_vec(),
            }
        } else {
            let w = end - start;
            let mut data = Vec::with_capacity(r * w);
            for i in 0..r {
                data.extend_from_slice(&t.row_slice(i)[start..end]);
            }
            Tensor { shape: vec![r, w], data }
        };
        let rg = self.rg(&[x]);
        self.push("slice", out, Op::Slice { input: x, axis, start }, rg)
    }

    /// Same data viewed as `[rows, cols]` (row-major order is kept).
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        let t = &self.nodes[x.0].value;
        if rows * cols != t.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape.clone(),
                rhs: vec![rows, cols],
            });
        }
        let out = Tensor { shape: vec![rows, cols], data: t.data.clone() };
        let rg = self.rg(&[x]);
        self.push("reshape", out, Op::Reshape(x), rg)
    }

    /// Row lookup: output row `i` is `x[index[i]]`. Embedding tables use this.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.dims("gather_rows", x)?;
        let t = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(TensorError::Index { op: "gather_rows", index: i, bound: r });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor { shape: vec![index.len(), c], data };
        let rg = self.rg(&[x]);
        self.push("gather_rows", out, Op::GatherRows { input: x, index: index.to_vec() }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = map(&self.nodes[x.0].value, sigmoid);
        let rg = self.rg(&[x]);
        self.push("sigmoid", out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = map(&self.nodes[x.0].value, f64::tanh);
        let rg = self.rg(&[x]);
        self.push("tanh", out, Op::Tanh(x), rg)
    }

    /// Softmax along axis 1 (within each row). Masked-out entries (mask
    /// `false`) get weight exactly 0; a fully masked row is all zeros.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let (r, c) = self.dims("softmax", x)?;
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(TensorError::MaskLength { op: "softmax", expected: r * c, found: m.len() });
            }
        }
        let t = &self.nodes[x.0].value;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let on = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let row = t.row_slice(i);
            let max = (0..c).filter(|&j| on(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in (0..c).filter(|&j| on(j)) {
                let e = (row[j] - max).exp();
                data[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                data[i * c + j] /= z;
            }
        }
        let out = Tensor { shape: vec![r, c], data };
        let rg = self.rg(&[x]);
        self.push("softmax", out, Op::Softmax(x), rg)
    }

    /// Mean over the rows selected by `mask` (true = included). With all
    /// rows masked out the result is the zero row.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let (r, _) = self.dims("masked_mean", x)?;
        self.masked_mean_groups(x, mask, r.max(1))
    }

    /// Like [`masked_mean`](Self::masked_mean) applied independently to
    /// consecutive blocks of `group` rows: `[g*group, n] -> [g, n]`.
    pub fn masked_mean_groups(&mut self, x: Var, mask: &[bool], group: usize) -> Result<Var, TensorError> {
        let (r, c) = self.dims("masked_mean", x)?;
        if mask.len() != r {
            return Err(TensorError::MaskLength { op: "masked_mean", expected: r, found: mask.len() });
        }
        if group == 0 || r % group != 0 {
            return Err(TensorError::Index { op: "masked_mean", index: group, bound: r });
        }
        let g = r / group;
        let t = &self.nodes[x.0].value;
        let mut data = vec![0.0; g * c];
        for gi in 0..g {
            let rows = gi * group..(gi + 1) * group;
            let count = mask[rows.clone()].iter().filter(|&&m| m).count();
            if count == 0 {
                continue;
            }
            let out = &mut data[gi * c..(gi + 1) * c];
            for ri in rows.filter(|&ri| mask[ri]) {
                for (o, v) in out.iter_mut().zip(t.row_slice(ri)) {
                    *o += v;
                }
            }
            let inv = 1.0 / count as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let out = Tensor { shape: vec![g, c], data };
        let rg = self.rg(&[x]);
        self.push("masked_mean", out, Op::MaskedMean { input: x, mask: mask.to_vec(), group }, rg)
    }

    /// Inverted dropout: kept activations are scaled by `1/(1-p)`. Returns
    /// `x` itself when `train` is false or `p` is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::DropoutProb(p));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let t = &self.nodes[x.0].value;
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<f64> = (0..t.len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale }).collect();
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().zip(&keep).map(|(v, k)| v * k).collect(),
        };
        let rg = self.rg(&[x]);
        self.push("dropout", out, Op::Dropout { input: x, keep }, rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.nodes[x.0].value.data.iter().sum();
        let rg = self.rg(&[x]);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Binary cross entropy of probabilities `y[b,k]` against 0/1 `targets`,
    /// summed over labels and averaged over rows. `y` is clamped to
    /// `[eps, 1-eps]`; the clamp passes no gradient where it is active.
    pub fn bce(&mut self, y: Var, targets: &[f64], eps: f64) -> Result<Var, TensorError> {
        let (b, _) = self.dims("bce", y)?;
        let yv = &self.nodes[y.0].value;
        if targets.len() != yv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                lhs: yv.shape.clone(),
                rhs: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (&p, &t) in yv.data.iter().zip(targets) {
            let p = p.clamp(eps, 1.0 - eps);
            total += -t * p.ln() - (1.0 - t) * (1.0 - p).ln();
        }
        let rg = self.rg(&[y]);
        self.push(
            "bce",
            Tensor::scalar(total / b as f64),
            Op::Bce { y, targets: targets.to_vec(), eps },
            rg,
        )
    }

    fn acc(&mut self, v: Var, contrib: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Reverse pass from a scalar `loss`. A tape supports one backward.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::StaleTape);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape.clone()));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::full(&lv.shape.clone(), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop(i, &op, &g);
            self.nodes[i].op = op;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop(&mut self, i: usize, op: &Op, g: &Tensor) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = matmul_raw(g, false, &self.nodes[b.0].value, true);
                let db = matmul_raw(&self.nodes[a.0].value, true, g, false);
                self.acc(*a, da);
                self.acc(*b, db);
            }
            Op::Transpose(a) => {
                let (r, c) = g.dims2().expect("2-D");
                let mut data = vec![0.0; r * c];
                for x in 0..r {
                    for y in 0..c {
                        data[y * r + x] = g.data[x * c + y];
                    }
                }
                self.acc(*a, Tensor { shape: vec![c, r], data });
            }
            Op::Add(a, b) => {
                self.acc(*a, g.clone());
                self.acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(*a, g.clone());
                self.acc(*b, map(g, |v| -v));
            }
            Op::Mul(a, b) => {
                let da = zip(g, &self.nodes[b.0].value, |x, y| x * y);
                let db = zip(g, &self.nodes[a.0].value, |x, y| x * y);
                self.acc(*a, da);
                self.acc(*b, db);
            }
            Op::AddRow(x, b) => {
                let shape = self.nodes[x.0].value.shape.clone();
                let n = self.nodes[b.0].value.len();
                let mut db = vec![0.0; n];
                for row in g.data.chunks(n.max(1)) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                let bshape = self.nodes[b.0].value.shape.clone();
                self.acc(*x, Tensor { shape, data: g.data.clone() });
                self.acc(*b, Tensor { shape: bshape, data: db });
            }
            Op::MulCol(x, c) => {
                let xv = &self.nodes[x.0].value;
                let cv = &self.nodes[c.0].value;
                let n = xv.cols().max(1);
                let mut dx = g.data.clone();
                let mut dc = vec![0.0; cv.len()];
                for (ri, (drow, grow)) in dx.chunks_mut(n).zip(g.data.chunks(n)).enumerate() {
                    let cval = cv.data[ri];
                    let xrow = &xv.data[ri * n..(ri + 1) * n];
                    dc[ri] = grow.iter().zip(xrow).map(|(a, b)| a * b).sum();
                    drow.iter_mut().for_each(|d| *d *= cval);
                }
                let (xs, cs) = (xv.shape.clone(), cv.shape.clone());
                self.acc(*x, Tensor { shape: xs, data: dx });
                self.acc(*c, Tensor { shape: cs, data: dc });
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.acc(*x, map(g, |v| v * s));
            }
            Op::AddScalar(x) => self.acc(*x, g.clone()),
            Op::Concat { inputs, axis } => {
                let (r, c) = g.dims2().expect("2-D");
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.nodes[v.0].value.shape.clone();
                    let (vr, vc) = self.nodes[v.0].value.dims2().expect("2-D");
                    let data = if *axis == 0 {
                        g.data[offset * c..(offset + vr) * c].to_vec()
                    } else {
                        let mut d = Vec::with_capacity(vr * vc);
                        for ri in 0..r {
                            d.extend_from_slice(&g.data[ri * c + offset..ri * c + offset + vc]);
                        }
                        d
                    };
                    offset += if *axis == 0 { vr } else { vc };
                    self.acc(v, Tensor { shape, data });
                }
            }
            Op::Slice { input, axis, start } => {
                let shape = self.nodes[input.0].value.shape.clone();
                let (r, c) = self.nodes[input.0].value.dims2().expect("2-D");
                let mut d = vec![0.0; r * c];
                let (gr, gc) = g.dims2().expect("2-D");
                for ri in 0..gr {
                    for ci in 0..gc {
                        let (sr, sc) = if *axis == 0 { (ri + start, ci) } else { (ri, ci + start) };
                        d[sr * c + sc] = g.data[ri * gc + ci];
                    }
                }
                self.acc(*input, Tensor { shape, data: d });
            }
            Op::GatherRows { input, index } => {
                let shape = self.nodes[input.0].value.shape.clone();
                let (r, c) = self.nodes[input.0].value.dims2().expect("2-D");
                let mut d = vec![0.0; r * c];
                for (oi, &src) in index.iter().enumerate() {
                    for (dv, gv) in d[src * c..(src + 1) * c].iter_mut().zip(&g.data[oi * c..(oi + 1) * c]) {
                        *dv += gv;
                    }
                }
                self.acc(*input, Tensor { shape, data: d });
            }
            Op::Reshape(x) => {
                let shape = self.nodes[x.0].value.shape.clone();
                self.acc(*x, Tensor { shape, data: g.data.clone() });
            }
            Op::Sigmoid(x) => {
                let d = zip(g, &self.nodes[i].value, |gv, y| gv * y * (1.0 - y));
                self.acc(*x, d);
            }
            Op::Tanh(x) => {
                let d = zip(g, &self.nodes[i].value, |gv, y| gv * (1.0 - y * y));
                self.acc(*x, d);
            }
            Op::Softmax(input) => {
                // Masked entries have y = 0, so they receive zero gradient.
                let y = &self.nodes[i].value;
                let (r, c) = y.dims2().expect("2-D");
                let mut d = vec![0.0; r * c];
                for ri in 0..r {
                    let yr = y.row_slice(ri);
                    let gr = &g.data[ri * c..(ri + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[ri * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                let shape = self.nodes[input.0].value.shape.clone();
                self.acc(*input, Tensor { shape, data: d });
            }
            Op::MaskedMean { input, mask, group } => {
                let shape = self.nodes[input.0].value.shape.clone();
                let (r, c) = self.nodes[input.0].value.dims2().expect("2-D");
                let mut d = vec![0.0; r * c];
                for gi in 0..r / group {
                    let rows = gi * group..(gi + 1) * group;
                    let count = mask[rows.clone()].iter().filter(|&&m| m).count();
                    if count == 0 {
                        continue;
                    }
                    let inv = 1.0 / count as f64;
                    let grow = &g.data[gi * c..(gi + 1) * c];
                    for ri in rows.filter(|&ri| mask[ri]) {
                        for (dv, gv) in d[ri * c..(ri + 1) * c].iter_mut().zip(grow) {
                            *dv = gv * inv;
                        }
                    }
                }
                self.acc(*input, Tensor { shape, data: d });
            }
            Op::Dropout { input, keep } => {
                let d = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().zip(keep).map(|(a, b)| a * b).collect(),
                };
                self.acc(*input, d);
            }
            Op::Sum(x) => {
                let gv = g.data[0];
                let shape = self.nodes[x.0].value.shape.clone();
                self.acc(*x, Tensor::full(&shape, gv));
            }
            Op::Bce { y, targets, eps } => {
                let yv = &self.nodes[y.0].value;
                let (b, _) = yv.dims2().expect("2-D");
                let scale = g.data[0] / b as f64;
                let data = yv
                    .data
                    .iter()
                    .zip(targets)
                    .map(|(&p, &t)| {
                        if p < *eps || p > 1.0 - eps {
                            0.0
                        } else {
                            scale * (-t / p + (1.0 - t) / (1.0 - p))
                        }
                    })
                    .collect();
                let shape = yv.shape.clone();
                self.acc(*y, Tensor { shape, data });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).data(), [0.5]);
    }

    #[test]
    fn masked_mean_single_row() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let m = t.masked_mean(x, &[true, false]).unwrap();
        assert_eq!(t.value(m).data(), [1.0, 2.0]);
        let z = t.masked_mean(x, &[false, false]).unwrap();
        assert_eq!(t.value(z).data(), [0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = t.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(matches!(t.dropout(x, 1.0, true, &mut rng), Err(TensorError::DropoutProb(_))));
        assert!(matches!(t.dropout(x, -0.1, false, &mut rng), Err(TensorError::DropoutProb(_))));
    }

    #[test]
    fn dropout_expectation() {
        let x = Tensor::row(vec![1.0, -2.0, 0.5, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut acc = [0.0; 4];
        let n = 10_000;
        for _ in 0..n {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let y = t.dropout(v, 0.5, true, &mut rng).unwrap();
            for (a, b) in acc.iter_mut().zip(t.value(y).data()) {
                *a += b;
            }
        }
        for (a, want) in acc.iter().zip(x.data()) {
            let mean = a / n as f64;
            assert!((mean - want).abs() <= 0.02 * want.abs(), "{mean} vs {want}");
        }
    }

    #[test]
    fn x_squared_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), [6.0]);
    }

    #[test]
    fn sum_sigmoid_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[1, 3]));
        let s = t.sigmoid(x).unwrap();
        let l = t.sum(s).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), [0.25, 0.25, 0.25]);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss(_))));
        let l = t.sum(x).unwrap();
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(TensorError::StaleTape)));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, [2, 3]);
                assert_eq!(rhs, [2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = t.constant(Tensor::zeros(&[3]));
        let err = t.add(a, c).unwrap_err();
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[3]"));
    }

    #[test]
    fn non_finite_trips() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(t.scale(x, 10.0), Err(TensorError::NonFinite { op: "scale" })));
    }

    #[test]
    fn concat_then_slice_is_identity() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = t.constant(Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), [1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let a2 = t.slice(c, 1, 0, 2).unwrap();
        let b2 = t.slice(c, 1, 2, 3).unwrap();
        assert_eq!(t.value(a2), t.value(a));
        assert_eq!(t.value(b2), t.value(b));
        let r = t.concat(&[a, a], 0).unwrap();
        let top = t.slice(r, 0, 2, 4).unwrap();
        assert_eq!(t.value(top), t.value(a));
    }

    #[test]
    fn softmax_masking() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 1.0, 5.0], vec![2.0, 3.0, 4.0]]).unwrap());
        let y = t.softmax(x, Some(&[true, true, false, false, false, false])).unwrap();
        assert_eq!(t.value(y).data(), [0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    }
}
