use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::{lit, ParamId, ParamStore, Real};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Value<T> {
    Owned(Array2<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Array2<T>),
    Scale(Var, T),
    AddScalar(Var),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Scatter(Var, Vec<usize>),
    Pick(Var, Vec<(usize, usize)>),
    Reshape(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward pass.
///
/// Parameter leaves borrow from a [`ParamStore`] instead of copying it.
/// In checked mode (the default) every produced value is verified finite
/// and `log` rejects non-positive inputs.
pub struct Tape<'a, T: Real> {
    params: Option<&'a ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    checked: bool,
}

/// Result of [`Tape::backward`]: `dLoss/dx` for every node that requires grad.
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter that took part in the pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Array2<T>)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }
}

fn shape(a: &Array2<impl Sized>) -> [usize; 2] {
    [a.nrows(), a.ncols()]
}

fn leaky<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x * slope
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_row<T: Real>(row: ndarray::ArrayView1<T>, mut out: ndarray::ArrayViewMut1<T>) {
    let max = row
        .iter()
        .fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
    if max == T::neg_infinity() {
        out.fill(T::zero());
        return;
    }
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row.iter()) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            checked: true,
        }
    }

    pub fn with_params(params: &'a ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            ..Self::new()
        }
    }

    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a,
            Value::Param(id) => self
                .params
                .expect("parameter leaf without a store")
                .value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        shape(self.value(v))
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, value: Value<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push_leaf(Value::Owned(value), false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Array2<T>) -> Var {
        self.push_leaf(Value::Owned(value), true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same var.
    /// Frozen parameters are recorded as constants.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("tape was built without a parameter store");
        let v = self.push_leaf(Value::Param(id), !store.is_frozen(id));
        self.param_vars.insert(id, v);
        v
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, inputs: &[Var], name: &'static str) -> Result<Var> {
        if self.checked && value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a · bᵀ`; with row-per-sample activations this is a linear layer
    /// whose weight is stored `out x in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[1] {
            return Err(Error::shape("matmul_t", format!("{sa:?} x {sb:?}ᵀ")));
        }
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b), &[a, b], "matmul_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b), &[a, b], "sub")
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr[0] != 1 || sr[1] != sa[1] {
            return Err(Error::shape("add_row", format!("{sa:?} + {sr:?}")));
        }
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row), &[a, row], "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != [sa[0], 1] {
            return Err(Error::shape("mul_col", format!("{sa:?} * {sc:?}")));
        }
        let out = self.value(a) * self.value(col);
        self.push(out, Op::MulCol(a, col), &[a, col], "mul_col")
    }

    /// Elementwise product with a constant (no gradient to the constant).
    pub fn mul_const(&mut self, a: Var, c: Array2<T>) -> Result<Var> {
        let sa = self.shape(a);
        if shape(&c) != sa {
            return Err(Error::shape("mul_const", format!("{sa:?} * {:?}", shape(&c))));
        }
        let out = self.value(a) * &c;
        self.push(out, Op::MulConst(a, c), &[a], "mul_const")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a) * s;
        self.push(out, Op::Scale(a, s), &[a], "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a) + s;
        self.push(out, Op::AddScalar(a), &[a], "add_scalar")
    }

    /// Concatenation along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::shape("concat", "need at least one part and axis 0 or 1"));
        }
        let other = 1 - axis;
        let expect = self.shape(parts[0])[other];
        if parts.iter().any(|&p| self.shape(p)[other] != expect) {
            return Err(Error::shape("concat", "parts disagree on the non-concatenated axis"));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("checked shapes");
        self.push(out, Op::Concat(parts.to_vec(), axis), parts, "concat")
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start > end || end > sa[1] {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {sa:?}")));
        }
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start), &[a], "slice_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = self.value(a).sum() / lit::<T>(n as f64);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a), &[a], "mean")
    }

    /// Softmax along each row.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = Array2::zeros(x.raw_dim());
        for (r, o) in x.rows().into_iter().zip(out.rows_mut()) {
            softmax_row(r, o);
        }
        self.push(out, Op::Softmax(a), &[a], "softmax")
    }

    /// Row softmax restricted to entries where `mask` is true; other entries are 0.
    pub fn masked_softmax(&mut self, a: Var, mask: &Array2<bool>) -> Result<Var> {
        let x = self.value(a);
        if mask.raw_dim() != x.raw_dim() {
            return Err(Error::shape("masked_softmax", "mask shape differs"));
        }
        let masked = Zip::from(x)
            .and(mask)
            .map_collect(|&v, &keep| if keep { v } else { T::neg_infinity() });
        let mut out = Array2::zeros(x.raw_dim());
        for (r, o) in masked.rows().into_iter().zip(out.rows_mut()) {
            softmax_row(r, o);
        }
        self.push(out, Op::Softmax(a), &[a], "masked_softmax")
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(out, Op::LogSoftmax(a), &[a], "log_softmax")
    }

    fn check_offsets(&self, op: &'static str, rows: usize, offsets: &[usize]) -> Result<()> {
        let ok = !offsets.is_empty()
            && offsets[0] == 0
            && *offsets.last().unwrap() == rows
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if ok {
            Ok(())
        } else {
            Err(Error::shape(op, format!("offsets do not partition {rows} rows")))
        }
    }

    /// Softmax of an `m x 1` column within each segment `offsets[i]..offsets[i+1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if sa[1] != 1 {
            return Err(Error::shape("segment_softmax", format!("expected a column, got {sa:?}")));
        }
        self.check_offsets("segment_softmax", sa[0], offsets)?;
        let x = self.value(a).column(0).to_owned();
        let mut out = Array2::zeros((sa[0], 1));
        for w in offsets.windows(2) {
            if w[0] < w[1] {
                softmax_row(x.slice(s![w[0]..w[1]]), out.slice_mut(s![w[0]..w[1], 0]));
            }
        }
        self.push(out, Op::SegmentSoftmax(a, offsets.to_vec()), &[a], "segment_softmax")
    }

    /// Sums the rows of each segment; empty segments give zero rows.
    pub fn segment_sum(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        self.check_offsets("segment_sum", sa[0], offsets)?;
        let x = self.value(a);
        let mut out = Array2::zeros((offsets.len() - 1, sa[1]));
        for (i, w) in offsets.windows(2).enumerate() {
            let mut row = out.row_mut(i);
            for r in w[0]..w[1] {
                row += &x.row(r);
            }
        }
        self.push(out, Op::SegmentSum(a, offsets.to_vec()), &[a], "segment_sum")
    }

    /// Rows `idx[0], idx[1], ...` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if idx.iter().any(|&i| i >= sa[0]) {
            return Err(Error::shape("gather_rows", format!("index out of range for {sa:?}")));
        }
        let out = self.value(a).select(Axis(0), idx);
        self.push(out, Op::Gather(a, idx.to_vec()), &[a], "gather_rows")
    }

    /// `out[idx[i]] += a[i]` into a zero matrix with `rows` rows.
    pub fn scatter_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let sa = self.shape(a);
        if idx.len() != sa[0] || idx.iter().any(|&i| i >= rows) {
            return Err(Error::shape("scatter_rows", "index list does not match"));
        }
        let x = self.value(a);
        let mut out = Array2::zeros((rows, sa[1]));
        for (r, &i) in idx.iter().enumerate() {
            let mut row = out.row_mut(i);
            row += &x.row(r);
        }
        self.push(out, Op::Scatter(a, idx.to_vec()), &[a], "scatter_rows")
    }

    /// Column vector of the entries `a[r, c]` for each `(r, c)`.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Result<Var> {
        let sa = self.shape(a);
        if at.iter().any(|&(r, c)| r >= sa[0] || c >= sa[1]) {
            return Err(Error::shape("pick", format!("index out of range for {sa:?}")));
        }
        let x = self.value(a);
        let out = Array2::from_shape_fn((at.len(), 1), |(i, _)| x[at[i]]);
        self.push(out, Op::Pick(a, at.to_vec()), &[a], "pick")
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if x.len() != rows * cols {
            return Err(Error::shape("reshape", format!("{:?} to [{rows}, {cols}]", shape(x))));
        }
        let flat: Vec<T> = x.iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("size checked");
        self.push(out, Op::Reshape(a), &[a], "reshape")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let out = self.value(a).mapv(|x| leaky(x, slope));
        self.push(out, Op::LeakyRelu(a, slope), &[a], "leaky_relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a], "sigmoid")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(softplus);
        self.push(out, Op::Softplus(a), &[a], "softplus")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.checked && self.value(a).iter().any(|&x| x <= T::zero()) {
            return Err(Error::LogDomain);
        }
        let out = self.value(a).mapv(|x| x.ln());
        self.push(out, Op::Log(a), &[a], "log")
    }

    /// Inverted dropout. Identity when `!train` or `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64, train: bool, rng: &mut impl rand::Rng) -> Result<Var> {
        if !train || rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be below 1")));
        }
        let keep = lit::<T>(1.0 / (1.0 - rate));
        let sa = self.shape(a);
        let mask = Array2::from_shape_fn((sa[0], sa[1]), |_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        });
        self.mul_const(a, mask)
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let sl = self.shape(loss);
        if sl != [1, 1] {
            return Err(Error::NotScalar(sl));
        }
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.param_vars.iter().map(|(&k, &v)| (k, v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn acc(&self, grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop(&self, idx: usize, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let out = || self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g.dot(self.value(*b)));
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.mapv(|x| -x));
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.requires_grad(*row) {
                    self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g * self.value(*b));
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, g * self.value(*a));
                }
            }
            Op::MulCol(a, col) => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g * self.value(*col));
                }
                if self.requires_grad(*col) {
                    let gc = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.acc(grads, *col, gc);
                }
            }
            Op::MulConst(a, c) => self.acc(grads, *a, g * c),
            Op::Scale(a, s) => self.acc(grads, *a, g * *s),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.requires_grad(p) {
                        let piece = if *axis == 0 {
                            g.slice(s![start..start + len, ..]).to_owned()
                        } else {
                            g.slice(s![.., start..start + len]).to_owned()
                        };
                        self.acc(grads, p, piece);
                    }
                    start += len;
                }
            }
            Op::SliceCols(a, start) => {
                let mut full = Array2::zeros(self.value(*a).raw_dim());
                full.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.acc(grads, *a, full);
            }
            Op::Sum(a) => {
                self.acc(grads, *a, Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let v = g[[0, 0]] / lit::<T>(x.len() as f64);
                self.acc(grads, *a, Array2::from_elem(x.raw_dim(), v));
            }
            Op::Softmax(a) => {
                let y = out();
                let gy = g * y;
                let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                self.acc(grads, *a, &gy - &(y * &dot));
            }
            Op::LogSoftmax(a) => {
                let y = out().mapv(|v| v.exp());
                let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                self.acc(grads, *a, g - &(y * &gs));
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = out();
                let mut dx = Array2::zeros(y.raw_dim());
                for w in offsets.windows(2) {
                    let dot: T = (w[0]..w[1]).map(|r| g[[r, 0]] * y[[r, 0]]).sum();
                    for r in w[0]..w[1] {
                        dx[[r, 0]] = y[[r, 0]] * (g[[r, 0]] - dot);
                    }
                }
                self.acc(grads, *a, dx);
            }
            Op::SegmentSum(a, offsets) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                for (i, w) in offsets.windows(2).enumerate() {
                    for r in w[0]..w[1] {
                        dx.row_mut(r).assign(&g.row(i));
                    }
                }
                self.acc(grads, *a, dx);
            }
            Op::Gather(a, idx) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = dx.row_mut(i);
                    row += &g.row(r);
                }
                self.acc(grads, *a, dx);
            }
            Op::Scatter(a, idx) => {
                self.acc(grads, *a, g.select(Axis(0), idx));
            }
            Op::Pick(a, at) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                for (i, &rc) in at.iter().enumerate() {
                    dx[rc] += g[[i, 0]];
                }
                self.acc(grads, *a, dx);
            }
            Op::Reshape(a) => {
                let sa = self.shape(*a);
                let flat: Vec<T> = g.iter().copied().collect();
                self.acc(grads, *a, Array2::from_shape_vec((sa[0], sa[1]), flat).expect("same size"));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let dx = Zip::from(g).and(x).map_collect(|&gv, &xv| {
                    if xv >= T::zero() {
                        gv
                    } else {
                        gv * *slope
                    }
                });
                self.acc(grads, *a, dx);
            }
            Op::Sigmoid(a) => {
                let y = out();
                let dx = Zip::from(g).and(y).map_collect(|&gv, &yv| gv * yv * (T::one() - yv));
                self.acc(grads, *a, dx);
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let dx = Zip::from(g).and(x).map_collect(|&gv, &xv| gv * sigmoid(xv));
                self.acc(grads, *a, dx);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, g / x);
            }
        }
    }
}
