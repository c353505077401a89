//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] records one forward computation. Parameters live in a
//! [`ParamStore`] and are referenced, not copied. Recurrent cells, attention
//! and the loss are fused nodes with hand-written backward rules.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter matrices in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// # Panics
    /// If `name` is already registered.
    pub fn add(&mut self, name: &str, value: Mat) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Tanh(Var),
    MulConst(Var, Mat),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Select { new: Var, old: Var, mask: Vec<bool> },
    Gru(Box<GruCache>),
    Attention(Box<AttentionCache>),
    MaskedMean { mem: Var, lens: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Mat, denom: f64 },
}

#[derive(Debug)]
struct GruCache {
    x: Var,
    h: Var,
    wh: Var,
    bh: Var,
    r: Mat,
    z: Mat,
    n: Mat,
    hn: Mat,
}

#[derive(Debug)]
struct AttentionCache {
    query: Var,
    mem: Var,
    lens: Vec<usize>,
    weights: Mat,
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: BTreeMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape { params, nodes: Vec::new(), param_vars: BTreeMap::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("value-less node must be a parameter"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    /// `x·W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Elementwise product with a constant (a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut v = Mat::zeros((idx.len(), src.ncols()));
        for (i, &j) in idx.iter().enumerate() {
            v.row_mut(i).assign(&src.row(j));
        }
        self.push(v, Op::GatherRows(a, idx))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape changes element count");
        let flat: Vec<f64> = src.iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), flat).expect("shape checked");
        self.push(v, Op::Reshape(a))
    }

    /// Row `i` comes from `new` where `mask[i]`, otherwise from `old`.
    pub fn select_rows(&mut self, new: Var, old: Var, mask: Vec<bool>) -> Var {
        let mut v = self.value(old).clone();
        let nv = self.value(new);
        for (i, &m) in mask.iter().enumerate() {
            if m {
                v.row_mut(i).assign(&nv.row(i));
            }
        }
        self.push(v, Op::Select { new, old, mask })
    }

    /// GRU cell. `x` holds the input projection `x·Wi + bi` with column
    /// blocks `[r | z | n]`; `wh` is `H×3H`, `bh` is `1×3H`.
    pub fn gru_cell(&mut self, x: Var, h: Var, wh: Var, bh: Var) -> Var {
        let hv = self.value(h);
        let hsz = hv.ncols();
        let hp = hv.dot(self.value(wh)) + self.value(bh);
        let xv = self.value(x);
        let b = hv.nrows();
        let (mut r, mut z, mut n, mut hn) = (Mat::zeros((b, hsz)), Mat::zeros((b, hsz)), Mat::zeros((b, hsz)), Mat::zeros((b, hsz)));
        let mut out = Mat::zeros((b, hsz));
        for i in 0..b {
            for j in 0..hsz {
                let rr = sigmoid(xv[[i, j]] + hp[[i, j]]);
                let zz = sigmoid(xv[[i, hsz + j]] + hp[[i, hsz + j]]);
                let hh = hp[[i, 2 * hsz + j]];
                let nn = (xv[[i, 2 * hsz + j]] + rr * hh).tanh();
                r[[i, j]] = rr;
                z[[i, j]] = zz;
                n[[i, j]] = nn;
                hn[[i, j]] = hh;
                out[[i, j]] = (1.0 - zz) * nn + zz * hv[[i, j]];
            }
        }
        self.push(out, Op::Gru(Box::new(GruCache { x, h, wh, bh, r, z, n, hn })))
    }

    /// Dot-product attention of `query` (`B×D`) over a time-major memory
    /// (`T·B×D`, row `t·B+b`), restricted to `t < lens[b]`. Returns the
    /// context (`B×D`).
    pub fn attention(&mut self, query: Var, mem: Var, lens: &[usize]) -> Var {
        let q = self.value(query);
        let m = self.value(mem);
        let b = q.nrows();
        assert_eq!(lens.len(), b);
        let t_len = m.nrows() / b;
        let mut w = Mat::zeros((b, t_len));
        let mut ctx = Mat::zeros((b, q.ncols()));
        for i in 0..b {
            let len = lens[i].min(t_len);
            if len == 0 {
                continue;
            }
            let scores: Vec<f64> = (0..len).map(|t| q.row(i).dot(&m.row(t * b + i))).collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for t in 0..len {
                let a = exps[t] / sum;
                w[[i, t]] = a;
                ctx.row_mut(i).scaled_add(a, &m.row(t * b + i));
            }
        }
        self.push(ctx, Op::Attention(Box::new(AttentionCache { query, mem, lens: lens.to_vec(), weights: w })))
    }

    /// Attention weights (`B×T`) recorded by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&Mat> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => Some(&c.weights),
            _ => None,
        }
    }

    /// Mean over `t < lens[b]` of a time-major memory.
    pub fn masked_mean(&mut self, mem: Var, lens: &[usize]) -> Var {
        let m = self.value(mem);
        let b = lens.len();
        let t_len = m.nrows() / b;
        let mut out = Mat::zeros((b, m.ncols()));
        for i in 0..b {
            let len = lens[i].min(t_len);
            for t in 0..len {
                out.row_mut(i).scaled_add(1.0, &m.row(t * b + i));
            }
            if len > 0 {
                out.row_mut(i).mapv_inplace(|x| x / len as f64);
            }
        }
        self.push(out, Op::MaskedMean { mem, lens: lens.to_vec() })
    }

    /// Softmax cross-entropy summed over rows with a target, divided by
    /// `denom`. Rows whose target is `None` contribute nothing. Returns `1×1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>, denom: f64) -> Var {
        let l = self.value(logits);
        assert_eq!(l.nrows(), targets.len());
        let mut probs = Mat::zeros(l.raw_dim());
        let mut loss = 0.0;
        for (i, tgt) in targets.iter().enumerate() {
            let Some(t) = *tgt else { continue };
            let row = l.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + sum.ln();
            loss += lse - row[t];
            for (j, x) in row.iter().enumerate() {
                probs[[i, j]] = (x - lse).exp();
            }
        }
        let v = Mat::from_elem((1, 1), loss / denom);
        self.push(v, Op::CrossEntropy { logits, targets, probs, denom })
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut out = Gradients { params: vec![None; self.params.len()] };
        for (&pid, &v) in &self.param_vars {
            out.params[pid.0] = grads[v.0].take();
        }
        out
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn acc_with<F: FnOnce(&mut Mat)>(&self, grads: &mut [Option<Mat>], v: Var, f: F) {
        let shape = self.shape(v);
        let g = grads[v.0].get_or_insert_with(|| Mat::zeros(shape));
        f(g);
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let da = g.dot(&self.value(*b).t());
                let db = self.value(*a).t().dot(g);
                self.acc(grads, *a, da);
                self.acc(grads, *b, db);
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Relu(a) => {
                let out = self.nodes[idx].value.as_ref().expect("relu value");
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &o| {
                    if o <= 0.0 {
                        *d = 0.0
                    }
                });
                self.acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let out = self.nodes[idx].value.as_ref().expect("tanh value");
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &o| *d *= 1.0 - o * o);
                self.acc(grads, *a, d);
            }
            Op::MulConst(a, c) => self.acc(grads, *a, g * c),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    self.acc_with(grads, p, |m| *m += &g.slice(s![.., off..off + w]));
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    self.acc_with(grads, p, |m| *m += &g.slice(s![off..off + h, ..]));
                    off += h;
                }
            }
            Op::SliceRows(a, start) => {
                let n = g.nrows();
                self.acc_with(grads, *a, |m| {
                    let mut sl = m.slice_mut(s![*start..*start + n, ..]);
                    sl += g;
                });
            }
            Op::GatherRows(a, rows) => {
                self.acc_with(grads, *a, |m| {
                    for (i, &j) in rows.iter().enumerate() {
                        m.row_mut(j).scaled_add(1.0, &g.row(i));
                    }
                });
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a);
                let flat: Vec<f64> = g.iter().copied().collect();
                self.acc(grads, *a, Mat::from_shape_vec(shape, flat).expect("same element count"));
            }
            Op::Select { new, old, mask } => {
                let mut dn = g.clone();
                let mut dold = g.clone();
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        dold.row_mut(i).fill(0.0);
                    } else {
                        dn.row_mut(i).fill(0.0);
                    }
                }
                self.acc(grads, *new, dn);
                self.acc(grads, *old, dold);
            }
            Op::Gru(c) => self.gru_backward(c, g, grads),
            Op::Attention(c) => self.attention_backward(c, g, grads),
            Op::MaskedMean { mem, lens } => {
                let b = lens.len();
                let t_len = self.shape(*mem).0 / b;
                self.acc_with(grads, *mem, |m| {
                    for i in 0..b {
                        let len = lens[i].min(t_len);
                        for t in 0..len {
                            m.row_mut(t * b + i).scaled_add(1.0 / len as f64, &g.row(i));
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs, denom } => {
                let scale = g[[0, 0]] / denom;
                let mut d = probs.clone();
                for (i, t) in targets.iter().enumerate() {
                    match t {
                        Some(t) => d[[i, *t]] -= 1.0,
                        None => d.row_mut(i).fill(0.0),
                    }
                }
                d.mapv_inplace(|x| x * scale);
                self.acc(grads, *logits, d);
            }
        }
    }

    fn gru_backward(&self, c: &GruCache, g: &Mat, grads: &mut [Option<Mat>]) {
        let hv = self.value(c.h);
        let (b, hsz) = hv.dim();
        let mut dx = Mat::zeros((b, 3 * hsz));
        let mut dhp = Mat::zeros((b, 3 * hsz));
        let mut dh = Mat::zeros((b, hsz));
        for i in 0..b {
            for j in 0..hsz {
                let (r, z, n, hn) = (c.r[[i, j]], c.z[[i, j]], c.n[[i, j]], c.hn[[i, j]]);
                let gg = g[[i, j]];
                let dn = gg * (1.0 - z);
                let dz = gg * (hv[[i, j]] - n);
                dh[[i, j]] = gg * z;
                let dan = dn * (1.0 - n * n);
                let dr = dan * hn;
                let dar = dr * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                dx[[i, j]] = dar;
                dx[[i, hsz + j]] = daz;
                dx[[i, 2 * hsz + j]] = dan;
                dhp[[i, j]] = dar;
                dhp[[i, hsz + j]] = daz;
                dhp[[i, 2 * hsz + j]] = dan * r;
            }
        }
        let dwh = hv.t().dot(&dhp);
        let dbh = dhp.sum_axis(Axis(0)).insert_axis(Axis(0));
        dh += &dhp.dot(&self.value(c.wh).t());
        self.acc(grads, c.x, dx);
        self.acc(grads, c.h, dh);
        self.acc(grads, c.wh, dwh);
        self.acc(grads, c.bh, dbh);
    }

    fn attention_backward(&self, c: &AttentionCache, g: &Mat, grads: &mut [Option<Mat>]) {
        let q = self.value(c.query);
        let m = self.value(c.mem);
        let b = q.nrows();
        let t_len = m.nrows() / b;
        let mut dq = Mat::zeros(q.raw_dim());
        let mut dm = Mat::zeros(m.raw_dim());
        for i in 0..b {
            let len = c.lens[i].min(t_len);
            if len == 0 {
                continue;
            }
            let da: Vec<f64> = (0..len).map(|t| g.row(i).dot(&m.row(t * b + i))).collect();
            let dot: f64 = (0..len).map(|t| c.weights[[i, t]] * da[t]).sum();
            for t in 0..len {
                let a = c.weights[[i, t]];
                let ds = a * (da[t] - dot);
                dq.row_mut(i).scaled_add(ds, &m.row(t * b + i));
                let mut mrow = dm.row_mut(t * b + i);
                mrow.scaled_add(a, &g.row(i));
                mrow.scaled_add(ds, &q.row(i));
            }
        }
        self.acc(grads, c.query, dq);
        self.acc(grads, c.mem, dm);
    }
}

/// Per-parameter gradients; `None` for parameters the loss did not touch.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.params[id.0].as_ref()
    }

    pub fn global_norm(&self) -> f64 {
        self.params.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.params.iter_mut().flatten() {
            g.mapv_inplace(|x| x * k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of one scalar function of a single parameter.
    fn check<F: Fn(&mut Tape, Var) -> Var>(init: Mat, f: F) {
        let mut store = ParamStore::new();
        let id = store.add("p", init);
        let analytic = {
            let mut t = Tape::new(&store);
            let p = t.param(id);
            let l = f(&mut t, p);
            t.backward(l).get(id).cloned().expect("grad")
        };
        let h = 1e-6;
        let eval = |s: &ParamStore| {
            let mut t = Tape::new(s);
            let p = t.param(id);
            let l = f(&mut t, p);
            t.value(l)[[0, 0]]
        };
        let shape = store.get(id).dim();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let mut s = store.clone();
                s.get_mut(id)[[i, j]] += h;
                let up = eval(&s);
                s.get_mut(id)[[i, j]] -= 2.0 * h;
                let down = eval(&s);
                let num = (up - down) / (2.0 * h);
                let a = analytic[[i, j]];
                assert!((a - num).abs() <= 1e-6 * (1.0 + a.abs()), "({i},{j}) analytic {a} numeric {num}");
            }
        }
    }

    fn sum_loss(t: &mut Tape, v: Var, targets: Vec<Option<usize>>) -> Var {
        t.cross_entropy(v, targets, 1.0)
    }

    #[test]
    fn elementwise_and_structural_ops() {
        let init = array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]];
        check(init.clone(), |t, p| {
            let a = t.tanh(p);
            let b = t.relu(p);
            let c = t.add(a, b);
            let d = t.mul_const(c, array![[1.0, 0.0, 2.0], [0.5, 1.0, 1.0]]);
            let e = t.concat_cols(&[d, p]);
            let f = t.concat_rows(&[e, e]);
            let g = t.slice_rows(f, 1, 3);
            let h = t.gather_rows(g, vec![1, 0, 1]);
            let k = t.reshape(h, 2, 9);
            sum_loss(t, k, vec![Some(4), Some(0)])
        });
    }

    #[test]
    fn matmul_and_bias() {
        check(array![[0.3, -0.2], [0.1, 0.7]], |t, p| {
            let x = t.constant(array![[1.0, 2.0], [-1.0, 0.5], [0.2, 0.3]]);
            let y = t.matmul(x, p);
            let b = t.slice_rows(p, 0, 1);
            let z = t.add_row(y, b);
            sum_loss(t, z, vec![Some(1), None, Some(0)])
        });
    }

    #[test]
    fn gru_cell_gradients() {
        // p packs [x (2×6); h (2×2); wh (2×6); bh (1×6)] row-wise, padded to 6 cols.
        let mut init = Mat::zeros((7, 6));
        for (k, v) in init.iter_mut().enumerate() {
            *v = ((k as f64) * 0.37).sin() * 0.8;
        }
        check(init, |t, p| {
            let x = t.slice_rows(p, 0, 2);
            let hp = t.slice_rows(p, 2, 4);
            let h = t.reshape(hp, 6, 2);
            let h = t.slice_rows(h, 0, 2);
            let wh = t.slice_rows(p, 4, 6);
            let wh = t.reshape(wh, 2, 6);
            let bh = t.slice_rows(p, 6, 7);
            let o = t.gru_cell(x, h, wh, bh);
            let o2 = t.gru_cell(x, o, wh, bh);
            sum_loss(t, o2, vec![Some(0), Some(1)])
        });
    }

    #[test]
    fn attention_and_mean_gradients() {
        let mut init = Mat::zeros((8, 3));
        for (k, v) in init.iter_mut().enumerate() {
            *v = ((k as f64) * 0.91).cos();
        }
        check(init, |t, p| {
            let q = t.slice_rows(p, 0, 2);
            let mem = t.slice_rows(p, 2, 8); // T=3, B=2
            let ctx = t.attention(q, mem, &[3, 2]);
            let mean = t.masked_mean(mem, &[3, 2]);
            let both = t.concat_cols(&[ctx, mean]);
            sum_loss(t, both, vec![Some(2), Some(4)])
        });
    }

    #[test]
    fn select_routes_rows() {
        check(array![[0.1, 0.2], [0.3, -0.4]], |t, p| {
            let a = t.tanh(p);
            let s = t.select_rows(a, p, vec![true, false]);
            sum_loss(t, s, vec![Some(0), Some(1)])
        });
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let q = t.constant(array![[1.0, 0.0], [0.5, 0.5]]);
        let m = t.constant(array![[1.0, 2.0], [0.0, 1.0], [3.0, 1.0], [9.0, 9.0]]);
        let c = t.attention(q, m, &[2, 1]);
        let w = t.attention_weights(c).unwrap();
        assert!((w.row(0).sum() - 1.0).abs() < 1e-12);
        assert_eq!(w[[1, 1]], 0.0);
        assert_eq!(w[[1, 0]], 1.0);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn ignored_targets_do_not_contribute() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let l1 = t.constant(array![[1.0, 2.0], [5.0, -3.0]]);
        let a = t.cross_entropy(l1, vec![Some(0), None], 1.0);
        let l2 = t.constant(array![[1.0, 2.0], [-40.0, 7.0]]);
        let b = t.cross_entropy(l2, vec![Some(0), None], 1.0);
        assert_eq!(t.value(a), t.value(b));
    }
}
