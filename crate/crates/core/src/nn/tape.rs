//! Reverse-mode differentiation over a recorded sequence of matrix ops.

use super::params::{ParamId, ParamStore};
use super::tensor::Mat;
use crate::{Error, Result};

pub type Var = usize;

const RMS_EPS: f64 = 1e-6;

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Broadcast a `1 x c` row over every row of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv: Vec<f64>,
    },
    Softmax(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        probs: Mat,
        targets: Vec<Target>,
    },
}

/// One supervised row of a cross-entropy term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub row: usize,
    pub token: usize,
    pub weight: f64,
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

/// Gradients with respect to every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub by_param: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            by_param: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.by_param[id].as_ref()
    }

    pub fn accumulate(&mut self, other: &Grads) -> Result<()> {
        for (a, b) in self.by_param.iter_mut().zip(&other.by_param) {
            match (a.as_mut(), b) {
                (_, None) => {}
                (Some(a), Some(b)) => a.add_assign(b)?,
                (None, Some(b)) => *a = Some(b.clone()),
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.by_param.iter_mut().flatten() {
            *g = g.scaled(s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .map(Mat::sum_sq)
            .sum::<f64>()
            .sqrt()
    }
}

/// Softmax over the entries where `allowed` is true; the rest get zero.
pub fn masked_softmax(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(allowed)
        .map(|(&x, &a)| if a { (x - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = out.iter().sum();
    for x in &mut out {
        *x /= s;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &Mat {
        match (&self.nodes[v].value, &self.nodes[v].op) {
            (_, Op::Param(id)) => self.params.get(*id),
            (Some(m), _) => m,
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        self.nodes.len() - 1
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let b = self.value(bias);
        let mut v = self.value(a).clone();
        if b.rows() != 1 || b.cols() != v.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} for {:?}",
                b.shape(),
                v.shape()
            )));
        }
        let b = b.row(0).to_vec();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for x in v.data_mut() {
            *x *= sigmoid(*x);
        }
        self.push(v, Op::Silu(a))
    }

    /// Row-wise RMS normalisation with a learned `1 x c` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let g = self.value(gain);
        let xv = self.value(x);
        if g.rows() != 1 || g.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "gain {:?} for {:?}",
                g.shape(),
                xv.shape()
            )));
        }
        let mut v = xv.clone();
        let mut inv = Vec::with_capacity(v.rows());
        let g = g.row(0).to_vec();
        let n = v.cols() as f64;
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let r = 1.0 / (row.iter().map(|x| x * x).sum::<f64>() / n + RMS_EPS).sqrt();
            for (x, gj) in row.iter_mut().zip(&g) {
                *x *= r * gj;
            }
            inv.push(r);
        }
        Ok(self.push(v, Op::RmsNorm { x, gain, inv }))
    }

    /// Row-wise softmax; with `causal`, entry `(i, j)` for `j > i` is excluded.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let mut v = self.value(a).clone();
        let cols = v.cols();
        for i in 0..v.rows() {
            let allowed: Vec<bool> = (0..cols).map(|j| !causal || j <= i).collect();
            let p = masked_softmax(v.row(i), &allowed);
            v.row_mut(i).copy_from_slice(&p);
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + width > xv.cols() {
            return Err(Error::Shape(format!(
                "columns {start}..{} of {:?}",
                start + width,
                xv.shape()
            )));
        }
        let mut v = Mat::zeros(xv.rows(), width);
        for i in 0..xv.rows() {
            v.row_mut(i)
                .copy_from_slice(&xv.row(i)[start..start + width]);
        }
        Ok(self.push(v, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat of mismatched row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut at = 0;
            for &p in &parts {
                let src = self.value(p).row(i);
                v.row_mut(i)[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        Ok(self.push(v, Op::ConcatCols(parts)))
    }

    pub fn gather_rows(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape(format!(
                "row {bad} of a {}-row table",
                t.rows()
            )));
        }
        let mut v = Mat::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(id));
        }
        Ok(self.push(v, Op::GatherRows { table, ids }))
    }

    /// `Σ weight · −log softmax(logits[row])[token]` restricted to `allowed`
    /// columns, as a `1 x 1` node.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        allowed: &[bool],
        targets: Vec<Target>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        if allowed.len() != lv.cols() {
            return Err(Error::Shape(format!(
                "{} allowed flags for {} columns",
                allowed.len(),
                lv.cols()
            )));
        }
        let mut probs = Mat::zeros(lv.rows(), lv.cols());
        for i in 0..lv.rows() {
            let p = masked_softmax(lv.row(i), allowed);
            probs.row_mut(i).copy_from_slice(&p);
        }
        let mut loss = 0.0;
        for t in &targets {
            if t.row >= lv.rows() || t.token >= lv.cols() || !allowed[t.token] {
                return Err(Error::contract(format!(
                    "target token {} at row {} is not predictable",
                    t.token, t.row
                )));
            }
            loss -= t.weight * probs.get(t.row, t.token).ln();
        }
        Ok(self.push(
            Mat::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets,
            },
        ))
    }

    /// Back-propagate from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward from {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Mat::scalar(1.0));
        let mut out = Grads::zeros_like(self.params);
        for v in (0..=root).rev() {
            let Some(g) = grads[v].take() else { continue };
            let mut send = |to: Var, d: Mat| -> Result<()> {
                match &mut grads[to] {
                    Some(acc) => acc.add_assign(&d),
                    slot => {
                        *slot = Some(d);
                        Ok(())
                    }
                }
            };
            match &self.nodes[v].op {
                Op::Const => {}
                Op::Param(id) => match &mut out.by_param[*id] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    send(*a, g.matmul_t(self.value(*b))?)?;
                    send(*b, self.value(*a).t_matmul(&g)?)?;
                }
                Op::MatMulT(a, b) => {
                    send(*a, g.matmul(self.value(*b))?)?;
                    send(*b, g.t_matmul(self.value(*a))?)?;
                }
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::AddRow(a, bias) => {
                    let mut db = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (x, y) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    send(*bias, db)?;
                    send(*a, g)?;
                }
                Op::Scale(a, s) => send(*a, g.scaled(*s))?,
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (dx, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        let s = sigmoid(xv);
                        *dx *= s * (1.0 + xv * (1.0 - s));
                    }
                    send(*a, d)?;
                }
                Op::RmsNorm { x, gain, inv } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain).row(0);
                    let n = xv.cols() as f64;
                    let mut dx = Mat::zeros(xv.rows(), xv.cols());
                    let mut dg = Mat::zeros(1, xv.cols());
                    for (i, &r) in inv.iter().enumerate() {
                        let (xr, gr) = (xv.row(i), g.row(i));
                        let dot: f64 = (0..xr.len()).map(|j| gr[j] * gv[j] * xr[j]).sum();
                        for j in 0..xr.len() {
                            dx.row_mut(i)[j] = gr[j] * gv[j] * r - xr[j] * dot * r * r * r / n;
                            dg.row_mut(0)[j] += gr[j] * xr[j] * r;
                        }
                    }
                    send(*x, dx)?;
                    send(*gain, dg)?;
                }
                Op::Softmax(a) => {
                    let y = self.nodes[v].value.as_ref().expect("softmax value");
                    let mut d = Mat::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, out) in d.row_mut(i).iter_mut().enumerate() {
                            *out = yr[j] * (gr[j] - dot);
                        }
                    }
                    send(*a, d)?;
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows(), xv.cols());
                    for i in 0..g.rows() {
                        d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    send(*x, d)?;
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut d = Mat::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            d.row_mut(i).copy_from_slice(&g.row(i)[at..at + w]);
                        }
                        at += w;
                        send(p, d)?;
                    }
                }
                Op::GatherRows { table, ids } => {
                    let t = self.value(*table);
                    let mut d = Mat::zeros(t.rows(), t.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for (x, y) in d.row_mut(id).iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    send(*table, d)?;
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                } => {
                    let up = g.get(0, 0);
                    let mut d = Mat::zeros(probs.rows(), probs.cols());
                    for t in targets {
                        let w = up * t.weight;
                        for (j, x) in d.row_mut(t.row).iter_mut().enumerate() {
                            *x += w * probs.get(t.row, j);
                        }
                        d.row_mut(t.row)[t.token] -= w;
                    }
                    send(*logits, d)?;
                }
            }
        }
        Ok(out)
    }
}
