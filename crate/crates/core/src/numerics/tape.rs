//! A Wengert list over dense matrices.
//!
//! Every value on the tape is a row-major `rows × cols` matrix (vectors are
//! `1 × n` or `n × 1`, scalars `1 × 1`). Operations run eagerly and append a
//! node; [`Tape::backward`] walks the nodes once, newest to oldest, and
//! accumulates adjoints. Leaf gradients persist across `backward` calls.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use super::gemm::gemm;
use super::tensor::ParamTensor;
use crate::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulT(usize, usize),
    /// `a + 1·b` with `b` a single row.
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    LogSigmoid(usize),
    Square(usize),
    /// `10·tanh(x/5)`
    Squash(usize),
    Cols { src: usize, start: usize },
    ConcatCols(usize, usize),
    ConcatRows(Vec<usize>),
    GatherRows { table: usize, ids: Vec<usize> },
    LogSumExpRows(usize),
    PickPerRow { src: usize, idx: Vec<usize> },
    Sum(usize),
    ScorePairs { ctx: usize, weight: usize, bias: usize, ids: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
    tracked: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Vec<f64>>], j: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[j].tracked {
        return None;
    }
    let len = nodes[j].value.len();
    Some(adj[j].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage("variable does not belong to this tape".into()));
        }
        Ok(v.index)
    }

    fn idx(&self, v: Var) -> usize {
        self.check(v).expect("variable does not belong to this tape")
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, tracked: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let index = self.nodes.len();
        self.nodes.push(Node { rows, cols, value, grad: None, op, tracked });
        Var { tape: self.id, index }
    }

    fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    /// A leaf holding `values`; gradients flow into it when `tracked`.
    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>, tracked: bool) -> Var {
        assert_eq!(values.len(), rows * cols, "leaf values do not match {rows}x{cols}");
        self.push(rows, cols, values, Op::Leaf, tracked)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Var {
        self.leaf(rows, cols, values, false)
    }

    /// Copies a parameter onto the tape as a tracked leaf.
    pub fn param(&mut self, p: &ParamTensor) -> Var {
        let (r, c) = p.matrix_dims();
        self.leaf(r, c, p.values().to_vec(), true)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[self.idx(v)].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[self.idx(v)];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[self.idx(v)];
        assert_eq!(n.value.len(), 1, "not a scalar");
        n.value[0]
    }

    /// Accumulated gradient of a node, if any adjoint reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[self.idx(v)].grad.as_deref()
    }

    /// Adds the gradient accumulated on `v` into `p`'s gradient buffer.
    pub fn flush_grad(&self, v: Var, p: &mut ParamTensor) {
        let n = &self.nodes[self.idx(v)];
        assert_eq!(n.value.len(), p.len(), "flushing gradient into a tensor of another size");
        if let Some(g) = &n.grad {
            p.accumulate_grad(g);
        }
    }

    fn tracked(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].tracked)
    }

    fn unary(&mut self, a: Var, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Var {
        let i = self.idx(a);
        let n = self.node(i);
        let (r, c) = (n.rows, n.cols);
        let value = n.value.iter().map(|&x| f(x)).collect();
        let tracked = self.tracked(&[i]);
        self.push(r, c, value, op(i), tracked)
    }

    fn same_shape(&self, i: usize, j: usize, what: &str) {
        let (a, b) = (self.node(i), self.node(j));
        assert!(
            a.rows == b.rows && a.cols == b.cols,
            "{what}: {}x{} vs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
    }

    fn binary(&mut self, a: Var, b: Var, op: fn(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (i, j) = (self.idx(a), self.idx(b));
        self.same_shape(i, j, "elementwise op");
        let (x, y) = (self.node(i), self.node(j));
        let value = x.value.iter().zip(&y.value).map(|(&p, &q)| f(p, q)).collect();
        let (r, c) = (x.rows, x.cols);
        let tracked = self.tracked(&[i, j]);
        self.push(r, c, value, op(i, j), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let i = self.idx(a);
        let n = self.node(i);
        let (r, c) = (n.rows, n.cols);
        let value = n.value.iter().map(|&x| x * s).collect();
        let tracked = self.tracked(&[i]);
        self.push(r, c, value, Op::Scale(i, s), tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid, super::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh, libm::tanh)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid, super::log_sigmoid)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square, |x| x * x)
    }

    pub fn squash(&mut self, a: Var) -> Var {
        self.unary(a, Op::Squash, crate::objectives::squash)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (i, j) = (self.idx(a), self.idx(b));
        let (x, y) = (self.node(i), self.node(j));
        assert_eq!(x.cols, y.rows, "matmul: inner dimensions differ");
        let (m, k, n) = (x.rows, x.cols, y.cols);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &x.value, false, &y.value, false, 0.0, &mut out);
        let tracked = self.tracked(&[i, j]);
        self.push(m, n, out, Op::MatMul(i, j), tracked)
    }

    /// `a · bᵀ` for `a: n×k`, `b: m×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (i, j) = (self.idx(a), self.idx(b));
        let (x, y) = (self.node(i), self.node(j));
        assert_eq!(x.cols, y.cols, "matmul_t: inner dimensions differ");
        let (m, k, n) = (x.rows, x.cols, y.rows);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &x.value, false, &y.value, true, 0.0, &mut out);
        let tracked = self.tracked(&[i, j]);
        self.push(m, n, out, Op::MatMulT(i, j), tracked)
    }

    /// Adds the single row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (i, j) = (self.idx(a), self.idx(b));
        let (x, y) = (self.node(i), self.node(j));
        assert_eq!(y.value.len(), x.cols, "add_row: row length differs from column count");
        let mut out = x.value.clone();
        for row in out.chunks_mut(x.cols.max(1)) {
            add_into(row, &y.value);
        }
        let (r, c) = (x.rows, x.cols);
        let tracked = self.tracked(&[i, j]);
        self.push(r, c, out, Op::AddRow(i, j), tracked)
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let i = self.idx(a);
        let x = self.node(i);
        assert!(start + len <= x.cols, "cols: range out of bounds");
        let mut out = Vec::with_capacity(x.rows * len);
        for row in x.value.chunks(x.cols) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let r = x.rows;
        let tracked = self.tracked(&[i]);
        self.push(r, len, out, Op::Cols { src: i, start }, tracked)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (i, j) = (self.idx(a), self.idx(b));
        let (x, y) = (self.node(i), self.node(j));
        assert_eq!(x.rows, y.rows, "concat_cols: row counts differ");
        let cols = x.cols + y.cols;
        let mut out = Vec::with_capacity(x.rows * cols);
        for r in 0..x.rows {
            out.extend_from_slice(&x.value[r * x.cols..(r + 1) * x.cols]);
            out.extend_from_slice(&y.value[r * y.cols..(r + 1) * y.cols]);
        }
        let rows = x.rows;
        let tracked = self.tracked(&[i, j]);
        self.push(rows, cols, out, Op::ConcatCols(i, j), tracked)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect();
        let cols = self.node(idx[0]).cols;
        let mut rows = 0;
        let mut out = Vec::new();
        for &i in &idx {
            let n = self.node(i);
            assert_eq!(n.cols, cols, "concat_rows: column counts differ");
            rows += n.rows;
            out.extend_from_slice(&n.value);
        }
        let tracked = self.tracked(&idx);
        self.push(rows, cols, out, Op::ConcatRows(idx), tracked)
    }

    /// Row `ids[i]` of `table` becomes row `i` of the result.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.idx(table);
        let n = self.node(t);
        let cols = n.cols;
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            assert!(id < n.rows, "gather_rows: id {id} out of range {}", n.rows);
            out.extend_from_slice(&n.value[id * cols..(id + 1) * cols]);
        }
        let tracked = self.tracked(&[t]);
        self.push(ids.len(), cols, out, Op::GatherRows { table: t, ids: ids.to_vec() }, tracked)
    }

    /// Per-row log-sum-exp, producing an `n × 1` column.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        let x = self.node(i);
        let out: Vec<f64> = x.value.chunks(x.cols).map(super::logsumexp_unchecked).collect();
        let r = x.rows;
        let tracked = self.tracked(&[i]);
        self.push(r, 1, out, Op::LogSumExpRows(i), tracked)
    }

    /// `out[i] = a[i, idx[i]]`, an `n × 1` column.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Var {
        let i = self.idx(a);
        let x = self.node(i);
        assert_eq!(idx.len(), x.rows, "pick_per_row: one index per row required");
        let out = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < x.cols, "pick_per_row: column {c} out of range");
                x.value[r * x.cols + c]
            })
            .collect();
        let r = x.rows;
        let tracked = self.tracked(&[i]);
        self.push(r, 1, out, Op::PickPerRow { src: i, idx: idx.to_vec() }, tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        let s = self.node(i).value.iter().sum();
        let tracked = self.tracked(&[i]);
        self.push(1, 1, vec![s], Op::Sum(i), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Scores selected words against each context row:
    /// `out[i, r] = weight[ids[i·per_row + r]] · ctx[i] + bias[ids[i·per_row + r]]`.
    pub fn score_pairs(&mut self, ctx: Var, weight: Var, bias: Var, ids: &[usize], per_row: usize) -> Var {
        let (c, w, b) = (self.idx(ctx), self.idx(weight), self.idx(bias));
        let (cn, wn, bn) = (self.node(c), self.node(w), self.node(b));
        assert_eq!(cn.cols, wn.cols, "score_pairs: context and embedding widths differ");
        assert_eq!(bn.value.len(), wn.rows, "score_pairs: one bias per word required");
        assert_eq!(ids.len(), cn.rows * per_row, "score_pairs: ids must be rows × per_row");
        let d = cn.cols;
        let mut out = Vec::with_capacity(ids.len());
        for (k, &id) in ids.iter().enumerate() {
            assert!(id < wn.rows, "score_pairs: word id {id} out of range");
            let row = k / per_row.max(1);
            let cv = &cn.value[row * d..(row + 1) * d];
            let wv = &wn.value[id * d..(id + 1) * d];
            out.push(super::dot(wv, cv) + bn.value[id]);
        }
        let rows = cn.rows;
        let tracked = self.tracked(&[c, w, b]);
        self.push(rows, per_row, out, Op::ScorePairs { ctx: c, weight: w, bias: b, ids: ids.to_vec() }, tracked)
    }

    /// Back-propagates from a scalar `output`. Leaf gradients accumulate
    /// across calls; intermediate adjoints are recomputed each time.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out = self.check(output)?;
        if self.nodes[out].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got {}x{}",
                self.nodes[out].rows, self.nodes[out].cols
            )));
        }
        if !self.nodes[out].tracked {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=out).map(|_| None).collect();
        adj[out] = Some(vec![1.0]);
        for i in (0..=out).rev() {
            let Some(g) = adj[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => add_into(acc, &g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (x, y) = (&nodes[a], &nodes[b]);
                let (m, k, n) = (x.rows, x.cols, y.cols);
                if let Some(da) = slot(nodes, adj, a) {
                    gemm(m, n, k, g, false, &y.value, true, 1.0, da);
                }
                if let Some(db) = slot(nodes, adj, b) {
                    gemm(k, m, n, &x.value, true, g, false, 1.0, db);
                }
            }
            &Op::MatMulT(a, b) => {
                let (x, y) = (&nodes[a], &nodes[b]);
                let (m, k, n) = (x.rows, x.cols, y.rows);
                if let Some(da) = slot(nodes, adj, a) {
                    gemm(m, n, k, g, false, &y.value, false, 1.0, da);
                }
                if let Some(db) = slot(nodes, adj, b) {
                    gemm(n, m, k, g, true, &x.value, false, 1.0, db);
                }
            }
            &Op::AddRow(a, b) => {
                if let Some(da) = slot(nodes, adj, a) {
                    add_into(da, g);
                }
                let cols = nodes[b].value.len();
                if let Some(db) = slot(nodes, adj, b) {
                    for row in g.chunks(cols.max(1)) {
                        add_into(db, row);
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(da) = slot(nodes, adj, a) {
                    add_into(da, g);
                }
                if let Some(db) = slot(nodes, adj, b) {
                    add_into(db, g);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(da) = slot(nodes, adj, a) {
                    add_into(da, g);
                }
                if let Some(db) = slot(nodes, adj, b) {
                    for (d, s) in db.iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (x, y) = (&nodes[a].value, &nodes[b].value);
                if let Some(da) = slot(nodes, adj, a) {
                    for ((d, s), yv) in da.iter_mut().zip(g).zip(y) {
                        *d += s * yv;
                    }
                }
                if let Some(db) = slot(nodes, adj, b) {
                    for ((d, s), xv) in db.iter_mut().zip(g).zip(x) {
                        *d += s * xv;
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(da) = slot(nodes, adj, a) {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += s * gv;
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if let Some(da) = slot(nodes, adj, a) {
                    for ((d, gv), y) in da.iter_mut().zip(g).zip(&node.value) {
                        *d += gv * y * (1.0 - y);
                    }
                }
            }
            &Op::Tanh(a) => {
                if let Some(da) = slot(nodes, adj, a) {
                    for ((d, gv), y) in da.iter_mut().zip(g).zip(&node.value) {
                        *d += gv * (1.0 - y * y);
                    }
                }
            }
            &Op::LogSigmoid(a) => {
                let x = &nodes[a].value;
                if let Some(da) = slot(nodes, adj, a) {
                    for ((d, gv), xv) in da.iter_mut().zip(g).zip(x) {
                        *d += gv * super::sigmoid(-xv);
                    }
                }
            }
            &Op::Square(a) => {
                let x = &nodes[a].value;
                if let Some(da) = slot(nodes, adj, a) {
                    for ((d, gv), xv) in da.iter_mut().zip(g).zip(x) {
                        *d += 2.0 * xv * gv;
                    }
                }
            }
            &Op::Squash(a) => {
                if let Some(da) = slot(nodes, adj, a) {
                    for ((d, gv), y) in da.iter_mut().zip(g).zip(&node.value) {
                        let t = y / 10.0;
                        *d += gv * 2.0 * (1.0 - t * t);
                    }
                }
            }
            &Op::Cols { src, start } => {
                let src_cols = nodes[src].cols;
                let len = node.cols;
                if let Some(ds) = slot(nodes, adj, src) {
                    for (r, grow) in g.chunks(len.max(1)).enumerate() {
                        add_into(&mut ds[r * src_cols + start..r * src_cols + start + len], grow);
                    }
                }
            }
            &Op::ConcatCols(a, b) => {
                let (ac, bc) = (nodes[a].cols, nodes[b].cols);
                let rows = node.rows;
                if let Some(da) = slot(nodes, adj, a) {
                    for r in 0..rows {
                        add_into(&mut da[r * ac..(r + 1) * ac], &g[r * (ac + bc)..r * (ac + bc) + ac]);
                    }
                }
                if let Some(db) = slot(nodes, adj, b) {
                    for r in 0..rows {
                        add_into(&mut db[r * bc..(r + 1) * bc], &g[r * (ac + bc) + ac..(r + 1) * (ac + bc)]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    if let Some(dp) = slot(nodes, adj, p) {
                        add_into(dp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { table, ids } => {
                let cols = node.cols;
                if let Some(dt) = slot(nodes, adj, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            &Op::LogSumExpRows(a) => {
                let x = &nodes[a];
                let cols = x.cols;
                if let Some(da) = slot(nodes, adj, a) {
                    for r in 0..x.rows {
                        let lse = node.value[r];
                        let gr = g[r];
                        let row = &x.value[r * cols..(r + 1) * cols];
                        for (d, v) in da[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                            *d += gr * libm::exp(v - lse);
                        }
                    }
                }
            }
            Op::PickPerRow { src, idx } => {
                let cols = nodes[*src].cols;
                if let Some(ds) = slot(nodes, adj, *src) {
                    for (r, &c) in idx.iter().enumerate() {
                        ds[r * cols + c] += g[r];
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(da) = slot(nodes, adj, a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::ScorePairs { ctx, weight, bias, ids } => {
                let (ctx, weight, bias) = (*ctx, *weight, *bias);
                let d = nodes[ctx].cols;
                let per_row = node.cols.max(1);
                let cv = &nodes[ctx].value;
                let wv = &nodes[weight].value;
                if let Some(dc) = slot(nodes, adj, ctx) {
                    for (k, &id) in ids.iter().enumerate() {
                        let row = k / per_row;
                        let gk = g[k];
                        for (x, w) in dc[row * d..(row + 1) * d].iter_mut().zip(&wv[id * d..(id + 1) * d]) {
                            *x += gk * w;
                        }
                    }
                }
                if let Some(dw) = slot(nodes, adj, weight) {
                    for (k, &id) in ids.iter().enumerate() {
                        let row = k / per_row;
                        let gk = g[k];
                        for (x, c) in dw[id * d..(id + 1) * d].iter_mut().zip(&cv[row * d..(row + 1) * d]) {
                            *x += gk * c;
                        }
                    }
                }
                if let Some(db) = slot(nodes, adj, bias) {
                    for (k, &id) in ids.iter().enumerate() {
                        db[id] += g[k];
                    }
                }
            }
        }
    }
}
