//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation as a node holding its forward value
//! and the handles of its inputs. Nodes are appended in evaluation order,
//! so walking the node list backwards is a valid reverse topological order.
//! Row `i` of every batched value belongs to batch instance `i`.

use std::collections::BTreeMap;

use super::store::{Group, ParamId, ParamStore};
use super::{shape_err, NumError, Real, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err("Mat::new", format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("Mat::from_rows", "ragged rows"));
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn column(values: &[T]) -> Self {
        Mat {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// The single value of a `1 x 1` matrix.
    pub fn scalar(&self) -> Option<T> {
        (self.rows == 1 && self.cols == 1).then(|| self.data[0])
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<u32> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulCol(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    RowDot(Var, Var),
    RowSqL2(Var),
    RowL2(Var),
    Conv1d { input: Var, filters: Var, stride: usize },
    Sum(Var),
}

struct Node<T> {
    value: Mat<T>,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradients produced by [`Tape::backward`], dense and laid
/// out like the parameter itself.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    grads: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.grads.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Gradient of `id`, or zeros of the parameter's size when the
    /// parameter was not reached.
    pub fn dense(&self, store: &ParamStore<T>, id: ParamId) -> Vec<T> {
        self.grads
            .get(&id)
            .cloned()
            .unwrap_or_else(|| vec![T::zero(); store.get(id).data.len()])
    }

    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.grads
            .iter()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
            .map(|(id, _)| *id)
    }
}

/// Records a computation over parameters from a [`ParamStore`].
///
/// Parameters outside the trainable set enter the tape as constants, so
/// they never receive a gradient.
pub struct Tape<'s, T> {
    store: &'s ParamStore<T>,
    trainable: Vec<bool>,
    nodes: Vec<Node<T>>,
}

#[inline]
fn dot64<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

impl<'s, T: Real> Tape<'s, T> {
    /// Every parameter of `store` is trainable.
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Tape {
            store,
            trainable: vec![true; store.len()],
            nodes: Vec::new(),
        }
    }

    /// Only parameters whose group is listed receive gradients.
    pub fn with_groups(store: &'s ParamStore<T>, groups: &[Group]) -> Self {
        let trainable = store.iter().map(|(_, p)| groups.contains(&p.group)).collect();
        Tape {
            store,
            trainable,
            nodes: Vec::new(),
        }
    }

    /// No parameter receives a gradient; used for inference.
    pub fn frozen(store: &'s ParamStore<T>) -> Self {
        Self::with_groups(store, &[])
    }

    pub fn with_trainable(store: &'s ParamStore<T>, ids: &[ParamId]) -> Self {
        let mut trainable = vec![false; store.len()];
        for id in ids {
            trainable[id.0] = true;
        }
        Tape {
            store,
            trainable,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable.get(id.0).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Mat<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Mat {
            rows: 1,
            cols: 1,
            data: vec![T::of(value)],
        })
    }

    /// Copy of `v`'s value with no gradient path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Whole parameter block as a matrix.
    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.store.get(id);
        let value = Mat {
            rows: p.rows,
            cols: p.cols,
            data: p.data.clone(),
        };
        if self.is_trainable(id) {
            self.push(value, Op::Param(id), true)
        } else {
            self.push(value, Op::Leaf, false)
        }
    }

    /// Rows `rows` of a parameter block, one output row per index.
    pub fn gather(&mut self, id: ParamId, rows: &[u32]) -> Result<Var> {
        let p = self.store.get(id);
        let mut data = Vec::with_capacity(rows.len() * p.cols);
        for &r in rows {
            let r = r as usize;
            if r >= p.rows {
                return Err(shape_err("gather", format!("row {r} out of range for `{}` with {} rows", p.name, p.rows)));
            }
            data.extend_from_slice(p.row(r));
        }
        let value = Mat {
            rows: rows.len(),
            cols: p.cols,
            data,
        };
        Ok(if self.is_trainable(id) {
            self.push(value, Op::Gather { param: id, rows: rows.to_vec() }, true)
        } else {
            self.push(value, Op::Leaf, false)
        })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect();
        let value = Mat {
            rows: va.rows,
            cols: va.cols,
            data,
        };
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// `x + b` with the `1 x c` row `b` broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs != (1, xs.1) {
            return Err(shape_err("add_row", format!("{xs:?} + {bs:?}")));
        }
        let (vx, vb) = (self.value(x), self.value(b));
        let data = vx
            .data
            .chunks(xs.1.max(1))
            .flat_map(|row| row.iter().zip(&vb.data).map(|(a, c)| *a + *c))
            .collect();
        let value = Mat {
            rows: xs.0,
            cols: xs.1,
            data,
        };
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(value, Op::AddRow(x, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let s = T::of(c);
        let value = Mat {
            rows: v.rows,
            cols: v.cols,
            data: v.data.iter().map(|a| *a * s).collect(),
        };
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    /// Row `i` of `x` multiplied by the scalar `s[i]` (`s` is `rows x 1`).
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xs, ss) = (self.shape(x), self.shape(s));
        if ss != (xs.0, 1) {
            return Err(shape_err("mul_col", format!("{xs:?} * {ss:?}")));
        }
        let (vx, vs) = (self.value(x), self.value(s));
        let mut data = Vec::with_capacity(vx.data.len());
        for i in 0..xs.0 {
            let c = vs.data[i];
            data.extend(vx.row(i).iter().map(|a| *a * c));
        }
        let value = Mat {
            rows: xs.0,
            cols: xs.1,
            data,
        };
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(value, Op::MulCol(x, s), ng))
    }

    /// `x (b x n) . w (n x o)`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.1 != ws.0 {
            return Err(shape_err("matmul", format!("{xs:?} . {ws:?}")));
        }
        let (vx, vw) = (self.value(x), self.value(w));
        let (rows, inner, out) = (xs.0, xs.1, ws.1);
        let mut data = Vec::with_capacity(rows * out);
        let mut acc = vec![0.0f64; out];
        for i in 0..rows {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let xrow = vx.row(i);
            for p in 0..inner {
                let xv = xrow[p].as_f64();
                if xv == 0.0 {
                    continue;
                }
                let wrow = &vw.data[p * out..(p + 1) * out];
                for (a, wv) in acc.iter_mut().zip(wrow) {
                    *a += xv * wv.as_f64();
                }
            }
            data.extend(acc.iter().map(|a| T::of(*a)));
        }
        let value = Mat { rows, cols: out, data };
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(value, Op::MatMul(x, w), ng))
    }

    /// `x w + b` for a `1 x o` bias row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Mat {
            rows: v.rows,
            cols: v.cols,
            data: v.data.iter().map(|a| if *a > T::zero() { *a } else { T::zero() }).collect(),
        };
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    /// `[x]_+`, identical to [`Tape::relu`]; the subgradient at 0 is 0.
    pub fn hinge(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Mat {
            rows: v.rows,
            cols: v.cols,
            data: v.data.iter().map(|a| a.tanh()).collect(),
        };
        let ng = self.ng(x);
        self.push(value, Op::Tanh(x), ng)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(p) => self.shape(*p).0,
            None => return Err(shape_err("concat", "no inputs")),
        };
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(shape_err("concat", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let value = Mat { rows, cols, data };
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), ng))
    }

    /// Per-row inner product, `rows x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = (0..va.rows).map(|i| T::of(dot64(va.row(i), vb.row(i)))).collect();
        let value = Mat { rows: va.rows, cols: 1, data };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::RowDot(a, b), ng))
    }

    /// Per-row squared L2 norm, `rows x 1`.
    pub fn row_sq_l2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = (0..v.rows).map(|i| T::of(dot64(v.row(i), v.row(i)))).collect();
        let value = Mat { rows: v.rows, cols: 1, data };
        let ng = self.ng(x);
        self.push(value, Op::RowSqL2(x), ng)
    }

    /// Per-row L2 norm, `rows x 1`.
    pub fn row_l2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = (0..v.rows).map(|i| T::of(dot64(v.row(i), v.row(i)).sqrt())).collect();
        let value = Mat { rows: v.rows, cols: 1, data };
        let ng = self.ng(x);
        self.push(value, Op::RowL2(x), ng)
    }

    /// Valid 1-D convolution of every row of `x` (`b x len`) with each row of
    /// `filters` (`tau x width`). Output row layout is filter-major:
    /// `tau` blocks of `(len - width) / stride + 1` positions.
    pub fn conv1d(&mut self, x: Var, filters: Var, stride: usize) -> Result<Var> {
        let ((rows, len), (tau, width)) = (self.shape(x), self.shape(filters));
        if width == 0 || width > len || stride == 0 {
            return Err(shape_err(
                "conv1d",
                format!("width {width} and stride {stride} invalid for input length {len}"),
            ));
        }
        let positions = (len - width) / stride + 1;
        let (vx, vf) = (self.value(x), self.value(filters));
        let mut data = Vec::with_capacity(rows * tau * positions);
        for i in 0..rows {
            let xrow = vx.row(i);
            for f in 0..tau {
                let frow = vf.row(f);
                for p in 0..positions {
                    let start = p * stride;
                    data.push(T::of(dot64(frow, &xrow[start..start + width])));
                }
            }
        }
        let value = Mat {
            rows,
            cols: tau * positions,
            data,
        };
        let ng = self.ng(x) || self.ng(filters);
        Ok(self.push(value, Op::Conv1d { input: x, filters, stride }, ng))
    }

    /// Sum of all elements, `1 x 1`.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data.iter().map(|v| v.as_f64()).sum();
        let value = Mat {
            rows: 1,
            cols: 1,
            data: vec![T::of(total)],
        };
        let ng = self.ng(x);
        self.push(value, Op::Sum(x), ng)
    }

    /// On/off pattern of every ReLU and hinge on the tape. Two evaluations
    /// with the same pattern lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                sig.extend(self.value(x).data.iter().map(|v| *v > T::zero()));
            }
        }
        sig
    }

    /// Gradients of the scalar `root` with respect to every trainable
    /// parameter reachable from it.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(NumError::NonScalarRoot { rows, cols });
        }
        let mut out = Gradients::default();
        if !self.ng(root) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => accumulate_param(&mut out, self.store, *id, &g, None),
                Op::Gather { param, rows } => accumulate_param(&mut out, self.store, *param, &g, Some(rows)),
                Op::Add(a, b) => {
                    self.send(&mut grads, *a, || g.clone());
                    self.send(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.send(&mut grads, *a, || g.clone());
                    self.send(&mut grads, *b, || g.iter().map(|v| -*v).collect());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    self.send(&mut grads, *a, || g.iter().zip(vb).map(|(x, y)| *x * *y).collect());
                    self.send(&mut grads, *b, || g.iter().zip(va).map(|(x, y)| *x * *y).collect());
                }
                Op::AddRow(x, b) => {
                    let cols = node.value.cols;
                    self.send(&mut grads, *x, || g.clone());
                    self.send(&mut grads, *b, || {
                        let mut acc = vec![0.0f64; cols];
                        for row in g.chunks(cols.max(1)) {
                            for (a, v) in acc.iter_mut().zip(row) {
                                *a += v.as_f64();
                            }
                        }
                        acc.into_iter().map(T::of).collect()
                    });
                }
                Op::Scale(x, c) => {
                    let s = T::of(*c);
                    self.send(&mut grads, *x, || g.iter().map(|v| *v * s).collect());
                }
                Op::MulCol(x, s) => {
                    let (vx, vs) = (self.value(*x), self.value(*s));
                    let cols = vx.cols;
                    self.send(&mut grads, *x, || {
                        let mut d = Vec::with_capacity(g.len());
                        for i in 0..vx.rows {
                            let c = vs.data[i];
                            d.extend(g[i * cols..(i + 1) * cols].iter().map(|v| *v * c));
                        }
                        d
                    });
                    self.send(&mut grads, *s, || {
                        (0..vx.rows)
                            .map(|i| T::of(dot64(&g[i * cols..(i + 1) * cols], vx.row(i))))
                            .collect()
                    });
                }
                Op::MatMul(x, w) => {
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    let (rows, inner, out_c) = (vx.rows, vx.cols, vw.cols);
                    self.send(&mut grads, *x, || {
                        let mut d = Vec::with_capacity(rows * inner);
                        for i in 0..rows {
                            let grow = &g[i * out_c..(i + 1) * out_c];
                            for p in 0..inner {
                                d.push(T::of(dot64(grow, &vw.data[p * out_c..(p + 1) * out_c])));
                            }
                        }
                        d
                    });
                    self.send(&mut grads, *w, || {
                        let mut acc = vec![0.0f64; inner * out_c];
                        for i in 0..rows {
                            let grow = &g[i * out_c..(i + 1) * out_c];
                            for (p, xv) in vx.row(i).iter().enumerate() {
                                let xv = xv.as_f64();
                                if xv == 0.0 {
                                    continue;
                                }
                                for (a, gv) in acc[p * out_c..(p + 1) * out_c].iter_mut().zip(grow) {
                                    *a += xv * gv.as_f64();
                                }
                            }
                        }
                        acc.into_iter().map(T::of).collect()
                    });
                }
                Op::Relu(x) => {
                    let vx = &self.value(*x).data;
                    self.send(&mut grads, *x, || {
                        g.iter()
                            .zip(vx)
                            .map(|(gv, xv)| if *xv > T::zero() { *gv } else { T::zero() })
                            .collect()
                    });
                }
                Op::Tanh(x) => {
                    let y = &node.value.data;
                    self.send(&mut grads, *x, || {
                        g.iter().zip(y).map(|(gv, yv)| *gv * (T::one() - *yv * *yv)).collect()
                    });
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows;
                    let total = node.value.cols;
                    let mut offset = 0;
                    for p in parts {
                        let c = self.shape(*p).1;
                        self.send(&mut grads, *p, || {
                            let mut d = Vec::with_capacity(rows * c);
                            for i in 0..rows {
                                d.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                            }
                            d
                        });
                        offset += c;
                    }
                }
                Op::RowDot(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.send(&mut grads, *a, || scale_rows(vb, &g));
                    self.send(&mut grads, *b, || scale_rows(va, &g));
                }
                Op::RowSqL2(x) => {
                    let vx = self.value(*x);
                    let twice: Vec<T> = g.iter().map(|v| *v + *v).collect();
                    self.send(&mut grads, *x, || scale_rows(vx, &twice));
                }
                Op::RowL2(x) => {
                    let vx = self.value(*x);
                    let coef: Vec<T> = g
                        .iter()
                        .zip(&node.value.data)
                        .map(|(gv, n)| if *n > T::zero() { *gv / *n } else { T::zero() })
                        .collect();
                    self.send(&mut grads, *x, || scale_rows(vx, &coef));
                }
                Op::Conv1d { input, filters, stride } => {
                    let (vx, vf) = (self.value(*input), self.value(*filters));
                    let (rows, len) = vx.shape();
                    let (tau, width) = vf.shape();
                    let positions = (len - width) / stride + 1;
                    let cols = node.value.cols;
                    self.send(&mut grads, *input, || {
                        let mut d = vec![0.0f64; rows * len];
                        for i in 0..rows {
                            for f in 0..tau {
                                let frow = vf.row(f);
                                for p in 0..positions {
                                    let gv = g[i * cols + f * positions + p].as_f64();
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    let base = i * len + p * stride;
                                    for (j, fv) in frow.iter().enumerate() {
                                        d[base + j] += gv * fv.as_f64();
                                    }
                                }
                            }
                        }
                        d.into_iter().map(T::of).collect()
                    });
                    self.send(&mut grads, *filters, || {
                        let mut d = vec![0.0f64; tau * width];
                        for i in 0..rows {
                            let xrow = vx.row(i);
                            for f in 0..tau {
                                for p in 0..positions {
                                    let gv = g[i * cols + f * positions + p].as_f64();
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    let start = p * stride;
                                    for j in 0..width {
                                        d[f * width + j] += gv * xrow[start + j].as_f64();
                                    }
                                }
                            }
                        }
                        d.into_iter().map(T::of).collect()
                    });
                }
                Op::Sum(x) => {
                    let n = self.value(*x).data.len();
                    let s = g[0];
                    self.send(&mut grads, *x, || vec![s; n]);
                }
            }
        }
        Ok(out)
    }

    fn send(&self, grads: &mut [Option<Vec<T>>], to: Var, make: impl FnOnce() -> Vec<T>) {
        if !self.ng(to) {
            return;
        }
        let d = make();
        match &mut grads[to.0] {
            Some(existing) => existing.iter_mut().zip(d).for_each(|(a, b)| *a = *a + b),
            slot @ None => *slot = Some(d),
        }
    }
}

fn scale_rows<T: Real>(m: &Mat<T>, coef: &[T]) -> Vec<T> {
    let mut d = Vec::with_capacity(m.data.len());
    for i in 0..m.rows {
        let c = coef[i];
        d.extend(m.row(i).iter().map(|v| *v * c));
    }
    d
}

fn accumulate_param<T: Real>(
    out: &mut Gradients<T>,
    store: &ParamStore<T>,
    id: ParamId,
    g: &[T],
    rows: Option<&Vec<u32>>,
) {
    let p = store.get(id);
    let buf = out
        .grads
        .entry(id)
        .or_insert_with(|| vec![T::zero(); p.data.len()]);
    match rows {
        None => buf.iter_mut().zip(g).for_each(|(a, b)| *a = *a + *b),
        Some(rows) => {
            let cols = p.cols;
            for (i, r) in rows.iter().enumerate() {
                let r = *r as usize;
                for (a, b) in buf[r * cols..(r + 1) * cols].iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                    *a = *a + *b;
                }
            }
        }
    }
}
