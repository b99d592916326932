use std::collections::HashMap;

use super::tensor::{self, Tensor};
use super::{GraphError, ParamStore};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a (r x c) + b (1 x c)` broadcast over rows
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug)]
pub struct Graph<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    bound: HashMap<usize, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Graph<'s> {
    /// A graph with no parameters; only inputs.
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; gradients flow to it but it is not a parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: f64) -> Var {
        self.input(Tensor::filled(rows, cols, value))
    }

    /// Binds a named parameter from the store. Repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var, GraphError> {
        let store = self.store.ok_or_else(|| GraphError::UnknownParam(name.to_string()))?;
        let idx = store
            .index_of(name)
            .ok_or_else(|| GraphError::UnknownParam(name.to_string()))?;
        if let Some(v) = self.bound.get(&idx) {
            return Ok(*v);
        }
        let v = self.push(store.value_at(idx).clone(), Op::Param(idx));
        self.bound.insert(idx, v);
        Ok(v)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), GraphError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(GraphError::Shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(GraphError::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let out = tensor::matmul(self.value(a), self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "div")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        Ok(self.push(out, Op::Div(a, b)))
    }

    /// Adds a `1 x c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, GraphError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != [1, sa[1]] {
            return Err(GraphError::Shape(format!("add_row: {sa:?} + {sr:?}")));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        let cols = sa[1];
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v += r[k % cols];
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let first = parts
            .first()
            .ok_or_else(|| GraphError::Shape("concat of nothing".into()))?;
        let rows = self.shape(*first)[0];
        if let Some(p) = parts.iter().find(|p| self.shape(**p)[0] != rows) {
            return Err(GraphError::Shape(format!(
                "concat_cols: {rows} rows vs {:?}",
                self.shape(*p)
            )));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks along rows; all parts must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let first = parts
            .first()
            .ok_or_else(|| GraphError::Shape("concat of nothing".into()))?;
        let cols = self.shape(*first)[1];
        if let Some(p) = parts.iter().find(|p| self.shape(**p)[1] != cols) {
            return Err(GraphError::Shape(format!(
                "concat_rows: {cols} cols vs {:?}",
                self.shape(*p)
            )));
        }
        let rows: usize = parts.iter().map(|p| self.shape(*p)[0]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Dense layer `x·W + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, GraphError> {
        let xw = self.matmul(x, weight)?;
        self.add_row(xw, bias)
    }

    /// Weighted sum `Σ c_k v_k` of equally shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var, GraphError> {
        let (c0, v0) = *terms
            .first()
            .ok_or_else(|| GraphError::Shape("weighted sum of nothing".into()))?;
        let mut acc = self.scale(v0, c0);
        for &(c, v) in &terms[1..] {
            let t = self.scale(v, c);
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Backward, GraphError> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(GraphError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = tensor::matmul_nt(&g, self.value(*b));
                    let gb = tensor::matmul_tn(self.value(*a), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let vb = self.value(*b);
                    let ga = g.zip_map(vb, |x, y| x / y);
                    // d(a/b)/db = -(a/b)/b
                    let gb = g.zip_map(&out.zip_map(vb, |q, y| q / y), |x, r| -x * r);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let cols = g.cols();
                    let mut gr = vec![0.0; cols];
                    for (k, v) in g.data().iter().enumerate() {
                        gr[k % cols] += v;
                    }
                    accumulate(&mut grads, *row, Tensor::row(gr));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| x * c));
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::Tanh(a) => {
                    let ga = g.zip_map(out, |x, t| x * (1.0 - t * t));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| x * sigmoid(v));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(out, |x, s| x * s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(out, |x, e| x * e);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| x / v);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    let ga = g.zip_map(out, |x, r| 0.5 * x / r);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| 2.0 * x * v);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let [r, c] = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let [r, c] = self.shape(*a);
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut grads, *a, Tensor::filled(r, c, g.item() / n));
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.shape(*p)[1];
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        accumulate(&mut grads, *p, Tensor::new(rows, pc, data)?);
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pr = self.shape(*p)[0];
                        let data = g.data()[offset * cols..(offset + pr) * cols].to_vec();
                        accumulate(&mut grads, *p, Tensor::new(pr, cols, data)?);
                        offset += pr;
                    }
                }
            }
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Backward { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Backward {
    grads: Vec<Option<Tensor>>,
    /// (store index, node index) for every bound parameter
    params: Vec<(usize, usize)>,
}

impl Backward {
    /// Gradient of the loss with respect to `v`; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter in `store`, zero for unused ones.
    pub fn param_grads(&self, store: &ParamStore) -> super::Gradients {
        let mut out = super::Gradients::default();
        for (idx, (name, value)) in store.iter().enumerate() {
            let g = self
                .params
                .iter()
                .find(|(p, _)| *p == idx)
                .and_then(|(_, node)| self.grads[*node].clone())
                .unwrap_or_else(|| Tensor::zeros(value.rows(), value.cols()));
            out.insert(name.to_string(), g);
        }
        out
    }
}
