use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::propagation::Propagator;
use crate::C64;

/// Stable identifier of a trainable parameter block.
pub type ParamId = usize;

/// Flat real or complex value carried by a tape node.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Tensor {
    pub fn scalar(v: f64) -> Self {
        Tensor::Real(vec![v])
    }

    pub fn len(&self) -> usize {
        match self {
            Tensor::Real(v) => v.len(),
            Tensor::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Tensor::Complex(_))
    }

    pub fn real(&self) -> Result<&[f64]> {
        match self {
            Tensor::Real(v) => Ok(v),
            Tensor::Complex(_) => Err(Error::Autodiff("expected a real tensor".into())),
        }
    }

    pub fn complex(&self) -> Result<&[C64]> {
        match self {
            Tensor::Complex(v) => Ok(v),
            Tensor::Real(_) => Err(Error::Autodiff("expected a complex tensor".into())),
        }
    }

    fn add_assign(&mut self, other: Tensor) {
        match (self, other) {
            (Tensor::Real(a), Tensor::Real(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (Tensor::Complex(a), Tensor::Complex(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            _ => unreachable!("adjoint dtype mismatch"),
        }
    }

    fn real_unchecked(&self) -> &[f64] {
        match self {
            Tensor::Real(v) => v,
            Tensor::Complex(_) => unreachable!("expected real adjoint"),
        }
    }

    fn complex_unchecked(&self) -> &[C64] {
        match self {
            Tensor::Complex(v) => v,
            Tensor::Real(_) => unreachable!("expected complex adjoint"),
        }
    }
}

/// Rectangular block of pixels `[row0, row0 + rows) x [col0, col0 + cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.row0 && i < self.row0 + self.rows && j >= self.col0 && j < self.col0 + self.cols
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.row0 < other.row0 + other.rows
            && other.row0 < self.row0 + self.rows
            && self.col0 < other.col0 + other.cols
            && other.col0 < self.col0 + self.cols
    }
}

/// Operation recorded on a tape together with what its adjoint rule needs.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Sum,
    Mean,
    /// `a·exp(j·scale·x)`
    ExpJ {
        scale: f64,
    },
    Sigmoid,
    /// Hard threshold at zero with identity backward.
    StraightThrough,
    ToComplex,
    AbsSq,
    Propagate(Arc<Propagator>),
    /// Constant real matrix times a vector; `rows x cols`, row-major.
    Linear {
        matrix: Arc<Vec<f64>>,
        rows: usize,
        cols: usize,
    },
    /// Trainable matrix (first parent) times a vector (second parent).
    MatVec {
        rows: usize,
        cols: usize,
    },
    RegionSum {
        regions: Arc<Vec<Region>>,
        n: usize,
    },
    Gather(Arc<Vec<usize>>),
    Mse(Arc<Vec<f64>>),
    SoftmaxXent(usize),
    Selector {
        temperature: f64,
        bank: Arc<Vec<f64>>,
        filters: usize,
        samples: usize,
    },
    RegBinary,
    RegCorrelation,
    RegTransmittance(f64),
    RegShots,
    NormL1,
    NormL2,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::ExpJ { .. } => "exp_j",
            Op::Sigmoid => "sigmoid",
            Op::StraightThrough => "straight_through",
            Op::ToComplex => "to_complex",
            Op::AbsSq => "abs_sq",
            Op::Propagate(_) => "propagate",
            Op::Linear { .. } => "linear",
            Op::MatVec { .. } => "matvec",
            Op::RegionSum { .. } => "region_sum",
            Op::Gather(_) => "gather",
            Op::Mse(_) => "mse",
            Op::SoftmaxXent(_) => "softmax_xent",
            Op::Selector { .. } => "selector",
            Op::RegBinary => "reg_binary",
            Op::RegCorrelation => "reg_correlation",
            Op::RegTransmittance(_) => "reg_transmittance",
            Op::RegShots => "reg_shots",
            Op::NormL1 => "norm_l1",
            Op::NormL2 => "norm_l2",
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    parents: Vec<usize>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Append-only record of one forward pass.
///
/// Nodes are stored in creation order, which is a topological order because
/// every operation's inputs exist before it is recorded.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of non-leaf nodes.
    pub fn op_count(&self) -> usize {
        self.nodes.borrow().iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    /// Operation names in recorded (topological) order, leaves excluded.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| n.op.name())
            .collect()
    }

    pub fn parents(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.index].parents.clone()
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        self.nodes.borrow()[v.index].value.clone()
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        match t.as_ref() {
            Tensor::Real(x) if x.len() == 1 => Ok(x[0]),
            _ => Err(Error::Autodiff("expected a real scalar".into())),
        }
    }

    fn leaf(&self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
            param,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    /// Trainable real parameter block; its gradient is reported under `id`.
    pub fn param(&self, id: ParamId, values: Vec<f64>) -> Var {
        self.leaf(Tensor::Real(values), true, Some(id))
    }

    /// Differentiable input that is not a named parameter.
    pub fn input(&self, value: Tensor) -> Var {
        self.leaf(value, true, None)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false, None)
    }

    /// Appends an operation node; all inputs must belong to this tape.
    pub(crate) fn record(&self, op: Op, inputs: &[Var], value: Tensor) -> Result<Var> {
        if inputs.iter().any(|v| v.tape != self.id) {
            return Err(Error::CrossTape);
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|v| nodes[v.index].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            parents: inputs.iter().map(|v| v.index).collect(),
            requires_grad,
            param: None,
        });
        Ok(Var {
            tape: self.id,
            index: nodes.len() - 1,
        })
    }

    fn check(&self, vars: &[Var]) -> Result<()> {
        if vars.iter().any(|v| v.tape != self.id) {
            Err(Error::CrossTape)
        } else {
            Ok(())
        }
    }

    fn values_of(&self, vars: &[Var]) -> Result<Vec<Rc<Tensor>>> {
        self.check(vars)?;
        Ok(vars.iter().map(|v| self.value(*v)).collect())
    }

    /// Reverse sweep from a real scalar `loss`.
    ///
    /// Complex adjoints follow the convention `ḡ = ∂L/∂Re z + j ∂L/∂Im z`, so a
    /// linear map propagates adjoints through its conjugate transpose and the
    /// gradients of real parameters are real.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id {
            return Err(Error::Autodiff("loss is not recorded on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        match nodes[loss.index].value.as_ref() {
            Tensor::Real(v) if v.len() == 1 => {}
            _ => return Err(Error::Autodiff("backward needs a real scalar loss".into())),
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.index + 1];
        adj[loss.index] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.index).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || node.parents.is_empty() {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            let parent_vals: Vec<&Tensor> = node.parents.iter().map(|p| nodes[*p].value.as_ref()).collect();
            let grads = local_backward(&node.op, &parent_vals, &node.value, &g);
            adj[idx] = Some(g);
            for (p, pg) in node.parents.iter().zip(grads) {
                if !nodes[*p].requires_grad {
                    continue;
                }
                match &mut adj[*p] {
                    Some(acc) => acc.add_assign(pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let mut params = BTreeMap::new();
        for (idx, node) in nodes.iter().enumerate().take(loss.index + 1) {
            if let Some(id) = node.param {
                let g = match &adj[idx] {
                    Some(t) => t.real_unchecked().to_vec(),
                    None => vec![0.0; node.value.len()],
                };
                match params.entry(id) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(g);
                    }
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        e.get_mut().iter_mut().zip(g).for_each(|(a, b): (&mut f64, f64)| *a += b);
                    }
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            nodes: adj,
            params: GradientMap(params),
        })
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.values_of(&[a, b])?;
        let out = match (v[0].as_ref(), v[1].as_ref()) {
            (Tensor::Real(x), Tensor::Real(y)) if x.len() == y.len() => {
                Tensor::Real(x.iter().zip(y).map(|(p, q)| p + q).collect())
            }
            (Tensor::Complex(x), Tensor::Complex(y)) if x.len() == y.len() => {
                Tensor::Complex(x.iter().zip(y).map(|(p, q)| p + q).collect())
            }
            (x, y) => return Err(shape_err(describe(x), describe(y))),
        };
        self.record(Op::Add, &[a, b], out)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.values_of(&[a, b])?;
        let out = match (v[0].as_ref(), v[1].as_ref()) {
            (Tensor::Real(x), Tensor::Real(y)) if x.len() == y.len() => {
                Tensor::Real(x.iter().zip(y).map(|(p, q)| p - q).collect())
            }
            (Tensor::Complex(x), Tensor::Complex(y)) if x.len() == y.len() => {
                Tensor::Complex(x.iter().zip(y).map(|(p, q)| p - q).collect())
            }
            (x, y) => return Err(shape_err(describe(x), describe(y))),
        };
        self.record(Op::Sub, &[a, b], out)
    }

    /// Elementwise product of two tensors of the same dtype.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.values_of(&[a, b])?;
        let out = match (v[0].as_ref(), v[1].as_ref()) {
            (Tensor::Real(x), Tensor::Real(y)) if x.len() == y.len() => {
                Tensor::Real(x.iter().zip(y).map(|(p, q)| p * q).collect())
            }
            (Tensor::Complex(x), Tensor::Complex(y)) if x.len() == y.len() => {
                Tensor::Complex(x.iter().zip(y).map(|(p, q)| p * q).collect())
            }
            (x, y) => return Err(shape_err(describe(x), describe(y))),
        };
        self.record(Op::Mul, &[a, b], out)
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = match v[0].as_ref() {
            Tensor::Real(x) => Tensor::Real(x.iter().map(|p| p * c).collect()),
            Tensor::Complex(x) => Tensor::Complex(x.iter().map(|p| p * c).collect()),
        };
        self.record(Op::Scale(c), &[a], out)
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let s = v[0].real()?.iter().sum();
        self.record(Op::Sum, &[a], Tensor::scalar(s))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let x = v[0].real()?;
        if x.is_empty() {
            return Err(Error::Autodiff("mean of empty tensor".into()));
        }
        let s = x.iter().sum::<f64>() / x.len() as f64;
        self.record(Op::Mean, &[a], Tensor::scalar(s))
    }

    /// `amplitude·exp(j·scale·x)` for a real `x`; amplitude defaults to 1.
    pub fn exp_j(&self, a: Var, scale: f64, amplitude: Option<Arc<Vec<f64>>>) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let x = v[0].real()?;
        if let Some(amp) = &amplitude {
            if amp.len() != x.len() {
                return Err(shape_err(x.len(), amp.len()));
            }
        }
        let out = x
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let r = amplitude.as_ref().map_or(1.0, |a| a[k]);
                C64::from_polar(r, scale * p)
            })
            .collect();
        self.record(Op::ExpJ { scale }, &[a], Tensor::Complex(out))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = v[0].real()?.iter().map(|&p| sigmoid(p)).collect();
        self.record(Op::Sigmoid, &[a], Tensor::Real(out))
    }

    /// `1` where `x >= 0`, else `0`; the backward pass passes the adjoint through unchanged.
    pub fn straight_through(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = v[0].real()?.iter().map(|&p| if p >= 0.0 { 1.0 } else { 0.0 }).collect();
        self.record(Op::StraightThrough, &[a], Tensor::Real(out))
    }

    pub fn to_complex(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = v[0].real()?.iter().map(|&p| C64::new(p, 0.0)).collect();
        self.record(Op::ToComplex, &[a], Tensor::Complex(out))
    }

    /// `|z|²`, elementwise.
    pub fn abs_sq(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = v[0].complex()?.iter().map(|p| p.norm_sqr()).collect();
        self.record(Op::AbsSq, &[a], Tensor::Real(out))
    }

    // ---- linear maps -------------------------------------------------

    pub fn propagate(&self, a: Var, prop: Arc<Propagator>) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let x = v[0].complex()?;
        if x.len() != prop.n() * prop.n() {
            return Err(shape_err(prop.n() * prop.n(), x.len()));
        }
        let out = prop.apply(x);
        self.record(Op::Propagate(prop), &[a], Tensor::Complex(out))
    }

    /// Constant `rows x cols` real matrix applied to a real vector.
    pub fn linear(&self, a: Var, matrix: Arc<Vec<f64>>, rows: usize, cols: usize) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let x = v[0].real()?;
        if x.len() != cols || matrix.len() != rows * cols {
            return Err(shape_err(format!("{rows}x{cols} matrix"), format!("vector of {}", x.len())));
        }
        let out = matvec(&matrix, x, rows, cols);
        self.record(Op::Linear { matrix, rows, cols }, &[a], Tensor::Real(out))
    }

    /// `W·x` with both `W` (`rows x cols`, row-major) and `x` differentiable.
    pub fn matvec(&self, w: Var, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.values_of(&[w, x])?;
        let (wm, xv) = (v[0].real()?, v[1].real()?);
        if wm.len() != rows * cols || xv.len() != cols {
            return Err(shape_err(
                format!("{rows}x{cols} matrix and vector of {cols}"),
                format!("{} weights and vector of {}", wm.len(), xv.len()),
            ));
        }
        let out = matvec(wm, xv, rows, cols);
        self.record(Op::MatVec { rows, cols }, &[w, x], Tensor::Real(out))
    }

    /// Sums an `n x n` real image over each region.
    pub fn region_sum(&self, a: Var, regions: Arc<Vec<Region>>, n: usize) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let x = v[0].real()?;
        if x.len() != n * n {
            return Err(shape_err(n * n, x.len()));
        }
        let out = regions
            .iter()
            .map(|r| {
                (r.row0..r.row0 + r.rows)
                    .map(|i| x[i * n + r.col0..i * n + r.col0 + r.cols].iter().sum::<f64>())
                    .sum()
            })
            .collect();
        self.record(Op::RegionSum { regions, n }, &[a], Tensor::Real(out))
    }

    /// Picks `x[indices[k]]` for every `k`.
    pub fn gather(&self, a: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let x = v[0].real()?;
        if let Some(bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::Autodiff(format!("gather index {bad} out of range {}", x.len())));
        }
        let out = indices.iter().map(|&i| x[i]).collect();
        self.record(Op::Gather(indices), &[a], Tensor::Real(out))
    }

    // ---- losses and regularizers ---------------------------------------

    /// Mean squared difference to a constant target.
    pub fn mse(&self, a: Var, target: Arc<Vec<f64>>) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let x = v[0].real()?;
        if x.len() != target.len() || x.is_empty() {
            return Err(shape_err(target.len(), x.len()));
        }
        let out = crate::loss::mse(x, &target)?;
        self.record(Op::Mse(target), &[a], Tensor::scalar(out))
    }

    pub fn softmax_xent(&self, scores: Var, label: usize) -> Result<Var> {
        let v = self.values_of(&[scores])?;
        let out = crate::loss::softmax_xent(v[0].real()?, label)?;
        self.record(Op::SoftmaxXent(label), &[scores], Tensor::scalar(out))
    }

    /// Per-pixel softmax selection over a filter bank.
    ///
    /// `weights` holds `P x F` scores; `bank` holds `F x W` responses; the
    /// result is `P x W`.
    pub fn selector(&self, weights: Var, bank: Arc<Vec<f64>>, filters: usize, samples: usize, temperature: f64) -> Result<Var> {
        let v = self.values_of(&[weights])?;
        let x = v[0].real()?;
        if filters == 0 || x.len() % filters != 0 || bank.len() != filters * samples {
            return Err(shape_err(
                format!("P x {filters} weights with {filters} x {samples} bank"),
                format!("{} weights and {} bank entries", x.len(), bank.len()),
            ));
        }
        let out = crate::elements::selector_forward(x, &bank, filters, samples, temperature)?;
        self.record(
            Op::Selector {
                temperature,
                bank,
                filters,
                samples,
            },
            &[weights],
            Tensor::Real(out),
        )
    }

    pub fn reg_binary(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = crate::regularizers::reg_binary(v[0].real()?);
        self.record(Op::RegBinary, &[a], Tensor::scalar(out))
    }

    pub fn reg_correlation(&self, shots: &[Var]) -> Result<Var> {
        let v = self.values_of(shots)?;
        let slices: Vec<&[f64]> = v.iter().map(|t| t.real()).collect::<Result<_>>()?;
        let out = crate::regularizers::reg_correlation(&slices)?;
        self.record(Op::RegCorrelation, shots, Tensor::scalar(out))
    }

    pub fn reg_transmittance(&self, a: Var, target: f64) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = crate::regularizers::reg_transmittance(v[0].real()?, target)?;
        self.record(Op::RegTransmittance(target), &[a], Tensor::scalar(out))
    }

    pub fn reg_shots(&self, shots: &[Var]) -> Result<Var> {
        let v = self.values_of(shots)?;
        let slices: Vec<&[f64]> = v.iter().map(|t| t.real()).collect::<Result<_>>()?;
        let out = crate::regularizers::reg_shots(&slices)?;
        self.record(Op::RegShots, shots, Tensor::scalar(out))
    }

    pub fn norm_l1(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = v[0].real()?.iter().map(|p| p.abs()).sum();
        self.record(Op::NormL1, &[a], Tensor::scalar(out))
    }

    pub fn norm_l2(&self, a: Var) -> Result<Var> {
        let v = self.values_of(&[a])?;
        let out = v[0].real()?.iter().map(|p| p * p).sum::<f64>().sqrt();
        self.record(Op::NormL2, &[a], Tensor::scalar(out))
    }
}

fn describe(t: &Tensor) -> String {
    format!("{} tensor of {}", if t.is_complex() { "complex" } else { "real" }, t.len())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matvec(m: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Adjoints of an operation's inputs given its output adjoint `g`.
fn local_backward(op: &Op, inputs: &[&Tensor], out: &Tensor, g: &Tensor) -> Vec<Tensor> {
    match op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![g.clone(), g.clone()],
        Op::Sub => {
            let neg = match g {
                Tensor::Real(v) => Tensor::Real(v.iter().map(|x| -x).collect()),
                Tensor::Complex(v) => Tensor::Complex(v.iter().map(|x| -x).collect()),
            };
            vec![g.clone(), neg]
        }
        Op::Mul => match (inputs[0], inputs[1], g) {
            (Tensor::Real(a), Tensor::Real(b), Tensor::Real(g)) => vec![
                Tensor::Real(g.iter().zip(b).map(|(g, b)| g * b).collect()),
                Tensor::Real(g.iter().zip(a).map(|(g, a)| g * a).collect()),
            ],
            (Tensor::Complex(a), Tensor::Complex(b), Tensor::Complex(g)) => vec![
                Tensor::Complex(g.iter().zip(b).map(|(g, b)| g * b.conj()).collect()),
                Tensor::Complex(g.iter().zip(a).map(|(g, a)| g * a.conj()).collect()),
            ],
            _ => unreachable!("mul dtype mismatch"),
        },
        Op::Scale(c) => vec![match g {
            Tensor::Real(v) => Tensor::Real(v.iter().map(|x| x * c).collect()),
            Tensor::Complex(v) => Tensor::Complex(v.iter().map(|x| x * c).collect()),
        }],
        Op::Sum => {
            let g0 = g.real_unchecked()[0];
            vec![Tensor::Real(vec![g0; inputs[0].len()])]
        }
        Op::Mean => {
            let n = inputs[0].len();
            vec![Tensor::Real(vec![g.real_unchecked()[0] / n as f64; n])]
        }
        Op::ExpJ { scale, .. } => {
            let phi = out.complex_unchecked();
            let gc = g.complex_unchecked();
            // dφ/dx = j·s·φ  ⇒  ∂L/∂x = s·Re(conj(ḡ)·jφ)
            vec![Tensor::Real(
                phi.iter()
                    .zip(gc)
                    .map(|(p, g)| scale * (-g.re * p.im + g.im * p.re))
                    .collect(),
            )]
        }
        Op::Sigmoid => {
            let y = out.real_unchecked();
            vec![Tensor::Real(
                g.real_unchecked().iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            )]
        }
        Op::StraightThrough => vec![g.clone()],
        Op::ToComplex => vec![Tensor::Real(g.complex_unchecked().iter().map(|z| z.re).collect())],
        Op::AbsSq => {
            let z = inputs[0].complex_unchecked();
            vec![Tensor::Complex(
                z.iter().zip(g.real_unchecked()).map(|(z, g)| z * (2.0 * g)).collect(),
            )]
        }
        Op::Propagate(p) => vec![Tensor::Complex(p.adjoint(g.complex_unchecked()))],
        Op::Linear { matrix, rows, cols } => {
            let gv = g.real_unchecked();
            let mut gx = vec![0.0; *cols];
            for r in 0..*rows {
                let row = &matrix[r * cols..(r + 1) * cols];
                for (acc, m) in gx.iter_mut().zip(row) {
                    *acc += m * gv[r];
                }
            }
            vec![Tensor::Real(gx)]
        }
        Op::MatVec { rows, cols } => {
            let w = inputs[0].real_unchecked();
            let x = inputs[1].real_unchecked();
            let gv = g.real_unchecked();
            let mut gw = vec![0.0; rows * cols];
            let mut gx = vec![0.0; *cols];
            for r in 0..*rows {
                let row = &w[r * cols..(r + 1) * cols];
                let grow = &mut gw[r * cols..(r + 1) * cols];
                for c in 0..*cols {
                    grow[c] = gv[r] * x[c];
                    gx[c] += row[c] * gv[r];
                }
            }
            vec![Tensor::Real(gw), Tensor::Real(gx)]
        }
        Op::RegionSum { regions, n } => {
            let gv = g.real_unchecked();
            let mut gx = vec![0.0; n * n];
            for (r, gk) in regions.iter().zip(gv) {
                for i in r.row0..r.row0 + r.rows {
                    for v in &mut gx[i * n + r.col0..i * n + r.col0 + r.cols] {
                        *v += gk;
                    }
                }
            }
            vec![Tensor::Real(gx)]
        }
        Op::Gather(indices) => {
            let mut gx = vec![0.0; inputs[0].len()];
            for (&i, gk) in indices.iter().zip(g.real_unchecked()) {
                gx[i] += gk;
            }
            vec![Tensor::Real(gx)]
        }
        Op::Mse(target) => {
            let x = inputs[0].real_unchecked();
            let s = 2.0 * g.real_unchecked()[0] / x.len() as f64;
            vec![Tensor::Real(x.iter().zip(target.iter()).map(|(x, t)| s * (x - t)).collect())]
        }
        Op::SoftmaxXent(label) => {
            let x = inputs[0].real_unchecked();
            let g0 = g.real_unchecked()[0];
            let mut p = crate::loss::softmax(x);
            p[*label] -= 1.0;
            vec![Tensor::Real(p.into_iter().map(|v| v * g0).collect())]
        }
        Op::Selector {
            temperature,
            bank,
            filters,
            samples,
        } => {
            let x = inputs[0].real_unchecked();
            let gv = g.real_unchecked();
            let (f, w) = (*filters, *samples);
            let mut gx = vec![0.0; x.len()];
            for p in 0..x.len() / f {
                let s = crate::loss::softmax(&x[p * f..(p + 1) * f].iter().map(|v| v / temperature).collect::<Vec<_>>());
                let gs: Vec<f64> = (0..f)
                    .map(|k| (0..w).map(|l| gv[p * w + l] * bank[k * w + l]).sum())
                    .collect();
                let dot: f64 = s.iter().zip(&gs).map(|(a, b)| a * b).sum();
                for k in 0..f {
                    gx[p * f + k] = s[k] * (gs[k] - dot) / temperature;
                }
            }
            vec![Tensor::Real(gx)]
        }
        Op::RegBinary => {
            let x = inputs[0].real_unchecked();
            let s = g.real_unchecked()[0] * 2.0 / x.len() as f64;
            vec![Tensor::Real(x.iter().map(|&v| s * v * (v - 1.0) * (2.0 * v - 1.0)).collect())]
        }
        Op::RegCorrelation => {
            let g0 = g.real_unchecked()[0];
            let shots: Vec<&[f64]> = inputs.iter().map(|t| t.real_unchecked()).collect();
            let n = shots[0].len();
            (0..shots.len())
                .map(|j| {
                    Tensor::Real(
                        (0..n)
                            .map(|l| {
                                let others: f64 = shots
                                    .iter()
                                    .enumerate()
                                    .filter(|(k, _)| *k != j)
                                    .map(|(_, s)| s[l])
                                    .product();
                                g0 * others / n as f64
                            })
                            .collect(),
                    )
                })
                .collect()
        }
        Op::RegTransmittance(target) => {
            let x = inputs[0].real_unchecked();
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let d = g.real_unchecked()[0] * 2.0 * (mean - target) / n;
            vec![Tensor::Real(vec![d; x.len()])]
        }
        Op::RegShots => {
            let g0 = g.real_unchecked()[0];
            inputs
                .iter()
                .map(|t| {
                    let x = t.real_unchecked();
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    Tensor::Real(
                        x.iter()
                            .map(|v| if norm > 0.0 { g0 * v / norm } else { 0.0 })
                            .collect(),
                    )
                })
                .collect()
        }
        Op::NormL1 => {
            let g0 = g.real_unchecked()[0];
            let x = inputs[0].real_unchecked();
            vec![Tensor::Real(
                x.iter()
                    .map(|v| if *v > 0.0 { g0 } else if *v < 0.0 { -g0 } else { 0.0 })
                    .collect(),
            )]
        }
        Op::NormL2 => {
            let g0 = g.real_unchecked()[0];
            let x = inputs[0].real_unchecked();
            let norm = out.real_unchecked()[0];
            vec![Tensor::Real(
                x.iter().map(|v| if norm > 0.0 { g0 * v / norm } else { 0.0 }).collect(),
            )]
        }
    }
}

/// Per-parameter real gradients keyed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap(pub BTreeMap<ParamId, Vec<f64>>);

impl GradientMap {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(&id).map(|v| v.as_slice())
    }

    /// `self += scale · other`, keyed; missing entries are created.
    pub fn accumulate(&mut self, other: &GradientMap, scale: f64) {
        for (id, g) in &other.0 {
            let slot = self.0.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            slot.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Vec<f64>)> {
        self.0.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    tape: u64,
    nodes: Vec<Option<Tensor>>,
    params: GradientMap,
}

impl Gradients {
    /// Adjoint of any node that influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.nodes.get(v.index).and_then(|t| t.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id)
    }

    pub fn params(&self) -> &GradientMap {
        &self.params
    }

    pub fn into_params(self) -> GradientMap {
        self.params
    }
}
