//! Reverse-mode automatic differentiation on a Wengert list.
//!
//! Every node stores its value and the local partial derivatives with respect to its
//! parents, computed eagerly when the node is created. A backward sweep then needs only
//! multiply-adds. Fused n-ary nodes (sums, dot products, log-sum-exp, softmax) keep the
//! tape short for the risk-set sums that dominate survival losses.
//!
//! Subgradient convention at kinks: `relu`, `abs`, `floor_at` and `max` all pass 0
//! (or the first maximiser) at the non-differentiable point.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Default)]
struct Inner<T> {
    values: Vec<T>,
    /// `edge_start[k]..edge_start[k + 1]` are the incoming edges of node `k`.
    edge_start: Vec<usize>,
    edges: Vec<(usize, T)>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    idx: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value())
    }
}

/// Adjoints of every node after a backward sweep.
#[derive(Debug, Clone)]
pub struct Adjoints<T> {
    grads: Vec<T>,
}

impl<T: Scalar> Adjoints<T> {
    pub fn of(&self, v: Var<'_, T>) -> T {
        self.grads[v.idx]
    }

    pub fn wrt(&self, vars: &[Var<'_, T>]) -> Vec<T> {
        vars.iter().map(|v| self.grads[v.idx]).collect()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { inner: RefCell::new(Inner { values: Vec::new(), edge_start: vec![0], edges: Vec::new() }) }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: T, parents: impl IntoIterator<Item = (usize, T)>) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        if inner.edge_start.is_empty() {
            inner.edge_start.push(0);
        }
        inner.edges.extend(parents);
        let end = inner.edges.len();
        inner.edge_start.push(end);
        inner.values.push(value);
        Var { tape: self, idx: inner.values.len() - 1 }
    }

    /// New leaf (independent variable or constant).
    pub fn var(&self, value: T) -> Var<'_, T> {
        self.push(value, std::iter::empty())
    }

    pub fn vars(&self, values: &[T]) -> Vec<Var<'_, T>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn constant(&self, value: T) -> Var<'_, T> {
        self.var(value)
    }

    pub fn zero(&self) -> Var<'_, T> {
        self.var(T::zero())
    }

    fn val(&self, idx: usize) -> T {
        self.inner.borrow().values[idx]
    }

    pub fn sum<'t>(&'t self, xs: &[Var<'t, T>]) -> Var<'t, T> {
        let v = xs.iter().map(|x| x.value()).sum();
        self.push(v, xs.iter().map(|x| (x.idx, T::one())).collect::<Vec<_>>())
    }

    pub fn mean<'t>(&'t self, xs: &[Var<'t, T>]) -> Var<'t, T> {
        let w = T::one() / T::of_usize(xs.len().max(1));
        self.lincomb(xs, &vec![w; xs.len()])
    }

    /// `Σ c_k x_k` for constant coefficients.
    pub fn lincomb<'t>(&'t self, xs: &[Var<'t, T>], coeffs: &[T]) -> Var<'t, T> {
        debug_assert_eq!(xs.len(), coeffs.len());
        let v = xs.iter().zip(coeffs).map(|(x, &c)| x.value() * c).sum();
        self.push(v, xs.iter().zip(coeffs).map(|(x, &c)| (x.idx, c)).collect::<Vec<_>>())
    }

    /// `Σ c_k x_k + b` where `b` is a variable.
    pub fn affine<'t>(&'t self, xs: &[Var<'t, T>], coeffs: &[T], bias: Var<'t, T>) -> Var<'t, T> {
        let v = xs.iter().zip(coeffs).map(|(x, &c)| x.value() * c).sum::<T>() + bias.value();
        let edges: Vec<_> =
            xs.iter().zip(coeffs).map(|(x, &c)| (x.idx, c)).chain(std::iter::once((bias.idx, T::one()))).collect();
        self.push(v, edges)
    }

    /// `Σ a_k b_k` over two variable vectors.
    pub fn dot<'t>(&'t self, a: &[Var<'t, T>], b: &[Var<'t, T>]) -> Var<'t, T> {
        debug_assert_eq!(a.len(), b.len());
        let v = a.iter().zip(b).map(|(x, y)| x.value() * y.value()).sum();
        let mut edges = Vec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            edges.push((x.idx, y.value()));
            edges.push((y.idx, x.value()));
        }
        self.push(v, edges)
    }

    /// Stable `log Σ exp(x_k)`; partials are the softmax weights.
    pub fn log_sum_exp<'t>(&'t self, xs: &[Var<'t, T>]) -> Var<'t, T> {
        let vals: Vec<T> = xs.iter().map(|x| x.value()).collect();
        let max = vals.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = vals.iter().map(|&v| (v - max).exp()).collect();
        let s: T = exps.iter().copied().sum();
        let out = max + s.ln();
        self.push(out, xs.iter().zip(exps).map(|(x, e)| (x.idx, e / s)).collect::<Vec<_>>())
    }

    /// Softmax over `xs` (max-subtracted).
    pub fn softmax<'t>(&'t self, xs: &[Var<'t, T>]) -> Vec<Var<'t, T>> {
        let vals: Vec<T> = xs.iter().map(|x| x.value()).collect();
        let max = vals.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = vals.iter().map(|&v| (v - max).exp()).collect();
        let s: T = exps.iter().copied().sum();
        let p: Vec<T> = exps.iter().map(|&e| e / s).collect();
        (0..xs.len())
            .map(|k| {
                let edges: Vec<_> = xs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let kron = if j == k { T::one() } else { T::zero() };
                        (x.idx, p[k] * (kron - p[j]))
                    })
                    .collect();
                self.push(p[k], edges)
            })
            .collect()
    }

    /// Maximum of `xs`; the gradient flows to the first maximiser.
    pub fn max<'t>(&'t self, xs: &[Var<'t, T>]) -> Var<'t, T> {
        assert!(!xs.is_empty(), "max of empty slice");
        let mut best = 0;
        for (k, x) in xs.iter().enumerate() {
            if x.value() > xs[best].value() {
                best = k;
            }
        }
        self.push(xs[best].value(), [(xs[best].idx, T::one())])
    }

    /// Fails if any node holds a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        let inner = self.inner.borrow();
        match inner.values.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::Numeric(format!("non-finite value {} at tape node {k}", inner.values[k]))),
            None => Ok(()),
        }
    }

    /// Backward sweep seeded with `d out / d out = 1`.
    pub fn gradient(&self, out: Var<'_, T>) -> Adjoints<T> {
        self.gradient_weighted(&[(out, T::one())])
    }

    /// Backward sweep of `Σ w_k · out_k`.
    pub fn gradient_weighted(&self, seeds: &[(Var<'_, T>, T)]) -> Adjoints<T> {
        let inner = self.inner.borrow();
        let n = inner.values.len();
        let mut grads = vec![T::zero(); n];
        let mut top = 0;
        for (v, w) in seeds {
            grads[v.idx] = grads[v.idx] + *w;
            top = top.max(v.idx + 1);
        }
        for k in (0..top).rev() {
            let g = grads[k];
            if g == T::zero() {
                continue;
            }
            for &(p, w) in &inner.edges[inner.edge_start[k]..inner.edge_start[k + 1]] {
                grads[p] = grads[p] + g * w;
            }
        }
        Adjoints { grads }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> T {
        self.tape.val(self.idx)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn unary(self, value: T, partial: T) -> Self {
        self.tape.push(value, [(self.idx, partial)])
    }

    pub fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Self {
        let v = self.value();
        self.unary(v.ln(), T::one() / v)
    }

    pub fn relu(self) -> Self {
        let v = self.value();
        if v > T::zero() {
            self.unary(v, T::one())
        } else {
            self.unary(T::zero(), T::zero())
        }
    }

    pub fn abs(self) -> Self {
        let v = self.value();
        let s = if v > T::zero() {
            T::one()
        } else if v < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        self.unary(v.abs(), s)
    }

    /// Square root; the derivative at 0 is taken to be 0.
    pub fn sqrt(self) -> Self {
        let s = self.value().sqrt();
        let d = if s > T::zero() { T::of(0.5) / s } else { T::zero() };
        self.unary(s, d)
    }

    pub fn square(self) -> Self {
        let v = self.value();
        self.unary(v * v, v + v)
    }

    /// `max(self, floor)` for a constant floor.
    pub fn floor_at(self, floor: T) -> Self {
        let v = self.value();
        if v > floor {
            self.unary(v, T::one())
        } else {
            self.unary(floor, T::zero())
        }
    }

    pub fn scale(self, c: T) -> Self {
        self.unary(self.value() * c, c)
    }

    /// `log(max(self, 1e-12))`.
    pub fn clamped_ln(self) -> Self {
        self.floor_at(T::prob_floor()).ln()
    }
}

impl<'t, T: Scalar> Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self {
        self.tape.push(self.value() + rhs.value(), [(self.idx, T::one()), (rhs.idx, T::one())])
    }
}

impl<'t, T: Scalar> Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self {
        self.tape.push(self.value() - rhs.value(), [(self.idx, T::one()), (rhs.idx, -T::one())])
    }
}

impl<'t, T: Scalar> Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(a * b, [(self.idx, b), (rhs.idx, a)])
    }
}

impl<'t, T: Scalar> Div for Var<'t, T> {
    type Output = Var<'t, T>;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(a / b, [(self.idx, T::one() / b), (rhs.idx, -a / (b * b))])
    }
}

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self {
        self.unary(-self.value(), -T::one())
    }
}

impl<'t, T: Scalar> Add<T> for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: T) -> Self {
        self.unary(self.value() + rhs, T::one())
    }
}

impl<'t, T: Scalar> Sub<T> for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: T) -> Self {
        self.unary(self.value() - rhs, T::one())
    }
}

impl<'t, T: Scalar> Mul<T> for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: T) -> Self {
        self.scale(rhs)
    }
}

impl<'t, T: Scalar> Div<T> for Var<'t, T> {
    type Output = Var<'t, T>;
    fn div(self, rhs: T) -> Self {
        self.scale(T::one() / rhs)
    }
}
