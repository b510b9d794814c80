//! Interval abstract domain over real vectors.
//!
//! All arithmetic is plain `f64` without directed rounding; containment
//! checks take a relative slack instead.

use crate::error::{Error, Result};

/// A closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::argument(format!("non-finite interval [{lo}, {hi}]")));
        }
        if lo > hi {
            return Err(Error::argument(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn join(self, other: Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Interval) -> Interval {
        Interval {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Interval) -> Interval {
        let p = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        Interval {
            lo: p.iter().copied().fold(f64::INFINITY, f64::min),
            hi: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Image under a monotonically increasing function.
    pub fn map_monotone(self, f: Monotone) -> Interval {
        Interval {
            lo: f.eval(self.lo),
            hi: f.eval(self.hi),
        }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.lo - tol * (1.0 + self.lo.abs()) <= v && v <= self.hi + tol * (1.0 + self.hi.abs())
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

/// Binary interval arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Mul,
}

pub fn arith(op: ArithOp, a: Interval, b: Interval) -> Interval {
    match op {
        ArithOp::Add => a.add(b),
        ArithOp::Mul => a.mul(b),
    }
}

/// Monotonically increasing activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotone {
    Sigmoid,
    Tanh,
    Relu,
}

impl Monotone {
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Monotone::Sigmoid => sigmoid(v),
            Monotone::Tanh => v.tanh(),
            Monotone::Relu => v.max(0.0),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn monotone(f: Monotone, a: Interval) -> Interval {
    a.map_monotone(f)
}

/// A hyperrectangle: one interval per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    dims: Vec<Interval>,
}

impl IntervalBox {
    pub fn new(dims: Vec<Interval>) -> Self {
        IntervalBox { dims }
    }

    /// Degenerate box `[v, v]`.
    pub fn point(v: &[f64]) -> Self {
        IntervalBox {
            dims: v.iter().map(|&x| Interval::point(x)).collect(),
        }
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::argument("bound vectors differ in length"));
        }
        lo.iter()
            .zip(hi)
            .map(|(&l, &h)| Interval::new(l, h))
            .collect::<Result<Vec<_>>>()
            .map(IntervalBox::new)
    }

    /// Tightest box containing every vector (per-dimension min/max).
    pub fn alpha<'a, I>(vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::argument("abstraction of an empty set"))?;
        let mut out = IntervalBox::point(first);
        for v in iter {
            if v.len() != out.dim() {
                return Err(Error::argument(format!(
                    "vector of dimension {} in a set of dimension {}",
                    v.len(),
                    out.dim()
                )));
            }
            for (iv, &x) in out.dims.iter_mut().zip(v) {
                iv.lo = iv.lo.min(x);
                iv.hi = iv.hi.max(x);
            }
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }

    pub fn get(&self, i: usize) -> Interval {
        self.dims[i]
    }

    pub fn lower(&self) -> Vec<f64> {
        self.dims.iter().map(|i| i.lo).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.dims.iter().map(|i| i.hi).collect()
    }

    pub fn is_point(&self) -> bool {
        self.dims.iter().all(Interval::is_point)
    }

    /// Least box containing both operands.
    pub fn join(&self, other: &IntervalBox) -> Result<IntervalBox> {
        self.check_dim(other.dim())?;
        Ok(IntervalBox {
            dims: self
                .dims
                .iter()
                .zip(&other.dims)
                .map(|(a, b)| a.join(*b))
                .collect(),
        })
    }

    /// In-place join; dimensions must already agree.
    pub(crate) fn join_assign(&mut self, other: &IntervalBox) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.dims.iter_mut().zip(&other.dims) {
            *a = a.join(*b);
        }
    }

    /// Sub-box over dimensions `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> IntervalBox {
        IntervalBox {
            dims: self.dims[range].to_vec(),
        }
    }

    pub fn concat(&self, other: &IntervalBox) -> IntervalBox {
        let mut dims = Vec::with_capacity(self.dim() + other.dim());
        dims.extend_from_slice(&self.dims);
        dims.extend_from_slice(&other.dims);
        IntervalBox { dims }
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> Result<bool> {
        self.check_dim(v.len())?;
        Ok(self.dims.iter().zip(v).all(|(iv, &x)| iv.contains(x, tol)))
    }

    /// Exact box inclusion `other ⊆ self`.
    pub fn contains_box(&self, other: &IntervalBox) -> Result<bool> {
        self.check_dim(other.dim())?;
        Ok(self
            .dims
            .iter()
            .zip(&other.dims)
            .all(|(a, b)| a.contains_interval(b)))
    }

    pub fn map_monotone(&self, f: Monotone) -> IntervalBox {
        IntervalBox {
            dims: self.dims.iter().map(|i| i.map_monotone(f)).collect(),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::argument(format!(
                "dimension mismatch: box has {}, operand has {d}",
                self.dim()
            )));
        }
        Ok(())
    }
}

impl FromIterator<Interval> for IntervalBox {
    fn from_iter<T: IntoIterator<Item = Interval>>(iter: T) -> Self {
        IntervalBox::new(iter.into_iter().collect())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != cols) {
            return Err(Error::argument(format!(
                "row {r} has {} columns, expected {cols}",
                row.len()
            )));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// `W v + b`.
    pub fn affine(&self, v: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols || b.len() != self.rows {
            return Err(Error::argument(format!(
                "affine map {}x{} applied to vector {} with bias {}",
                self.rows,
                self.cols,
                v.len(),
                b.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| dot(self.row(r), v) + b[r])
            .collect())
    }
}

pub(crate) fn dot(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Interval dot product: `[Σ min(w·lo, w·hi), Σ max(w·lo, w·hi)]`.
pub(crate) fn dot_abs(w: &[f64], v: &[Interval]) -> Interval {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (&wc, iv) in w.iter().zip(v) {
        let a = wc * iv.lo;
        let b = wc * iv.hi;
        if a <= b {
            lo += a;
            hi += b;
        } else {
            lo += b;
            hi += a;
        }
    }
    Interval { lo, hi }
}

/// Interval image of `W v + b`; tightest possible per output coordinate.
pub fn matvec(w: &Matrix, b: &[f64], v: &IntervalBox) -> Result<IntervalBox> {
    if v.dim() != w.cols() || b.len() != w.rows() {
        return Err(Error::argument(format!(
            "affine map {}x{} applied to box {} with bias {}",
            w.rows(),
            w.cols(),
            v.dim(),
            b.len()
        )));
    }
    Ok((0..w.rows())
        .map(|r| {
            let d = dot_abs(w.row(r), v.dims());
            Interval {
                lo: d.lo + b[r],
                hi: d.hi + b[r],
            }
        })
        .collect())
}
