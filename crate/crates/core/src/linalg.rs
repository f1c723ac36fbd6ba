//! Dense linear algebra for the small symmetric systems that show up around
//! Fisher information matrices (dimension `p` is a handful at most).

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative pivot floor for Cholesky, measured against `trace(A) / p`.
pub const PD_TOLERANCE: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("parameter vector must have dimension >= 1".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter entry {bad}")));
        }
        Ok(ParamVector(values))
    }

    /// Builds a vector without the finiteness check; for internal arithmetic.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn add(&self, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
    }

    /// Outer product `self · selfᵀ`.
    pub fn outer(&self) -> SymMatrix {
        let p = self.dim();
        let mut m = SymMatrix::zeros(p);
        for i in 0..p {
            for j in 0..=i {
                m.set(i, j, self.0[i] * self.0[j]);
            }
        }
        m
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Symmetric `p × p` matrix, stored densely in row-major order with both
/// triangles kept identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    /// Builds a matrix from square rows. The lower triangle is authoritative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::Domain("matrix must have dimension >= 1".into()));
        }
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate().take(i + 1) {
                if !v.is_finite() {
                    return Err(Error::Domain(format!("non-finite matrix entry ({i}, {j})")));
                }
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets entries `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix { dim: self.dim, data: self.data.iter().map(|v| v * factor).collect() }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn mul_vec(&self, v: &ParamVector) -> ParamVector {
        let p = self.dim;
        let out = (0..p)
            .map(|i| (0..p).map(|j| self.get(i, j) * v[j]).sum())
            .collect();
        ParamVector::from_vec_unchecked(out)
    }

    /// Symmetric part of the product `self · other`, i.e. `(AB + BA) / 2`.
    /// Exact when the two matrices commute.
    pub fn symmetric_product(&self, other: &SymMatrix) -> SymMatrix {
        let p = self.dim;
        let mut out = SymMatrix::zeros(p);
        for i in 0..p {
            for j in 0..=i {
                let ab: f64 = (0..p).map(|k| self.get(i, k) * other.get(k, j)).sum();
                let ba: f64 = (0..p).map(|k| other.get(i, k) * self.get(k, j)).sum();
                out.set(i, j, 0.5 * (ab + ba));
            }
        }
        out
    }

    /// `‖self − other‖_F / ‖other‖_F`
    pub fn relative_frobenius_distance(&self, reference: &SymMatrix) -> f64 {
        self.sub(reference).frobenius_norm() / reference.frobenius_norm()
    }
}

/// Root-free Cholesky factorization `A = L D Lᵀ` with unit lower `L`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl Cholesky {
    /// Fails with [`Error::NotPositiveDefinite`] when a pivot drops to
    /// `PD_TOLERANCE · trace(A)/p` or below.
    pub fn factor(a: &SymMatrix) -> Result<Self> {
        let p = a.dim();
        if !a.is_finite() {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        let floor = PD_TOLERANCE * (a.trace() / p as f64).abs();
        let mut l = vec![0.0; p * p];
        let mut d = vec![0.0; p];
        for j in 0..p {
            let mut pivot = a.get(j, j);
            for k in 0..j {
                pivot -= l[j * p + k] * l[j * p + k] * d[k];
            }
            if !(pivot > floor) {
                return Err(Error::NotPositiveDefinite { pivot: j, value: pivot });
            }
            d[j] = pivot;
            l[j * p + j] = 1.0;
            for i in (j + 1)..p {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * p + k] * l[j * p + k] * d[k];
                }
                l[i * p + j] = s / pivot;
            }
        }
        Ok(Cholesky { dim: p, lower: l, diag: d })
    }

    pub fn solve(&self, b: &ParamVector) -> Result<ParamVector> {
        let p = self.dim;
        if b.dim() != p {
            return Err(Error::DimensionMismatch { expected: p, got: b.dim() });
        }
        let l = &self.lower;
        let mut y = vec![0.0; p];
        for i in 0..p {
            let s: f64 = (0..i).map(|k| l[i * p + k] * y[k]).sum();
            y[i] = b[i] - s;
        }
        let mut x = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = ((i + 1)..p).map(|k| l[k * p + i] * x[k]).sum();
            x[i] = y[i] / self.diag[i] - s;
        }
        Ok(ParamVector::from_vec_unchecked(x))
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn spd_solve(a: &SymMatrix, b: &ParamVector) -> Result<ParamVector> {
    Cholesky::factor(a)?.solve(b)
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(a: &SymMatrix) -> Result<SymMatrix> {
    let chol = Cholesky::factor(a)?;
    let p = a.dim();
    let mut cols = Vec::with_capacity(p);
    for j in 0..p {
        let mut e = ParamVector::zeros(p);
        e[j] = 1.0;
        cols.push(chol.solve(&e)?);
    }
    let mut inv = SymMatrix::zeros(p);
    for (j, cj) in cols.iter().enumerate() {
        for (i, ci) in cols.iter().enumerate().take(j + 1) {
            inv.set(i, j, 0.5 * (cj[i] + ci[j]));
        }
    }
    Ok(inv)
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// Closed form for `p <= 2`, cyclic Jacobi rotations otherwise.
pub fn min_eigenvalue(a: &SymMatrix) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    match a.dim() {
        1 => Ok(a.get(0, 0)),
        2 => {
            let (x, y, z) = (a.get(0, 0), a.get(0, 1), a.get(1, 1));
            let half_trace = 0.5 * (x + z);
            let radius = (0.5 * (x - z)).hypot(y);
            Ok(half_trace - radius)
        }
        _ => Ok(jacobi_eigenvalues(a).into_iter().fold(f64::INFINITY, f64::min)),
    }
}

fn jacobi_eigenvalues(a: &SymMatrix) -> Vec<f64> {
    let p = a.dim();
    let mut m = a.data.clone();
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * p + j] * m[i * p + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for q in 1..p {
            for r in 0..q {
                let apq = m[r * p + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[r * p + r];
                let aqq = m[q * p + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mkr = m[k * p + r];
                    let mkq = m[k * p + q];
                    m[k * p + r] = c * mkr - s * mkq;
                    m[k * p + q] = s * mkr + c * mkq;
                }
                for k in 0..p {
                    let mrk = m[r * p + k];
                    let mqk = m[q * p + k];
                    m[r * p + k] = c * mrk - s * mqk;
                    m[q * p + k] = s * mrk + c * mqk;
                }
            }
        }
    }
    (0..p).map(|i| m[i * p + i]).collect()
}
