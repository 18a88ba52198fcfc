//! Dense complex operators on the joint system ⊗ bath space.
//!
//! Subsystem ordering is fixed everywhere in this crate: qubit 0 is the
//! slowest-varying tensor index, the remaining qubits follow in order, and
//! the bath factor (dimension `d_B`) is the last, fastest-varying index. A
//! basis index therefore reads `q0 q1 ... q{n-1} b` in mixed radix
//! `(2, 2, ..., 2, d_B)`.

use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Numerical tolerances shared by every module.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Largest accepted `|h_ab - conj(h_ba)|`, relative to `max(1, max|h|)`.
    pub hermiticity: f64,
    /// Largest accepted `||U†U - I||` for unitary outputs.
    pub unitarity: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        hermiticity: 1e-12,
        unitarity: 1e-10,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Dense square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    /// Wraps a matrix, rejecting non-square or non-finite input.
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: m.nrows().max(1),
                found: m.ncols(),
            });
        }
        check_finite(&m)?;
        Ok(Operator(m))
    }

    /// Builds an operator from row-major entries.
    pub fn from_row_major(dim: usize, entries: &[C64]) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        let entries: Vec<C64> = rows
            .iter()
            .flat_map(|r| r.iter().map(|&x| C64::new(x, 0.0)))
            .collect();
        Self::from_row_major(dim, &entries)
    }

    pub fn identity(dim: usize) -> Self {
        Operator(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Operator(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<C64> {
        let d = self.dim();
        (0..d)
            .flat_map(|r| (0..d).map(move |c| (r, c)))
            .map(|(r, c)| self.0[(r, c)])
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        Operator(self.0.adjoint())
    }

    pub fn scale(&self, s: f64) -> Self {
        Operator(self.0.map(|z| z * s))
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        Operator(self.0.map(|z| z * s))
    }

    pub fn kron(&self, other: &Operator) -> Self {
        Operator(self.0.kronecker(&other.0))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        Operator(&self.0 * &other.0 - &other.0 * &self.0)
    }

    /// `max |h_ab - conj(h_ba)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in a..d {
                worst = worst.max((self.0[(a, b)] - self.0[(b, a)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn is_hermitian(&self, tol: &Tolerances) -> bool {
        self.hermiticity_defect() <= tol.hermiticity * self.max_abs_entry().max(1.0)
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Operator((&self.0 + self.0.adjoint()).map(|z| z * 0.5))
    }

    /// `self^power` by repeated squaring.
    pub fn pow(&self, mut power: usize) -> Self {
        let mut result = Operator::identity(self.dim());
        let mut base = self.0.clone();
        let mut first = true;
        while power > 0 {
            if power & 1 == 1 {
                if first {
                    result = Operator(base.clone());
                    first = false;
                } else {
                    result = Operator(&result.0 * &base);
                }
            }
            power >>= 1;
            if power > 0 {
                base = &base * &base;
            }
        }
        result
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

fn check_finite(m: &DMatrix<C64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let z = m[(r, c)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Sup operator norm: the largest singular value.
pub fn sup_norm(op: &Operator) -> Result<f64> {
    check_finite(&op.0)?;
    let sv = op.0.clone().singular_values();
    Ok(sv.iter().fold(0.0f64, |m, &s| m.max(s)))
}

/// `e^{-i·scale·h}` for Hermitian `h`, via eigendecomposition.
pub fn expm(h: &Operator, scale: f64) -> Result<Operator> {
    expm_with(h, scale, &Tolerances::DEFAULT)
}

pub fn expm_with(h: &Operator, scale: f64, tol: &Tolerances) -> Result<Operator> {
    check_finite(&h.0)?;
    if !h.is_hermitian(tol) {
        return Err(Error::NotHermitian {
            defect: h.hermiticity_defect(),
            tolerance: tol.hermiticity,
        });
    }
    if scale == 0.0 {
        return Ok(Operator::identity(h.dim()));
    }
    let eig = h.hermitian_part().0.symmetric_eigen();
    let v = &eig.eigenvectors;
    let phases = eig
        .eigenvalues
        .map(|lambda| C64::from_polar(1.0, -scale * lambda));
    let mut vd = v.clone();
    for (k, mut col) in vd.column_iter_mut().enumerate() {
        col *= phases[k];
    }
    Ok(Operator(&vd * v.adjoint()))
}

/// Real eigenvalues of a Hermitian operator in ascending order.
pub fn hermitian_eigenvalues(h: &Operator) -> Vec<f64> {
    let mut ev: Vec<f64> = h
        .hermitian_part()
        .0
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `||U†U - I||`.
pub fn unitarity_defect(u: &Operator) -> Result<f64> {
    let d = &(&u.adjoint() * u) - &Operator::identity(u.dim());
    sup_norm(&d)
}

/// Draws a GUE-style Hermitian matrix rescaled to the requested sup norm.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, norm: f64, rng: &mut R) -> Operator {
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(a, b)] = C64::new(re, im);
        }
    }
    let h = Operator(m).hermitian_part();
    let current = sup_norm(&h).unwrap_or(0.0);
    if current == 0.0 {
        return Operator::zeros(dim);
    }
    h.scale(norm / current)
}

/// Pauli matrices.
pub mod pauli {
    use super::{Operator, C64};

    pub fn i2() -> Operator {
        Operator::identity(2)
    }

    pub fn x() -> Operator {
        Operator::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
    }

    pub fn y() -> Operator {
        let i = C64::new(0.0, 1.0);
        Operator::from_row_major(2, &[C64::new(0.0, 0.0), -i, i, C64::new(0.0, 0.0)]).unwrap()
    }

    pub fn z() -> Operator {
        Operator::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap()
    }
}

/// Tensor-factor layout: `system_qubits` qubits followed by one bath factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorFactorSpec {
    pub system_qubits: usize,
    pub bath_dim: usize,
}

impl TensorFactorSpec {
    pub fn new(system_qubits: usize, bath_dim: usize) -> Result<Self> {
        if bath_dim == 0 {
            return Err(Error::InvalidInput("bath dimension must be positive".into()));
        }
        if system_qubits > 16 {
            return Err(Error::ResourceGuard(format!(
                "{system_qubits} qubits exceeds the dense-operator limit of 16"
            )));
        }
        Ok(Self {
            system_qubits,
            bath_dim,
        })
    }

    /// Index of the bath factor in a support list.
    pub fn bath_index(&self) -> usize {
        self.system_qubits
    }

    pub fn subsystem_count(&self) -> usize {
        self.system_qubits + 1
    }

    pub fn subsystem_dim(&self, index: usize) -> usize {
        if index == self.system_qubits {
            self.bath_dim
        } else {
            2
        }
    }

    pub fn total_dim(&self) -> usize {
        (1usize << self.system_qubits) * self.bath_dim
    }

    fn strides(&self) -> Vec<usize> {
        let n = self.subsystem_count();
        let mut strides = vec![1usize; n];
        for k in (0..n - 1).rev() {
            strides[k] = strides[k + 1] * self.subsystem_dim(k + 1);
        }
        strides
    }
}

/// Embeds `local`, acting on `support` (in the given order), into the full
/// space with identity on every other factor.
pub fn embed(local: &Operator, support: &[usize], spec: &TensorFactorSpec) -> Result<Operator> {
    let count = spec.subsystem_count();
    for (k, &s) in support.iter().enumerate() {
        if s >= count {
            return Err(Error::IndexOutOfRange { index: s, count });
        }
        if support[..k].contains(&s) {
            return Err(Error::DuplicateIndex(s));
        }
    }
    let local_dims: Vec<usize> = support.iter().map(|&s| spec.subsystem_dim(s)).collect();
    let local_dim: usize = local_dims.iter().product();
    if local.dim() != local_dim {
        return Err(Error::DimensionMismatch {
            expected: local_dim,
            found: local.dim(),
        });
    }
    let strides = spec.strides();
    let total = spec.total_dim();

    // Offset contributed by each local basis index on the full index.
    let mut local_offsets = vec![0usize; local_dim];
    for (l, off) in local_offsets.iter_mut().enumerate() {
        let mut rem = l;
        for k in (0..support.len()).rev() {
            let digit = rem % local_dims[k];
            rem /= local_dims[k];
            *off += digit * strides[support[k]];
        }
    }

    let mut out = DMatrix::<C64>::zeros(total, total);
    for a in 0..total {
        // Split `a` into its local index and the remainder (support digits zeroed).
        let mut la = 0usize;
        let mut base = a;
        for (k, &s) in support.iter().enumerate() {
            let digit = (a / strides[s]) % local_dims[k];
            la = la * local_dims[k] + digit;
            base -= digit * strides[s];
        }
        for (lb, off) in local_offsets.iter().enumerate() {
            let v = local.0[(la, lb)];
            if v != C64::new(0.0, 0.0) {
                out[(a, base + off)] = v;
            }
        }
    }
    Ok(Operator(out))
}
