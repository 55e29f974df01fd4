//! Small dense linear algebra for the bandit code.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; square symmetric matrices use
//! [`SymMatrix`] (row-major). Everything here is sized for d up to a few
//! dozen, so the O(d³) routines are used freely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values at or below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_JACOBI_SWEEPS: usize = 100;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Unit vector along `a`, or `None` for a zero (or non-finite) vector.
pub fn normalize(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(scale(a, 1.0 / n))
    } else {
        None
    }
}

pub fn basis_vector(d: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[j] = 1.0;
    e
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

fn check_dims(vectors: &[Vec<f64>], d: usize) -> Result<()> {
    for (k, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(Error::invalid(format!(
                "vector {k} has dimension {}, expected {d}",
                v.len()
            )));
        }
        if !is_finite(v) {
            return Err(Error::invalid(format!("vector {k} has non-finite entries")));
        }
    }
    Ok(())
}

/// Square symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Builds from rows, rejecting non-square or asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {n}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        let m = Self { n, data };
        m.check_symmetric()?;
        Ok(m)
    }

    /// Builds from an element function, symmetrising `(f(i,j) + f(j,i)) / 2`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = if i == j { f(i, i) } else { 0.5 * (f(i, j) + f(j, i)) };
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }

    /// `Σ v vᵀ` over the given vectors.
    pub fn gram(vectors: &[Vec<f64>], n: usize) -> Result<Self> {
        check_dims(vectors, n)?;
        let mut m = Self::zeros(n);
        for v in vectors {
            m.add_outer(v, 1.0);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        is_finite(&self.data)
    }

    pub fn check_symmetric(&self) -> Result<()> {
        let tol = SYMMETRY_TOL * self.max_abs().max(1.0);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let gap = (self.get(i, j) - self.get(j, i)).abs();
                if !(gap <= tol) {
                    return Err(Error::invalid(format!(
                        "matrix not symmetric at ({i},{j}): gap {gap:e}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// `self += s * a aᵀ`
    pub fn add_outer(&mut self, a: &[f64], s: f64) {
        let n = self.n;
        for i in 0..n {
            let si = s * a[i];
            if si == 0.0 {
                continue;
            }
            for j in 0..n {
                self.data[i * n + j] += si * a[j];
            }
        }
    }

    /// `self += s * I`
    pub fn add_identity(&mut self, s: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += s;
        }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix {
            n: self.n,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Plain (not necessarily symmetric) product, returned as rows.
    pub fn matmul_rows(&self, other: &SymMatrix) -> Vec<Vec<f64>> {
        let n = self.n;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| self.get(i, k) * other.get(k, j)).sum())
                    .collect()
            })
            .collect()
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
/// `vectors[k]` is the unit eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigen-solver.
pub fn sym_eigen(m: &SymMatrix) -> Result<SymEigen> {
    m.check_symmetric()?;
    if !m.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let n = m.dim();
    let mut a = SymMatrix::from_fn(n, |i, j| m.get(i, j)).data;
    let mut v = SymMatrix::identity(n).data;
    let frob2: f64 = a.iter().map(|x| x * x).sum();

    let mut converged = n <= 1;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= f64::EPSILON * f64::EPSILON * frob2 * 1e-4 || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::numerical("Jacobi eigen-solver did not converge"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|i| v[i * n + k]).collect())
        .collect();
    Ok(SymEigen { values, vectors })
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    if m.dim() == 0 {
        return Err(Error::invalid("empty matrix has no eigenvalues"));
    }
    Ok(sym_eigen(m)?.values[0])
}

/// Spectral norm of a symmetric matrix (largest |eigenvalue|).
pub fn spectral_norm(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eigen(m)?
        .values
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

/// `sqrt(xᵀ M x)` for positive semidefinite `M`.
pub fn weighted_norm(x: &[f64], m: &SymMatrix) -> Result<f64> {
    if x.len() != m.dim() {
        return Err(Error::invalid(format!(
            "vector dimension {} does not match matrix dimension {}",
            x.len(),
            m.dim()
        )));
    }
    let q = m.quad_form(x);
    let tol = 1e-12 * (dot(x, x) * m.max_abs()).max(1.0);
    if q < -tol || !q.is_finite() {
        return Err(Error::numerical(format!("negative quadratic form {q:e}")));
    }
    Ok(q.max(0.0).sqrt())
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(m: &SymMatrix) -> Result<Self> {
        let n = m.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = m.get(j, j);
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > 0.0) {
                return Err(Error::numerical(format!(
                    "matrix is not positive definite (pivot {j} = {diag:e})"
                )));
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.n;
        let cols: Vec<Vec<f64>> = (0..n).map(|j| self.solve(&basis_vector(n, j))).collect();
        SymMatrix::from_fn(n, |i, j| cols[j][i])
    }
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn spd_solve(m: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != m.dim() {
        return Err(Error::invalid(format!(
            "right-hand side has dimension {}, matrix is {}x{}",
            b.len(),
            m.dim(),
            m.dim()
        )));
    }
    let x = Cholesky::new(m)?.solve(b);
    if !is_finite(&x) {
        return Err(Error::numerical("non-finite solution"));
    }
    Ok(x)
}

pub fn spd_inverse(m: &SymMatrix) -> Result<SymMatrix> {
    Ok(Cholesky::new(m)?.inverse())
}

/// Given `M⁻¹`, returns `(M + a aᵀ)⁻¹`.
pub fn sherman_morrison_update(m_inv: &SymMatrix, a: &[f64]) -> Result<SymMatrix> {
    let mut out = m_inv.clone();
    sherman_morrison_in_place(&mut out, a)?;
    Ok(out)
}

pub fn sherman_morrison_in_place(m_inv: &mut SymMatrix, a: &[f64]) -> Result<()> {
    if a.len() != m_inv.dim() {
        return Err(Error::invalid(format!(
            "update vector has dimension {}, expected {}",
            a.len(),
            m_inv.dim()
        )));
    }
    let u = m_inv.mul_vec(a);
    let denom = 1.0 + dot(a, &u);
    if !(denom > 0.0) {
        return Err(Error::numerical(format!(
            "Sherman-Morrison denominator {denom:e} is not positive"
        )));
    }
    m_inv.add_outer(&u, -1.0 / denom);
    Ok(())
}

/// Orthonormal basis of `span(vectors)` via one-sided Jacobi SVD.
///
/// Directions whose singular value is `<= rank_tol * sigma_max` are
/// dropped. Basis vectors come out ordered by decreasing singular value.
pub fn orth_basis(vectors: &[Vec<f64>], rank_tol: f64) -> Result<Vec<Vec<f64>>> {
    let Some(first) = vectors.first() else {
        return Ok(Vec::new());
    };
    let d = first.len();
    if d == 0 {
        return Err(Error::invalid("vectors must have dimension >= 1"));
    }
    check_dims(vectors, d)?;

    let mut cols: Vec<Vec<f64>> = vectors.to_vec();
    let m = cols.len();
    for _ in 0..60 {
        let mut rotated = false;
        for i in 0..m {
            for j in (i + 1)..m {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..d {
                    let x = cols[i][k];
                    let y = cols[j][k];
                    cols[i][k] = c * x - s * y;
                    cols[j][k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<(f64, usize)> = cols.iter().enumerate().map(|(k, c)| (norm(c), k)).collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let sigma_max = sv.first().map_or(0.0, |s| s.0);
    if sigma_max == 0.0 {
        return Ok(Vec::new());
    }

    // Final modified Gram-Schmidt pass cleans up rounding in the rotations.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for (sigma, k) in sv {
        if sigma <= rank_tol * sigma_max {
            break;
        }
        let mut u = scale(&cols[k], 1.0 / sigma);
        for b in &basis {
            let p = dot(b, &u);
            axpy(&mut u, -p, b);
        }
        if let Some(u) = normalize(&u) {
            basis.push(u);
        }
    }
    Ok(basis)
}

/// A linear subspace held as an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    ambient: usize,
    basis: Vec<Vec<f64>>,
}

impl Subspace {
    pub fn spanned_by(vectors: &[Vec<f64>], ambient: usize) -> Result<Self> {
        check_dims(vectors, ambient)?;
        Ok(Self {
            ambient,
            basis: orth_basis(vectors, RANK_TOL)?,
        })
    }

    pub fn trivial(ambient: usize) -> Self {
        Self {
            ambient,
            basis: Vec::new(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Orthogonal projection onto the subspace.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for u in &self.basis {
            axpy(&mut out, dot(u, x), u);
        }
        out
    }

    /// Orthogonal projection onto the complement: `x - Σ ⟨u,x⟩ u`.
    pub fn project_out(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for u in &self.basis {
            axpy(&mut out, -dot(u, x), u);
        }
        out
    }

    /// `I - Σ u uᵀ` as a matrix.
    pub fn complement_projector(&self) -> SymMatrix {
        let mut p = SymMatrix::identity(self.ambient);
        for u in &self.basis {
            p.add_outer(u, -1.0);
        }
        p
    }
}

/// Projects `x` onto the orthogonal complement of `span(vectors)`.
pub fn proj_orth_complement(vectors: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
    if !is_finite(x) {
        return Err(Error::invalid("x has non-finite entries"));
    }
    Ok(Subspace::spanned_by(vectors, x.len())?.project_out(x))
}
