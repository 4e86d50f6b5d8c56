//! Vector arithmetic, symmetric PSD operators with prescribed spectra, and
//! quadratic test problems `f(x) = ½⟨Ax, x⟩ − ⟨b, x⟩` with a known minimizer.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Largest dimension for which an explicit n×n matrix is stored.
pub const DEFAULT_DENSE_CAP: usize = 4000;

const SYMMETRY_RTOL: f64 = 1e-12;

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    // four accumulators let the compiler vectorize the reduction
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let tail: f64 = xc
        .remainder()
        .iter()
        .zip(yc.remainder())
        .map(|(a, b)| a * b)
        .sum();
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(n * n, data.len())?;
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Writes `M x` into `out` without dimension checks beyond debug asserts.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (row, o) in self.data.chunks_exact(self.n).zip(out.iter_mut()) {
            *o = dot(row, x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        let mut out = vec![0.0; self.n];
        self.matvec_into(x, &mut out);
        Ok(out)
    }

    /// Writes `Mᵀ x` into `out`.
    pub fn matvec_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, &xi) in self.data.chunks_exact(self.n).zip(x) {
            axpy(xi, row, out);
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)]);
            }
        }
        Self { n, data }
    }
}

/// Symmetric positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    Diagonal(Vec<f64>),
    DenseSymmetric {
        matrix: DenseMatrix,
        /// Spectrum, sorted descending, when known from construction.
        eigenvalues: Option<Vec<f64>>,
    },
}

impl LinearOperator {
    pub fn diagonal(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("operator dimension must be >= 1".into()));
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "diagonal entry {i} is {} (must be finite and >= 0)",
                entries[i]
            )));
        }
        Ok(LinearOperator::Diagonal(entries))
    }

    pub fn identity(n: usize) -> Self {
        LinearOperator::Diagonal(vec![1.0; n])
    }

    /// Wraps an explicit matrix after checking symmetry. Positive
    /// semidefiniteness is the caller's responsibility.
    pub fn dense_symmetric(matrix: DenseMatrix) -> Result<Self> {
        let n = matrix.dim();
        if n == 0 {
            return Err(Error::InvalidArgument("operator dimension must be >= 1".into()));
        }
        let scale = matrix
            .as_slice()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = (matrix.get(i, j) - matrix.get(j, i)).abs();
                if diff > SYMMETRY_RTOL * scale {
                    return Err(Error::NotSymmetric { row: i, col: j, diff });
                }
            }
        }
        Ok(LinearOperator::DenseSymmetric {
            matrix,
            eigenvalues: None,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            LinearOperator::Diagonal(d) => d.len(),
            LinearOperator::DenseSymmetric { matrix, .. } => matrix.dim(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, LinearOperator::Diagonal(_))
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            LinearOperator::Diagonal(d) => {
                for ((o, di), xi) in out.iter_mut().zip(d).zip(x) {
                    *o = di * xi;
                }
            }
            LinearOperator::DenseSymmetric { matrix, .. } => matrix.matvec_into(x, out),
        }
    }

    /// Eigenvalues sorted descending, if known without a decomposition.
    pub fn known_spectrum(&self) -> Option<Vec<f64>> {
        match self {
            LinearOperator::Diagonal(d) => {
                let mut s = d.clone();
                s.sort_by(|a, b| b.total_cmp(a));
                Some(s)
            }
            LinearOperator::DenseSymmetric { eigenvalues, .. } => eigenvalues.clone(),
        }
    }

    /// `L = ‖A‖₂`. Uses construction metadata when present and falls back
    /// to power iteration otherwise.
    pub fn lambda_max(&self) -> f64 {
        match self {
            LinearOperator::Diagonal(d) => d.iter().fold(0.0, |m, v| m.max(*v)),
            LinearOperator::DenseSymmetric {
                eigenvalues: Some(e),
                ..
            } => e.first().copied().unwrap_or(0.0),
            LinearOperator::DenseSymmetric { matrix, .. } => power_iteration(matrix, 500),
        }
    }

    pub fn lambda_min(&self) -> Option<f64> {
        self.known_spectrum().and_then(|s| s.last().copied())
    }

    /// `λ_max / λ_min`; infinite for a singular operator, `None` when the
    /// spectrum is unknown.
    pub fn condition_number(&self) -> Option<f64> {
        let s = self.known_spectrum()?;
        let (hi, lo) = (s[0], *s.last()?);
        Some(if lo > 0.0 { hi / lo } else { f64::INFINITY })
    }

    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.apply(x)?, x))
    }
}

fn power_iteration(m: &DenseMatrix, iters: usize) -> f64 {
    let n = m.dim();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut est = 0.0;
    for _ in 0..iters {
        m.matvec_into(&v, &mut w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        est = nw;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
    }
    est
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    Geometric { ratio: f64 },
    Power { exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSpec {
    pub n: usize,
    pub lambda_max: f64,
    pub decay: Decay,
    pub floor: f64,
}

impl SpectrumSpec {
    /// Geometric decay chosen so that `λ₁ / λ_n` equals `condition`.
    pub fn geometric_with_condition(n: usize, lambda_max: f64, condition: f64) -> Self {
        let ratio = if n > 1 {
            condition.powf(-1.0 / (n as f64 - 1.0))
        } else {
            0.5
        };
        Self {
            n,
            lambda_max,
            decay: Decay::Geometric { ratio },
            floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("spectrum dimension must be >= 1".into()));
        }
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::InvalidArgument("lambda_max must be finite and > 0".into()));
        }
        if !(self.floor >= 0.0 && self.floor <= self.lambda_max) {
            return Err(Error::InvalidArgument("floor must lie in [0, lambda_max]".into()));
        }
        match self.decay {
            Decay::Geometric { ratio } if !(ratio > 0.0 && ratio < 1.0) => Err(
                Error::InvalidArgument(format!("geometric ratio {ratio} must lie in (0, 1)")),
            ),
            Decay::Power { exponent } if !(exponent > 0.0 && exponent.is_finite()) => Err(
                Error::InvalidArgument(format!("power exponent {exponent} must be > 0")),
            ),
            _ => Ok(()),
        }
    }
}

/// Descending eigenvalues `λ_i = max(λ_max·ρ^(i−1), floor)` or
/// `λ_i = max(λ_max·i^(−p), floor)`.
pub fn make_spectrum(spec: &SpectrumSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let eig = (0..spec.n)
        .map(|i| {
            let raw = match spec.decay {
                Decay::Geometric { ratio } => spec.lambda_max * ratio.powi(i as i32),
                Decay::Power { exponent } => spec.lambda_max * ((i + 1) as f64).powf(-exponent),
            };
            raw.max(spec.floor)
        })
        .collect();
    Ok(eig)
}

/// Seeded random orthogonal matrix: QR of a standard Gaussian matrix with
/// the triangular factor's diagonal forced positive.
pub fn random_orthogonal(n: usize, seed: u64) -> DenseMatrix {
    let mut rng = rng::stream(seed, rng::TAG_ROTATION, 0);
    // row-major fill so the draw order does not depend on nalgebra's layout
    let gauss: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let g = DMatrix::from_row_slice(n, n, &gauss);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    DenseMatrix::from_nalgebra(&q)
}

/// `Q Λ Qᵀ` for a seeded orthogonal `Q`.
pub fn make_dense_spd(eigenvalues: &[f64], seed: u64) -> Result<LinearOperator> {
    make_dense_spd_with_cap(eigenvalues, seed, DEFAULT_DENSE_CAP)
}

pub fn make_dense_spd_with_cap(eigenvalues: &[f64], seed: u64, cap: usize) -> Result<LinearOperator> {
    Ok(make_dense_spd_with_basis(eigenvalues, seed, cap)?.0)
}

/// Like [`make_dense_spd`] but also returns the orthogonal basis `Q`.
pub fn make_dense_spd_with_basis(
    eigenvalues: &[f64],
    seed: u64,
    cap: usize,
) -> Result<(LinearOperator, DenseMatrix)> {
    let n = eigenvalues.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    if n > cap {
        return Err(Error::DenseCapExceeded { n, cap });
    }
    if let Some(v) = eigenvalues.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidArgument(format!("eigenvalue {v} must be finite and >= 0")));
    }
    let q = random_orthogonal(n, seed);
    let qn = q.to_nalgebra();
    let mut scaled = qn.clone();
    for (j, lam) in eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*lam);
    }
    let a = &scaled * qn.transpose();
    let sym = (&a + a.transpose()) * 0.5;
    let mut spectrum = eigenvalues.to_vec();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    let op = LinearOperator::DenseSymmetric {
        matrix: DenseMatrix::from_nalgebra(&sym),
        eigenvalues: Some(spectrum),
    };
    Ok((op, q))
}

/// `f(x) = ½⟨Ax, x⟩ − ⟨b, x⟩` with known minimizer `x_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    pub a: LinearOperator,
    pub b: Vec<f64>,
    pub x_star: Vec<f64>,
    pub x0: Vec<f64>,
    /// `‖x_star − x0‖₂`
    pub r: f64,
    /// `‖A‖₂`
    pub l: f64,
}

impl QuadraticProblem {
    /// Builds a problem with `b = A x_star`, so `x_star` is an exact minimizer.
    pub fn from_solution(a: LinearOperator, x_star: Vec<f64>, x0: Vec<f64>) -> Result<Self> {
        let n = a.dim();
        check_dim(n, x_star.len())?;
        check_dim(n, x0.len())?;
        if x_star.iter().chain(&x0).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in x_star or x0".into()));
        }
        let b = a.apply(&x_star)?;
        let r = dist2(&x_star, &x0);
        let l = a.lambda_max();
        Ok(Self { a, b, x_star, x0, r, l })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Replaces the starting point and recomputes `R`.
    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self> {
        check_dim(self.dim(), x0.len())?;
        self.r = dist2(&self.x_star, &x0);
        self.x0 = x0;
        Ok(self)
    }

    pub fn f_value(&self, x: &[f64]) -> Result<f64> {
        let ax = self.a.apply(x)?;
        Ok(0.5 * dot(&ax, x) - dot(&self.b, x))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.a.apply(x)?;
        for (gi, bi) in g.iter_mut().zip(&self.b) {
            *gi -= bi;
        }
        Ok(g)
    }

    /// `f(x_star) = −½⟨b, x_star⟩`
    pub fn f_star(&self) -> f64 {
        -0.5 * dot(&self.b, &self.x_star)
    }

    /// `f(x) − f(x_star)` evaluated as `½⟨x − x_star, Ax − b⟩`, which avoids
    /// the cancellation of subtracting two large function values.
    pub fn suboptimality(&self, x: &[f64]) -> Result<f64> {
        let g = self.gradient(x)?;
        Ok(0.5 * x
            .iter()
            .zip(&self.x_star)
            .zip(&g)
            .map(|((xi, si), gi)| (xi - si) * gi)
            .sum::<f64>())
    }
}

/// `x_star = R·u` for a seeded uniform unit vector `u`, `x0 = 0`, `b = A x_star`.
pub fn make_problem(a: LinearOperator, r: f64, seed: u64) -> Result<QuadraticProblem> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("solution size R = {r} must be >= 0")));
    }
    let n = a.dim();
    let u = random_unit_vector(n, seed);
    let x_star: Vec<f64> = u.iter().map(|v| r * v).collect();
    let mut p = QuadraticProblem::from_solution(a, x_star, vec![0.0; n])?;
    // keep R exactly as requested rather than the recomputed norm
    p.r = r;
    Ok(p)
}

pub fn random_unit_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, rng::TAG_DIRECTION, 0);
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nv = norm2(&v);
        if nv > 0.0 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}
