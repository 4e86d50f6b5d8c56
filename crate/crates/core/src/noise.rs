//! Inexact oracles: perturbations of `b` with exact 2-norm `δ_b`, and a
//! Frobenius-normalized noise matrix `M` added to `A` with a fair random sign.
//!
//! All randomness is drawn from streams keyed by `(seed, iteration)`, so an
//! [`OracleView`] depends only on the model, the query point and `k`.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linops::{DenseMatrix, LinearOperator, QuadraticProblem, DEFAULT_DENSE_CAP};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VectorNoise {
    Adversarial,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Exact,
    AdversarialB { delta_b: f64 },
    StochasticB { delta_b: f64 },
    Matrix { delta_a: f64 },
    Combined {
        delta_a: f64,
        delta_b: f64,
        vector: VectorNoise,
    },
}

impl NoiseKind {
    pub fn delta_a(&self) -> f64 {
        match *self {
            NoiseKind::Matrix { delta_a } | NoiseKind::Combined { delta_a, .. } => delta_a,
            _ => 0.0,
        }
    }

    pub fn delta_b(&self) -> f64 {
        match *self {
            NoiseKind::AdversarialB { delta_b }
            | NoiseKind::StochasticB { delta_b }
            | NoiseKind::Combined { delta_b, .. } => delta_b,
            _ => 0.0,
        }
    }

    pub fn vector_noise(&self) -> Option<VectorNoise> {
        match *self {
            NoiseKind::AdversarialB { .. } => Some(VectorNoise::Adversarial),
            NoiseKind::StochasticB { .. } => Some(VectorNoise::Stochastic),
            NoiseKind::Combined { vector, .. } => Some(vector),
            _ => None,
        }
    }

    pub fn has_matrix_noise(&self) -> bool {
        matches!(self, NoiseKind::Matrix { .. } | NoiseKind::Combined { .. })
    }

    /// Same kind with the given magnitudes; fields the kind lacks are ignored.
    pub fn with_deltas(&self, delta_a: f64, delta_b: f64) -> Self {
        match *self {
            NoiseKind::Exact => NoiseKind::Exact,
            NoiseKind::AdversarialB { .. } => NoiseKind::AdversarialB { delta_b },
            NoiseKind::StochasticB { .. } => NoiseKind::StochasticB { delta_b },
            NoiseKind::Matrix { .. } => NoiseKind::Matrix { delta_a },
            NoiseKind::Combined { vector, .. } => NoiseKind::Combined {
                delta_a,
                delta_b,
                vector,
            },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NoiseKind::Exact => "exact",
            NoiseKind::AdversarialB { .. } => "adversarial_b",
            NoiseKind::StochasticB { .. } => "stochastic_b",
            NoiseKind::Matrix { .. } => "matrix",
            NoiseKind::Combined {
                vector: VectorNoise::Adversarial,
                ..
            } => "combined_adversarial",
            NoiseKind::Combined {
                vector: VectorNoise::Stochastic,
                ..
            } => "combined_stochastic",
        }
    }

    /// Parses a label produced by [`NoiseKind::label`], filling in magnitudes.
    pub fn from_label(label: &str, delta_a: f64, delta_b: f64) -> Option<Self> {
        Some(match label {
            "exact" => NoiseKind::Exact,
            "adversarial_b" => NoiseKind::AdversarialB { delta_b },
            "stochastic_b" => NoiseKind::StochasticB { delta_b },
            "matrix" => NoiseKind::Matrix { delta_a },
            "combined_adversarial" => NoiseKind::Combined {
                delta_a,
                delta_b,
                vector: VectorNoise::Adversarial,
            },
            "combined_stochastic" => NoiseKind::Combined {
                delta_a,
                delta_b,
                vector: VectorNoise::Stochastic,
            },
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResamplePolicy {
    /// `M` is drawn once per run; only its sign changes between iterations.
    #[default]
    FixedPerRun,
    ResampleEachIteration,
}

#[derive(Debug, Clone)]
pub struct NoiseMatrix {
    pub m: DenseMatrix,
    pub frobenius_norm: f64,
}

impl NoiseMatrix {
    pub fn dim(&self) -> usize {
        self.m.dim()
    }
}

/// Per-iteration oracle perturbation owned by a single solver run.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    kind: NoiseKind,
    seed: u64,
    resample: ResamplePolicy,
    fixed_magnitudes: bool,
    dense_cap: usize,
    matrix: OnceLock<Arc<NoiseMatrix>>,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, seed: u64) -> Result<Self> {
        for (name, d) in [("delta_a", kind.delta_a()), ("delta_b", kind.delta_b())] {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {d} must be finite and >= 0")));
            }
        }
        Ok(Self {
            kind,
            seed,
            resample: ResamplePolicy::default(),
            fixed_magnitudes: false,
            dense_cap: DEFAULT_DENSE_CAP,
            matrix: OnceLock::new(),
        })
    }

    pub fn exact() -> Self {
        Self::new(NoiseKind::Exact, 0).expect("exact model is always valid")
    }

    pub fn with_resample(mut self, policy: ResamplePolicy) -> Self {
        self.resample = policy;
        self
    }

    /// Draw the `b`-noise magnitudes once per run instead of every iteration.
    pub fn with_fixed_magnitudes(mut self, fixed: bool) -> Self {
        self.fixed_magnitudes = fixed;
        self
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn resample_policy(&self) -> ResamplePolicy {
        self.resample
    }

    /// True when both magnitudes are zero, whatever the nominal kind.
    pub fn is_exact(&self) -> bool {
        self.kind.delta_a() == 0.0 && self.kind.delta_b() == 0.0
    }

    fn fixed_matrix(&self, n: usize) -> Result<Arc<NoiseMatrix>> {
        if let Some(m) = self.matrix.get() {
            if m.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: m.dim(),
                    got: n,
                });
            }
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(noise_matrix_from_stream(n, self.kind.delta_a(), self.seed, 0, self.dense_cap)?);
        Ok(Arc::clone(self.matrix.get_or_init(|| m)))
    }

    /// The perturbed pair `(Ã, b̃)` seen by the solver at iteration `k` when
    /// querying the oracle at `x`.
    pub fn oracle_view<'a>(
        &self,
        problem: &'a QuadraticProblem,
        x: &[f64],
        k: usize,
    ) -> Result<OracleView<'a>> {
        let n = problem.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        let k64 = k as u64;

        let perturbation = if self.kind.has_matrix_noise() {
            let m = match self.resample {
                ResamplePolicy::FixedPerRun => self.fixed_matrix(n)?,
                ResamplePolicy::ResampleEachIteration => Arc::new(noise_matrix_from_stream(
                    n,
                    self.kind.delta_a(),
                    self.seed,
                    k64 + 1,
                    self.dense_cap,
                )?),
            };
            let plus: bool = rng::stream(self.seed, rng::TAG_COIN_A, k64).gen();
            Some((if plus { 1.0 } else { -1.0 }, m))
        } else {
            None
        };

        let b_tilde = match self.kind.vector_noise() {
            None => problem.b.clone(),
            Some(vector) => {
                let index = if self.fixed_magnitudes { 0 } else { k64 };
                let mut mag_rng = rng::stream(self.seed, rng::TAG_MAGNITUDES, index);
                let delta = magnitudes_from_rng(n, self.kind.delta_b(), &mut mag_rng);
                match vector {
                    VectorNoise::Adversarial => {
                        let g = problem.gradient(x)?;
                        adversarial_b(&problem.b, &delta, &g)?
                    }
                    VectorNoise::Stochastic => {
                        let plus: bool = rng::stream(self.seed, rng::TAG_COIN_B, k64).gen();
                        stochastic_b(&problem.b, &delta, Coin::from(plus))?
                    }
                }
            }
        };

        Ok(OracleView {
            a: &problem.a,
            perturbation,
            b_tilde,
            iteration: k,
        })
    }
}

/// The oracle's data for one iteration.
#[derive(Debug, Clone)]
pub struct OracleView<'a> {
    a: &'a LinearOperator,
    perturbation: Option<(f64, Arc<NoiseMatrix>)>,
    b_tilde: Vec<f64>,
    iteration: usize,
}

impl<'a> OracleView<'a> {
    pub fn b_tilde(&self) -> &[f64] {
        &self.b_tilde
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// `(±1, M)` when `Ã = A ± M`.
    pub fn perturbation(&self) -> Option<(f64, &NoiseMatrix)> {
        self.perturbation.as_ref().map(|(s, m)| (*s, m.as_ref()))
    }

    pub(crate) fn operator(&self) -> &'a LinearOperator {
        self.a
    }

    pub(crate) fn perturbation_arc(&self) -> Option<(f64, &Arc<NoiseMatrix>)> {
        self.perturbation.as_ref().map(|(s, m)| (*s, m))
    }

    /// `Ã x`, computed as `A x ± M x` without forming `A ± M`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.a.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        let mut out = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        self.apply_into(x, &mut out, &mut scratch);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.a.apply_into(x, out);
        if let Some((sign, m)) = &self.perturbation {
            m.m.matvec_into(x, scratch);
            crate::linops::axpy(*sign, scratch, out);
        }
    }

    /// `Ã x − b̃`
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.apply(x)?;
        for (gi, bi) in g.iter_mut().zip(&self.b_tilde) {
            *gi -= bi;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coin {
    Plus,
    Minus,
}

impl From<bool> for Coin {
    fn from(plus: bool) -> Self {
        if plus {
            Coin::Plus
        } else {
            Coin::Minus
        }
    }
}

fn magnitudes_from_rng(n: usize, delta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if delta == 0.0 {
        return vec![0.0; n];
    }
    loop {
        let xi: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let total: f64 = xi.iter().map(|v| v * v).sum();
        if total > 0.0 {
            let d2 = delta * delta;
            return xi.iter().map(|v| (v * v * d2 / total).sqrt()).collect();
        }
    }
}

/// Nonnegative magnitudes `Δ_j = √(ξ_j²·δ²/Σξ_i²)`, so `‖Δ‖₂ = δ`.
pub fn sample_noise_magnitudes(n: usize, delta: f64, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta = {delta} must be >= 0")));
    }
    let mut rng = rng::stream(seed, rng::TAG_MAGNITUDES, 0);
    Ok(magnitudes_from_rng(n, delta, &mut rng))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `b̃_j = b_j + Δ_j·sign(g_j)` with `sign(0) = 0`.
pub fn adversarial_b(b: &[f64], delta: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    if delta.len() != b.len() || g.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: if delta.len() != b.len() { delta.len() } else { g.len() },
        });
    }
    Ok(b.iter()
        .zip(delta)
        .zip(g)
        .map(|((bi, di), gi)| bi + di * sign(*gi))
        .collect())
}

/// `b̃ = b + Δ` or `b − Δ`; one sign for the whole vector.
pub fn stochastic_b(b: &[f64], delta: &[f64], coin: Coin) -> Result<Vec<f64>> {
    if delta.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: delta.len(),
        });
    }
    let s = match coin {
        Coin::Plus => 1.0,
        Coin::Minus => -1.0,
    };
    Ok(b.iter().zip(delta).map(|(bi, di)| bi + s * di).collect())
}

fn noise_matrix_from_stream(n: usize, delta_a: f64, seed: u64, index: u64, cap: usize) -> Result<NoiseMatrix> {
    if n > cap {
        return Err(Error::DenseCapExceeded { n, cap });
    }
    if !(delta_a >= 0.0 && delta_a.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta_a = {delta_a} must be >= 0")));
    }
    if delta_a == 0.0 {
        return Ok(NoiseMatrix {
            m: DenseMatrix::zeros(n),
            frobenius_norm: 0.0,
        });
    }
    let mut rng = rng::stream(seed, rng::TAG_NOISE_MATRIX, index);
    let entries = magnitudes_from_rng(n * n, delta_a, &mut rng);
    let m = DenseMatrix::from_row_major(n, entries)?;
    let frobenius_norm = m.frobenius_norm();
    Ok(NoiseMatrix { m, frobenius_norm })
}

/// `m_pk = √(ξ²_{(p−1)n+k}·δ_A²/Σξ_i²)` over `n²` standard normals, so
/// `‖M‖_F = δ_A` and every entry is nonnegative.
pub fn make_noise_matrix(n: usize, delta_a: f64, seed: u64) -> Result<NoiseMatrix> {
    noise_matrix_from_stream(n, delta_a, seed, 0, DEFAULT_DENSE_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{make_problem, norm2, sub};

    #[test]
    fn zero_delta_gives_zero_magnitudes() {
        assert_eq!(sample_noise_magnitudes(7, 0.0, 1).unwrap(), vec![0.0; 7]);
    }

    #[test]
    fn single_component_takes_whole_norm() {
        let d = sample_noise_magnitudes(1, 0.1, 3).unwrap();
        assert!((d[0] - 0.1).abs() < 1e-17);
    }

    #[test]
    fn magnitudes_have_exact_norm() {
        let d = sample_noise_magnitudes(10_000, 0.1, 42).unwrap();
        assert!((norm2(&d) - 0.1).abs() <= 1e-12 * 0.1);
        assert!(d.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn adversarial_zero_gradient_keeps_b() {
        let b = vec![1.0, -2.0, 3.0];
        let out = adversarial_b(&b, &[0.1, 0.2, 0.3], &[0.0; 3]).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn adversarial_follows_gradient_signs() {
        let out = adversarial_b(&[1.0, 1.0], &[0.06, 0.08], &[2.0, -5.0]).unwrap();
        assert!((out[0] - 1.06).abs() < 1e-15);
        assert!((out[1] - 0.92).abs() < 1e-15);
    }

    #[test]
    fn adversarial_dimension_mismatch() {
        assert!(adversarial_b(&[1.0, 1.0], &[0.1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn stochastic_with_zero_noise() {
        let b = vec![1.0, 2.0];
        assert_eq!(stochastic_b(&b, &[0.0, 0.0], Coin::Plus).unwrap(), b);
        assert_eq!(stochastic_b(&b, &[0.0, 0.0], Coin::Minus).unwrap(), b);
    }

    #[test]
    fn stochastic_plus_adds() {
        let out = stochastic_b(&[0.0, 0.0], &[0.6, 0.8], Coin::Plus).unwrap();
        assert_eq!(out, vec![0.6, 0.8]);
    }

    #[test]
    fn noise_matrix_trivial_cases() {
        let z = make_noise_matrix(4, 0.0, 1).unwrap();
        assert!(z.m.as_slice().iter().all(|v| *v == 0.0));
        let one = make_noise_matrix(1, 0.005, 1).unwrap();
        assert!((one.m.get(0, 0) - 0.005).abs() < 1e-18);
    }

    #[test]
    fn noise_matrix_over_cap() {
        assert!(matches!(
            noise_matrix_from_stream(10, 0.1, 1, 0, 4),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn exact_view_is_identity() {
        let p = make_problem(LinearOperator::identity(3), 2.0, 1).unwrap();
        let model = NoiseModel::exact();
        let view = model.oracle_view(&p, &[1.0, 2.0, 3.0], 4).unwrap();
        assert_eq!(view.b_tilde(), p.b.as_slice());
        assert_eq!(view.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(view.perturbation().is_none());
    }

    #[test]
    fn views_are_deterministic() {
        let p = make_problem(LinearOperator::diagonal(vec![3.0, 2.0, 1.0, 0.5]).unwrap(), 2.0, 1).unwrap();
        let kind = NoiseKind::Combined {
            delta_a: 0.01,
            delta_b: 0.1,
            vector: VectorNoise::Stochastic,
        };
        let m1 = NoiseModel::new(kind, 9).unwrap();
        let m2 = NoiseModel::new(kind, 9).unwrap();
        let x = [0.5, -0.5, 1.0, 0.0];
        for k in [0, 1, 17] {
            let v1 = m1.oracle_view(&p, &x, k).unwrap();
            let v2 = m2.oracle_view(&p, &x, k).unwrap();
            assert_eq!(v1.b_tilde(), v2.b_tilde());
            assert_eq!(v1.apply(&x).unwrap(), v2.apply(&x).unwrap());
        }
    }

    #[test]
    fn negative_delta_rejected() {
        assert!(NoiseModel::new(NoiseKind::StochasticB { delta_b: -0.1 }, 0).is_err());
    }

    #[test]
    fn diagonal_operator_over_cap_with_matrix_noise() {
        let p = make_problem(LinearOperator::identity(6), 1.0, 1).unwrap();
        let model = NoiseModel::new(NoiseKind::Matrix { delta_a: 0.1 }, 1)
            .unwrap()
            .with_dense_cap(5);
        assert!(matches!(
            model.oracle_view(&p, &p.x0, 0),
            Err(Error::DenseCapExceeded { n: 6, cap: 5 })
        ));
    }

    #[test]
    fn combined_bounds_hold_each_iteration() {
        let p = make_problem(LinearOperator::diagonal(vec![1.0, 0.5, 0.1, 0.01, 0.001]).unwrap(), 5.0, 2)
            .unwrap();
        let kind = NoiseKind::Combined {
            delta_a: 0.001,
            delta_b: 0.01,
            vector: VectorNoise::Adversarial,
        };
        let model = NoiseModel::new(kind, 3).unwrap();
        let x = [1.0, 2.0, -1.0, 0.5, 0.0];
        for k in 0..20 {
            let v = model.oracle_view(&p, &x, k).unwrap();
            assert!(norm2(&sub(v.b_tilde(), &p.b)) <= 0.01 + 1e-12);
            let (_, m) = v.perturbation().unwrap();
            assert!((m.frobenius_norm - 0.001).abs() <= 1e-12 * 0.001);
        }
    }

    #[test]
    fn resample_policy_changes_matrix() {
        let p = make_problem(LinearOperator::identity(4), 1.0, 1).unwrap();
        let kind = NoiseKind::Matrix { delta_a: 0.1 };
        let fixed = NoiseModel::new(kind, 5).unwrap();
        let fresh = NoiseModel::new(kind, 5)
            .unwrap()
            .with_resample(ResamplePolicy::ResampleEachIteration);
        let m = |model: &NoiseModel, k| {
            model.oracle_view(&p, &p.x0, k).unwrap().perturbation().unwrap().1.m.clone()
        };
        assert_eq!(m(&fixed, 0), m(&fixed, 1));
        assert_ne!(m(&fresh, 0), m(&fresh, 1));
        assert!((m(&fresh, 3).frobenius_norm() - 0.1).abs() < 1e-14);
    }
}
