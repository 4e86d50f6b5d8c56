//! Conjugate gradients and a Nesterov baseline driven by an inexact oracle.
//!
//! The solvers only ever see the per-iteration pair `(Ã, b̃)` from
//! [`NoiseModel::oracle_view`]. Every trace record is computed from the true
//! `A`, `b` and `x*`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linops::{axpy, dot, norm2, QuadraticProblem};
use crate::noise::{NoiseMatrix, NoiseModel, OracleView};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Noiseless `f(x_k)`.
    pub f_true: f64,
    /// `f(x_k) − f(x*)`, evaluated without cancellation.
    pub f_gap: f64,
    /// `(f(x_k) − f(x*)) / (f(x_0) − f(x*))`
    pub f_scaled: f64,
    /// `‖A x_k − b‖₂`
    pub residual_norm: f64,
    /// `‖x_k − x*‖₂`
    pub arg_error: f64,
    /// Step that produced `x_k`; zero for `k = 0`.
    pub step_alpha: f64,
    /// `‖Ã x_k − b̃‖₂` as seen by the solver.
    pub noisy_residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalStatus {
    MaxIter,
    ToleranceReached,
    NemirovskyStop,
    BreakdownDetected,
}

impl TerminalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalStatus::MaxIter => "max_iter",
            TerminalStatus::ToleranceReached => "tolerance_reached",
            TerminalStatus::NemirovskyStop => "nemirovsky_stop",
            TerminalStatus::BreakdownDetected => "breakdown",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub status: TerminalStatus,
    /// Iterations at which a breakdown forced a steepest-descent restart.
    pub restarts: Vec<usize>,
    pub f_star: f64,
    pub final_x: Vec<f64>,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace always holds the k = 0 record")
    }

    pub fn f_true(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f_true).collect()
    }

    pub fn f_gap(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f_gap).collect()
    }

    pub fn f_scaled(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f_scaled).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopRule {
    /// Fires when `‖d‖₂ < ε`.
    GradNorm(f64),
    MaxIter(usize),
    /// Fires when `‖Ãx − b̃‖₂ ≤ 2(δ_A‖x‖₂ + δ_b)`.
    Nemirovsky { delta_a: f64, delta_b: f64 },
    /// Fires when any member fires; the first member that fires wins.
    Composite(Vec<StopRule>),
}

/// Quantities a stop rule may inspect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopState {
    pub iterations: usize,
    pub x_norm: f64,
    pub d_norm: f64,
    pub noisy_residual_norm: f64,
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            StopRule::GradNorm(eps) if !(*eps > 0.0) => {
                Err(Error::InvalidArgument(format!("GradNorm epsilon {eps} must be > 0")))
            }
            StopRule::MaxIter(0) => Err(Error::InvalidArgument("MaxIter must be >= 1".into())),
            StopRule::Nemirovsky { delta_a, delta_b } if !(*delta_a >= 0.0 && *delta_b >= 0.0) => {
                Err(Error::InvalidArgument("Nemirovsky deltas must be >= 0".into()))
            }
            StopRule::Composite(rules) => rules.iter().try_for_each(|r| r.validate()),
            _ => Ok(()),
        }
    }

    pub fn fired(&self, state: &StopState) -> Option<TerminalStatus> {
        match self {
            StopRule::GradNorm(eps) => (state.d_norm < *eps).then_some(TerminalStatus::ToleranceReached),
            StopRule::MaxIter(n) => (state.iterations >= *n).then_some(TerminalStatus::MaxIter),
            StopRule::Nemirovsky { delta_a, delta_b } => (state.noisy_residual_norm
                <= 2.0 * (delta_a * state.x_norm + delta_b))
                .then_some(TerminalStatus::NemirovskyStop),
            StopRule::Composite(rules) => rules.iter().find_map(|r| r.fired(state)),
        }
    }
}

pub fn check_stop(rule: &StopRule, state: &StopState) -> bool {
    rule.fired(state).is_some()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaRule {
    /// `β_i = g_{i+1}ᵀ Ã d_i / d_iᵀ Ã d_i`
    #[default]
    Conjugacy,
    /// `β_i = ‖g_{i+1}‖² / ‖g_i‖²`
    FletcherReeves,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub beta: BetaRule,
    /// Breakdown when `dᵀÃd ≤ curvature_tol·‖d‖²`.
    pub curvature_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            beta: BetaRule::Conjugacy,
            curvature_tol: 1e-14,
        }
    }
}

/// Computes true-problem diagnostics for trace records.
struct Diagnostics<'p> {
    problem: &'p QuadraticProblem,
    gap0: f64,
    ax: Vec<f64>,
}

impl<'p> Diagnostics<'p> {
    fn new(problem: &'p QuadraticProblem) -> Result<Self> {
        let gap0 = problem.suboptimality(&problem.x0)?;
        Ok(Self {
            problem,
            gap0,
            ax: vec![0.0; problem.dim()],
        })
    }

    fn record(&mut self, x: &[f64], k: usize, step_alpha: f64, noisy_residual_norm: f64) -> Result<IterationRecord> {
        let mut ax = std::mem::take(&mut self.ax);
        self.problem.a.apply_into(x, &mut ax);
        let rec = self.record_with_ax(x, &ax, k, step_alpha, noisy_residual_norm);
        self.ax = ax;
        rec
    }

    /// Like `record` with a precomputed true product `A x`.
    fn record_with_ax(
        &mut self,
        x: &[f64],
        ax: &[f64],
        k: usize,
        step_alpha: f64,
        noisy_residual_norm: f64,
    ) -> Result<IterationRecord> {
        let p = self.problem;
        let mut f_true = 0.0;
        let mut gap = 0.0;
        let mut res2 = 0.0;
        let mut err2 = 0.0;
        for i in 0..x.len() {
            let r = ax[i] - p.b[i];
            let e = x[i] - p.x_star[i];
            f_true += x[i] * (0.5 * ax[i] - p.b[i]);
            gap += e * r;
            res2 += r * r;
            err2 += e * e;
        }
        let f_gap = 0.5 * gap;
        if !f_true.is_finite() || !f_gap.is_finite() {
            return Err(Error::NonFinite {
                iteration: k,
                what: "objective",
            });
        }
        Ok(IterationRecord {
            k,
            f_true,
            f_gap,
            f_scaled: if self.gap0 > 0.0 { f_gap / self.gap0 } else { 0.0 },
            residual_norm: res2.sqrt(),
            arg_error: err2.sqrt(),
            step_alpha,
            noisy_residual_norm,
        })
    }
}

fn check_finite(v: f64, iteration: usize, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { iteration, what })
    }
}

pub fn cg_solve(
    problem: &QuadraticProblem,
    model: &NoiseModel,
    stop: &StopRule,
    n_max: usize,
) -> Result<SolverTrace> {
    cg_solve_with(problem, model, stop, n_max, &CgOptions::default())
}

/// Keeps `M x` for a fixed noise matrix up to date through `x ← x + α d`,
/// recomputing it exactly every `REFRESH` updates.
#[derive(Default)]
struct PerturbedProduct {
    matrix: Option<Arc<NoiseMatrix>>,
    mx: Vec<f64>,
    age: usize,
}

impl PerturbedProduct {
    const REFRESH: usize = 50;

    fn get(&mut self, m: &Arc<NoiseMatrix>, x: &[f64]) -> &[f64] {
        let fresh = matches!(&self.matrix, Some(cur) if Arc::ptr_eq(cur, m)) && self.age < Self::REFRESH;
        if !fresh {
            self.mx.resize(x.len(), 0.0);
            m.m.matvec_into(x, &mut self.mx);
            self.matrix = Some(Arc::clone(m));
            self.age = 0;
        }
        &self.mx
    }

    fn advance(&mut self, m: &Arc<NoiseMatrix>, alpha: f64, md: &[f64]) {
        match &self.matrix {
            Some(cur) if Arc::ptr_eq(cur, m) => {
                axpy(alpha, md, &mut self.mx);
                self.age += 1;
            }
            _ => self.matrix = None,
        }
    }
}

/// `out = Ã d`; also leaves `M d` in `md` when the view is perturbed.
fn apply_split(view: &OracleView<'_>, d: &[f64], out: &mut [f64], md: &mut [f64]) {
    view.operator().apply_into(d, out);
    if let Some((sign, m)) = view.perturbation_arc() {
        m.m.matvec_into(d, md);
        axpy(sign, md, out);
    }
}

/// Writes `A x` into `ax` and `Ã x − b̃` into `g`.
fn noisy_gradient(
    view: &OracleView<'_>,
    x: &[f64],
    cache: &mut PerturbedProduct,
    ax: &mut [f64],
    g: &mut [f64],
) {
    view.operator().apply_into(x, ax);
    g.copy_from_slice(ax);
    if let Some((sign, m)) = view.perturbation_arc() {
        axpy(sign, cache.get(m, x), g);
    }
    for (gi, bi) in g.iter_mut().zip(view.b_tilde()) {
        *gi -= bi;
    }
}

/// Conjugate gradients with exact line search on the noisy quadratic:
///
/// ```text
/// g_i = Ã_i x_i − b̃_i,   d_0 = −g_0
/// α_i = −d_iᵀ g_i / d_iᵀ Ã_i d_i
/// x_{i+1} = x_i + α_i d_i
/// d_{i+1} = −g_{i+1} + β_i d_i
/// ```
///
/// A direction with `dᵀÃd ≤ curvature_tol·‖d‖²` is replaced once by the
/// steepest-descent direction; if that also fails the run stops with
/// [`TerminalStatus::BreakdownDetected`].
pub fn cg_solve_with(
    problem: &QuadraticProblem,
    model: &NoiseModel,
    stop: &StopRule,
    n_max: usize,
    opts: &CgOptions,
) -> Result<SolverTrace> {
    stop.validate()?;
    let n = problem.dim();
    let mut diag = Diagnostics::new(problem)?;
    let mut x = problem.x0.clone();
    let mut cache = PerturbedProduct::default();
    let mut ax = vec![0.0; n];
    let mut g = vec![0.0; n];

    let mut view = model.oracle_view(problem, &x, 0)?;
    noisy_gradient(&view, &x, &mut cache, &mut ax, &mut g);
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut steepest = true;
    let mut g_norm = norm2(&g);

    let mut ad = vec![0.0; n];
    let mut md = vec![0.0; n];
    let mut g_next = vec![0.0; n];
    let mut restarts = Vec::new();
    let mut records = vec![diag.record_with_ax(&x, &ax, 0, 0.0, g_norm)?];
    let mut k = 0;

    let status = loop {
        let d_norm = norm2(&d);
        let state = StopState {
            iterations: k,
            x_norm: norm2(&x),
            d_norm,
            noisy_residual_norm: g_norm,
        };
        if let Some(s) = stop.fired(&state) {
            break s;
        }
        if k >= n_max {
            break TerminalStatus::MaxIter;
        }
        if g_norm == 0.0 {
            break TerminalStatus::ToleranceReached;
        }

        apply_split(&view, &d, &mut ad, &mut md);
        let mut curvature = dot(&d, &ad);
        if !(curvature > opts.curvature_tol * d_norm * d_norm) {
            if steepest {
                break TerminalStatus::BreakdownDetected;
            }
            restarts.push(k);
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            apply_split(&view, &d, &mut ad, &mut md);
            curvature = dot(&d, &ad);
            if !(curvature > opts.curvature_tol * g_norm * g_norm) {
                break TerminalStatus::BreakdownDetected;
            }
        }

        let alpha = check_finite(-dot(&d, &g) / curvature, k, "step alpha")?;
        axpy(alpha, &d, &mut x);
        if let Some((_, m)) = view.perturbation_arc() {
            cache.advance(m, alpha, &md);
        }
        k += 1;

        view = model.oracle_view(problem, &x, k)?;
        noisy_gradient(&view, &x, &mut cache, &mut ax, &mut g_next);
        let g_next_norm = norm2(&g_next);
        let beta = match opts.beta {
            BetaRule::Conjugacy => dot(&g_next, &ad) / curvature,
            BetaRule::FletcherReeves => (g_next_norm * g_next_norm) / (g_norm * g_norm),
        };
        let beta = check_finite(beta, k, "conjugation beta")?;
        for (di, gi) in d.iter_mut().zip(&g_next) {
            *di = -gi + beta * *di;
        }
        steepest = false;
        std::mem::swap(&mut g, &mut g_next);
        g_norm = check_finite(g_next_norm, k, "gradient")?;
        records.push(diag.record_with_ax(&x, &ax, k, alpha, g_norm)?);
    };

    Ok(SolverTrace {
        records,
        status,
        restarts,
        f_star: problem.f_star(),
        final_x: x,
    })
}

/// Accelerated gradient with constant step `1/L` and momentum `(j−1)/(j+2)`,
/// querying the oracle at the extrapolated point.
pub fn nesterov_solve(problem: &QuadraticProblem, model: &NoiseModel, n_max: usize) -> Result<SolverTrace> {
    let l = problem.l;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("Lipschitz constant L = {l} must be > 0")));
    }
    let n = problem.dim();
    let step = 1.0 / l;
    let mut diag = Diagnostics::new(problem)?;
    let mut x = problem.x0.clone();
    let mut y = x.clone();
    let mut x_next = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let g0 = model.oracle_view(problem, &x, 0)?.gradient(&x)?;
    let mut records = vec![diag.record(&x, 0, 0.0, norm2(&g0))?];

    for k in 0..n_max {
        let view = model.oracle_view(problem, &y, k)?;
        view.apply_into(&y, &mut g, &mut scratch);
        for (gi, bi) in g.iter_mut().zip(view.b_tilde()) {
            *gi -= bi;
        }
        let g_norm = check_finite(norm2(&g), k, "gradient")?;
        for i in 0..n {
            x_next[i] = y[i] - step * g[i];
        }
        let momentum = k as f64 / (k as f64 + 3.0);
        for i in 0..n {
            y[i] = x_next[i] + momentum * (x_next[i] - x[i]);
        }
        std::mem::swap(&mut x, &mut x_next);
        records.push(diag.record(&x, k + 1, step, g_norm)?);
    }

    Ok(SolverTrace {
        records,
        status: TerminalStatus::MaxIter,
        restarts: Vec::new(),
        f_star: problem.f_star(),
        final_x: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{make_dense_spd, make_problem, LinearOperator};
    use crate::noise::NoiseKind;

    #[test]
    fn identity_converges_in_one_step() {
        let p = make_problem(LinearOperator::identity(8), 3.0, 4).unwrap();
        let t = cg_solve(&p, &NoiseModel::exact(), &StopRule::GradNorm(1e-12), 10).unwrap();
        assert_eq!(t.iterations(), 1);
        assert_eq!(t.status, TerminalStatus::ToleranceReached);
        assert!((t.records[1].f_true - p.f_star()).abs() <= 1e-12 * p.f_star().abs());
    }

    #[test]
    fn grad_norm_rule() {
        let s = StopState {
            iterations: 3,
            x_norm: 1.0,
            d_norm: 1e-7,
            noisy_residual_norm: 1.0,
        };
        assert!(check_stop(&StopRule::GradNorm(1e-6), &s));
        assert!(!check_stop(&StopRule::GradNorm(1e-8), &s));
    }

    #[test]
    fn nemirovsky_rule_inequality() {
        let mut s = StopState {
            iterations: 0,
            x_norm: 123.0,
            d_norm: 1.0,
            noisy_residual_norm: 0.25,
        };
        let rule = StopRule::Nemirovsky { delta_a: 0.0, delta_b: 0.1 };
        assert!(!check_stop(&rule, &s));
        s.x_norm = 2000.0;
        s.noisy_residual_norm = 15.0;
        let rule = StopRule::Nemirovsky { delta_a: 0.005, delta_b: 0.1 };
        assert!(check_stop(&rule, &s));
    }

    #[test]
    fn composite_fires_if_any_member_fires() {
        let rule = StopRule::Composite(vec![StopRule::MaxIter(10), StopRule::GradNorm(1e-3)]);
        let mut s = StopState {
            iterations: 2,
            x_norm: 0.0,
            d_norm: 1.0,
            noisy_residual_norm: 1.0,
        };
        assert!(!check_stop(&rule, &s));
        s.d_norm = 1e-4;
        assert_eq!(rule.fired(&s), Some(TerminalStatus::ToleranceReached));
        s.iterations = 10;
        assert_eq!(rule.fired(&s), Some(TerminalStatus::MaxIter));
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(StopRule::GradNorm(0.0).validate().is_err());
        assert!(StopRule::MaxIter(0).validate().is_err());
        assert!(StopRule::Composite(vec![StopRule::GradNorm(-1.0)]).validate().is_err());
    }

    #[test]
    fn record_count_includes_start() {
        let a = LinearOperator::diagonal(vec![1.0, 0.5, 0.25, 0.1]).unwrap();
        let p = make_problem(a, 1.0, 1).unwrap();
        let t = cg_solve(&p, &NoiseModel::exact(), &StopRule::MaxIter(3), 100).unwrap();
        assert_eq!(t.records.len(), t.iterations() + 1);
        assert_eq!(t.iterations(), 3);
        assert_eq!(t.records[0].f_scaled, 1.0);
        assert_eq!(t.status, TerminalStatus::MaxIter);
    }

    #[test]
    fn nesterov_identity_converges_monotonically() {
        let p = make_problem(LinearOperator::identity(6), 5.0, 2).unwrap();
        let t = nesterov_solve(&p, &NoiseModel::exact(), 200).unwrap();
        let f = t.f_true();
        assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!((t.last().f_true - p.f_star()).abs() <= 1e-8);
    }

    #[test]
    fn nesterov_fixed_point_at_solution() {
        let a = make_dense_spd(&[2.0, 1.0, 0.1], 3).unwrap();
        let p = make_problem(a, 2.0, 3).unwrap();
        let start = p.x_star.clone();
        let p = p.with_x0(start.clone()).unwrap();
        let t = nesterov_solve(&p, &NoiseModel::exact(), 20).unwrap();
        assert_eq!(t.final_x, start);
        assert!(t.records.iter().all(|r| r.arg_error == 0.0));
    }

    #[test]
    fn nesterov_rejects_zero_lipschitz() {
        let a = LinearOperator::diagonal(vec![0.0, 0.0]).unwrap();
        let p = make_problem(a, 1.0, 1).unwrap();
        assert!(nesterov_solve(&p, &NoiseModel::exact(), 5).is_err());
    }

    #[test]
    fn zero_solution_terminates_immediately() {
        let a = LinearOperator::diagonal(vec![1.0, 0.1]).unwrap();
        let p = make_problem(a, 0.0, 1).unwrap();
        let t = cg_solve(&p, &NoiseModel::exact(), &StopRule::MaxIter(50), 50).unwrap();
        assert_eq!(t.status, TerminalStatus::ToleranceReached);
        assert_eq!(t.iterations(), 0);
    }

    #[test]
    fn fletcher_reeves_switch_also_converges() {
        let a = make_dense_spd(&[4.0, 2.0, 1.0, 0.5, 0.25], 8).unwrap();
        let p = make_problem(a, 2.0, 8).unwrap();
        let opts = CgOptions {
            beta: BetaRule::FletcherReeves,
            ..CgOptions::default()
        };
        let t = cg_solve_with(&p, &NoiseModel::exact(), &StopRule::GradNorm(1e-12), 50, &opts).unwrap();
        assert!(t.last().arg_error <= 1e-9 * p.r);
    }

    #[test]
    fn breakdown_on_negative_curvature() {
        // δ_A far above the spectrum makes A − M indefinite along the ones direction.
        let a = LinearOperator::diagonal(vec![1e-6; 4]).unwrap();
        let p = make_problem(a, 1.0, 1).unwrap();
        let mut saw_breakdown = false;
        for seed in 0..20 {
            let model = NoiseModel::new(NoiseKind::Matrix { delta_a: 1.0 }, seed).unwrap();
            let t = cg_solve(&p, &model, &StopRule::MaxIter(50), 50).unwrap();
            saw_breakdown |= t.status == TerminalStatus::BreakdownDetected;
            assert!(t.records.iter().all(|r| r.f_true.is_finite()));
        }
        assert!(saw_breakdown);
    }
}
