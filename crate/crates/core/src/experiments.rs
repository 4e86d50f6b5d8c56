//! Experiment families, plateau estimation, least-squares fits and CSV output.

use std::io::Write;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linops::{
    make_dense_spd_with_cap, make_problem, make_spectrum, LinearOperator, QuadraticProblem, SpectrumSpec,
    DEFAULT_DENSE_CAP,
};
use crate::noise::{NoiseKind, NoiseModel, ResamplePolicy};
use crate::solvers::{cg_solve_with, nesterov_solve, BetaRule, CgOptions, SolverTrace, StopRule, TerminalStatus};

pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;
pub const MIN_TRACE_LEN: usize = 10;
pub const WORKERS_ENV: &str = "NOISY_CG_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Trajectory,
    DeltaSweep,
    RSweep,
    CompareNesterov,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Trajectory => "trajectory",
            Family::DeltaSweep => "sweep_delta",
            Family::RSweep => "sweep_r",
            Family::CompareNesterov => "compare",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "trajectory" => Family::Trajectory,
            "sweep_delta" | "sweep-delta" => Family::DeltaSweep,
            "sweep_r" | "sweep-r" => Family::RSweep,
            "compare" => Family::CompareNesterov,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Diagonal,
    Dense,
}

impl Representation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Representation::Diagonal => "diagonal",
            Representation::Dense => "dense",
        }
    }
}

/// Parameter a grid or series varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    DeltaA,
    DeltaB,
    R,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::DeltaA => "delta_a",
            SweepParam::DeltaB => "delta_b",
            SweepParam::R => "r",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "delta_a" => SweepParam::DeltaA,
            "delta_b" => SweepParam::DeltaB,
            "r" => SweepParam::R,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub n: usize,
    pub representation: Representation,
    pub spectrum: SpectrumSpec,
    pub r: f64,
    pub dense_cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub resample: ResamplePolicy,
    pub fixed_magnitudes: bool,
}

/// `series` is the outer axis, `grid` the inner one; every (series, grid, seed)
/// triple is one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub family: Family,
    pub problem: ProblemConfig,
    pub noise: NoiseConfig,
    pub grid_param: Option<SweepParam>,
    pub grid: Vec<f64>,
    pub series_param: Option<SweepParam>,
    pub series: Vec<f64>,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub tail_fraction: f64,
    pub beta: BetaRule,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults: geometric spectrum with condition `10 n²` and top eigenvalue 1000.
    pub fn new(family: Family, n: usize, kind: NoiseKind) -> Self {
        Self {
            family,
            problem: ProblemConfig {
                n,
                representation: Representation::Diagonal,
                spectrum: default_spectrum(n),
                r: 2000.0,
                dense_cap: DEFAULT_DENSE_CAP,
            },
            noise: NoiseConfig {
                kind,
                resample: ResamplePolicy::FixedPerRun,
                fixed_magnitudes: false,
            },
            grid_param: None,
            grid: Vec::new(),
            series_param: None,
            series: Vec::new(),
            budget: 5,
            seeds: (1..=5).collect(),
            tail_fraction: DEFAULT_TAIL_FRACTION,
            beta: BetaRule::Conjugacy,
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn with_grid(mut self, param: SweepParam, grid: Vec<f64>) -> Self {
        self.grid_param = Some(param);
        self.grid = grid;
        self
    }

    pub fn with_series(mut self, param: SweepParam, series: Vec<f64>) -> Self {
        self.series_param = Some(param);
        self.series = series;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.problem.n == 0 {
            return bad("problem.n", "must be positive".into());
        }
        if self.problem.spectrum.n != self.problem.n {
            return bad("problem.n", "spectrum dimension differs from problem.n".into());
        }
        self.problem
            .spectrum
            .validate()
            .map_err(|e| Error::config("problem.spectrum", e.to_string()))?;
        if !(self.problem.r >= 0.0 && self.problem.r.is_finite()) {
            return bad("problem.r", format!("{} must be finite and >= 0", self.problem.r));
        }
        let (da, db) = (self.noise.kind.delta_a(), self.noise.kind.delta_b());
        if !(da >= 0.0 && da.is_finite()) {
            return bad("noise.delta_a", format!("{da} must be finite and >= 0"));
        }
        if !(db >= 0.0 && db.is_finite()) {
            return bad("noise.delta_b", format!("{db} must be finite and >= 0"));
        }
        if self.seeds.is_empty() {
            return bad("run.seeds", "at least one seed is required".into());
        }
        if self.budget == 0 {
            return bad("solver.budget", "must be positive".into());
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return bad("solver.tail_fraction", format!("{} not in (0, 1)", self.tail_fraction));
        }
        for (key, param, values) in [
            ("sweep.grid", self.grid_param, &self.grid),
            ("sweep.series", self.series_param, &self.series),
        ] {
            if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return bad(key, format!("value {v} must be finite and >= 0"));
            }
            if !values.is_empty() && param.is_none() {
                return bad(key, "values given without a parameter name".into());
            }
            if let Some(p) = param {
                let applies = match p {
                    SweepParam::R => true,
                    SweepParam::DeltaA => self.noise.kind.has_matrix_noise(),
                    SweepParam::DeltaB => self.noise.kind.vector_noise().is_some(),
                };
                if !applies {
                    return bad(key, format!("{} has no effect on noise kind {}", p.as_str(), self.noise.kind.label()));
                }
            }
        }
        match self.family {
            Family::Trajectory => {}
            Family::DeltaSweep => {
                if !matches!(self.grid_param, Some(SweepParam::DeltaA | SweepParam::DeltaB)) {
                    return bad("sweep.param", "delta sweep needs delta_a or delta_b".into());
                }
                if self.grid.len() < 5 || !self.grid.contains(&0.0) {
                    return bad("sweep.grid", "delta grid needs at least 5 points including 0".into());
                }
            }
            Family::RSweep => {
                if self.grid_param != Some(SweepParam::R) {
                    return bad("sweep.param", "R sweep needs param r".into());
                }
                if self.grid.iter().filter(|r| **r > 0.0).count() < 5 {
                    return bad("sweep.grid", "R grid needs at least 5 strictly positive points".into());
                }
            }
            Family::CompareNesterov => {
                if !self.grid.is_empty() || !self.series.is_empty() {
                    return bad("sweep.grid", "comparison runs a single configuration".into());
                }
            }
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.budget * self.problem.n
    }

    fn points(&self) -> Vec<(Option<f64>, Option<f64>)> {
        let outer: Vec<Option<f64>> = if self.series.is_empty() {
            vec![None]
        } else {
            self.series.iter().map(|v| Some(*v)).collect()
        };
        let inner: Vec<Option<f64>> = if self.grid.is_empty() {
            vec![None]
        } else {
            self.grid.iter().map(|v| Some(*v)).collect()
        };
        outer
            .iter()
            .flat_map(|s| inner.iter().map(move |g| (*s, *g)))
            .collect()
    }

    /// Solution size and noise kind at one (series, grid) point.
    pub fn settings(&self, series: Option<f64>, grid: Option<f64>) -> (f64, NoiseKind) {
        let mut r = self.problem.r;
        let mut kind = self.noise.kind;
        for (param, value) in [(self.series_param, series), (self.grid_param, grid)] {
            if let (Some(p), Some(v)) = (param, value) {
                match p {
                    SweepParam::R => r = v,
                    SweepParam::DeltaA => kind = kind.with_deltas(v, kind.delta_b()),
                    SweepParam::DeltaB => kind = kind.with_deltas(kind.delta_a(), v),
                }
            }
        }
        (r, kind)
    }

    pub fn build_problem(&self, r: f64, seed: u64) -> Result<QuadraticProblem> {
        let eig = make_spectrum(&self.problem.spectrum)?;
        let a = match self.problem.representation {
            Representation::Diagonal => LinearOperator::diagonal(eig)?,
            Representation::Dense => make_dense_spd_with_cap(&eig, seed, self.problem.dense_cap)?,
        };
        make_problem(a, r, seed)
    }

    pub fn build_noise(&self, kind: NoiseKind, seed: u64) -> Result<NoiseModel> {
        Ok(NoiseModel::new(kind, seed)?
            .with_resample(self.noise.resample)
            .with_fixed_magnitudes(self.noise.fixed_magnitudes)
            .with_dense_cap(self.problem.dense_cap))
    }

    fn run_cg(&self, r: f64, kind: NoiseKind, seed: u64) -> Result<SolverTrace> {
        let problem = self.build_problem(r, seed)?;
        let model = self.build_noise(kind, seed)?;
        let n_max = self.iterations();
        let options = CgOptions {
            beta: self.beta,
            ..CgOptions::default()
        };
        cg_solve_with(&problem, &model, &StopRule::MaxIter(n_max), n_max, &options)
    }
}

pub fn default_spectrum(n: usize) -> SpectrumSpec {
    SpectrumSpec::geometric_with_condition(n, 1000.0, 10.0 * (n as f64) * (n as f64))
}

fn point_context(seed: u64, r: f64, kind: &NoiseKind) -> String {
    format!(
        "seed {seed}, R = {r}, {} (delta_a = {}, delta_b = {})",
        kind.label(),
        kind.delta_a(),
        kind.delta_b()
    )
}

/// Runs `f` over `items` on a pool capped by `NOISY_CG_WORKERS`; output keeps input order.
fn parallel_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if w > 0 {
            builder = builder.num_threads(w);
        }
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Mean of the last `round(len * tail_fraction)` values (at least one).
pub fn tail_mean(values: &[f64], tail_fraction: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::TraceTooShort { len: 0, min: 1 });
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction {tail_fraction} not in (0, 1]")));
    }
    let count = ((values.len() as f64 * tail_fraction).round() as usize).clamp(1, values.len());
    let tail = &values[values.len() - count..];
    Ok(tail.iter().sum::<f64>() / count as f64)
}

/// Cesàro estimate of `f(x*_noisy)`: mean of `f_true` over the final `tail_fraction` of the trace.
pub fn estimate_asymptote(trace: &SolverTrace, tail_fraction: f64) -> Result<f64> {
    check_len(trace)?;
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction {tail_fraction} not in (0, 1)")));
    }
    tail_mean(&trace.f_true(), tail_fraction)
}

/// `|f(x*_noisy) − f(x*)|`, averaged over the tail of `f − f*`.
pub fn plateau_error(trace: &SolverTrace, tail_fraction: f64) -> Result<f64> {
    check_len(trace)?;
    Ok(tail_mean(&trace.f_gap(), tail_fraction)?.abs())
}

// A trace stopped on an exactly zero noisy gradient sits at a fixed point of the
// oracle, so its last value is the plateau regardless of length.
fn check_len(trace: &SolverTrace) -> Result<()> {
    let converged = trace.status == TerminalStatus::ToleranceReached && !trace.records.is_empty();
    if !converged && trace.records.len() < MIN_TRACE_LEN {
        return Err(Error::TraceTooShort {
            len: trace.records.len(),
            min: MIN_TRACE_LEN,
        });
    }
    Ok(())
}

/// Trailing moving average with window `w`; the first values average what is available.
pub fn smooth(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i.min(w - 1) + 1) as f64);
    }
    out
}

/// Max of the smoothed series over the last quarter divided by its min over the
/// second quarter. Smoothing window is `len / 50`.
pub fn no_accumulation_ratio(values: &[f64]) -> Result<f64> {
    if values.len() < 8 {
        return Err(Error::TraceTooShort {
            len: values.len(),
            min: 8,
        });
    }
    let sm = smooth(values, values.len() / 50);
    let q = values.len() / 4;
    let lo = sm[q..2 * q].iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sm[3 * q..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.0 {
        Ok(hi / lo)
    } else if hi <= 0.0 {
        Ok(1.0)
    } else {
        Ok(f64::INFINITY)
    }
}

// ---------------------------------------------------------------------------
// fits

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    /// `y = c1 x`
    Linear,
    /// `y = c0 + c1 x`
    Affine,
    /// `y = c0 + c1 x + c2 x²`
    Quadratic,
    /// `ln y = c0 + c1 ln x`
    PowerLaw,
}

impl FitModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitModel::Linear => "linear",
            FitModel::Affine => "affine",
            FitModel::Quadratic => "quadratic",
            FitModel::PowerLaw => "power_law",
        }
    }

    fn params(&self) -> usize {
        match self {
            FitModel::Linear => 1,
            FitModel::Affine | FitModel::PowerLaw => 2,
            FitModel::Quadratic => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Ok,
    InsufficientSpread,
    Degenerate,
}

impl FitStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitStatus::Ok => "ok",
            FitStatus::InsufficientSpread => "insufficient_spread",
            FitStatus::Degenerate => "degenerate",
        }
    }
}

/// `coefficients` always has three entries `[c0, c1, c2]`; unused ones are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: FitModel,
    pub coefficients: [f64; 3],
    pub r_squared: f64,
    pub loglog_slope: Option<f64>,
    pub status: FitStatus,
}

impl FitReport {
    fn flagged(model: FitModel, status: FitStatus) -> Self {
        Self {
            model,
            coefficients: [f64::NAN; 3],
            r_squared: f64::NAN,
            loglog_slope: None,
            status,
        }
    }

    pub fn slope(&self) -> f64 {
        self.coefficients[1]
    }

    pub fn predict(&self, x: f64) -> f64 {
        let c = self.coefficients;
        match self.model {
            FitModel::PowerLaw => (c[0] + c[1] * x.ln()).exp(),
            _ => c[0] + c[1] * x + c[2] * x * x,
        }
    }
}

/// Ordinary least squares; `r² = 1 − SS_res/SS_tot` in the space the model is fitted in.
pub fn fit_least_squares(xs: &[f64], ys: &[f64], model: FitModel) -> Result<FitReport> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let need = model.params().max(2);
    if xs.len() < need {
        return Err(Error::InvalidArgument(format!(
            "{} fit needs at least {need} points, got {}",
            model.as_str(),
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("fit data must be finite".into()));
    }
    let (u, v): (Vec<f64>, Vec<f64>) = if model == FitModel::PowerLaw {
        if xs.iter().chain(ys).any(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument("power-law fit needs strictly positive data".into()));
        }
        (xs.iter().map(|x| x.ln()).collect(), ys.iter().map(|y| y.ln()).collect())
    } else {
        (xs.to_vec(), ys.to_vec())
    };

    let mut distinct = u.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let spread_needed = match model {
        FitModel::Linear => 1,
        _ => model.params(),
    };
    let mut status = FitStatus::Ok;
    if distinct.len() < spread_needed || (model == FitModel::Linear && distinct == [0.0]) {
        status = FitStatus::InsufficientSpread;
    }

    let cols: Vec<usize> = match model {
        FitModel::Linear => vec![1],
        FitModel::Affine | FitModel::PowerLaw => vec![0, 1],
        FitModel::Quadratic => vec![0, 1, 2],
    };
    let m = u.len();
    let x = DMatrix::from_fn(m, cols.len(), |i, j| u[i].powi(cols[j] as i32));
    let y = DVector::from_column_slice(&v);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if status == FitStatus::Ok && (!(smax > 0.0) || smin <= smax * 1e-12) {
        status = FitStatus::Degenerate;
    }
    // minimum-norm solution, so flagged fits still carry usable numbers
    let beta = svd
        .solve(&y, smax * 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("least squares: {e}")))?;
    let mut coefficients = [0.0; 3];
    for (j, c) in cols.iter().enumerate() {
        coefficients[*c] = beta[j];
    }

    let fitted = &x * &beta;
    let ss_res: f64 = fitted.iter().zip(&v).map(|(f, t)| (t - f).powi(2)).sum();
    let mean = v.iter().sum::<f64>() / m as f64;
    let ss_tot: f64 = v.iter().map(|t| (t - mean).powi(2)).sum();
    let scale = v.iter().map(|t| t * t).sum::<f64>().max(f64::MIN_POSITIVE);
    let r_squared = if ss_tot <= 1e-30 * scale {
        if ss_res <= 1e-24 * scale {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(FitReport {
        model,
        coefficients,
        r_squared,
        loglog_slope: (model == FitModel::PowerLaw).then_some(coefficients[1]),
        status,
    })
}

// ---------------------------------------------------------------------------
// trajectory

#[derive(Debug, Clone)]
pub struct TrajectoryRun {
    pub run_id: usize,
    pub seed: u64,
    pub kind: NoiseKind,
    pub n: usize,
    pub r: f64,
    /// Cesàro estimate of `f(x*_noisy)`.
    pub asymptote: f64,
    pub plateau_error: f64,
    pub no_accumulation_ratio: f64,
    pub trace: SolverTrace,
}

pub fn run_trajectory(config: &ExperimentConfig) -> Result<Vec<TrajectoryRun>> {
    config.validate()?;
    let jobs: Vec<(Option<f64>, Option<f64>, u64)> = config
        .points()
        .into_iter()
        .flat_map(|(s, g)| config.seeds.iter().map(move |seed| (s, g, *seed)))
        .collect();
    let runs = parallel_map(&jobs, |(s, g, seed)| {
        let (r, kind) = config.settings(*s, *g);
        let ctx = || point_context(*seed, r, &kind);
        let trace = config.run_cg(r, kind, *seed).map_err(|e| e.context(ctx()))?;
        let asymptote = estimate_asymptote(&trace, config.tail_fraction).map_err(|e| e.context(ctx()))?;
        let plateau_error = plateau_error(&trace, config.tail_fraction)?;
        let no_accumulation_ratio = if trace.status == TerminalStatus::ToleranceReached && trace.records.len() < 8 {
            1.0
        } else {
            no_accumulation_ratio(&trace.f_gap())?
        };
        Ok(TrajectoryRun {
            run_id: 0,
            seed: *seed,
            kind,
            n: config.problem.n,
            r,
            asymptote,
            plateau_error,
            no_accumulation_ratio,
            trace,
        })
    })?;
    Ok(runs
        .into_iter()
        .enumerate()
        .map(|(i, mut run)| {
            run.run_id = i;
            run
        })
        .collect())
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub grid_value: f64,
    pub seed: u64,
    pub plateau_error_f: f64,
    pub final_error_x: f64,
    pub status: TerminalStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedFit {
    /// What was fitted, e.g. `sweep_delta:adversarial_b:f`.
    pub label: String,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub family: Family,
    pub noise_kind: NoiseKind,
    pub n: usize,
    pub param: SweepParam,
    pub series: Option<(SweepParam, f64)>,
    pub grid: Vec<f64>,
    pub error_mean: Vec<f64>,
    pub error_std: Vec<f64>,
    pub arg_error_mean: Vec<f64>,
    pub arg_error_std: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub fits: Vec<NamedFit>,
}

impl SweepResult {
    pub fn fit(&self, target: &str, model: FitModel) -> Option<&FitReport> {
        let suffix = format!(":{target}");
        self.fits
            .iter()
            .find(|f| f.label.ends_with(&suffix) && f.report.model == model)
            .map(|f| &f.report)
    }

    fn label(&self) -> String {
        let mut s = format!("{}:{}", self.family.as_str(), self.noise_kind.label());
        if let Some((p, v)) = self.series {
            s.push_str(&format!(":{}={}", p.as_str(), v));
        }
        s
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fit_or_flag(xs: &[f64], ys: &[f64], model: FitModel) -> FitReport {
    fit_least_squares(xs, ys, model).unwrap_or_else(|_| FitReport::flagged(model, FitStatus::Degenerate))
}

fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepResult>> {
    config.validate()?;
    let param = config.grid_param.expect("validated");
    let jobs: Vec<(Option<f64>, f64, u64)> = config
        .points()
        .into_iter()
        .flat_map(|(s, g)| config.seeds.iter().map(move |seed| (s, g.expect("validated"), *seed)))
        .collect();
    let rows = parallel_map(&jobs, |(s, g, seed)| {
        let (r, kind) = config.settings(*s, Some(*g));
        let ctx = || point_context(*seed, r, &kind);
        let trace = config.run_cg(r, kind, *seed).map_err(|e| e.context(ctx()))?;
        Ok(SweepRow {
            grid_value: *g,
            seed: *seed,
            plateau_error_f: plateau_error(&trace, config.tail_fraction).map_err(|e| e.context(ctx()))?,
            final_error_x: trace.last().arg_error,
            status: trace.status,
        })
    })?;

    let per_series = config.grid.len() * config.seeds.len();
    let series: Vec<Option<f64>> = if config.series.is_empty() {
        vec![None]
    } else {
        config.series.iter().map(|v| Some(*v)).collect()
    };
    let mut out = Vec::new();
    for (si, s) in series.iter().enumerate() {
        let chunk = &rows[si * per_series..(si + 1) * per_series];
        let (_, kind) = config.settings(*s, None);
        let mut result = SweepResult {
            family: config.family,
            noise_kind: kind,
            n: config.problem.n,
            param,
            series: s.map(|v| (config.series_param.expect("validated"), v)),
            grid: config.grid.clone(),
            error_mean: Vec::new(),
            error_std: Vec::new(),
            arg_error_mean: Vec::new(),
            arg_error_std: Vec::new(),
            rows: chunk.to_vec(),
            fits: Vec::new(),
        };
        for gi in 0..config.grid.len() {
            let point = &chunk[gi * config.seeds.len()..(gi + 1) * config.seeds.len()];
            let f: Vec<f64> = point.iter().map(|r| r.plateau_error_f).collect();
            let x: Vec<f64> = point.iter().map(|r| r.final_error_x).collect();
            let (fm, fs) = mean_std(&f);
            let (xm, xsd) = mean_std(&x);
            result.error_mean.push(fm);
            result.error_std.push(fs);
            result.arg_error_mean.push(xm);
            result.arg_error_std.push(xsd);
        }
        let label = result.label();
        let grid = result.grid.clone();
        let mut fits = Vec::new();
        match config.family {
            Family::DeltaSweep => {
                for model in [FitModel::Affine, FitModel::Linear] {
                    fits.push((format!("{label}:f"), fit_or_flag(&grid, &result.error_mean, model)));
                }
                fits.push((
                    format!("{label}:x"),
                    fit_or_flag(&grid, &result.arg_error_mean, FitModel::Affine),
                ));
            }
            Family::RSweep => {
                for model in [FitModel::Linear, FitModel::Affine, FitModel::Quadratic] {
                    fits.push((format!("{label}:f"), fit_or_flag(&grid, &result.error_mean, model)));
                }
                let (px, py): (Vec<f64>, Vec<f64>) = grid
                    .iter()
                    .zip(&result.error_mean)
                    .filter(|(r, _)| **r > 0.0)
                    .map(|(r, e)| (*r, *e))
                    .unzip();
                fits.push((format!("{label}:f"), fit_or_flag(&px, &py, FitModel::PowerLaw)));
            }
            _ => unreachable!("not a sweep family"),
        }
        result.fits = fits
            .into_iter()
            .map(|(label, report)| NamedFit { label, report })
            .collect();
        out.push(result);
    }
    Ok(out)
}

/// One result per series value (or a single result without a series).
pub fn sweep_delta(config: &ExperimentConfig) -> Result<Vec<SweepResult>> {
    if config.family != Family::DeltaSweep {
        return Err(Error::config("experiment.family", "expected sweep_delta"));
    }
    run_sweep(config)
}

pub fn sweep_r(config: &ExperimentConfig) -> Result<Vec<SweepResult>> {
    if config.family != Family::RSweep {
        return Err(Error::config("experiment.family", "expected sweep_r"));
    }
    run_sweep(config)
}

// ---------------------------------------------------------------------------
// comparison

#[derive(Debug, Clone)]
pub struct CompareRun {
    pub seed: u64,
    /// Tail mean of CG's scaled gap.
    pub cg_plateau: f64,
    pub cg_entry: Option<usize>,
    pub nesterov_entry: Option<usize>,
    pub cg: SolverTrace,
    pub nesterov: SolverTrace,
}

impl CompareRun {
    /// Nesterov entry over CG entry; infinite when Nesterov never enters the band.
    pub fn speedup(&self) -> f64 {
        match (self.cg_entry, self.nesterov_entry) {
            (Some(c), Some(n)) => n as f64 / c.max(1) as f64,
            (Some(_), None) => f64::INFINITY,
            (None, _) => f64::NAN,
        }
    }
}

/// First index whose value lies within `±rel` of `target`.
pub fn band_entry(values: &[f64], target: f64, rel: f64) -> Option<usize> {
    let (lo, hi) = (target * (1.0 - rel), target * (1.0 + rel));
    values.iter().position(|v| *v >= lo.min(hi) && *v <= hi.max(lo))
}

pub fn compare_nesterov(config: &ExperimentConfig) -> Result<Vec<CompareRun>> {
    if config.family != Family::CompareNesterov {
        return Err(Error::config("experiment.family", "expected compare"));
    }
    config.validate()?;
    let (r, kind) = config.settings(None, None);
    parallel_map(&config.seeds, |seed| {
        let ctx = || point_context(*seed, r, &kind);
        let cg = config.run_cg(r, kind, *seed).map_err(|e| e.context(ctx()))?;
        let problem = config.build_problem(r, *seed)?;
        let model = config.build_noise(kind, *seed)?;
        let nesterov = nesterov_solve(&problem, &model, config.iterations()).map_err(|e| e.context(ctx()))?;
        check_len(&cg)?;
        let cg_scaled = cg.f_scaled();
        let cg_plateau = tail_mean(&cg_scaled, config.tail_fraction)?;
        Ok(CompareRun {
            seed: *seed,
            cg_plateau,
            cg_entry: band_entry(&cg_scaled, cg_plateau, 0.1),
            nesterov_entry: band_entry(&nesterov.f_scaled(), cg_plateau, 0.1),
            cg,
            nesterov,
        })
    })
}

// ---------------------------------------------------------------------------
// CSV

#[derive(Serialize)]
struct TrajectoryCsvRow<'a> {
    run_id: usize,
    seed: u64,
    noise_kind: &'a str,
    n: usize,
    delta_a: f64,
    delta_b: f64,
    r: f64,
    iter: usize,
    f_true: f64,
    f_scaled: f64,
    residual_norm: f64,
    arg_error: f64,
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    family: &'a str,
    noise_kind: &'a str,
    n: usize,
    grid_param_name: &'a str,
    grid_value: f64,
    seed: u64,
    plateau_error_f: f64,
    final_error_x: f64,
    status: &'a str,
}

#[derive(Serialize)]
struct FitCsvRow<'a> {
    family: &'a str,
    model: &'a str,
    coef0: f64,
    coef1: f64,
    coef2: f64,
    r_squared: f64,
    loglog_slope: Option<f64>,
}

#[derive(Serialize)]
struct CompareCsvRow<'a> {
    solver: &'a str,
    seed: u64,
    iter: usize,
    f_scaled: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_trajectory_csv<W: Write>(runs: &[TrajectoryRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in runs {
        for rec in &run.trace.records {
            w.serialize(TrajectoryCsvRow {
                run_id: run.run_id,
                seed: run.seed,
                noise_kind: run.kind.label(),
                n: run.n,
                delta_a: run.kind.delta_a(),
                delta_b: run.kind.delta_b(),
                r: run.r,
                iter: rec.k,
                f_true: rec.f_true,
                f_scaled: rec.f_scaled,
                residual_norm: rec.residual_norm,
                arg_error: rec.arg_error,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(results: &[SweepResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for res in results {
        let family = res.label();
        for row in &res.rows {
            w.serialize(SweepCsvRow {
                family: &family,
                noise_kind: res.noise_kind.label(),
                n: res.n,
                grid_param_name: res.param.as_str(),
                grid_value: row.grid_value,
                seed: row.seed,
                plateau_error_f: row.plateau_error_f,
                final_error_x: row.final_error_x,
                status: row.status.as_str(),
            })
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fits_csv<W: Write>(results: &[SweepResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for res in results {
        for fit in &res.fits {
            let c = fit.report.coefficients;
            w.serialize(FitCsvRow {
                family: &fit.label,
                model: fit.report.model.as_str(),
                coef0: c[0],
                coef1: c[1],
                coef2: c[2],
                r_squared: fit.report.r_squared,
                loglog_slope: fit.report.loglog_slope,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_compare_csv<W: Write>(runs: &[CompareRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in runs {
        for (solver, trace) in [("cg", &run.cg), ("nesterov", &run.nesterov)] {
            for rec in &trace.records {
                w.serialize(CompareCsvRow {
                    solver,
                    seed: run.seed,
                    iter: rec.k,
                    f_scaled: rec.f_scaled,
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
