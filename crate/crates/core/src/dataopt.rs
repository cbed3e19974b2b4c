//! Data oracle, coefficient fitting and goodness-of-fit metrics.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{Compiled, Expr, GrammarError};

/// Sampling interval used for variables without an explicit range.
pub const DEFAULT_RANGE: (f64, f64) = (0.1, 4.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("dataset has no rows")]
    ZeroRows,
    #[error("targets have zero variance")]
    DegenerateTarget,
    #[error("ground truth is not finite anywhere in the sampling ranges")]
    Unevaluable,
    #[error("{0} input rows but {1} targets")]
    Shape(usize, usize),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("benchmark registry: {0}")]
    Registry(String),
}

/// Observations `(x_i, y_i)`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    seed: u64,
    noise_std: f64,
    sigma_y: f64,
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, DataError> {
        if inputs.len() != targets.len() {
            return Err(DataError::Shape(inputs.len(), targets.len()));
        }
        if targets.is_empty() {
            return Err(DataError::ZeroRows);
        }
        let sigma_y = std_dev(&targets);
        Ok(Dataset { inputs, targets, seed: 0, noise_std: 0.0, sigma_y })
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    pub fn n_vars(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

/// Samples `n_points` observations of `truth` with coefficients `coeffs`.
///
/// Inputs are uniform over `ranges` (missing entries use [`DEFAULT_RANGE`]),
/// targets get Gaussian noise, and rows with a non-finite target are redrawn.
pub fn data_oracle(
    truth: &Expr,
    coeffs: &[f64],
    n_points: usize,
    ranges: &[(f64, f64)],
    noise_std: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_points == 0 {
        return Err(DataError::ZeroRows);
    }
    let program = truth.compile()?;
    let n_vars = program.n_vars().max(ranges.len());
    let ranges: Vec<(f64, f64)> =
        (0..n_vars).map(|i| ranges.get(i).copied().unwrap_or(DEFAULT_RANGE)).collect();
    program.evaluate(&vec![1.0; n_vars], coeffs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|_| DataError::Registry("noise".into()))?;
    let mut inputs = Vec::with_capacity(n_points);
    let mut targets = Vec::with_capacity(n_points);
    let mut misses = 0usize;
    while targets.len() < n_points {
        let x: Vec<f64> = ranges.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
        let y = program.evaluate(&x, coeffs)?;
        if !y.is_finite() {
            misses += 1;
            if targets.is_empty() && misses >= 10_000 {
                return Err(DataError::Unevaluable);
            }
            continue;
        }
        let eps = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        inputs.push(x);
        targets.push(y + eps);
    }
    let sigma_y = std_dev(&targets);
    Ok(Dataset { inputs, targets, seed, noise_std, sigma_y })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub nmse: f64,
    pub rmse: f64,
    pub nrmse: f64,
}

impl Metrics {
    pub const INFINITE: Metrics = Metrics {
        mse: f64::INFINITY,
        nmse: f64::INFINITY,
        rmse: f64::INFINITY,
        nrmse: f64::INFINITY,
    };

    pub fn from_predictions(predictions: &[f64], data: &Dataset) -> Result<Metrics, DataError> {
        if data.sigma_y == 0.0 {
            return Err(DataError::DegenerateTarget);
        }
        if predictions.iter().any(|p| !p.is_finite()) {
            return Ok(Metrics::INFINITE);
        }
        let sse: f64 = predictions
            .iter()
            .zip(&data.targets)
            .map(|(p, y)| (y - p).powi(2))
            .sum();
        let mse = sse / data.len() as f64;
        let nmse = mse / (data.sigma_y * data.sigma_y);
        Ok(Metrics { mse, nmse, rmse: mse.sqrt(), nrmse: nmse.sqrt() })
    }
}

/// Metrics of `expr` with coefficients `coeffs` on `data`.
pub fn metrics(expr: &Expr, coeffs: &[f64], data: &Dataset) -> Result<Metrics, DataError> {
    let mut out = Vec::with_capacity(data.len());
    expr.compile()?.predict(&data.inputs, coeffs, &mut out)?;
    Metrics::from_predictions(&out, data)
}

pub fn nmse(expr: &Expr, coeffs: &[f64], data: &Dataset) -> Result<f64, DataError> {
    metrics(expr, coeffs, data).map(|m| m.nmse)
}

/// `1 / (1 + NMSE)`, with non-finite NMSE mapped to 0.
pub fn reward_from_nmse(nmse: f64) -> f64 {
    if nmse.is_finite() && nmse >= 0.0 {
        1.0 / (1.0 + nmse)
    } else {
        0.0
    }
}

/// Reward of a fixed coefficient vector. Unevaluable expressions score 0.
pub fn reward(expr: &Expr, coeffs: &[f64], data: &Dataset) -> f64 {
    nmse(expr, coeffs, data).map_or(0.0, reward_from_nmse)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Expressions with more `const` leaves are not fitted.
    pub max_coeffs: usize,
    /// Remaining restarts are skipped once NMSE falls below this.
    pub tol: f64,
    /// Objective evaluations allowed per restart.
    pub max_evals: usize,
    /// Random restarts in addition to the all-ones start.
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { max_coeffs: 20, tol: 1e-6, max_evals: 2000, restarts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub nmse: f64,
    pub mse: f64,
    pub rmse: f64,
    pub nrmse: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    fn unfit() -> Self {
        FitResult {
            coefficients: Vec::new(),
            nmse: f64::INFINITY,
            mse: f64::INFINITY,
            rmse: f64::INFINITY,
            nrmse: f64::INFINITY,
            converged: false,
            iterations: 0,
        }
    }

    pub fn reward(&self) -> f64 {
        reward_from_nmse(self.nmse)
    }
}

struct Objective<'a> {
    program: &'a Compiled,
    data: &'a Dataset,
    buf: Vec<f64>,
    evals: usize,
}

impl Objective<'_> {
    fn value(&mut self, c: &[f64]) -> f64 {
        self.evals += 1;
        if self.program.predict(&self.data.inputs, c, &mut self.buf).is_err() {
            return f64::INFINITY;
        }
        match Metrics::from_predictions(&self.buf, self.data) {
            Ok(m) if m.nmse.is_finite() => m.nmse,
            _ => f64::INFINITY,
        }
    }

    fn gradient(&mut self, c: &[f64]) -> Vec<f64> {
        let mut probe = c.to_vec();
        (0..c.len())
            .map(|i| {
                let h = 1e-6 * (1.0 + c[i].abs());
                probe[i] = c[i] + h;
                let up = self.value(&probe);
                probe[i] = c[i] - h;
                let down = self.value(&probe);
                probe[i] = c[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton minimization with an inverse-Hessian BFGS update and
/// backtracking line search. Returns the best point, its value and the
/// iteration count.
fn bfgs(obj: &mut Objective<'_>, start: Vec<f64>, max_evals: usize) -> (Vec<f64>, f64, usize, bool) {
    let m = start.len();
    let mut x = start;
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return (x, f, 0, false);
    }
    let mut g = obj.gradient(&x);
    let mut h = identity(m);
    let mut iterations = 0;
    let mut converged = false;
    while obj.evals < max_evals {
        if g.iter().all(|v| v.abs() <= 1e-10) || f <= 1e-24 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut p: Vec<f64> = (0..m).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&g, &p);
        if slope >= 0.0 || !slope.is_finite() {
            h = identity(m);
            p = g.iter().map(|v| -v).collect();
            slope = dot(&g, &p);
        }
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let cand: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            let fc = obj.value(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * alpha * slope {
                next = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = next else {
            converged = true;
            break;
        };
        let g_new = obj.gradient(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..m).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..m {
                for j in 0..m {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let stalled = (f - f_new).abs() <= 1e-16 * f.abs().max(1e-300);
        x = x_new;
        f = f_new;
        g = g_new;
        if stalled {
            converged = true;
            break;
        }
    }
    (x, f, iterations, converged)
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// 64-bit FNV-1a, used to derive per-expression restart streams.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Fits the coefficient slots of `expr` to `data` by minimizing NMSE.
///
/// Starts from the all-ones vector and `cfg.restarts` standard-normal draws
/// seeded by the dataset seed and the expression text, and keeps the best.
/// Expressions with open nonterminals or more than `cfg.max_coeffs`
/// coefficients get infinite NMSE without being evaluated.
pub fn fit_coefficients(expr: &Expr, data: &Dataset, cfg: &FitConfig) -> Result<FitResult, DataError> {
    if data.is_empty() {
        return Err(DataError::ZeroRows);
    }
    let m = expr.coefficient_count();
    if !expr.is_complete() || m > cfg.max_coeffs {
        return Ok(FitResult::unfit());
    }
    let Ok(program) = expr.compile() else {
        return Ok(FitResult::unfit());
    };
    if program.n_vars() > data.n_vars() {
        return Err(GrammarError::MissingVariable(program.n_vars() as u32).into());
    }
    let finish = |c: Vec<f64>, iterations, converged| -> Result<FitResult, DataError> {
        let m = metrics(expr, &c, data)?;
        Ok(FitResult {
            coefficients: c,
            nmse: m.nmse,
            mse: m.mse,
            rmse: m.rmse,
            nrmse: m.nrmse,
            converged: converged && m.nmse.is_finite(),
            iterations,
        })
    };
    if m == 0 {
        return finish(Vec::new(), 0, true);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(data.seed ^ fnv1a(expr.to_string().as_bytes()));
    let mut starts = vec![vec![1.0; m]];
    for _ in 0..cfg.restarts {
        starts.push((0..m).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    let mut obj = Objective { program: &program, data, buf: Vec::new(), evals: 0 };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut iterations = 0;
    for start in starts {
        obj.evals = 0;
        let (c, f, its, converged) = bfgs(&mut obj, start, cfg.max_evals);
        iterations += its;
        if best.as_ref().is_none_or(|(_, bf, _)| f < *bf) {
            best = Some((c, f, converged));
        }
        if best.as_ref().is_some_and(|(_, bf, _)| *bf < cfg.tol) {
            break;
        }
    }
    let (c, f, converged) = best.expect("at least one start");
    if !f.is_finite() {
        let mut r = FitResult::unfit();
        r.coefficients = c;
        r.iterations = iterations;
        return Ok(r);
    }
    finish(c, iterations, converged || f < cfg.tol)
}

/// Fitting with a cache keyed by expression text, shared across threads.
pub struct Fitter<'a> {
    data: &'a Dataset,
    cfg: FitConfig,
    cache: Mutex<HashMap<String, FitResult>>,
}

impl<'a> Fitter<'a> {
    pub fn new(data: &'a Dataset, cfg: FitConfig) -> Self {
        Fitter { data, cfg, cache: Mutex::new(HashMap::new()) }
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn fit(&self, expr: &Expr) -> FitResult {
        let key = expr.to_string();
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let result = fit_coefficients(expr, self.data, &self.cfg).unwrap_or_else(|_| FitResult::unfit());
        self.cache.lock().expect("cache lock").insert(key, result.clone());
        result
    }

    /// Fits a batch in parallel. Results equal sequential fitting.
    pub fn fit_batch(&self, exprs: &[Expr]) -> Vec<FitResult> {
        exprs.par_iter().map(|e| self.fit(e)).collect()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

/// The best `k` distinct expressions seen so far, by NMSE.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TopK {
    k: usize,
    entries: Vec<TopEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEntry {
    pub sequence: String,
    pub expression: String,
    pub fit: FitResult,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK { k, entries: Vec::new() }
    }

    pub fn offer(&mut self, expr: &Expr, fit: &FitResult) {
        if !fit.nmse.is_finite() {
            return;
        }
        let sequence = expr.to_sequence().to_string();
        if self.entries.iter().any(|e| e.sequence == sequence) {
            return;
        }
        self.entries.push(TopEntry { sequence, expression: expr.to_string(), fit: fit.clone() });
        self.entries.sort_by(|a, b| {
            a.fit.nmse.total_cmp(&b.fit.nmse).then_with(|| a.sequence.cmp(&b.sequence))
        });
        self.entries.truncate(self.k);
    }

    pub fn entries(&self) -> &[TopEntry] {
        &self.entries
    }

    pub fn best(&self) -> Option<&TopEntry> {
        self.entries.first()
    }

    pub fn median_nmse(&self) -> Option<f64> {
        let n = self.entries.len();
        if n == 0 {
            return None;
        }
        let mid = |i: usize| self.entries[i].fit.nmse;
        Some(if n % 2 == 1 { mid(n / 2) } else { 0.5 * (mid(n / 2 - 1) + mid(n / 2)) })
    }
}

/// A named ground-truth equation from the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub expr: String,
    #[serde(default)]
    pub coeffs: Vec<f64>,
    pub n_vars: u32,
    #[serde(default)]
    pub ranges: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct Registry {
    benchmark: Vec<Benchmark>,
}

const REGISTRY: &str = include_str!("../data/benchmarks.toml");

impl Benchmark {
    pub fn truth(&self) -> Result<Expr, DataError> {
        Ok(Expr::parse_sequence(&self.expr)?)
    }

    pub fn ranges(&self) -> Vec<(f64, f64)> {
        (0..self.n_vars as usize)
            .map(|i| self.ranges.get(i).copied().unwrap_or(DEFAULT_RANGE))
            .collect()
    }

    pub fn dataset(&self, n_points: usize, noise_std: f64, seed: u64) -> Result<Dataset, DataError> {
        data_oracle(&self.truth()?, &self.coeffs, n_points, &self.ranges(), noise_std, seed)
    }
}

/// Every benchmark shipped with the crate, in file order.
pub fn benchmarks() -> Vec<Benchmark> {
    parse_registry(REGISTRY).expect("bundled registry parses")
}

pub fn parse_registry(text: &str) -> Result<Vec<Benchmark>, DataError> {
    toml::from_str::<Registry>(text)
        .map(|r| r.benchmark)
        .map_err(|e| DataError::Registry(e.to_string()))
}

pub fn benchmark(name: &str) -> Result<Benchmark, DataError> {
    benchmarks()
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| DataError::UnknownBenchmark(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expr(text: &str) -> Expr {
        Expr::parse_sequence(text).unwrap()
    }

    #[test]
    fn oracle_identity_truth() {
        let d = data_oracle(&Expr::var(1), &[], 2048, &[], 0.0, 1).unwrap();
        assert_eq!(d.len(), 2048);
        assert!(d.inputs().iter().zip(d.targets()).all(|(x, y)| x[0] == *y));
        assert!(d.inputs().iter().all(|x| (0.1..=4.0).contains(&x[0])));
        assert_eq!(d, data_oracle(&Expr::var(1), &[], 2048, &[], 0.0, 1).unwrap());
        assert_ne!(d, data_oracle(&Expr::var(1), &[], 2048, &[], 0.0, 2).unwrap());
    }

    #[test]
    fn oracle_resamples_non_finite_rows() {
        let truth = expr("A->log(A), A->(A-A), A->x1, A->2");
        let d = data_oracle(&truth, &[], 256, &[(0.0, 4.0)], 0.0, 3).unwrap();
        assert!(d.targets().iter().all(|y| y.is_finite()));
        assert!(d.inputs().iter().all(|x| x[0] > 2.0));
        let never = expr("A->log(A), A->neg(A), A->x1");
        assert_eq!(data_oracle(&never, &[], 8, &[], 0.0, 0), Err(DataError::Unevaluable));
        assert_eq!(data_oracle(&Expr::var(1), &[], 0, &[], 0.0, 0), Err(DataError::ZeroRows));
    }

    #[test]
    fn sigma_matches_population_formula() {
        let d = data_oracle(&expr("A->sin(A), A->x1"), &[], 500, &[], 0.1, 9).unwrap();
        let y = d.targets();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
        assert!((d.sigma_y() - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn metric_examples() {
        let d = Dataset::new(vec![vec![1.0], vec![2.0], vec![4.0]], vec![1.0, 2.0, 4.0]).unwrap();
        let m = Metrics::from_predictions(&[1.0, 2.0, 4.0], &d).unwrap();
        assert_eq!(m.nmse, 0.0);
        let mean = 7.0 / 3.0;
        let m = Metrics::from_predictions(&[mean; 3], &d).unwrap();
        assert!((m.nmse - 1.0).abs() < 1e-12);
        let m = Metrics::from_predictions(&[1.0, f64::NAN, 4.0], &d).unwrap();
        assert_eq!(m.nmse, f64::INFINITY);
        let flat = Dataset::new(vec![vec![1.0], vec![2.0]], vec![3.0, 3.0]).unwrap();
        assert_eq!(Metrics::from_predictions(&[3.0, 3.0], &flat), Err(DataError::DegenerateTarget));
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward_from_nmse(0.0), 1.0);
        assert_eq!(reward_from_nmse(1.0), 0.5);
        assert_eq!(reward_from_nmse(f64::INFINITY), 0.0);
        let d = data_oracle(&Expr::var(1), &[], 16, &[], 0.0, 0).unwrap();
        assert_eq!(reward(&expr("A->log(A), A->neg(A), A->x1"), &[], &d), 0.0);
        assert_eq!(reward(&expr("A->(A+A), A->x1"), &[], &d), 0.0);
    }

    #[test]
    fn fit_linear_coefficient() {
        let d = data_oracle(&expr("A->A*A, A->3, A->x1"), &[], 2048, &[], 0.0, 0).unwrap();
        let fit = fit_coefficients(&expr("A->A*A, A->const, A->x1"), &d, &FitConfig::default()).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-6, "{:?}", fit.coefficients);
        assert!(fit.nmse < 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn fit_too_many_coefficients() {
        let d = data_oracle(&Expr::var(1), &[], 64, &[], 0.0, 0).unwrap();
        let mut text = String::new();
        for _ in 0..20 {
            text.push_str("A->(A+A), A->const, ");
        }
        text.push_str("A->const");
        let e = expr(&text);
        assert_eq!(e.coefficient_count(), 21);
        let fit = fit_coefficients(&e, &d, &FitConfig::default()).unwrap();
        assert_eq!(fit.nmse, f64::INFINITY);
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn fit_without_coefficients() {
        let d = data_oracle(&Expr::var(1), &[], 64, &[], 0.0, 0).unwrap();
        let fit = fit_coefficients(&Expr::var(1), &d, &FitConfig::default()).unwrap();
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.nmse, 0.0);
        assert!(fit.coefficients.is_empty());
        let partial = fit_coefficients(&expr("A->(A+A), A->x1"), &d, &FitConfig::default()).unwrap();
        assert_eq!(partial.nmse, f64::INFINITY);
    }

    #[test]
    fn registry_loads() {
        let all = benchmarks();
        for name in ["I.15.3x", "I.30.3", "I.44.4", "I.50.26", "II.6.15b", "II.35.18", "II.35.21", "lin-log"] {
            assert!(all.iter().any(|b| b.name == name), "{name}");
        }
        for b in &all {
            let truth = b.truth().unwrap();
            assert_eq!(truth.coefficient_count(), b.coeffs.len(), "{}", b.name);
            let d = b.dataset(64, 0.0, 0).unwrap();
            assert_eq!(d.n_vars(), b.n_vars as usize, "{}", b.name);
        }
        assert!(matches!(benchmark("nope"), Err(DataError::UnknownBenchmark(_))));
    }

    #[test]
    fn top_k_keeps_best_distinct() {
        let mut top = TopK::new(2);
        let fit = |nmse| FitResult { nmse, ..FitResult::unfit() };
        top.offer(&Expr::var(1), &fit(0.5));
        top.offer(&Expr::var(2), &fit(0.1));
        top.offer(&Expr::var(1), &fit(0.01));
        top.offer(&Expr::var(3), &fit(0.3));
        let names: Vec<_> = top.entries().iter().map(|e| e.expression.as_str()).collect();
        assert_eq!(names, ["x2", "x3"]);
        assert_eq!(top.median_nmse(), Some(0.2));
    }
}
