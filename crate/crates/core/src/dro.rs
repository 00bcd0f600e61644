//! χ²-DRO dual objective, the η solver, and the robust training loops.
//!
//! For per-point losses `u_i` the dual objective is
//! `C_α · sqrt(mean([u_i − η]_+²)) + η`, minimised over `η` by bisection on its
//! subgradient and jointly descended in the model parameters.

use serde::{Deserialize, Serialize};

use crate::data::{event_time_grid, snap_censored_times, stratified_kfold, stratified_split, SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::losses::{optimal_psi, point_losses, point_losses_on_tape, LossSpec};
use crate::nn::{ModelParams, ModelSpec, Tape, Var};
use crate::scalar::Scalar;
use crate::train::{run_descent, LogRow, TrainConfig, TrainOutcome};

pub fn c_alpha<T: Scalar>(alpha: T) -> Result<T> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let r = T::one() / alpha - T::one();
    Ok((T::of(2.0) * r * r + T::one()).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitMode {
    TwoFold,
    KFold { k: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DroConfig {
    pub alpha: f64,
    pub tolerance: f64,
    pub max_bisections: usize,
    pub split: Option<SplitMode>,
    pub seed: u64,
}

impl Default for DroConfig {
    fn default() -> Self {
        Self { alpha: 0.2, tolerance: 1e-8, max_bisections: 200, split: None, seed: 0 }
    }
}

impl DroConfig {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    pub fn c_alpha(&self) -> Result<f64> {
        c_alpha(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        c_alpha(self.alpha).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("eta tolerance must be positive".into()));
        }
        if self.max_bisections == 0 {
            return Err(Error::Config("max_bisections must be positive".into()));
        }
        if let Some(SplitMode::KFold { k }) = self.split {
            if k < 2 {
                return Err(Error::Config("k-fold split needs k ≥ 2".into()));
            }
        }
        Ok(())
    }
}

/// Iterate of a robust training run.
#[derive(Clone, Debug, PartialEq)]
pub struct DroState<T> {
    pub theta: Vec<T>,
    pub psi: Option<Vec<T>>,
    pub eta: T,
    pub eta_prime: Option<T>,
    pub iteration: usize,
}

pub fn dro_objective<T: Scalar>(losses: &[T], eta: T, c: T) -> T {
    if losses.is_empty() {
        return eta;
    }
    let sq: T = losses.iter().map(|&u| (u - eta).max(T::zero()).powi(2)).sum();
    c * (sq / T::of_usize(losses.len())).sqrt() + eta
}

/// `1 − C · mean(r) / sqrt(mean(r²))`, equal to 1 when every `r_i` vanishes.
fn subgradient<T: Scalar>(losses: &[T], eta: T, c: T) -> T {
    let (mut s1, mut s2) = (T::zero(), T::zero());
    for &u in losses {
        let r = (u - eta).max(T::zero());
        s1 = s1 + r;
        s2 = s2 + r * r;
    }
    if s2 == T::zero() {
        return T::one();
    }
    let n = T::of_usize(losses.len());
    T::one() - c * (s1 / n) / (s2 / n).sqrt()
}

/// Minimiser `η*` of [`dro_objective`] and the minimum value.
pub fn solve_eta<T: Scalar>(losses: &[T], c: T, tol: T) -> Result<(T, T)> {
    solve_eta_with(losses, c, tol, 200)
}

pub fn solve_eta_with<T: Scalar>(losses: &[T], c: T, tol: T, max_bisections: usize) -> Result<(T, T)> {
    if losses.is_empty() {
        return Err(Error::Validation("cannot solve for eta over an empty loss vector".into()));
    }
    if losses.iter().any(|u| !u.is_finite()) {
        return Err(Error::Numeric("non-finite loss passed to the eta solver".into()));
    }
    if !(c >= T::one()) {
        return Err(Error::Domain(format!("C_alpha must be at least 1, got {c}")));
    }
    let n = T::of_usize(losses.len());
    let min = losses.iter().copied().fold(T::infinity(), T::min);
    let max = losses.iter().copied().fold(T::neg_infinity(), T::max);
    if c == T::one() {
        return Ok((min, losses.iter().copied().sum::<T>() / n));
    }
    let floor = min.min(T::zero());
    let mut lo = floor - (max - floor) / (c - T::one()) - T::one();
    let mut hi = max + T::one();
    for _ in 0..max_bisections {
        if hi - lo <= tol {
            break;
        }
        let mid = lo + (hi - lo) / T::of(2.0);
        if subgradient(losses, mid, c) > T::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mid = lo + (hi - lo) / T::of(2.0);

    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite losses"));
    let mut candidates = vec![mid, max];
    // Kinks on either side of the bisection point.
    if let Some(&above) = sorted.iter().rev().find(|&&u| u >= mid) {
        candidates.push(above);
    }
    if let Some(&below) = sorted.iter().find(|&&u| u < mid) {
        candidates.push(below);
    }
    // Stationary point of the smooth piece whose active set is the top k losses.
    let (mut s1, mut s2) = (T::zero(), T::zero());
    let c2 = c * c;
    for k in 1..=sorted.len() {
        s1 = s1 + sorted[k - 1];
        s2 = s2 + sorted[k - 1] * sorted[k - 1];
        let kk = T::of_usize(k);
        let denom = c2 * kk / n - T::one();
        if denom <= T::zero() {
            continue;
        }
        let mu = s1 / kk;
        let var = (s2 / kk - mu * mu).max(T::zero());
        let eta = mu - (var / denom).sqrt();
        let upper = sorted[k - 1];
        let lower = sorted.get(k).copied().unwrap_or(T::neg_infinity());
        if eta <= upper && eta >= lower {
            candidates.push(eta);
        }
    }
    let mut best = (mid, dro_objective(losses, mid, c));
    for eta in candidates {
        let v = dro_objective(losses, eta, c);
        if v < best.1 || (v == best.1 && eta > best.0) {
            best = (eta, v);
        }
    }
    Ok(best)
}

/// `∂ objective / ∂ u_i` at fixed `η`: `C · r_i / (n · sqrt(mean r²))`, zero if all `r_i` vanish.
pub fn dro_weights<T: Scalar>(losses: &[T], eta: T, c: T) -> Vec<T> {
    let n = T::of_usize(losses.len());
    let r: Vec<T> = losses.iter().map(|&u| (u - eta).max(T::zero())).collect();
    let ms = r.iter().map(|&v| v * v).sum::<T>() / n;
    if ms == T::zero() {
        return vec![T::zero(); losses.len()];
    }
    let scale = c / (n * ms.sqrt());
    r.into_iter().map(|v| v * scale).collect()
}

/// Weights actually used for descent: the fixed-η gradient, or the plain mean when `C = 1`.
fn descent_weights<T: Scalar>(losses: &[T], eta: T, c: T) -> Vec<T> {
    if c == T::one() {
        vec![T::one() / T::of_usize(losses.len()); losses.len()]
    } else {
        dro_weights(losses, eta, c)
    }
}

/// Gradient in `θ` of the dual objective at fixed `η`, with per-point losses of `points`
/// against adjacency pool `pool`.
#[allow(clippy::too_many_arguments)]
pub fn dro_grad_theta<T: Scalar>(
    model: &ModelSpec,
    theta: &[T],
    ds: &SurvivalDataset<T>,
    points: &[usize],
    pool: &[usize],
    loss: &LossSpec<T>,
    eta: T,
    c: T,
) -> Result<Vec<T>> {
    let tape = Tape::new();
    let th = tape.vars(theta);
    let u = point_losses_on_tape(&tape, model, &th, None, ds, points, pool, loss)?;
    tape.check_finite()?;
    let vals: Vec<T> = u.iter().map(|v| v.value()).collect();
    let w = dro_weights(&vals, eta, c);
    let seeds: Vec<(Var<'_, T>, T)> = u.into_iter().zip(w).collect();
    Ok(tape.gradient_weighted(&seeds).wrt(&th))
}

fn all_indices(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Heuristic robust training: per step solve `η` on the coupled losses, then one step on `θ`.
pub fn train_dro<T: Scalar>(
    ds: &SurvivalDataset<T>,
    model: &ModelSpec,
    loss: &LossSpec<T>,
    dro: &DroConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let init = ModelParams::init(model.clone(), cfg.seed)?;
    train_dro_from(ds, init, loss, dro, cfg)
}

pub fn train_dro_from<T: Scalar>(
    ds: &SurvivalDataset<T>,
    init: ModelParams<T>,
    loss: &LossSpec<T>,
    dro: &DroConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    dro.validate()?;
    let c = T::of(dro.c_alpha()?);
    let tol = T::of(dro.tolerance);
    let all = all_indices(ds.n());
    let model = init.spec.clone();
    let (theta, log) = run_descent(init.theta, cfg, |it, theta| {
        let tape = Tape::new();
        let th = tape.vars(theta);
        let u = point_losses_on_tape(&tape, &model, &th, None, ds, &all, &all, loss)?;
        tape.check_finite()?;
        let vals: Vec<T> = u.iter().map(|v| v.value()).collect();
        let (eta, obj) = solve_eta_with(&vals, c, tol, dro.max_bisections)?;
        let seeds: Vec<_> = u.into_iter().zip(descent_weights(&vals, eta, c)).collect();
        let g = tape.gradient_weighted(&seeds).wrt(&th);
        Ok((g, LogRow::new(it, obj.as_f64()).with_eta(eta.as_f64())))
    })?;
    Ok(TrainOutcome { params: ModelParams::from_theta(model, theta)?, log })
}

/// Dual objective over `a`'s losses with adjacency restricted to `b`.
#[allow(clippy::too_many_arguments)]
pub fn split_dro_objective<T: Scalar>(
    model: &ModelSpec,
    theta: &[T],
    eta: T,
    ds: &SurvivalDataset<T>,
    a: &[usize],
    b: &[usize],
    loss: &LossSpec<T>,
    c: T,
) -> Result<T> {
    if a.is_empty() {
        return Err(Error::Validation("split objective needs a nonempty training half".into()));
    }
    let u = point_losses(model, theta, None, ds, a, b, loss)?;
    Ok(dro_objective(&u, eta, c))
}

/// Complement of each fold within `0..n`.
pub fn fold_complements(folds: &[Vec<usize>], n: usize) -> Vec<Vec<usize>> {
    folds
        .iter()
        .map(|f| {
            let mut mark = vec![false; n];
            for &i in f {
                mark[i] = true;
            }
            (0..n).filter(|&i| !mark[i]).collect()
        })
        .collect()
}

/// Average over folds of the per-fold dual objective, each fold conditioned on its complement.
pub fn cross_fit_objective<T: Scalar>(
    model: &ModelSpec,
    theta: &[T],
    etas: &[T],
    ds: &SurvivalDataset<T>,
    folds: &[Vec<usize>],
    loss: &LossSpec<T>,
    c: T,
) -> Result<T> {
    if etas.len() != folds.len() {
        return Err(Error::DimensionMismatch { expected: folds.len(), actual: etas.len() });
    }
    let rest = fold_complements(folds, ds.n());
    let mut total = T::zero();
    for ((f, r), &eta) in folds.iter().zip(&rest).zip(etas) {
        total = total + split_dro_objective(model, theta, eta, ds, f, r, loss, c)?;
    }
    Ok(total / T::of_usize(folds.len()))
}

/// Folds used by split training under `dro.split` (two-fold when unset).
pub fn split_folds<T: Scalar>(ds: &SurvivalDataset<T>, dro: &DroConfig) -> Result<Vec<Vec<usize>>> {
    match dro.split.unwrap_or(SplitMode::TwoFold) {
        SplitMode::TwoFold => Ok(stratified_split(ds, 0.5, dro.seed)?.folds()),
        SplitMode::KFold { k } => stratified_kfold(ds, k, dro.seed),
    }
}

/// Sample-splitting robust training with cross-fitting.
pub fn train_split_dro<T: Scalar>(
    ds: &SurvivalDataset<T>,
    model: &ModelSpec,
    loss: &LossSpec<T>,
    dro: &DroConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let folds = split_folds(ds, dro)?;
    let init = ModelParams::init(model.clone(), cfg.seed)?;
    train_split_dro_with_folds(ds, init, &folds, loss, dro, cfg)
}

pub fn train_split_dro_with_folds<T: Scalar>(
    ds: &SurvivalDataset<T>,
    init: ModelParams<T>,
    folds: &[Vec<usize>],
    loss: &LossSpec<T>,
    dro: &DroConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    dro.validate()?;
    crate::data::validate_partition(folds, ds.n())?;
    let c = T::of(dro.c_alpha()?);
    let tol = T::of(dro.tolerance);
    let rest = fold_complements(folds, ds.n());
    let k = T::of_usize(folds.len());
    let model = init.spec.clone();
    let (theta, log) = run_descent(init.theta, cfg, |it, theta| {
        let tape = Tape::new();
        let th = tape.vars(theta);
        let mut seeds = Vec::new();
        let mut objective = T::zero();
        let mut etas = Vec::with_capacity(folds.len());
        for (f, r) in folds.iter().zip(&rest) {
            let u = point_losses_on_tape(&tape, &model, &th, None, ds, f, r, loss)?;
            let vals: Vec<T> = u.iter().map(|v| v.value()).collect();
            let (eta, obj) = solve_eta_with(&vals, c, tol, dro.max_bisections)?;
            objective = objective + obj / k;
            etas.push(eta);
            seeds.extend(u.into_iter().zip(descent_weights(&vals, eta, c).into_iter().map(|w| w / k)));
        }
        tape.check_finite()?;
        let g = tape.gradient_weighted(&seeds).wrt(&th);
        let mut row = LogRow::new(it, objective.as_f64()).with_eta(etas[0].as_f64());
        if let Some(e) = etas.get(1) {
            row = row.with_eta_prime(e.as_f64());
        }
        Ok((g, row))
    })?;
    Ok(TrainOutcome { params: ModelParams::from_theta(model, theta)?, log })
}

/// Robust training of the full Cox likelihood in `(θ, ψ)`.
///
/// Censored times are snapped onto the event grid first; `ψ` starts at its optimum for
/// the initial `θ`.
pub fn train_exact_dro_cox<T: Scalar>(
    ds: &SurvivalDataset<T>,
    model: &ModelSpec,
    dro: &DroConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let grid = event_time_grid(ds)?;
    let snapped = snap_censored_times(ds, &grid);
    let init = ModelParams::init(model.clone(), cfg.seed)?;
    let scores = scores_of(&snapped, &init)?;
    let psi = optimal_psi(&snapped, &scores, &grid)?;
    train_exact_dro_cox_from(&snapped, &grid, init.with_psi(psi), dro, cfg, false)
}

pub fn scores_of<T: Scalar>(ds: &SurvivalDataset<T>, params: &ModelParams<T>) -> Result<Vec<T>> {
    (0..ds.n()).map(|i| params.score(ds.row(i))).collect()
}

/// Joint descent on `(θ, ψ)` from `init`; `freeze_theta` keeps `θ` fixed.
pub fn train_exact_dro_cox_from<T: Scalar>(
    ds: &SurvivalDataset<T>,
    grid: &TimeGrid<T>,
    init: ModelParams<T>,
    dro: &DroConfig,
    cfg: &TrainConfig,
    freeze_theta: bool,
) -> Result<TrainOutcome<T>> {
    dro.validate()?;
    if init.spec.is_simplex() {
        return Err(Error::Config("exact robust Cox training needs a scalar-output model".into()));
    }
    let psi0 = init.psi.clone().ok_or_else(|| Error::Config("exact robust Cox training needs psi".into()))?;
    if psi0.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), actual: psi0.len() });
    }
    let c = T::of(dro.c_alpha()?);
    let tol = T::of(dro.tolerance);
    let p = init.theta.len();
    let all = all_indices(ds.n());
    let loss = LossSpec::CoxFull(grid.clone());
    let model = init.spec.clone();
    let mut x = init.theta.clone();
    x.extend(psi0);
    let (x, log) = run_descent(x, cfg, |it, x| {
        let tape = Tape::new();
        let vars = tape.vars(x);
        let (th, ps) = vars.split_at(p);
        let u = point_losses_on_tape(&tape, &model, th, Some(ps), ds, &all, &all, &loss)?;
        tape.check_finite()?;
        let vals: Vec<T> = u.iter().map(|v| v.value()).collect();
        let (eta, obj) = solve_eta_with(&vals, c, tol, dro.max_bisections)?;
        let seeds: Vec<_> = u.into_iter().zip(descent_weights(&vals, eta, c)).collect();
        let mut g = tape.gradient_weighted(&seeds).wrt(&vars);
        if freeze_theta {
            g[..p].iter_mut().for_each(|v| *v = T::zero());
        }
        Ok((g, LogRow::new(it, obj.as_f64()).with_eta(eta.as_f64())))
    })?;
    let (theta, psi) = x.split_at(p);
    Ok(TrainOutcome { params: ModelParams::from_theta(model, theta.to_vec())?.with_psi(psi.to_vec()), log })
}
