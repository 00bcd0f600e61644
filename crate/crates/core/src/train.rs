//! Optimizers, empirical-risk and fairness-regularized training, and the tuning rule.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GroupLabels, SurvivalDataset};
use crate::error::{Error, Result};
use crate::losses::{point_losses_on_tape, LossSpec};
use crate::nn::{ModelParams, ModelSpec, Tape, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    #[default]
    None,
    FI,
    FG,
    FCI,
    FCG,
}

impl Regularizer {
    pub fn needs_partition(self) -> bool {
        matches!(self, Regularizer::FG | Regularizer::FCG)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub max_iterations: usize,
    pub seed: u64,
    pub lambda: f64,
    pub regularizer: Regularizer,
    pub gamma: f64,
    /// Minibatch size for plain DeepHit training; full batch when unset.
    pub batch_size: Option<usize>,
    pub alpha_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            optimizer: Optimizer::Sgd,
            max_iterations: 500,
            seed: 0,
            lambda: 0.0,
            regularizer: Regularizer::None,
            gamma: 0.01,
            batch_size: None,
            alpha_grid: COX_ALPHA_GRID.to_vec(),
        }
    }
}

pub const COX_ALPHA_GRID: [f64; 6] = [0.1, 0.15, 0.2, 0.3, 0.4, 0.5];
pub const DEEPHIT_ALPHA_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const LAMBDA_GRID: [f64; 3] = [1.0, 0.7, 0.4];
pub const LEARNING_RATE_GRID: [f64; 3] = [0.01, 0.001, 0.0001];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be nonnegative, got {}", self.learning_rate)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

pub struct OptimizerState<T> {
    kind: Optimizer,
    lr: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: Optimizer, lr: f64, dim: usize) -> Self {
        Self { kind, lr: T::of(lr), m: vec![T::zero(); dim], v: vec![T::zero(); dim], t: 0 }
    }

    pub fn step(&mut self, x: &mut [T], g: &[T]) {
        match self.kind {
            Optimizer::Sgd => {
                for (xi, &gi) in x.iter_mut().zip(g) {
                    *xi = *xi - self.lr * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                let c1 = T::one() - b1.powi(self.t);
                let c2 = T::one() - b2.powi(self.t);
                for k in 0..x.len() {
                    self.m[k] = b1 * self.m[k] + (T::one() - b1) * g[k];
                    self.v[k] = b2 * self.v[k] + (T::one() - b2) * g[k] * g[k];
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    x[k] = x[k] - self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

/// One line of a training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: usize,
    pub objective: f64,
    pub eta: Option<f64>,
    pub eta_prime: Option<f64>,
}

impl LogRow {
    pub fn new(iteration: usize, objective: f64) -> Self {
        Self { iteration, objective, eta: None, eta_prime: None }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn with_eta_prime(mut self, eta: f64) -> Self {
        self.eta_prime = Some(eta);
        self
    }
}

pub fn write_log_csv<W: Write>(rows: &[LogRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "objective", "eta", "eta_prime"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([r.iteration.to_string(), r.objective.to_string(), opt(r.eta), opt(r.eta_prime)])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<LogRow>,
}

/// Fixed-budget first-order descent; `step` returns the gradient and a log row.
pub(crate) fn run_descent<T, F>(mut x: Vec<T>, cfg: &TrainConfig, mut step: F) -> Result<(Vec<T>, Vec<LogRow>)>
where
    T: Scalar,
    F: FnMut(usize, &[T]) -> Result<(Vec<T>, LogRow)>,
{
    cfg.validate()?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, x.len());
    let mut log = Vec::with_capacity(cfg.max_iterations);
    for it in 0..cfg.max_iterations {
        let (g, row) = step(it, &x).map_err(|e| match e {
            Error::Numeric(message) => Error::Training { iteration: it, message },
            other => other,
        })?;
        if !row.objective.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training { iteration: it, message: "objective or gradient is not finite".into() });
        }
        opt.step(&mut x, &g);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training { iteration: it, message: "parameters diverged".into() });
        }
        log.push(row);
    }
    Ok((x, log))
}

/// Empirical risk minimisation of the mean per-point loss.
pub fn train_erm<T: Scalar>(
    ds: &SurvivalDataset<T>,
    model: &ModelSpec,
    loss: &LossSpec<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_regularized(ds, model, loss, &TrainConfig { lambda: 0.0, regularizer: Regularizer::None, ..cfg.clone() }, None)
}

/// Minimises mean loss plus `λ` times a training-set fairness term.
pub fn train_regularized<T: Scalar>(
    ds: &SurvivalDataset<T>,
    model: &ModelSpec,
    loss: &LossSpec<T>,
    cfg: &TrainConfig,
    partition: Option<&GroupLabels>,
) -> Result<TrainOutcome<T>> {
    let init = ModelParams::init(model.clone(), cfg.seed)?;
    train_regularized_from(ds, init, loss, cfg, partition)
}

pub fn train_regularized_from<T: Scalar>(
    ds: &SurvivalDataset<T>,
    init: ModelParams<T>,
    loss: &LossSpec<T>,
    cfg: &TrainConfig,
    partition: Option<&GroupLabels>,
) -> Result<TrainOutcome<T>> {
    if loss.needs_psi() {
        return Err(Error::Config("the full Cox likelihood is only trained by the exact robust path".into()));
    }
    let active = cfg.lambda > 0.0 && cfg.regularizer != Regularizer::None;
    let reg = if active { Some(RegularizerTerm::new(ds, loss, cfg, partition)?) } else { None };
    let model = init.spec.clone();
    let n = ds.n();
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.filter(|&b| b < n && !active);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut cursor = n;
    let lambda = T::of(cfg.lambda);
    let (theta, log) = run_descent(init.theta, cfg, |it, theta| {
        let points: Vec<usize> = match batch {
            Some(b) => {
                if cursor + b > n {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let mut p = order[cursor..cursor + b].to_vec();
                cursor += b;
                p.sort_unstable();
                p
            }
            None => (0..n).collect(),
        };
        let tape = Tape::new();
        let th = tape.vars(theta);
        let u = point_losses_on_tape(&tape, &model, &th, None, ds, &points, &points, loss)?;
        let mut objective = tape.mean(&u);
        if let Some(r) = &reg {
            objective = objective + r.on_tape(&tape, &model, &th, ds) * lambda;
        }
        tape.check_finite()?;
        let g = tape.gradient(objective).wrt(&th);
        Ok((g, LogRow::new(it, objective.value().as_f64())))
    })?;
    Ok(TrainOutcome { params: ModelParams::from_theta(model, theta)?, log })
}

/// A differentiable training-set fairness penalty.
pub struct RegularizerTerm<T> {
    kind: Regularizer,
    gamma: T,
    groups: Option<Vec<usize>>,
    /// Grid index of each evaluation time when outcomes are survival probabilities.
    survival_at: Option<Vec<usize>>,
    m: usize,
}

impl<T: Scalar> RegularizerTerm<T> {
    pub fn new(
        ds: &SurvivalDataset<T>,
        loss: &LossSpec<T>,
        cfg: &TrainConfig,
        partition: Option<&GroupLabels>,
    ) -> Result<Self> {
        let groups = match (cfg.regularizer.needs_partition(), partition) {
            (true, None) => return Err(Error::Config("group regularizer needs a group attribute".into())),
            (true, Some(p)) => Some(group_ids(&p.labels).0),
            (false, _) => None,
        };
        let (survival_at, m) = match loss {
            LossSpec::DeepHit(c) => {
                let times = crate::metrics::percentile_times(ds.times());
                (Some(times.iter().map(|&t| c.grid.index_at_or_before(t)).collect()), c.m())
            }
            _ => (None, 0),
        };
        Ok(Self { kind: cfg.regularizer, gamma: T::of(cfg.gamma), groups, survival_at, m })
    }

    /// Penalty with `theta` already on `tape`.
    pub fn on_tape<'t>(&self, tape: &'t Tape<T>, model: &ModelSpec, theta: &[Var<'t, T>], ds: &SurvivalDataset<T>) -> Var<'t, T> {
        let outcome_sets: Vec<Vec<Var<'t, T>>> = match &self.survival_at {
            None => vec![(0..ds.n()).map(|i| model.scalar_on_tape(tape, theta, ds.row(i)).exp()).collect()],
            Some(kappas) => {
                let pmfs: Vec<Vec<Var<'t, T>>> = (0..ds.n()).map(|i| model.simplex_on_tape(tape, theta, ds.row(i))).collect();
                kappas
                    .iter()
                    .map(|&k| {
                        pmfs.iter()
                            .map(|p| {
                                let tail: Vec<Var<'t, T>> = p.chunks(self.m).flat_map(|b| b[k..].iter().copied()).collect();
                                tape.sum(&tail)
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        let terms: Vec<Var<'t, T>> = outcome_sets.iter().map(|h| self.penalty(tape, h, ds)).collect();
        tape.mean(&terms)
    }

    fn penalty<'t>(&self, tape: &'t Tape<T>, h: &[Var<'t, T>], ds: &SurvivalDataset<T>) -> Var<'t, T> {
        let n = ds.n();
        let hinge = |i: usize, j: usize| ((h[i] - h[j]).abs() - self.gamma * ds.feature_distance(i, j)).relu();
        match self.kind {
            Regularizer::None => tape.zero(),
            Regularizer::FI => {
                let terms: Vec<Var<'t, T>> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| hinge(i, j)).collect();
                if terms.is_empty() {
                    tape.zero()
                } else {
                    tape.mean(&terms)
                }
            }
            Regularizer::FG => {
                let groups = self.groups.as_ref().expect("partition checked at construction");
                let k = groups.iter().max().map_or(0, |g| g + 1);
                let overall = tape.mean(h);
                let devs: Vec<Var<'t, T>> = (0..k)
                    .filter_map(|g| {
                        let members: Vec<Var<'t, T>> = (0..n).filter(|&i| groups[i] == g).map(|i| h[i]).collect();
                        (!members.is_empty()).then(|| (tape.mean(&members) - overall).abs())
                    })
                    .collect();
                tape.max(&devs)
            }
            Regularizer::FCI | Regularizer::FCG => {
                let censored: Vec<usize> = (0..n).filter(|&i| !ds.is_event(i)).collect();
                let events: Vec<usize> = (0..n).filter(|&i| ds.is_event(i)).collect();
                let same = |i: usize, j: usize| self.groups.as_ref().map_or(true, |g| g[i] == g[j]);
                let within = self.kind == Regularizer::FCG;
                let terms: Vec<Var<'t, T>> = censored
                    .iter()
                    .flat_map(|&i| events.iter().map(move |&j| (i, j)))
                    .filter(|&(i, j)| ds.time(j) >= ds.time(i) && (!within || same(i, j)))
                    .map(|(i, j)| hinge(i, j))
                    .collect();
                let denom = T::of_usize((censored.len() * events.len()).max(1));
                tape.sum(&terms) / denom
            }
        }
    }
}

/// Dense ids for string labels, in order of first appearance, with the distinct labels.
pub fn group_ids(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let ids = labels
        .iter()
        .map(|l| match names.iter().position(|n| n == l) {
            Some(k) => k,
            None => {
                names.push(l.clone());
                names.len() - 1
            }
        })
        .collect();
    (ids, names)
}

/// One hyperparameter setting with its validation scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate<H> {
    pub hyperparams: H,
    pub val_ctd: f64,
    pub val_fairness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    /// No candidate kept C^td within 5% of the reference.
    pub flagged: bool,
}

/// Lowest fairness score among candidates within 5% of the reference C^td; otherwise the
/// most accurate candidate, flagged.
pub fn tune<H>(candidates: &[Candidate<H>], reference_ctd: f64) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Validation("no tuning candidates".into()));
    }
    let threshold = 0.95 * reference_ctd;
    let qualifying = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.val_ctd >= threshold && c.val_fairness.is_finite())
        .min_by(|a, b| a.1.val_fairness.total_cmp(&b.1.val_fairness));
    if let Some((index, _)) = qualifying {
        return Ok(Selection { index, flagged: false });
    }
    let (index, _) = candidates
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.val_ctd.total_cmp(&b.1.val_ctd).then(b.0.cmp(&a.0)))
        .expect("nonempty");
    Ok(Selection { index, flagged: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(name: &'static str, ctd: f64, fair: f64) -> Candidate<&'static str> {
        Candidate { hyperparams: name, val_ctd: ctd, val_fairness: fair }
    }

    #[test]
    fn tuning_rule() {
        let c = [cand("A", 0.79, 1.0), cand("B", 0.77, 0.2), cand("C", 0.70, 0.0)];
        assert_eq!(tune(&c, 0.80).unwrap(), Selection { index: 1, flagged: false });
        let low = [cand("A", 0.5, 1.0), cand("B", 0.6, 0.2)];
        assert_eq!(tune(&low, 0.80).unwrap(), Selection { index: 1, flagged: true });
        assert_eq!(tune(&[cand("A", 0.9, 3.0)], 0.8).unwrap().index, 0);
        assert!(tune::<()>(&[], 0.8).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut s = OptimizerState::<f64>::new(Optimizer::adam(), 0.1, 2);
        let mut x = vec![1.0, 1.0];
        s.step(&mut x, &[3.0, -0.5]);
        assert!((x[0] - 0.9).abs() < 1e-6 && (x[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn group_ids_first_appearance() {
        let l: Vec<String> = ["b", "a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(group_ids(&l), (vec![0, 1, 0], vec!["b".to_string(), "a".to_string()]));
    }
}
