//! Per-point survival losses and the adjacency sets that couple them.
//!
//! A per-point loss `u_i` depends on subject `i` and on the subjects in its adjacency set,
//! drawn from a candidate pool. With the pool equal to the whole training set this gives
//! the usual losses; with the pool fixed to a held-out half it gives the split losses.

use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, Tape, Var};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyKind {
    Cox,
    DeepHit,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepHitConfig<T> {
    pub beta: T,
    pub sigma: T,
    pub grid: TimeGrid<T>,
    /// Population size in the `1/n` ranking weight.
    pub n: usize,
    /// Ranking weight per event type, indexed by `event - 1`; missing entries are 1.
    pub event_weights: Vec<T>,
}

impl<T: Scalar> DeepHitConfig<T> {
    pub fn new(beta: T, sigma: T, grid: TimeGrid<T>, n: usize) -> Result<Self> {
        if !(beta >= T::zero() && beta <= T::one()) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")));
        }
        if !(sigma > T::zero()) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        if n == 0 {
            return Err(Error::Config("ranking population size must be positive".into()));
        }
        Ok(Self { beta, sigma, grid, n, event_weights: Vec::new() })
    }

    pub fn with_event_weights(mut self, w: Vec<T>) -> Self {
        self.event_weights = w;
        self
    }

    pub fn event_weight(&self, event: u32) -> T {
        self.event_weights.get(event as usize - 1).copied().unwrap_or_else(T::one)
    }

    /// Grid index of `y`, clamped to 1 below the first point.
    pub fn kappa(&self, y: T) -> usize {
        self.grid.kappa_clamped(y)
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec<T> {
    /// Cox partial likelihood.
    Cox,
    DeepHit(DeepHitConfig<T>),
    /// Full Cox likelihood with piecewise-constant log baseline hazard `ψ` on this grid.
    CoxFull(TimeGrid<T>),
}

impl<T: Scalar> LossSpec<T> {
    pub fn kind(&self) -> AdjacencyKind {
        match self {
            LossSpec::Cox => AdjacencyKind::Cox,
            LossSpec::DeepHit(cfg) if cfg.beta < T::one() => AdjacencyKind::DeepHit,
            _ => AdjacencyKind::None,
        }
    }

    pub fn needs_psi(&self) -> bool {
        matches!(self, LossSpec::CoxFull(_))
    }
}

/// Members of `candidates` (other than `i`) adjacent to subject `i`.
pub fn adjacency<T: Scalar>(ds: &SurvivalDataset<T>, i: usize, candidates: &[usize], loss: &LossSpec<T>) -> Vec<usize> {
    if !ds.is_event(i) {
        return Vec::new();
    }
    let y = ds.time(i);
    let others = candidates.iter().copied().filter(|&j| j != i);
    match (loss.kind(), loss) {
        (AdjacencyKind::Cox, _) => others.filter(|&j| ds.time(j) >= y).collect(),
        (AdjacencyKind::DeepHit, LossSpec::DeepHit(cfg)) => {
            let k = cfg.kappa(y);
            others.filter(|&j| cfg.kappa(ds.time(j)) > k).collect()
        }
        _ => Vec::new(),
    }
}

/// `log(e^{f_i} + Σ_adj e^{f_j}) − f_i` for an event, 0 when censored.
pub fn cox_individual_loss<T: Scalar>(event: bool, f_i: T, adj_scores: &[T]) -> T {
    if !event {
        return T::zero();
    }
    let mut all = Vec::with_capacity(adj_scores.len() + 1);
    all.push(f_i);
    all.extend_from_slice(adj_scores);
    (log_sum_exp(&all) - f_i).max(T::zero())
}

/// Mean negative log partial likelihood, risk sets `{j : Y_j ≥ Y_i}` (ties included).
pub fn cox_partial_loss<T: Scalar>(ds: &SurvivalDataset<T>, scores: &[T]) -> T {
    let all: Vec<usize> = (0..ds.n()).collect();
    let total: T = (0..ds.n())
        .map(|i| {
            let adj: Vec<T> = adjacency(ds, i, &all, &LossSpec::Cox).iter().map(|&j| scores[j]).collect();
            cox_individual_loss(ds.is_event(i), scores[i], &adj)
        })
        .sum();
    total / T::of_usize(ds.n())
}

fn check_pmf_len<T: Scalar>(cfg: &DeepHitConfig<T>, event_types: usize, len: usize) -> Result<()> {
    let expected = event_types * cfg.m();
    if len != expected {
        return Err(Error::DimensionMismatch { expected, actual: len });
    }
    Ok(())
}

/// Single-risk DeepHit loss of one subject from its pmf and the pmfs of its adjacency set.
pub fn deephit_individual_loss<T: Scalar>(
    cfg: &DeepHitConfig<T>,
    y: T,
    event: bool,
    pmf: &[T],
    adj_pmfs: &[&[T]],
) -> Result<T> {
    let unit = DeepHitConfig { event_weights: Vec::new(), ..cfg.clone() };
    deephit_competing_individual_loss(&unit, 1, y, u32::from(event), pmf, adj_pmfs)
}

/// Competing-risks DeepHit loss; pmf cell `(δ, ℓ)` lives at `(δ − 1)·m + ℓ − 1`.
pub fn deephit_competing_individual_loss<T: Scalar>(
    cfg: &DeepHitConfig<T>,
    max_event: u32,
    y: T,
    event: u32,
    pmf: &[T],
    adj_pmfs: &[&[T]],
) -> Result<T> {
    let k = max_event as usize;
    check_pmf_len(cfg, k, pmf.len())?;
    for p in adj_pmfs {
        check_pmf_len(cfg, k, p.len())?;
    }
    if event > max_event {
        return Err(Error::Validation(format!("event {event} exceeds max event {max_event}")));
    }
    let tape = Tape::new();
    let own = tape.vars(pmf);
    let others: Vec<Vec<Var<'_, T>>> = adj_pmfs.iter().map(|p| tape.vars(p)).collect();
    let kappa = cfg.kappa(y);
    let cif_own = cif_at(&tape, &own, cfg.m(), event, kappa);
    let adj_cifs: Vec<Var<'_, T>> =
        if event > 0 { others.iter().map(|p| cif_at(&tape, p, cfg.m(), event, kappa)).collect() } else { Vec::new() };
    let u = deephit_point(&tape, cfg, &own, event, kappa, cif_own, &adj_cifs);
    Ok(u.value())
}

/// `Σ_{ℓ ≤ κ} f_{δ,ℓ}` (δ = 0 gives an unused zero).
fn cif_at<'t, T: Scalar>(tape: &'t Tape<T>, pmf: &[Var<'t, T>], m: usize, event: u32, kappa: usize) -> Var<'t, T> {
    if event == 0 {
        return tape.zero();
    }
    let base = (event as usize - 1) * m;
    tape.sum(&pmf[base..base + kappa])
}

fn deephit_point<'t, T: Scalar>(
    tape: &'t Tape<T>,
    cfg: &DeepHitConfig<T>,
    pmf: &[Var<'t, T>],
    event: u32,
    kappa: usize,
    cif_own: Var<'t, T>,
    adj_cifs: &[Var<'t, T>],
) -> Var<'t, T> {
    let m = cfg.m();
    let nll = if event > 0 {
        -pmf[(event as usize - 1) * m + kappa - 1].clamped_ln()
    } else {
        let tail: Vec<Var<'t, T>> =
            pmf.chunks(m).flat_map(|block| block[kappa..].iter().copied()).collect();
        -tape.sum(&tail).clamped_ln()
    };
    let mut u = nll * cfg.beta;
    if event > 0 && cfg.beta < T::one() && !adj_cifs.is_empty() {
        let inv_sigma = T::one() / cfg.sigma;
        let terms: Vec<Var<'t, T>> = adj_cifs.iter().map(|&c| ((c - cif_own) * inv_sigma).exp()).collect();
        let w = (T::one() - cfg.beta) * cfg.event_weight(event) / T::of_usize(cfg.n);
        u = u + tape.sum(&terms) * w;
    }
    u
}

/// Grid index used by the full Cox likelihood: exact for events, `max{ℓ : t_ℓ ≤ Y}` otherwise.
pub fn cox_full_index<T: Scalar>(grid: &TimeGrid<T>, y: T, event: bool) -> Result<usize> {
    if event {
        grid.kappa_with_event(y, true)
    } else {
        Ok(grid.index_at_or_before(y))
    }
}

/// `−Δ(f + ψ_κ) + e^f Σ_{ℓ ≤ κ} (t_ℓ − t_{ℓ−1}) e^{ψ_ℓ}`.
pub fn cox_full_individual_loss<T: Scalar>(y: T, event: bool, f: T, psi: &[T], grid: &TimeGrid<T>) -> Result<T> {
    if psi.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), actual: psi.len() });
    }
    let kappa = cox_full_index(grid, y, event)?;
    let integral: T = (1..=kappa).map(|l| (grid.point(l) - grid.point(l - 1)) * psi[l - 1].exp()).sum();
    let own = if event { f + psi[kappa - 1] } else { T::zero() };
    Ok(-own + f.exp() * integral)
}

pub fn cox_full_loss<T: Scalar>(ds: &SurvivalDataset<T>, scores: &[T], psi: &[T], grid: &TimeGrid<T>) -> Result<T> {
    let mut total = T::zero();
    for i in 0..ds.n() {
        total = total + cox_full_individual_loss(ds.time(i), ds.is_event(i), scores[i], psi, grid)?;
    }
    Ok(total / T::of_usize(ds.n()))
}

/// Minimiser of the full Cox loss over `ψ` at fixed scores.
pub fn optimal_psi<T: Scalar>(ds: &SurvivalDataset<T>, scores: &[T], grid: &TimeGrid<T>) -> Result<Vec<T>> {
    let m = grid.len();
    let mut deaths = vec![0usize; m];
    for i in (0..ds.n()).filter(|&i| ds.is_event(i)) {
        deaths[grid.kappa_with_event(ds.time(i), true)? - 1] += 1;
    }
    (1..=m)
        .map(|l| {
            let t = grid.point(l);
            let at_risk: Vec<T> = (0..ds.n()).filter(|&j| ds.time(j) >= t).map(|j| scores[j]).collect();
            if at_risk.is_empty() || deaths[l - 1] == 0 {
                return Err(Error::Numeric(format!("empty risk set or no events at grid point {l}")));
            }
            Ok(T::of_usize(deaths[l - 1]).ln() - (t - grid.point(l - 1)).ln() - log_sum_exp(&at_risk))
        })
        .collect()
}

/// Model outputs for one subject on a tape.
enum Outputs<'t, T: Scalar> {
    Score(Var<'t, T>),
    Pmf(Vec<Var<'t, T>>),
}

fn pmf_of<'a, 't, T: Scalar>(o: &'a Option<Outputs<'t, T>>, m: usize) -> Result<&'a [Var<'t, T>]> {
    match o {
        Some(Outputs::Pmf(p)) if p.len() % m == 0 && !p.is_empty() => Ok(p.as_slice()),
        Some(Outputs::Pmf(p)) => Err(Error::DimensionMismatch { expected: m, actual: p.len() }),
        _ => Err(Error::Config("DeepHit loss needs a simplex-output model".into())),
    }
}

/// Per-point losses of `points`, each with adjacency drawn from `pool`.
///
/// `theta` (and `psi` for [`LossSpec::CoxFull`]) must already live on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn point_losses_on_tape<'t, T: Scalar>(
    tape: &'t Tape<T>,
    model: &ModelSpec,
    theta: &[Var<'t, T>],
    psi: Option<&[Var<'t, T>]>,
    ds: &SurvivalDataset<T>,
    points: &[usize],
    pool: &[usize],
    loss: &LossSpec<T>,
) -> Result<Vec<Var<'t, T>>> {
    if theta.len() != model.num_params() {
        return Err(Error::DimensionMismatch { expected: model.num_params(), actual: theta.len() });
    }
    if model.input_dim != ds.d() {
        return Err(Error::DimensionMismatch { expected: model.input_dim, actual: ds.d() });
    }
    let kind = loss.kind();
    let mut outputs: Vec<Option<Outputs<'t, T>>> = (0..ds.n()).map(|_| None).collect();
    let eval = |i: usize, outputs: &mut Vec<Option<Outputs<'t, T>>>| {
        if outputs[i].is_none() {
            outputs[i] = Some(if model.is_simplex() {
                Outputs::Pmf(model.simplex_on_tape(tape, theta, ds.row(i)))
            } else {
                Outputs::Score(model.scalar_on_tape(tape, theta, ds.row(i)))
            });
        }
    };
    for &i in points {
        eval(i, &mut outputs);
    }
    if kind != AdjacencyKind::None {
        for &j in pool {
            eval(j, &mut outputs);
        }
    }
    let score = |o: &Option<Outputs<'t, T>>| match o {
        Some(Outputs::Score(v)) => Ok(*v),
        _ => Err(Error::Config("loss needs a scalar-output model".into())),
    };
    match loss {
        LossSpec::Cox => {
            // Cumulative log-sum-exp over the pool, from the latest time backwards.
            let mut sorted: Vec<usize> = pool.to_vec();
            sorted.sort_by(|&a, &b| ds.time(b).partial_cmp(&ds.time(a)).expect("finite times"));
            let mut cum: Vec<(T, Var<'t, T>)> = Vec::new();
            let mut k = 0;
            while k < sorted.len() {
                let t = ds.time(sorted[k]);
                let mut terms: Vec<Var<'t, T>> = cum.last().map(|c| vec![c.1]).unwrap_or_default();
                while k < sorted.len() && ds.time(sorted[k]) == t {
                    terms.push(score(&outputs[sorted[k]])?);
                    k += 1;
                }
                cum.push((t, tape.log_sum_exp(&terms)));
            }
            let mut in_pool = vec![false; ds.n()];
            for &j in pool {
                in_pool[j] = true;
            }
            points
                .iter()
                .map(|&i| {
                    if !ds.is_event(i) {
                        return Ok(tape.zero());
                    }
                    let f = score(&outputs[i])?;
                    let y = ds.time(i);
                    // cum is ordered by decreasing time; the last entry with t ≥ y covers the risk set.
                    let pos = cum.partition_point(|c| c.0 >= y);
                    let risk = if pos == 0 { None } else { Some(cum[pos - 1].1) };
                    Ok(match (risk, in_pool[i]) {
                        (Some(r), true) => (r - f).floor_at(T::zero()),
                        (Some(r), false) => (tape.log_sum_exp(&[f, r]) - f).floor_at(T::zero()),
                        (None, _) => tape.zero(),
                    })
                })
                .collect()
        }
        LossSpec::CoxFull(grid) => {
            let psi = psi.ok_or_else(|| Error::Config("full Cox loss needs psi".into()))?;
            if psi.len() != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), actual: psi.len() });
            }
            let mut cum = Vec::with_capacity(grid.len() + 1);
            cum.push(tape.zero());
            for l in 1..=grid.len() {
                let dt = grid.point(l) - grid.point(l - 1);
                let prev = cum[l - 1];
                cum.push(prev + psi[l - 1].exp() * dt);
            }
            points
                .iter()
                .map(|&i| {
                    let f = score(&outputs[i])?;
                    let event = ds.is_event(i);
                    let kappa = cox_full_index(grid, ds.time(i), event)?;
                    if kappa == 0 {
                        return Ok(tape.zero());
                    }
                    let integral = f.exp() * cum[kappa];
                    Ok(if event { integral - (f + psi[kappa - 1]) } else { integral })
                })
                .collect()
        }
        LossSpec::DeepHit(cfg) => {
            let m = cfg.m();
            let pmf = |o| pmf_of(o, m);
            let types = (model.output_dim / m) as u32;
            // Running CIF per (subject, event type).
            let mut prefix: std::collections::HashMap<(usize, u32), Vec<Var<'t, T>>> = Default::default();
            let mut cif = |j: usize, e: u32, kappa: usize, p: &[Var<'t, T>]| -> Var<'t, T> {
                let run = prefix.entry((j, e)).or_insert_with(|| {
                    let base = (e as usize - 1) * m;
                    let mut acc = vec![tape.zero()];
                    for l in 0..m {
                        let next = acc[l] + p[base + l];
                        acc.push(next);
                    }
                    acc
                });
                run[kappa]
            };
            let mut out = Vec::with_capacity(points.len());
            for &i in points {
                let p = pmf(&outputs[i])?.to_vec();
                let event = ds.event(i);
                if event > types {
                    return Err(Error::Validation(format!("event {event} exceeds model event types {types}")));
                }
                let kappa = cfg.kappa(ds.time(i));
                let (own, adj) = if event > 0 && kind == AdjacencyKind::DeepHit {
                    let own = cif(i, event, kappa, &p);
                    let mut adj = Vec::new();
                    for &j in pool {
                        if j != i && cfg.kappa(ds.time(j)) > kappa {
                            let pj = pmf(&outputs[j])?;
                            adj.push(cif(j, event, kappa, pj));
                        }
                    }
                    (own, adj)
                } else {
                    (tape.zero(), Vec::new())
                };
                out.push(deephit_point(tape, cfg, &p, event, kappa, own, &adj));
            }
            Ok(out)
        }
    }
}

/// Plain values of [`point_losses_on_tape`].
pub fn point_losses<T: Scalar>(
    model: &ModelSpec,
    theta: &[T],
    psi: Option<&[T]>,
    ds: &SurvivalDataset<T>,
    points: &[usize],
    pool: &[usize],
    loss: &LossSpec<T>,
) -> Result<Vec<T>> {
    let tape = Tape::new();
    let th = tape.vars(theta);
    let ps = psi.map(|p| tape.vars(p));
    let u = point_losses_on_tape(&tape, model, &th, ps.as_deref(), ds, points, pool, loss)?;
    Ok(u.iter().map(|v| v.value()).collect())
}
