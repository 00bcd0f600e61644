//! Survival-curve estimation and the accuracy and fairness metrics.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{event_time_grid, quantile_sorted, GroupLabels, SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::train::group_ids;

/// 25th, 50th and 75th percentiles (linear interpolation) of observed times.
pub fn percentile_times<T: Scalar>(times: &[T]) -> [T; 3] {
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    [0.25, 0.5, 0.75].map(|q| quantile_sorted(&sorted, q))
}

/// Breslow estimate of the baseline hazard at each distinct event time.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineHazard<T> {
    pub grid: TimeGrid<T>,
    pub hazards: Vec<T>,
}

impl<T: Scalar> BaselineHazard<T> {
    /// Cumulative hazard `Ĥ₀` at each grid point.
    pub fn cumulative(&self) -> Vec<T> {
        let mut acc = T::zero();
        self.hazards
            .iter()
            .map(|&h| {
                acc = acc + h;
                acc
            })
            .collect()
    }
}

pub fn breslow_baseline<T: Scalar>(ds: &SurvivalDataset<T>, scores: &[T]) -> Result<BaselineHazard<T>> {
    if scores.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), actual: scores.len() });
    }
    let grid = event_time_grid(ds)?;
    let hazards = grid
        .points()
        .iter()
        .map(|&t| {
            let deaths = (0..ds.n()).filter(|&i| ds.is_event(i) && ds.time(i) == t).count();
            let risk: T = (0..ds.n()).filter(|&j| ds.time(j) >= t).map(|j| scores[j].exp()).sum();
            T::of_usize(deaths) / risk
        })
        .collect();
    Ok(BaselineHazard { grid, hazards })
}

/// `Ŝ(t_ℓ | x) = exp(−Ĥ₀(t_ℓ) e^{f(x)})` at each grid point.
pub fn survival_curve<T: Scalar>(score: T, baseline: &BaselineHazard<T>) -> Vec<T> {
    let e = score.exp();
    baseline.cumulative().into_iter().map(|h| (-h * e).exp()).collect()
}

/// Per-subject survival curves on a grid plus a scalar risk score.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalPrediction<T> {
    pub grid: TimeGrid<T>,
    /// `survival[i][ℓ − 1] = Ŝ(t_ℓ | x_i)`.
    pub survival: Vec<Vec<T>>,
    pub risk: Vec<T>,
}

impl<T: Scalar> SurvivalPrediction<T> {
    pub fn new(grid: TimeGrid<T>, survival: Vec<Vec<T>>, risk: Vec<T>) -> Result<Self> {
        if survival.len() != risk.len() {
            return Err(Error::DimensionMismatch { expected: risk.len(), actual: survival.len() });
        }
        if let Some(bad) = survival.iter().find(|s| s.len() != grid.len()) {
            return Err(Error::DimensionMismatch { expected: grid.len(), actual: bad.len() });
        }
        Ok(Self { grid, survival, risk })
    }

    /// Cox predictions from log partial hazards and a Breslow baseline.
    pub fn cox(scores: &[T], baseline: &BaselineHazard<T>) -> Self {
        let survival = scores.iter().map(|&f| survival_curve(f, baseline)).collect();
        Self { grid: baseline.grid.clone(), survival, risk: scores.to_vec() }
    }

    /// Discrete-time predictions from pmfs over `types · m` cells; `Ŝ_j = Σ_{ℓ>j} f_ℓ`.
    /// The risk score is `1 − Ŝ` at the middle percentile time of `times`.
    pub fn from_pmfs(grid: TimeGrid<T>, pmfs: &[Vec<T>], times: &[T]) -> Result<Self> {
        let m = grid.len();
        let survival: Vec<Vec<T>> = pmfs
            .iter()
            .map(|p| {
                if p.len() % m != 0 || p.is_empty() {
                    return Err(Error::DimensionMismatch { expected: m, actual: p.len() });
                }
                Ok((1..=m).map(|j| p.chunks(m).map(|b| b[j..].iter().copied().sum::<T>()).sum::<T>().min(T::one())).collect())
            })
            .collect::<Result<_>>()?;
        let mut pred = Self { grid, survival, risk: vec![T::zero(); pmfs.len()] };
        let mid = percentile_times(times)[1];
        pred.risk = (0..pmfs.len()).map(|i| T::one() - pred.survival_at(i, mid)).collect();
        Ok(pred)
    }

    pub fn len(&self) -> usize {
        self.survival.len()
    }

    pub fn is_empty(&self) -> bool {
        self.survival.is_empty()
    }

    /// Step-function value `Ŝ(t | x_i)`, 1 before the first grid point.
    pub fn survival_at(&self, i: usize, t: T) -> T {
        match self.grid.index_at_or_before(t) {
            0 => T::one(),
            l => self.survival[i][l - 1],
        }
    }

    pub fn survival_column(&self, t: T) -> Vec<T> {
        (0..self.len()).map(|i| self.survival_at(i, t)).collect()
    }
}

/// Credit for the ordered pair `(i, j)` under the concordance tie rules, or `None` when
/// the pair is not comparable. `risk` orders subject `i`'s risk against subject `j`'s.
pub fn pair_credit<T: Scalar>(yi: T, di: bool, yj: T, dj: bool, risk: Ordering) -> Option<f64> {
    if (yi < yj && !di) || (yj < yi && !dj) || (yi == yj && !di && !dj) {
        return None;
    }
    let credit = if yi < yj {
        match risk {
            Ordering::Greater => 1.0,
            Ordering::Equal => 0.5,
            Ordering::Less => 0.0,
        }
    } else if yi > yj {
        match risk {
            Ordering::Less => 1.0,
            Ordering::Equal => 0.5,
            Ordering::Greater => 0.0,
        }
    } else if di && dj {
        if risk == Ordering::Equal {
            1.0
        } else {
            0.5
        }
    } else if !di && dj && risk == Ordering::Less {
        1.0
    } else if di && !dj && risk == Ordering::Greater {
        1.0
    } else {
        0.5
    };
    Some(credit)
}

fn cmp<T: Scalar>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Time-dependent concordance: pairs compared through `Ŝ(t | ·)` at the earlier time `t`.
pub fn concordance_td<T: Scalar>(ds: &SurvivalDataset<T>, pred: &SurvivalPrediction<T>) -> Result<f64> {
    if pred.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), actual: pred.len() });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..ds.n() {
        for j in (0..ds.n()).filter(|&j| j != i) {
            let (yi, yj) = (ds.time(i), ds.time(j));
            let t = if yj < yi { yj } else { yi };
            // Higher risk means lower predicted survival.
            let risk = cmp(pred.survival_at(j, t), pred.survival_at(i, t));
            if let Some(c) = pair_credit(yi, ds.is_event(i), yj, ds.is_event(j), risk) {
                num += c;
                den += 1.0;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(num / den)
}

/// Per-group concordance numerators and denominators, keyed by group label.
pub fn concordance_by_group<T: Scalar>(
    ds: &SurvivalDataset<T>,
    scores: &[T],
    labels: &[String],
) -> Result<BTreeMap<String, (f64, f64)>> {
    if scores.len() != ds.n() || labels.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), actual: scores.len().min(labels.len()) });
    }
    let mut out: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for i in 0..ds.n() {
        let entry = out.entry(labels[i].clone()).or_insert((0.0, 0.0));
        for j in (0..ds.n()).filter(|&j| j != i) {
            if let Some(c) = pair_credit(ds.time(i), ds.is_event(i), ds.time(j), ds.is_event(j), cmp(scores[i], scores[j])) {
                entry.0 += c;
                entry.1 += 1.0;
            }
        }
    }
    Ok(out)
}

/// Largest gap between group concordance fractions, in percent.
pub fn concordance_imparity<T: Scalar>(ds: &SurvivalDataset<T>, scores: &[T], labels: &[String]) -> Result<f64> {
    let by_group = concordance_by_group(ds, scores, labels)?;
    let mut fractions = Vec::with_capacity(by_group.len());
    for (name, (num, den)) in &by_group {
        if *den == 0.0 {
            return Err(Error::EmptyGroup(format!("group {name} has no comparable pairs")));
        }
        fractions.push(num / den);
    }
    let max = fractions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if fractions.len() < 2 { 0.0 } else { (max - min) * 100.0 })
}

/// Kaplan–Meier estimate of the censoring survival `G(t) = P(C > t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CensoringKm<T> {
    times: Vec<T>,
    surv: Vec<T>,
}

impl<T: Scalar> CensoringKm<T> {
    pub fn fit(ds: &SurvivalDataset<T>) -> Self {
        let mut order: Vec<usize> = (0..ds.n()).collect();
        order.sort_by(|&a, &b| cmp(ds.time(a), ds.time(b)));
        let mut times = Vec::new();
        let mut surv = Vec::new();
        let mut g = T::one();
        let mut at_risk = ds.n();
        let mut k = 0;
        while k < order.len() {
            let t = ds.time(order[k]);
            let (mut tied, mut censored) = (0, 0);
            while k < order.len() && ds.time(order[k]) == t {
                tied += 1;
                if !ds.is_event(order[k]) {
                    censored += 1;
                }
                k += 1;
            }
            if censored > 0 {
                g = g * (T::one() - T::of_usize(censored) / T::of_usize(at_risk));
                times.push(t);
                surv.push(g);
            }
            at_risk -= tied;
        }
        Self { times, surv }
    }

    /// `Ĝ(t)`.
    pub fn at(&self, t: T) -> T {
        match self.times.partition_point(|&s| s <= t) {
            0 => T::one(),
            k => self.surv[k - 1],
        }
    }

    /// `Ĝ(t⁻)`.
    pub fn left_limit(&self, t: T) -> T {
        match self.times.partition_point(|&s| s < t) {
            0 => T::one(),
            k => self.surv[k - 1],
        }
    }
}

const G_FLOOR: f64 = 1e-8;

/// IPCW Brier score at time `t`.
pub fn brier_score<T: Scalar>(ds: &SurvivalDataset<T>, pred: &SurvivalPrediction<T>, km: &CensoringKm<T>, t: T) -> T {
    let floor = T::of(G_FLOOR);
    let g_t = km.at(t);
    if g_t < floor {
        log::warn!("censoring survival {} below floor at t = {}; clamping", g_t, t);
    }
    let g_t = g_t.max(floor);
    let total: T = (0..ds.n())
        .map(|i| {
            let s = pred.survival_at(i, t);
            let y = ds.time(i);
            if y <= t && ds.is_event(i) {
                s * s / km.left_limit(y).max(floor)
            } else if y > t {
                (T::one() - s) * (T::one() - s) / g_t
            } else {
                T::zero()
            }
        })
        .sum();
    total / T::of_usize(ds.n())
}

/// Trapezoidal integral of the Brier score over `grid`, divided by its span.
pub fn ibs<T: Scalar>(ds: &SurvivalDataset<T>, pred: &SurvivalPrediction<T>, grid: &TimeGrid<T>) -> Result<T> {
    if pred.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), actual: pred.len() });
    }
    let km = CensoringKm::fit(ds);
    let pts = grid.points();
    let bs: Vec<T> = pts.iter().map(|&t| brier_score(ds, pred, &km, t)).collect();
    if pts.len() == 1 {
        return Ok(bs[0]);
    }
    let area: T = (1..pts.len()).map(|k| (pts[k] - pts[k - 1]) * (bs[k] + bs[k - 1]) / T::of(2.0)).sum();
    Ok(area / (pts[pts.len() - 1] - pts[0]))
}

/// `Σ_{i<j} [|h_i − h_j| − γ‖x_i − x_j‖]_+`.
pub fn fairness_individual<T: Scalar>(ds: &SurvivalDataset<T>, outcome: &[T], gamma: T) -> T {
    let n = ds.n();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| ((outcome[i] - outcome[j]).abs() - gamma * ds.feature_distance(i, j)).max(T::zero()))
        .sum()
}

fn mean<T: Scalar>(xs: impl Iterator<Item = T>) -> Option<T> {
    let (s, k) = xs.fold((T::zero(), 0usize), |(s, k), x| (s + x, k + 1));
    (k > 0).then(|| s / T::of_usize(k))
}

/// Largest deviation of a group's mean outcome from the population mean.
pub fn fairness_group<T: Scalar>(outcome: &[T], labels: &[String]) -> Result<T> {
    if outcome.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), actual: outcome.len() });
    }
    let overall = mean(outcome.iter().copied()).ok_or_else(|| Error::EmptyGroup("empty population".into()))?;
    let (ids, names) = group_ids(labels);
    let mut worst = T::zero();
    for g in 0..names.len() {
        let m = mean((0..outcome.len()).filter(|&i| ids[i] == g).map(|i| outcome[i]))
            .ok_or_else(|| Error::EmptyGroup(names[g].clone()))?;
        worst = worst.max((m - overall).abs());
    }
    Ok(worst)
}

/// Worst absolute log ratio of mean outcomes between cells of the joint partition.
pub fn fairness_intersectional<T: Scalar>(outcome: &[T], partitions: &[&[String]]) -> Result<T> {
    let n = outcome.len();
    if partitions.iter().any(|p| p.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: partitions.iter().map(|p| p.len()).min().unwrap_or(0) });
    }
    let mut cells: BTreeMap<Vec<&str>, (T, usize)> = BTreeMap::new();
    for i in 0..n {
        let key: Vec<&str> = partitions.iter().map(|p| p[i].as_str()).collect();
        let e = cells.entry(key).or_insert((T::zero(), 0));
        e.0 = e.0 + outcome[i];
        e.1 += 1;
    }
    let mut means = Vec::with_capacity(cells.len());
    for (key, (s, k)) in cells {
        let m = s / T::of_usize(k);
        if !(m > T::zero()) {
            return Err(Error::Domain(format!("cell {key:?} has nonpositive mean outcome {m}")));
        }
        means.push(m.ln());
    }
    let hi = means.iter().copied().fold(T::neg_infinity(), T::max);
    let lo = means.iter().copied().fold(T::infinity(), T::min);
    Ok(if means.is_empty() { T::zero() } else { hi - lo })
}

fn censoring_pairs<T: Scalar>(
    ds: &SurvivalDataset<T>,
    outcome: &[T],
    gamma: T,
    same_group: Option<&[String]>,
) -> Result<T> {
    let censored: Vec<usize> = (0..ds.n()).filter(|&i| !ds.is_event(i)).collect();
    let events: Vec<usize> = (0..ds.n()).filter(|&i| ds.is_event(i)).collect();
    if censored.is_empty() || events.is_empty() {
        return Err(Error::Validation("censoring fairness needs censored and uncensored subjects".into()));
    }
    let mut total = T::zero();
    for &i in &censored {
        for &j in &events {
            if ds.time(j) < ds.time(i) || same_group.is_some_and(|g| g[i] != g[j]) {
                continue;
            }
            total = total + ((outcome[i] - outcome[j]).abs() - gamma * ds.feature_distance(i, j)).max(T::zero());
        }
    }
    Ok(total / T::of_usize(censored.len() * events.len()))
}

/// Censoring-aware individual fairness at one time.
pub fn fairness_censoring_individual<T: Scalar>(ds: &SurvivalDataset<T>, outcome: &[T], gamma: T) -> Result<T> {
    censoring_pairs(ds, outcome, gamma, None)
}

/// Censoring-aware group fairness at one time.
pub fn fairness_censoring_group<T: Scalar>(ds: &SurvivalDataset<T>, outcome: &[T], labels: &[String], gamma: T) -> Result<T> {
    censoring_pairs(ds, outcome, gamma, Some(labels))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeMode {
    /// Risk is a log partial hazard; hazard-based fairness uses `exp(risk)`.
    #[default]
    Hazard,
    /// Everything is read off `Ŝ(t | ·)` at the percentile times.
    Survival,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ctd: f64,
    pub ibs: f64,
    pub ci_pct: f64,
    pub f_i: f64,
    pub f_g: f64,
    pub f_cap: f64,
    pub f_ci: f64,
    pub f_cg: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 8] = ["ctd", "ibs", "ci_pct", "f_i", "f_g", "f_cap", "f_ci", "f_cg"];

    pub fn values(&self) -> [f64; 8] {
        [self.ctd, self.ibs, self.ci_pct, self.f_i, self.f_g, self.f_cap, self.f_ci, self.f_cg]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self { ctd: v[0], ibs: v[1], ci_pct: v[2], f_i: v[3], f_g: v[4], f_cap: v[5], f_ci: v[6], f_cg: v[7] }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::COLUMNS)?;
        out.write_record(self.values().map(|v| v.to_string()))?;
        out.flush()?;
        Ok(())
    }
}

/// What to evaluate and against which attributes.
#[derive(Clone, Debug)]
pub struct EvalSpec<'a> {
    pub mode: OutcomeMode,
    /// Attribute used by CI, F_G and F_CG.
    pub group: &'a GroupLabels,
    /// Attributes crossed for F_∩; defaults to `group` alone when empty.
    pub intersect: Vec<&'a GroupLabels>,
    pub gamma: f64,
}

fn soft<T: Scalar>(r: Result<T>, name: &str) -> f64 {
    match r {
        Ok(v) => v.as_f64(),
        Err(e) => {
            log::warn!("{name} undefined: {e}");
            f64::NAN
        }
    }
}

fn average(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// All metrics for one model on one evaluation set. Metrics that are undefined on the
/// set (for example a group without comparable pairs) are reported as NaN.
pub fn metrics_report<T: Scalar>(ds: &SurvivalDataset<T>, pred: &SurvivalPrediction<T>, spec: &EvalSpec<'_>) -> Result<MetricsReport> {
    if pred.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), actual: pred.len() });
    }
    let gamma = T::of(spec.gamma);
    let labels = &spec.group.labels;
    let cross: Vec<&[String]> = if spec.intersect.is_empty() {
        vec![labels.as_slice()]
    } else {
        spec.intersect.iter().map(|g| g.labels.as_slice()).collect()
    };
    let times = percentile_times(ds.times());
    let max_t = ds.times().iter().copied().fold(T::neg_infinity(), T::max);
    let ibs_points: Vec<T> = pred.grid.points().iter().copied().filter(|&t| t <= max_t).collect();
    let ibs_grid = TimeGrid::new(ibs_points).unwrap_or_else(|_| pred.grid.clone());

    let ctd = soft(concordance_td(ds, pred).map(T::of), "C^td");
    let ibs = soft(ibs(ds, pred, &ibs_grid), "IBS");
    let surv_at: Vec<Vec<T>> = times.iter().map(|&t| pred.survival_column(t)).collect();
    let f_ci = average(&surv_at.iter().map(|s| soft(fairness_censoring_individual(ds, s, gamma), "F_CI")).collect::<Vec<_>>());
    let f_cg =
        average(&surv_at.iter().map(|s| soft(fairness_censoring_group(ds, s, labels, gamma), "F_CG")).collect::<Vec<_>>());
    let (ci_pct, f_i, f_g, f_cap) = match spec.mode {
        OutcomeMode::Hazard => {
            let h: Vec<T> = pred.risk.iter().map(|f| f.exp()).collect();
            (
                soft(concordance_imparity(ds, &pred.risk, labels).map(T::of), "CI"),
                fairness_individual(ds, &h, gamma).as_f64(),
                soft(fairness_group(&h, labels), "F_G"),
                soft(fairness_intersectional(&h, &cross), "F_∩"),
            )
        }
        OutcomeMode::Survival => {
            let per_time = |f: &dyn Fn(&[T]) -> f64| average(&surv_at.iter().map(|s| f(s)).collect::<Vec<_>>());
            (
                per_time(&|s| {
                    let risk: Vec<T> = s.iter().map(|&v| T::one() - v).collect();
                    soft(concordance_imparity(ds, &risk, labels).map(T::of), "CI")
                }),
                per_time(&|s| fairness_individual(ds, s, gamma).as_f64()),
                per_time(&|s| soft(fairness_group(s, labels), "F_G")),
                per_time(&|s| soft(fairness_intersectional(s, &cross), "F_∩")),
            )
        }
    };
    Ok(MetricsReport { ctd, ibs, ci_pct, f_i, f_g, f_cap, f_ci, f_cg })
}
