//! Survival datasets, CSV ingestion, time grids and the index maps onto them,
//! and censoring-stratified splitting.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One named categorical attribute with a label per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLabels {
    pub name: String,
    pub labels: Vec<String>,
}

/// Feature matrix (row-major), observed times, event codes and optional group labels.
///
/// Event code `0` means censored; codes `1..=max_event` name the event that occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset<T> {
    features: Vec<T>,
    n: usize,
    d: usize,
    times: Vec<T>,
    events: Vec<u32>,
    max_event: u32,
    groups: Vec<GroupLabels>,
}

impl<T: Scalar> SurvivalDataset<T> {
    pub fn new(rows: Vec<Vec<T>>, times: Vec<T>, events: Vec<u32>) -> Result<Self> {
        let max_event = events.iter().copied().max().unwrap_or(1).max(1);
        Self::with_max_event(rows, times, events, max_event)
    }

    pub fn with_max_event(
        rows: Vec<Vec<T>>,
        times: Vec<T>,
        events: Vec<u32>,
        max_event: u32,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::Validation("dataset must contain at least one row".into()));
        }
        if rows.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: rows.len() });
        }
        if events.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: events.len() });
        }
        if max_event < 1 {
            return Err(Error::Validation("max_event must be at least 1".into()));
        }
        let d = rows[0].len();
        let mut features = Vec::with_capacity(n * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::Validation(format!(
                    "row {i} has {} features, expected {d}",
                    row.len()
                )));
            }
            features.extend(row);
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < T::zero() {
                return Err(Error::Validation(format!("time at row {i} must be finite and >= 0, got {t}")));
            }
        }
        for (i, &e) in events.iter().enumerate() {
            if e > max_event {
                return Err(Error::Validation(format!(
                    "event code {e} at row {i} outside 0..={max_event}"
                )));
            }
        }
        Ok(Self { features, n, d, times, events, max_event, groups: Vec::new() })
    }

    /// Attaches a categorical attribute. Replaces an existing attribute of the same name.
    pub fn with_group(mut self, name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: labels.len() });
        }
        let name = name.into();
        self.groups.retain(|g| g.name != name);
        self.groups.push(GroupLabels { name, labels });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn events(&self) -> &[u32] {
        &self.events
    }

    pub fn time(&self, i: usize) -> T {
        self.times[i]
    }

    pub fn event(&self, i: usize) -> u32 {
        self.events[i]
    }

    pub fn is_event(&self, i: usize) -> bool {
        self.events[i] != 0
    }

    pub fn max_event(&self) -> u32 {
        self.max_event
    }

    pub fn groups(&self) -> &[GroupLabels] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&GroupLabels> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn censoring_rate(&self) -> f64 {
        self.events.iter().filter(|&&e| e == 0).count() as f64 / self.n as f64
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            n: idx.len(),
            d: self.d,
            times: idx.iter().map(|&i| self.times[i]).collect(),
            events: idx.iter().map(|&i| self.events[i]).collect(),
            max_event: self.max_event,
            groups: self
                .groups
                .iter()
                .map(|g| GroupLabels {
                    name: g.name.clone(),
                    labels: idx.iter().map(|&i| g.labels[i].clone()).collect(),
                })
                .collect(),
        }
    }

    /// Same data with replaced observed times.
    pub fn with_times(&self, times: Vec<T>) -> Result<Self> {
        if times.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: times.len() });
        }
        let mut out = self.clone();
        out.times = times;
        Ok(out)
    }

    /// Row-major feature matrix.
    pub fn features_flat(&self) -> &[T] {
        &self.features
    }

    /// Euclidean distance between the feature rows of `i` and `j`.
    pub fn feature_distance(&self, i: usize, j: usize) -> T {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }
}

/// Column layout of a survival CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time_col: String,
    pub event_col: String,
    pub feature_cols: Vec<String>,
    #[serde(default)]
    pub group_cols: Vec<String>,
    /// z-standardize each feature column (population std).
    #[serde(default)]
    pub standardize: bool,
    #[serde(default = "default_max_event")]
    pub max_event: u32,
}

fn default_max_event() -> u32 {
    1
}

impl CsvSchema {
    pub fn new(time_col: &str, event_col: &str, feature_cols: &[&str]) -> Self {
        Self {
            time_col: time_col.into(),
            event_col: event_col.into(),
            feature_cols: feature_cols.iter().map(|s| s.to_string()).collect(),
            group_cols: Vec::new(),
            standardize: false,
            max_event: 1,
        }
    }
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurvivalDataset<T>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Reads a comma-separated, header-first, UTF-8 survival table.
pub fn read_csv<T: Scalar, R: Read>(reader: R, schema: &CsvSchema) -> Result<SurvivalDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let time_idx = col(&schema.time_col)?;
    let event_idx = col(&schema.event_col)?;
    let feat_idx = schema.feature_cols.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let group_idx = schema.group_cols.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); group_idx.len()];

    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let parse_real = |idx: usize, name: &str| -> Result<T> {
            let raw = cell(idx);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::of)
                .ok_or_else(|| Error::Parse {
                    row: row_no,
                    column: name.to_string(),
                    message: format!("`{raw}` is not a finite number"),
                })
        };
        let t = parse_real(time_idx, &schema.time_col)?;
        if t < T::zero() {
            return Err(Error::Validation(format!("negative time {t} at data row {row_no}")));
        }
        let raw_event = cell(event_idx);
        let e = parse_event(raw_event).ok_or_else(|| Error::Parse {
            row: row_no,
            column: schema.event_col.clone(),
            message: format!("`{raw_event}` is not an integer event code"),
        })?;
        if e < 0 || e > i64::from(schema.max_event) {
            return Err(Error::Validation(format!(
                "event code {e} at data row {row_no} outside 0..={}",
                schema.max_event
            )));
        }
        let x = feat_idx
            .iter()
            .zip(&schema.feature_cols)
            .map(|(&i, name)| parse_real(i, name))
            .collect::<Result<Vec<_>>>()?;
        for (g, &i) in groups.iter_mut().zip(&group_idx) {
            g.push(cell(i).to_string());
        }
        rows.push(x);
        times.push(t);
        events.push(e as u32);
    }
    if rows.is_empty() {
        return Err(Error::Validation("CSV contains no data rows".into()));
    }
    if schema.standardize {
        standardize_columns(&mut rows);
    }
    let mut ds = SurvivalDataset::with_max_event(rows, times, events, schema.max_event)?;
    for (name, labels) in schema.group_cols.iter().zip(groups) {
        ds = ds.with_group(name.clone(), labels)?;
    }
    Ok(ds)
}

fn parse_event(raw: &str) -> Option<i64> {
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    let v = raw.parse::<f64>().ok()?;
    (v.is_finite() && v.fract() == 0.0).then_some(v as i64)
}

/// Column-wise z-scores with population standard deviation; constant columns become 0.
pub fn standardize_columns<T: Scalar>(rows: &mut [Vec<T>]) {
    let n = rows.len();
    if n == 0 {
        return;
    }
    let d = rows[0].len();
    let nf = T::of_usize(n);
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<T>() / nf;
        let var = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<T>() / nf;
        let sd = var.sqrt();
        for r in rows.iter_mut() {
            r[j] = if sd > T::zero() { (r[j] - mean) / sd } else { T::zero() };
        }
    }
}

/// Strictly increasing positive time points `t_1 < … < t_m`, with implicit origin `t_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    points: Vec<T>,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(points: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("time grid needs at least one point".into()));
        }
        if !(points[0] > T::zero()) {
            return Err(Error::Validation(format!("first grid point must be > 0, got {}", points[0])));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("grid points must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// Distinct sorted observed values of `times`, keeping only positive ones.
    pub fn from_times(times: impl IntoIterator<Item = T>) -> Result<Self> {
        let mut v: Vec<T> = times.into_iter().filter(|&t| t > T::zero()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        v.dedup();
        Self::new(v)
    }

    /// Up to `m` distinct empirical quantiles (evenly spaced levels in `[0,1]`) of the observed times.
    pub fn quantiles(ds: &SurvivalDataset<T>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Validation("quantile grid size must be >= 1".into()));
        }
        let mut sorted: Vec<T> = ds.times().iter().copied().filter(|&t| t > T::zero()).collect();
        if sorted.is_empty() {
            return Err(Error::Validation("no positive observed times".into()));
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        let levels: Vec<f64> = if m == 1 {
            vec![1.0]
        } else {
            (0..m).map(|k| k as f64 / (m - 1) as f64).collect()
        };
        Self::from_times(levels.into_iter().map(|q| quantile_sorted(&sorted, q)))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    /// `t_ℓ` for `ℓ ∈ 0..=m`, with `t_0 = 0`.
    pub fn point(&self, l: usize) -> T {
        if l == 0 {
            T::zero()
        } else {
            self.points[l - 1]
        }
    }

    /// `max{ℓ : t_ℓ ≤ t}`, 0 when `t < t_1`.
    pub fn index_at_or_before(&self, t: T) -> usize {
        self.count_le(t)
    }

    fn count_le(&self, t: T) -> usize {
        self.points.partition_point(|&p| p <= t)
    }

    /// Number of grid points `< t`.
    fn count_lt(&self, t: T) -> usize {
        self.points.partition_point(|&p| p < t)
    }

    /// Quantization of `t ≥ t_1` to a 1-based index: the matching point if `t` is on
    /// the grid, otherwise the last point strictly below `t`.
    pub fn kappa(&self, t: T) -> Result<usize> {
        if t < self.points[0] {
            return Err(Error::Domain(format!("time {t} below first grid point {}", self.points[0])));
        }
        Ok(self.count_le(t))
    }

    /// [`kappa`](Self::kappa) with times below `t_1` clamped to index 1.
    pub fn kappa_clamped(&self, t: T) -> usize {
        self.count_le(t).max(1)
    }

    /// Event-aware index in `0..=m`: events map to their exact grid point, censored
    /// times to the last grid point strictly before them (0 if none).
    pub fn kappa_with_event(&self, y: T, event: bool) -> Result<usize> {
        if event {
            let l = self.count_le(y);
            if l == 0 || self.points[l - 1] != y {
                return Err(Error::Domain(format!("event time {y} is not a grid point")));
            }
            Ok(l)
        } else {
            Ok(self.count_lt(y))
        }
    }
}

/// Linear-interpolated empirical quantile of an ascending slice (`q ∈ [0,1]`).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Sorted distinct times of the uncensored rows.
pub fn event_time_grid<T: Scalar>(ds: &SurvivalDataset<T>) -> Result<TimeGrid<T>> {
    let mut v: Vec<T> = (0..ds.n()).filter(|&i| ds.is_event(i)).map(|i| ds.time(i)).collect();
    if v.is_empty() {
        return Err(Error::NoEvents);
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    v.dedup();
    if v[0] <= T::zero() {
        return Err(Error::Validation("event times must be positive to form a grid".into()));
    }
    TimeGrid::new(v)
}

/// Moves every censored time down to the last event-grid point at or before it (0 if none).
///
/// A censored time that coincides with an event time is kept, so the subject stays in
/// that time's risk set and snapping is idempotent.
pub fn snap_censored_times<T: Scalar>(ds: &SurvivalDataset<T>, grid: &TimeGrid<T>) -> SurvivalDataset<T> {
    let times = (0..ds.n())
        .map(|i| if ds.is_event(i) { ds.time(i) } else { grid.point(grid.index_at_or_before(ds.time(i))) })
        .collect();
    ds.with_times(times).expect("length preserved")
}

/// Two disjoint index sets covering a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn folds(&self) -> Vec<Vec<usize>> {
        vec![self.d1.clone(), self.d2.clone()]
    }
}

fn shuffled_strata<T: Scalar>(ds: &SurvivalDataset<T>, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut censored: Vec<usize> = (0..ds.n()).filter(|&i| !ds.is_event(i)).collect();
    let mut uncensored: Vec<usize> = (0..ds.n()).filter(|&i| ds.is_event(i)).collect();
    censored.shuffle(&mut rng);
    uncensored.shuffle(&mut rng);
    (censored, uncensored)
}

/// Seeded split placing `fraction` of the rows in `d1`, censored and uncensored rows
/// partitioned separately so both halves keep (nearly) the same censoring rate.
pub fn stratified_split<T: Scalar>(ds: &SurvivalDataset<T>, fraction: f64, seed: u64) -> Result<SplitAssignment> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!("split fraction must lie in (0,1), got {fraction}")));
    }
    let n = ds.n();
    let (censored, uncensored) = shuffled_strata(ds, seed);
    let target = (fraction * n as f64).round() as usize;
    let n_c = ((fraction * censored.len() as f64).round() as usize).min(target);
    let n_u = target.saturating_sub(n_c).min(uncensored.len());
    let mut d1: Vec<usize> = censored[..n_c].iter().chain(&uncensored[..n_u]).copied().collect();
    let mut d2: Vec<usize> = censored[n_c..].iter().chain(&uncensored[n_u..]).copied().collect();
    if d1.is_empty() || d2.is_empty() {
        return Err(Error::Validation(format!(
            "split of {n} rows at fraction {fraction} leaves one side empty"
        )));
    }
    d1.sort_unstable();
    d2.sort_unstable();
    Ok(SplitAssignment { d1, d2, seed })
}

/// Seeded K-fold partition dealing censored then uncensored rows round-robin.
pub fn stratified_kfold<T: Scalar>(ds: &SurvivalDataset<T>, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > ds.n() {
        return Err(Error::Validation(format!("cannot make {k} folds from {} rows", ds.n())));
    }
    let (censored, uncensored) = shuffled_strata(ds, seed);
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in censored.into_iter().chain(uncensored).enumerate() {
        folds[pos % k].push(i);
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Checks that `folds` partition `0..n`.
pub fn validate_partition(folds: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for f in folds {
        if f.is_empty() {
            return Err(Error::Validation("empty fold".into()));
        }
        for &i in f {
            if i >= n || !seen.insert(i) {
                return Err(Error::Validation(format!("index {i} repeated or out of range")));
            }
        }
    }
    if seen.len() != n {
        return Err(Error::Validation("folds do not cover every row".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(times: &[f64], events: &[u32]) -> SurvivalDataset<f64> {
        let rows = times.iter().map(|_| vec![0.0]).collect();
        SurvivalDataset::new(rows, times.to_vec(), events.to_vec()).unwrap()
    }

    #[test]
    fn reads_three_row_file() {
        let csv = "x1,time,event\n0,1.0,1\n1,2.0,0\n2,3.0,1\n";
        let schema = CsvSchema::new("time", "event", &["x1"]);
        let d: SurvivalDataset<f64> = read_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!((d.n(), d.d()), (3, 1));
        assert!((d.censoring_rate() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.row(2), &[2.0]);
        assert_eq!(d.events(), &[1, 0, 1]);
    }

    #[test]
    fn non_integer_event_names_row() {
        let csv = "x1,time,event\n0,1.0,1\n1,2.0,yes\n";
        let schema = CsvSchema::new("time", "event", &["x1"]);
        match read_csv::<f64, _>(csv.as_bytes(), &schema) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "event");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejections() {
        let schema = CsvSchema::new("time", "event", &["x1"]);
        let missing = "x2,time,event\n0,1,1\n";
        assert!(matches!(read_csv::<f64, _>(missing.as_bytes(), &schema), Err(Error::Schema(_))));
        let negative = "x1,time,event\n0,-1,1\n";
        assert!(matches!(read_csv::<f64, _>(negative.as_bytes(), &schema), Err(Error::Validation(_))));
        let bad_code = "x1,time,event\n0,1,2\n";
        assert!(matches!(read_csv::<f64, _>(bad_code.as_bytes(), &schema), Err(Error::Validation(_))));
        let bad_feature = "x1,time,event\nabc,1,1\n";
        assert!(matches!(
            read_csv::<f64, _>(bad_feature.as_bytes(), &schema),
            Err(Error::Parse { row: 1, .. })
        ));
        let empty_cell = "x1,time,event\n,1,1\n";
        assert!(matches!(read_csv::<f64, _>(empty_cell.as_bytes(), &schema), Err(Error::Parse { .. })));
    }

    #[test]
    fn standardization_uses_population_std() {
        let csv = "x1,x2,time,event,sex\n0,5,1,1,f\n1,5,2,0,m\n2,5,3,1,f\n";
        let mut schema = CsvSchema::new("time", "event", &["x1", "x2"]);
        schema.standardize = true;
        schema.group_cols = vec!["sex".into()];
        let d: SurvivalDataset<f64> = read_csv(csv.as_bytes(), &schema).unwrap();
        let s = (2.0_f64 / 3.0).sqrt();
        assert!((d.row(0)[0] + 1.0 / s).abs() < 1e-12);
        assert!((d.row(0)[0] + 1.224744871391589).abs() < 1e-12);
        assert_eq!(d.row(1)[0], 0.0);
        assert!((d.row(2)[0] - 1.224744871391589).abs() < 1e-12);
        assert!(d.row(0)[1] == 0.0 && d.row(2)[1] == 0.0);
        assert_eq!(d.group("sex").unwrap().labels, vec!["f", "m", "f"]);
    }

    #[test]
    fn event_grid_dedups_and_sorts() {
        let g = event_time_grid(&ds(&[1.0, 2.0, 2.0, 3.0], &[1, 0, 1, 1])).unwrap();
        assert_eq!(g.points(), &[1.0, 2.0, 3.0]);
        let g = event_time_grid(&ds(&[5.0, 5.0], &[1, 1])).unwrap();
        assert_eq!(g.points(), &[5.0]);
        assert!(matches!(event_time_grid(&ds(&[1.0, 2.0], &[0, 0])), Err(Error::NoEvents)));
    }

    #[test]
    fn kappa_branches() {
        let g = TimeGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.kappa(2.0).unwrap(), 2);
        assert_eq!(g.kappa(2.5).unwrap(), 2);
        assert_eq!(g.kappa(10.0).unwrap(), 3);
        assert!(matches!(g.kappa(0.5), Err(Error::Domain(_))));
        assert_eq!(g.kappa_clamped(0.5), 1);
    }

    #[test]
    fn kappa_with_event_branches() {
        let g = TimeGrid::new(vec![1.0, 3.0]).unwrap();
        assert_eq!(g.kappa_with_event(3.0, true).unwrap(), 2);
        assert_eq!(g.kappa_with_event(2.0, false).unwrap(), 1);
        assert_eq!(g.kappa_with_event(0.5, false).unwrap(), 0);
        // censored exactly at a grid point: last point strictly before it
        assert_eq!(g.kappa_with_event(3.0, false).unwrap(), 1);
        assert!(g.kappa_with_event(2.0, true).is_err());
    }

    #[test]
    fn snapping_examples() {
        let d = ds(&[1.0, 3.0, 2.0, 0.5, 3.0], &[1, 1, 0, 0, 0]);
        let g = event_time_grid(&d).unwrap();
        let s = snap_censored_times(&d, &g);
        assert_eq!(s.times(), &[1.0, 3.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn exact_stratification() {
        let events = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let times: Vec<f64> = (1..=10).map(f64::from).collect();
        let d = ds(&times, &events);
        let s = stratified_split(&d, 0.5, 7).unwrap();
        let count_c = |idx: &[usize]| idx.iter().filter(|&&i| events[i] == 0).count();
        assert_eq!((count_c(&s.d1), s.d1.len() - count_c(&s.d1)), (2, 3));
        assert_eq!((count_c(&s.d2), s.d2.len() - count_c(&s.d2)), (2, 3));
        assert_eq!(s, stratified_split(&d, 0.5, 7).unwrap());
        assert!(stratified_split(&d, 1.0, 7).is_err());
        assert!(stratified_split(&d, 0.0, 7).is_err());
    }

    #[test]
    fn split_rates_close_over_seeds() {
        use rand::Rng;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let events: Vec<u32> = (0..100).map(|_| u32::from(rng.random::<f64>() < 0.6)).collect();
            let times: Vec<f64> = (0..100).map(|i| 1.0 + i as f64).collect();
            let d = ds(&times, &events);
            let s = stratified_split(&d, 0.5, seed).unwrap();
            let rate = |idx: &[usize]| idx.iter().filter(|&&i| events[i] == 0).count() as f64 / idx.len() as f64;
            assert!((rate(&s.d1) - rate(&s.d2)).abs() <= 0.02 + 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn kfold_partitions() {
        let times: Vec<f64> = (1..=11).map(f64::from).collect();
        let events = [1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1];
        let folds = stratified_kfold(&ds(&times, &events), 3, 1).unwrap();
        validate_partition(&folds, 11).unwrap();
        assert!(folds.iter().all(|f| f.len() >= 3));
    }

    #[test]
    fn quantile_grid_is_valid() {
        let d = ds(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1, 0, 1, 1, 0]);
        let g = TimeGrid::quantiles(&d, 3).unwrap();
        assert_eq!(g.points(), &[1.0, 3.0, 5.0]);
    }

    proptest! {
        #[test]
        fn kappa_exact_on_grid_and_monotone(mut pts in proptest::collection::vec(0.01f64..100.0, 1..20),
                                             a in 0.0f64..120.0, b in 0.0f64..120.0) {
            pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            pts.dedup();
            let g = TimeGrid::new(pts.clone()).unwrap();
            for (l, &p) in pts.iter().enumerate() {
                prop_assert_eq!(g.kappa(p).unwrap(), l + 1);
                prop_assert_eq!(g.kappa_with_event(p, true).unwrap(), l + 1);
            }
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(g.kappa_clamped(lo) <= g.kappa_clamped(hi));
            prop_assert!(g.kappa_with_event(lo, false).unwrap() <= g.kappa_with_event(hi, false).unwrap());
        }

        #[test]
        fn snapping_is_idempotent(times in proptest::collection::vec(0.0f64..10.0, 2..30),
                                  flags in proptest::collection::vec(any::<bool>(), 30)) {
            let mut events: Vec<u32> = times.iter().zip(&flags).map(|(_, &f)| u32::from(f)).collect();
            events[0] = 1;
            let times: Vec<f64> = times.iter().map(|t| t + 0.1).collect();
            let d = ds(&times, &events);
            let g = event_time_grid(&d).unwrap();
            let once = snap_censored_times(&d, &g);
            let twice = snap_censored_times(&once, &g);
            prop_assert_eq!(once.times(), twice.times());
        }

        #[test]
        fn split_is_partition(n in 2usize..60, seed in any::<u64>(), frac in 0.1f64..0.9) {
            let times: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let events: Vec<u32> = (0..n).map(|i| (i % 3 != 0) as u32).collect();
            let d = ds(&times, &events);
            if let Ok(s) = stratified_split(&d, frac, seed) {
                validate_partition(&s.folds(), n).unwrap();
                prop_assert_eq!(&s, &stratified_split(&d, frac, seed).unwrap());
            }
        }
    }
}
