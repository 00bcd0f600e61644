//! Repeated train/validate/test experiments and α sweeps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use survdro::data::{load_csv, stratified_split, GroupLabels, TimeGrid};
use survdro::dro::{scores_of, train_dro, train_exact_dro_cox, train_split_dro, DroConfig};
use survdro::losses::{point_losses, DeepHitConfig, LossSpec};
use survdro::metrics::{breslow_baseline, metrics_report, EvalSpec, MetricsReport, OutcomeMode, SurvivalPrediction};
use survdro::nn::{ModelParams, ModelSpec};
use survdro::train::{train_regularized, write_log_csv, Candidate, LogRow, TrainConfig};
use survdro::{Dataset, Error, Result};

use crate::config::{ExperimentConfig, Method, ModelChoice, TuneMetric};
use crate::format::fmt6;

/// Hyperparameters of one candidate run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub learning_rate: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
}

/// A trained model together with the loss it was trained under.
pub struct Fitted {
    pub params: ModelParams<f64>,
    pub loss: LossSpec<f64>,
    pub log: Vec<LogRow>,
}

/// Dataset plus the held-out test rows and the per-repeat pool.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub pool: Dataset,
    pub test: Dataset,
}

impl Experiment {
    pub fn load(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let ds: Dataset = load_csv(&cfg.dataset.path, &cfg.dataset.schema)?;
        let split = stratified_split(&ds, 1.0 - cfg.test_fraction, cfg.train.seed)?;
        Ok(Self { pool: ds.subset(&split.d1), test: ds.subset(&split.d2), cfg })
    }

    /// Training and validation rows of repeat `r`.
    pub fn repeat_split(&self, r: usize) -> Result<(Dataset, Dataset)> {
        let seed = self.cfg.train.seed.wrapping_add(1 + r as u64);
        let split = stratified_split(&self.pool, 1.0 - self.cfg.val_fraction, seed)?;
        Ok((self.pool.subset(&split.d1), self.pool.subset(&split.d2)))
    }

    fn group<'a>(&self, ds: &'a Dataset) -> Result<&'a GroupLabels> {
        let name = self.cfg.group_attribute().expect("validated");
        ds.group(&name).ok_or_else(|| Error::Config(format!("unknown group attribute `{name}`")))
    }

    fn outcome_mode(&self) -> OutcomeMode {
        if self.cfg.model.is_cox() {
            OutcomeMode::Hazard
        } else {
            OutcomeMode::Survival
        }
    }

    fn model_spec(&self, d: usize, out: usize) -> ModelSpec {
        match self.cfg.model {
            ModelChoice::CoxLinear => ModelSpec::linear(d),
            ModelChoice::CoxMlp => ModelSpec::mlp_scalar(d, &self.cfg.hidden_layers()),
            ModelChoice::Deephit => ModelSpec::mlp_simplex(d, &self.cfg.hidden_layers(), out),
        }
    }

    fn loss_for(&self, train: &Dataset) -> Result<LossSpec<f64>> {
        if self.cfg.model.is_cox() {
            return Ok(LossSpec::Cox);
        }
        let s = &self.cfg.deephit;
        let grid = TimeGrid::quantiles(train, s.grid_size)?;
        let cfg = DeepHitConfig::new(s.beta, s.sigma, grid, train.n())?.with_event_weights(s.event_weights.clone());
        Ok(LossSpec::DeepHit(cfg))
    }

    /// Trains `method` on `train` with the given hyperparameters and repeat index.
    pub fn fit(&self, method: Method, hyper: Hyper, train: &Dataset, r: usize) -> Result<Fitted> {
        let loss = self.loss_for(train)?;
        let out = match &loss {
            LossSpec::DeepHit(c) => c.m() * train.max_event() as usize,
            _ => 1,
        };
        let spec = self.model_spec(train.d(), out);
        let tc = TrainConfig {
            learning_rate: hyper.learning_rate,
            seed: self.cfg.train.seed.wrapping_add(r as u64),
            regularizer: method.regularizer(),
            lambda: hyper.lambda.unwrap_or(0.0),
            ..self.cfg.train.clone()
        };
        let dro = DroConfig {
            alpha: hyper.alpha.unwrap_or(self.cfg.dro.alpha),
            seed: self.cfg.dro.seed.wrapping_add(r as u64),
            ..self.cfg.dro.clone()
        };
        let outcome = match method {
            Method::Erm | Method::RegFi | Method::RegFg | Method::RegFci | Method::RegFcg => {
                let partition = if tc.regularizer.needs_partition() { Some(self.group(train)?) } else { None };
                train_regularized(train, &spec, &loss, &tc, partition)?
            }
            Method::Dro => train_dro(train, &spec, &loss, &dro, &tc)?,
            Method::DroSplit => train_split_dro(train, &spec, &loss, &dro, &tc)?,
            Method::DroExactCox => train_exact_dro_cox(train, &spec, &dro, &tc)?,
        };
        Ok(Fitted { params: outcome.params, loss, log: outcome.log })
    }

    /// Survival predictions of `fitted` on `eval`; Cox baselines come from `train`.
    pub fn predict(&self, fitted: &Fitted, train: &Dataset, eval: &Dataset) -> Result<SurvivalPrediction<f64>> {
        match &fitted.loss {
            LossSpec::DeepHit(c) => {
                let pmfs = (0..eval.n()).map(|i| fitted.params.simplex(eval.row(i))).collect::<Result<Vec<_>>>()?;
                SurvivalPrediction::from_pmfs(c.grid.clone(), &pmfs, eval.times())
            }
            _ => {
                let baseline = breslow_baseline(train, &scores_of(train, &fitted.params)?)?;
                Ok(SurvivalPrediction::cox(&scores_of(eval, &fitted.params)?, &baseline))
            }
        }
    }

    pub fn evaluate(&self, fitted: &Fitted, train: &Dataset, eval: &Dataset) -> Result<MetricsReport> {
        let pred = self.predict(fitted, train, eval)?;
        self.report(eval, &pred)
    }

    fn report(&self, eval: &Dataset, pred: &SurvivalPrediction<f64>) -> Result<MetricsReport> {
        let intersect = self
            .cfg
            .intersect
            .iter()
            .map(|g| eval.group(g).ok_or_else(|| Error::Config(format!("unknown group attribute `{g}`"))))
            .collect::<Result<Vec<_>>>()?;
        let spec = EvalSpec { mode: self.outcome_mode(), group: self.group(eval)?, intersect, gamma: self.cfg.train.gamma };
        metrics_report(eval, pred, &spec)
    }

    /// Largest per-group mean of the per-point training loss evaluated on `eval`.
    pub fn worst_group_loss(&self, fitted: &Fitted, eval: &Dataset) -> Result<f64> {
        let loss = match &fitted.loss {
            LossSpec::DeepHit(c) => LossSpec::DeepHit(DeepHitConfig { n: eval.n(), ..c.clone() }),
            _ => LossSpec::Cox,
        };
        let all: Vec<usize> = (0..eval.n()).collect();
        let params = &fitted.params;
        let u = point_losses(&params.spec, &params.theta, None, eval, &all, &all, &loss)?;
        let labels = &self.group(eval)?.labels;
        let mut sums: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
        for (l, v) in labels.iter().zip(&u) {
            let e = sums.entry(l.as_str()).or_default();
            e.0 += v;
            e.1 += 1;
        }
        Ok(sums.values().map(|(s, c)| s / *c as f64).fold(f64::NEG_INFINITY, f64::max))
    }

    fn candidates(&self, method: Method) -> Vec<Hyper> {
        let mut out = Vec::new();
        for &learning_rate in &self.cfg.learning_rate_grid() {
            match method {
                m if m.is_dro() => {
                    out.extend(self.cfg.alpha_grid().into_iter().map(|a| Hyper { learning_rate, alpha: Some(a), lambda: None }))
                }
                Method::Erm => out.push(Hyper { learning_rate, alpha: None, lambda: None }),
                _ => out
                    .extend(self.cfg.lambda_grid().into_iter().map(|l| Hyper { learning_rate, alpha: None, lambda: Some(l) })),
            }
        }
        out
    }

    fn validation_scores(&self, method: Method, hyper: Hyper, train: &Dataset, val: &Dataset, r: usize) -> Result<(Fitted, f64, f64)> {
        let fitted = self.fit(method, hyper, train, r)?;
        let report = self.evaluate(&fitted, train, val)?;
        let fairness = match self.cfg.tune_metric {
            TuneMetric::Ci => report.ci_pct,
            TuneMetric::FCg => report.f_cg,
        };
        Ok((fitted, report.ctd, fairness))
    }

    /// One repeat: tune on the validation rows, then report on the test rows.
    pub fn run_repeat(&self, r: usize) -> RepeatResult {
        let (train, val) = match self.repeat_split(r) {
            Ok(s) => s,
            Err(e) => return RepeatResult::failed(r, e),
        };
        let method = self.cfg.method;
        let hypers = self.candidates(method);
        let runs: Vec<Result<(Fitted, f64, f64)>> =
            hypers.par_iter().map(|&h| self.validation_scores(method, h, &train, &val, r)).collect();
        let reference = if method == Method::Erm {
            runs.iter().filter_map(|x| x.as_ref().ok().map(|x| x.1)).fold(f64::NAN, f64::max)
        } else {
            self.candidates(Method::Erm)
                .par_iter()
                .map(|&h| self.validation_scores(Method::Erm, h, &train, &val, r).map(|x| x.1).unwrap_or(f64::NAN))
                .collect::<Vec<_>>()
                .into_iter()
                .fold(f64::NAN, f64::max)
        };
        let mut rows = Vec::with_capacity(hypers.len());
        let mut ok = Vec::new();
        let mut fitted = Vec::new();
        for (h, run) in hypers.iter().zip(runs) {
            match run {
                Ok((f, ctd, fair)) => {
                    rows.push(TuningRow { hyper: *h, val_ctd: ctd, val_fairness: fair, status: "ok".into(), selected: false });
                    ok.push((rows.len() - 1, Candidate { hyperparams: *h, val_ctd: ctd, val_fairness: fair }));
                    fitted.push(f);
                }
                Err(e) => {
                    log::warn!("repeat {r}: candidate {h:?} failed: {e}");
                    rows.push(TuningRow { hyper: *h, val_ctd: f64::NAN, val_fairness: f64::NAN, status: e.to_string(), selected: false });
                }
            }
        }
        let cands: Vec<Candidate<Hyper>> = ok.iter().map(|(_, c)| c.clone()).collect();
        let selection = match survdro::train::tune(&cands, reference) {
            Ok(s) => s,
            Err(_) => {
                let err = Error::Training { iteration: 0, message: "every candidate failed".into() };
                return RepeatResult { tuning: rows, reference, ..RepeatResult::failed(r, err) };
            }
        };
        rows[ok[selection.index].0].selected = true;
        let chosen = fitted.swap_remove(selection.index);
        let outcome = self.evaluate(&chosen, &train, &self.test).and_then(|m| {
            let pred = self.predict(&chosen, &train, &self.test)?;
            Ok((m, pred))
        });
        match outcome {
            Ok((metrics, pred)) => RepeatResult {
                repeat: r,
                status: Ok(()),
                hyper: Some(cands[selection.index].hyperparams),
                flagged: selection.flagged,
                metrics: metrics.values(),
                reference,
                tuning: rows,
                fitted: Some(chosen),
                prediction: Some(pred),
            },
            Err(e) => RepeatResult { tuning: rows, reference, ..RepeatResult::failed(r, e) },
        }
    }
}

pub struct TuningRow {
    pub hyper: Hyper,
    pub val_ctd: f64,
    pub val_fairness: f64,
    pub status: String,
    pub selected: bool,
}

pub struct RepeatResult {
    pub repeat: usize,
    pub status: std::result::Result<(), String>,
    pub hyper: Option<Hyper>,
    pub flagged: bool,
    pub metrics: [f64; 8],
    pub reference: f64,
    pub tuning: Vec<TuningRow>,
    pub fitted: Option<Fitted>,
    pub prediction: Option<SurvivalPrediction<f64>>,
}

impl RepeatResult {
    fn failed(repeat: usize, e: Error) -> Self {
        log::warn!("repeat {repeat} failed: {e}");
        Self {
            repeat,
            status: Err(e.to_string()),
            hyper: None,
            flagged: false,
            metrics: [f64::NAN; 8],
            reference: f64::NAN,
            tuning: Vec::new(),
            fitted: None,
            prediction: None,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

/// Value as written to disk, so summaries recompute exactly from the rows.
fn rounded(v: f64) -> f64 {
    fmt6(v).parse().unwrap_or(f64::NAN)
}

/// Mean and sample standard deviation of the finite values.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (mean, std)
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?)))
}

/// Writes test-set predictions in the format read by `evaluate`.
pub fn write_predictions(path: &Path, ds: &Dataset, pred: &SurvivalPrediction<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["time".to_string(), "event".to_string(), "risk".to_string()];
    header.extend(ds.groups().iter().map(|g| g.name.clone()));
    header.extend((0..ds.d()).map(|j| format!("x_{j}")));
    header.extend(pred.grid.points().iter().map(|t| format!("s_{t}")));
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec = vec![ds.time(i).to_string(), ds.event(i).to_string(), pred.risk[i].to_string()];
        rec.extend(ds.groups().iter().map(|g| g.labels[i].clone()));
        rec.extend(ds.row(i).iter().map(|v| v.to_string()));
        rec.extend(pred.survival[i].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every repeat and writes `metrics.csv`, `summary.csv`, `tuning.csv`, and per-repeat
/// logs, models and predictions. Returns the number of failed repeats.
pub fn run(exp: &Experiment) -> Result<usize> {
    let out = &exp.cfg.out;
    std::fs::create_dir_all(out)?;
    let results: Vec<RepeatResult> = (0..exp.cfg.repeats).into_par_iter().map(|r| exp.run_repeat(r)).collect();

    let mut m = writer(out, "metrics.csv")?;
    let mut header = vec!["repeat", "status", "learning_rate", "alpha", "lambda", "flagged"];
    header.extend(MetricsReport::COLUMNS);
    m.write_record(&header)?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); 8];
    for res in &results {
        let h = res.hyper;
        let mut rec = vec![
            res.repeat.to_string(),
            match &res.status {
                Ok(()) => "ok".to_string(),
                Err(e) => format!("failed: {e}"),
            },
            opt(h.map(|h| h.learning_rate)),
            opt(h.and_then(|h| h.alpha)),
            opt(h.and_then(|h| h.lambda)),
            res.flagged.to_string(),
        ];
        rec.extend(res.metrics.iter().map(|&v| fmt6(v)));
        m.write_record(&rec)?;
        if res.status.is_ok() {
            for (c, &v) in columns.iter_mut().zip(&res.metrics) {
                c.push(rounded(v));
            }
        }
    }
    m.flush()?;

    let mut s = writer(out, "summary.csv")?;
    let mut header = vec!["statistic"];
    header.extend(MetricsReport::COLUMNS);
    s.write_record(&header)?;
    let stats: Vec<(f64, f64)> = columns.iter().map(|c| mean_std(c)).collect();
    let mut mean = vec!["mean".to_string()];
    mean.extend(stats.iter().map(|s| fmt6(s.0)));
    let mut std = vec!["std".to_string()];
    std.extend(stats.iter().map(|s| fmt6(s.1)));
    s.write_record(&mean)?;
    s.write_record(&std)?;
    s.flush()?;

    let mut t = writer(out, "tuning.csv")?;
    t.write_record([
        "repeat",
        "learning_rate",
        "alpha",
        "lambda",
        "val_ctd",
        "val_fairness",
        "reference_ctd",
        "selected",
        "flagged",
        "status",
    ])?;
    for res in &results {
        for row in &res.tuning {
            t.write_record([
                res.repeat.to_string(),
                fmt6(row.hyper.learning_rate),
                opt(row.hyper.alpha),
                opt(row.hyper.lambda),
                fmt6(row.val_ctd),
                fmt6(row.val_fairness),
                fmt6(res.reference),
                row.selected.to_string(),
                (row.selected && res.flagged).to_string(),
                row.status.clone(),
            ])?;
        }
    }
    t.flush()?;

    for res in &results {
        if let Some(f) = &res.fitted {
            write_log_csv(&f.log, BufWriter::new(File::create(out.join(format!("train_log_r{}.csv", res.repeat)))?))?;
            f.params.save_json(out.join(format!("model_r{}.json", res.repeat)))?;
        }
        if let Some(p) = &res.prediction {
            write_predictions(&out.join(format!("predictions_r{}.csv", res.repeat)), &exp.test, p)?;
        }
    }
    Ok(results.iter().filter(|r| r.status.is_err()).count())
}

/// Trains at each α on repeat 0's training rows with `train.learning_rate` and writes
/// `sweep.csv`. Returns the number of failed points.
pub fn sweep_alpha(exp: &Experiment, alphas: &[f64]) -> Result<usize> {
    if !exp.cfg.method.is_dro() {
        return Err(Error::Config(format!("sweep-alpha needs a robust method, got {:?}", exp.cfg.method)));
    }
    if alphas.is_empty() || alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(Error::Config(format!("alpha values must lie in (0, 1], got {alphas:?}")));
    }
    std::fs::create_dir_all(&exp.cfg.out)?;
    let (train, _) = exp.repeat_split(0)?;
    let lr = exp.cfg.train.learning_rate;
    let rows: Vec<Result<(MetricsReport, f64)>> = alphas
        .par_iter()
        .map(|&a| {
            let fitted = exp.fit(exp.cfg.method, Hyper { learning_rate: lr, alpha: Some(a), lambda: None }, &train, 0)?;
            Ok((exp.evaluate(&fitted, &train, &exp.test)?, exp.worst_group_loss(&fitted, &exp.test)?))
        })
        .collect();
    let mut w = writer(&exp.cfg.out, "sweep.csv")?;
    w.write_record(["alpha", "ctd", "ibs", "ci_pct", "f_ci", "f_cg", "worst_group_loss", "status"])?;
    let mut failures = 0;
    for (&a, row) in alphas.iter().zip(rows) {
        let (m, wg, status) = match row {
            Ok((m, wg)) => (m, wg, "ok".to_string()),
            Err(e) => {
                log::warn!("alpha {a} failed: {e}");
                failures += 1;
                (MetricsReport::from_values([f64::NAN; 8]), f64::NAN, format!("failed: {e}"))
            }
        };
        w.write_record([fmt6(a), fmt6(m.ctd), fmt6(m.ibs), fmt6(m.ci_pct), fmt6(m.f_ci), fmt6(m.f_cg), fmt6(wg), status])?;
    }
    w.flush()?;
    Ok(failures)
}

/// Single-row metrics table with six significant digits.
pub fn write_metrics(path: &Path, m: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(MetricsReport::COLUMNS)?;
    w.write_record(m.values().map(fmt6))?;
    w.flush()?;
    Ok(())
}
