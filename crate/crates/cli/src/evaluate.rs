//! Metrics from a predictions CSV.

use std::path::Path;

use survdro::data::{SurvivalDataset, TimeGrid};
use survdro::metrics::{metrics_report, EvalSpec, MetricsReport, OutcomeMode, SurvivalPrediction};
use survdro::{Error, Result};

/// Columns: `time`, `event`, `risk`, the named group columns, features `x_*`, and
/// survival probabilities `s_<t>` for each grid time `t`.
pub fn read_predictions(path: &Path, group_cols: &[String]) -> Result<(SurvivalDataset<f64>, SurvivalPrediction<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let (ti, ei, ri) = (find("time")?, find("event")?, find("risk")?);
    let gi = group_cols.iter().map(|g| find(g)).collect::<Result<Vec<_>>>()?;
    let xi: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.starts_with("x_")).map(|(k, _)| k).collect();
    let mut si = Vec::new();
    let mut grid = Vec::new();
    for (k, h) in headers.iter().enumerate() {
        if let Some(t) = h.strip_prefix("s_") {
            let t: f64 = t.parse().map_err(|_| Error::Schema(format!("bad survival column `{h}`")))?;
            si.push(k);
            grid.push(t);
        }
    }
    if si.is_empty() {
        return Err(Error::Schema("no survival columns `s_<t>`".into()));
    }
    let grid = TimeGrid::new(grid)?;
    let (mut times, mut events, mut risk, mut rows, mut surv) = (vec![], vec![], vec![], vec![], vec![]);
    let mut groups = vec![Vec::new(); gi.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|e| Error::Parse { row: r + 1, column: headers[k].to_string(), message: e.to_string() })
        };
        times.push(num(ti)?);
        let e = num(ei)?;
        if !(e >= 0.0 && e.fract() == 0.0) {
            return Err(Error::Parse { row: r + 1, column: "event".into(), message: format!("invalid event code {e}") });
        }
        events.push(e as u32);
        risk.push(num(ri)?);
        rows.push(xi.iter().map(|&k| num(k)).collect::<Result<Vec<_>>>()?);
        surv.push(si.iter().map(|&k| num(k)).collect::<Result<Vec<_>>>()?);
        for (g, &k) in groups.iter_mut().zip(&gi) {
            g.push(rec[k].to_string());
        }
    }
    let mut ds = SurvivalDataset::new(rows, times, events)?;
    for (name, labels) in group_cols.iter().zip(groups) {
        ds = ds.with_group(name.clone(), labels)?;
    }
    let pred = SurvivalPrediction::new(grid, surv, risk)?;
    Ok((ds, pred))
}

pub fn evaluate(path: &Path, mode: OutcomeMode, group: &str, intersect: &[String], gamma: f64) -> Result<MetricsReport> {
    let mut cols = vec![group.to_string()];
    cols.extend(intersect.iter().filter(|g| g.as_str() != group).cloned());
    let (ds, pred) = read_predictions(path, &cols)?;
    let lookup = |g: &str| ds.group(g).ok_or_else(|| Error::Schema(format!("missing group `{g}`")));
    let spec = EvalSpec {
        mode,
        group: lookup(group)?,
        intersect: intersect.iter().map(|g| lookup(g)).collect::<Result<Vec<_>>>()?,
        gamma,
    };
    metrics_report(&ds, &pred, &spec)
}
