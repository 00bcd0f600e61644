//! Brute-force oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survdro::data::SurvivalDataset;
use survdro::metrics::SurvivalPrediction;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random data with times on a coarse lattice so ties are common; two groups "a"/"b".
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, censor_p: f64) -> SurvivalDataset<f64> {
    let rows = (0..n).map(|_| (0..d).map(|_| normal(rng)).collect()).collect();
    let times = (0..n).map(|_| f64::from(rng.random_range(1..=8u32)) * 0.25).collect();
    let events = (0..n).map(|_| u32::from(!rng.random_bool(censor_p))).collect();
    let labels = (0..n).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect();
    SurvivalDataset::new(rows, times, events).unwrap().with_group("g", labels).unwrap()
}

/// Minimum of `η + c·sqrt(mean([u − η]_+²))` over a 10⁴-point grid, refined once by a
/// second 10⁴-point grid spanning the neighbouring cells of the best point.
pub fn dro_grid_min(u: &[f64], c: f64) -> f64 {
    let n = u.len() as f64;
    let f = |eta: f64| eta + c * (u.iter().map(|&x| (x - eta).max(0.0).powi(2)).sum::<f64>() / n).sqrt();
    let lo_u = u.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if c == 1.0 {
        return u.iter().sum::<f64>() / n;
    }
    // Below min(u) the objective is smooth with a single stationary point.
    let mean = u.iter().sum::<f64>() / n;
    let sd = (u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let lo = lo_u.min(mean - sd / (c * c - 1.0).sqrt()) - 1e-3;
    let scan = |a: f64, b: f64| {
        let k = 10_000;
        let h = (b - a) / (k - 1) as f64;
        (0..k).map(|i| a + h * i as f64).map(|e| (e, f(e))).fold((a, f64::INFINITY), |m, p| if p.1 < m.1 { p } else { m })
    };
    let h = (hi - lo) / 9_999.0;
    let (best, _) = scan(lo, hi);
    let (_, v) = scan(best - h, best + h);
    v.min(f(hi))
}

/// Concordance fractions per group by a direct double loop over ordered pairs.
pub fn concordance_fractions_oracle(y: &[f64], delta: &[u32], f: &[f64], a: &[String]) -> Vec<(String, f64, f64)> {
    let mut groups: Vec<String> = a.to_vec();
    groups.sort();
    groups.dedup();
    let mut num = vec![0.0; groups.len()];
    let mut den = vec![0.0; groups.len()];
    let n = y.len();
    for i in 0..n {
        let g = groups.iter().position(|x| *x == a[i]).unwrap();
        for j in 0..n {
            if j == i {
                continue;
            }
            if (y[i] < y[j] && delta[i] == 0) || (y[j] < y[i] && delta[j] == 0) || (y[i] == y[j] && delta[i] == 0 && delta[j] == 0) {
                continue;
            }
            den[g] += 1.0;
            if y[i] < y[j] {
                if f[i] > f[j] {
                    num[g] += 1.0;
                } else if f[i] == f[j] {
                    num[g] += 0.5;
                }
            } else if y[i] > y[j] {
                if f[i] < f[j] {
                    num[g] += 1.0;
                } else if f[i] == f[j] {
                    num[g] += 0.5;
                }
            } else if delta[i] == 1 && delta[j] == 1 {
                num[g] += if f[i] == f[j] { 1.0 } else { 0.5 };
            } else if delta[i] == 0 && delta[j] == 1 && f[i] < f[j] {
                num[g] += 1.0;
            } else if delta[i] == 1 && delta[j] == 0 && f[i] > f[j] {
                num[g] += 1.0;
            } else {
                num[g] += 0.5;
            }
        }
    }
    groups.into_iter().zip(num).zip(den).map(|((g, nu), de)| (g, nu, de)).collect()
}

/// NaN when some group has no comparable pair.
pub fn concordance_imparity_oracle(y: &[f64], delta: &[u32], f: &[f64], a: &[String]) -> f64 {
    let fr = concordance_fractions_oracle(y, delta, f, a);
    if fr.iter().any(|(_, _, d)| *d == 0.0) {
        return f64::NAN;
    }
    let cf: Vec<f64> = fr.iter().map(|(_, n, d)| n / d).collect();
    let mut worst: f64 = 0.0;
    for p in &cf {
        for q in &cf {
            worst = worst.max((p - q).abs());
        }
    }
    worst * 100.0
}

/// `Ŝ(t | x_i)` read off a prediction as a right-continuous step function.
fn step(pred: &SurvivalPrediction<f64>, i: usize, t: f64) -> f64 {
    let pts = pred.grid.points();
    let mut s = 1.0;
    for (l, &p) in pts.iter().enumerate() {
        if p <= t {
            s = pred.survival[i][l];
        }
    }
    s
}

/// Time-dependent concordance: the same tie ladder with subject `i` riskier than `j`
/// when `Ŝ(t | x_i) < Ŝ(t | x_j)` at `t = min(Y_i, Y_j)`.
pub fn ctd_oracle(ds: &SurvivalDataset<f64>, pred: &SurvivalPrediction<f64>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    let n = ds.n();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (yi, yj) = (ds.time(i), ds.time(j));
            let (di, dj) = (ds.event(i), ds.event(j));
            let t = yi.min(yj);
            // Negated survival acts as the risk score.
            let (fi, fj) = (-step(pred, i, t), -step(pred, j, t));
            if (yi < yj && di == 0) || (yj < yi && dj == 0) || (yi == yj && di == 0 && dj == 0) {
                continue;
            }
            den += 1.0;
            num += if yi < yj {
                if fi > fj {
                    1.0
                } else if fi == fj {
                    0.5
                } else {
                    0.0
                }
            } else if yi > yj {
                if fi < fj {
                    1.0
                } else if fi == fj {
                    0.5
                } else {
                    0.0
                }
            } else if di == 1 && dj == 1 {
                if fi == fj {
                    1.0
                } else {
                    0.5
                }
            } else if (di == 0 && fi < fj) || (di == 1 && fi > fj) {
                1.0
            } else {
                0.5
            };
        }
    }
    num / den
}

/// Kaplan–Meier censoring survival by direct product over censoring times `≤ t` (or `< t`).
fn km_censoring(ds: &SurvivalDataset<f64>, t: f64, strict: bool) -> f64 {
    let mut times: Vec<f64> = (0..ds.n()).filter(|&i| ds.event(i) == 0).map(|i| ds.time(i)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut g = 1.0;
    for s in times {
        if (strict && s >= t) || (!strict && s > t) {
            break;
        }
        let at_risk = (0..ds.n()).filter(|&i| ds.time(i) >= s).count() as f64;
        let censored = (0..ds.n()).filter(|&i| ds.time(i) == s && ds.event(i) == 0).count() as f64;
        g *= 1.0 - censored / at_risk;
    }
    g
}

/// IPCW integrated Brier score by direct summation over the grid points.
pub fn ibs_oracle(ds: &SurvivalDataset<f64>, pred: &SurvivalPrediction<f64>) -> f64 {
    let pts = pred.grid.points();
    let n = ds.n() as f64;
    let bs: Vec<f64> = pts
        .iter()
        .map(|&t| {
            let mut total = 0.0;
            for i in 0..ds.n() {
                let s = step(pred, i, t);
                let y = ds.time(i);
                if y <= t && ds.event(i) == 1 {
                    total += s * s / km_censoring(ds, y, true).max(1e-8);
                } else if y > t {
                    total += (1.0 - s) * (1.0 - s) / km_censoring(ds, t, false).max(1e-8);
                }
            }
            total / n
        })
        .collect();
    if pts.len() == 1 {
        return bs[0];
    }
    let mut area = 0.0;
    for k in 1..pts.len() {
        area += 0.5 * (pts[k] - pts[k - 1]) * (bs[k] + bs[k - 1]);
    }
    area / (pts[pts.len() - 1] - pts[0])
}

/// Cox partial-likelihood term of subject `i` with risk set drawn from `pool`, own term included.
pub fn cox_point_oracle(ds: &SurvivalDataset<f64>, scores: &[f64], i: usize, pool: &[usize]) -> f64 {
    if ds.event(i) == 0 {
        return 0.0;
    }
    let mut s = scores[i].exp();
    for &j in pool {
        if j != i && ds.time(j) >= ds.time(i) {
            s += scores[j].exp();
        }
    }
    s.ln() - scores[i]
}

pub fn dual_value(u: &[f64], eta: f64, c: f64) -> f64 {
    eta + c * (u.iter().map(|&x| (x - eta).max(0.0).powi(2)).sum::<f64>() / u.len() as f64).sqrt()
}
