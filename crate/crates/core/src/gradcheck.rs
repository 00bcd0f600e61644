//! Finite-difference suites comparing every taped gradient against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{GroupLabels, SurvivalDataset, TimeGrid};
use crate::dro::{c_alpha, dro_grad_theta, dro_objective};
use crate::error::Result;
use crate::losses::{point_losses, point_losses_on_tape, DeepHitConfig, LossSpec};
use crate::nn::check::{central_difference, relative_error, FD_STEP};
use crate::nn::{value_and_grad, ModelSpec, Tape};
use crate::train::{Regularizer, RegularizerTerm, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl SuiteResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Largest relative error accepted by the suites.
pub const GRADCHECK_TOL: f64 = 1e-4;

struct Instance {
    ds: SurvivalDataset<f64>,
    spec: ModelSpec,
    theta: Vec<f64>,
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, max_event: u32) -> SurvivalDataset<f64> {
    loop {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect()).collect();
        // Coarse times so that ties occur.
        let times: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1..=6u32)) * 0.5).collect();
        let events: Vec<u32> = (0..n).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(1..=max_event) }).collect();
        let labels: Vec<String> = (0..n).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect();
        let both = events.contains(&0) && events.iter().any(|&e| e > 0);
        if both || n < 2 {
            let ds = SurvivalDataset::with_max_event(rows, times, events, max_event).expect("valid random data");
            return ds.with_group("g", labels).expect("labels sized to n");
        }
    }
}

/// Random model parameters, redrawn until no hidden pre-activation sits within 1e-3 of a kink.
fn random_instance(rng: &mut ChaCha8Rng, spec: ModelSpec, ds: SurvivalDataset<f64>) -> Instance {
    loop {
        let theta: Vec<f64> = (0..spec.num_params()).map(|_| 0.7 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
        let clear = (0..ds.n()).all(|i| spec.min_abs_preactivation(&theta, ds.row(i)).is_none_or(|m| m >= 1e-3));
        if clear {
            return Instance { ds, spec, theta };
        }
    }
}

fn mlp_or_linear(rng: &mut ChaCha8Rng, d: usize) -> ModelSpec {
    if rng.random_bool(0.5) {
        ModelSpec::linear(d)
    } else {
        ModelSpec::mlp_scalar(d, &[rng.random_range(2..=5)])
    }
}

fn check<F, G>(theta: &[f64], value: F, grad: G) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let g = grad(theta)?;
    let mut failure = None;
    let fd = central_difference(theta, FD_STEP, |x| {
        value(x).unwrap_or_else(|e| {
            failure = Some(e);
            f64::NAN
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(relative_error(&g, &fd))
}

fn suite(name: &str, instances: usize, seed: u64, mut one: impl FnMut(&mut ChaCha8Rng) -> Result<f64>) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        worst = worst.max(one(&mut rng)?);
    }
    Ok(SuiteResult { name: name.to_string(), instances, max_rel_error: worst })
}

fn mean_loss_grad<'a>(inst: &'a Instance, loss: &LossSpec<f64>) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    let all: Vec<usize> = (0..inst.ds.n()).collect();
    let loss = loss.clone();
    move |th| {
        value_and_grad(th, |tape, v| {
            let u = point_losses_on_tape(tape, &inst.spec, v, None, &inst.ds, &all, &all, &loss)?;
            Ok(tape.mean(&u))
        })
        .map(|(_, g)| g)
    }
}

fn mean_loss_value<'a>(inst: &'a Instance, loss: &LossSpec<f64>) -> impl Fn(&[f64]) -> Result<f64> + 'a {
    let all: Vec<usize> = (0..inst.ds.n()).collect();
    let loss = loss.clone();
    move |th| {
        let u = point_losses(&inst.spec, th, None, &inst.ds, &all, &all, &loss)?;
        Ok(u.iter().sum::<f64>() / u.len() as f64)
    }
}

pub fn cox_partial_suite(instances: usize, seed: u64) -> Result<SuiteResult> {
    suite("cox_partial_loss", instances, seed, |rng| {
        let (n, d) = (rng.random_range(2..=10), rng.random_range(1..=5));
        let ds = random_dataset(rng, n, d, 1);
        let spec = mlp_or_linear(rng, d);
        let inst = random_instance(rng, spec, ds);
        check(&inst.theta, mean_loss_value(&inst, &LossSpec::Cox), mean_loss_grad(&inst, &LossSpec::Cox))
    })
}

pub fn deephit_suite(beta: f64, instances: usize, seed: u64) -> Result<SuiteResult> {
    suite(&format!("deephit_loss(beta={beta})"), instances, seed, |rng| {
        let (n, d) = (rng.random_range(2..=10), rng.random_range(1..=5));
        let ds = random_dataset(rng, n, d, 1);
        let grid = TimeGrid::new(vec![0.75, 1.5, 2.25]).expect("static grid");
        let cfg = DeepHitConfig::new(beta, 0.5, grid, n)?;
        let spec = ModelSpec::mlp_simplex(d, &[rng.random_range(2..=5)], cfg.m());
        let inst = random_instance(rng, spec, ds);
        let loss = LossSpec::DeepHit(cfg);
        check(&inst.theta, mean_loss_value(&inst, &loss), mean_loss_grad(&inst, &loss))
    })
}

pub fn dro_grad_suite(instances: usize, seed: u64) -> Result<SuiteResult> {
    suite("dro_grad_theta", instances, seed, |rng| {
        let (n, d) = (rng.random_range(2..=10), rng.random_range(1..=5));
        let ds = random_dataset(rng, n, d, 1);
        let inst = random_instance(rng, ModelSpec::linear(d), ds);
        let all: Vec<usize> = (0..n).collect();
        let alpha = [0.1, 0.2, 0.5, 0.9][rng.random_range(0..4)];
        let c = c_alpha(alpha)?;
        let loss = LossSpec::Cox;
        let mut u = point_losses(&inst.spec, &inst.theta, None, &inst.ds, &all, &all, &loss)?;
        u.sort_by(f64::total_cmp);
        u.dedup();
        // η halfway between two neighbouring losses keeps every [u − η]_+ away from its kink.
        let eta = if u.len() >= 2 {
            let k = rng.random_range(0..u.len() - 1);
            0.5 * (u[k] + u[k + 1])
        } else {
            u[0] - 1.0
        };
        let value = |th: &[f64]| {
            let v = point_losses(&inst.spec, th, None, &inst.ds, &all, &all, &loss)?;
            Ok(dro_objective(&v, eta, c))
        };
        let grad = |th: &[f64]| dro_grad_theta(&inst.spec, th, &inst.ds, &all, &all, &loss, eta, c);
        check(&inst.theta, value, grad)
    })
}

pub fn regularizer_suite(kind: Regularizer, survival: bool, instances: usize, seed: u64) -> Result<SuiteResult> {
    let label = if survival { "deephit" } else { "cox" };
    suite(&format!("regularizer({kind:?}, {label})"), instances, seed, |rng| {
        let (n, d) = (rng.random_range(3..=10), rng.random_range(1..=5));
        let ds = random_dataset(rng, n, d, 1);
        let (spec, loss) = if survival {
            let grid = TimeGrid::new(vec![0.75, 1.5, 2.25]).expect("static grid");
            let cfg = DeepHitConfig::new(0.5, 0.5, grid, n)?;
            (ModelSpec::mlp_simplex(d, &[3], cfg.m()), LossSpec::DeepHit(cfg))
        } else {
            (mlp_or_linear(rng, d), LossSpec::Cox)
        };
        let inst = random_instance(rng, spec, ds);
        let cfg = TrainConfig { regularizer: kind, lambda: 1.0, gamma: 0.01, ..TrainConfig::default() };
        let groups: &GroupLabels = inst.ds.group("g").expect("random data carries groups");
        let term = RegularizerTerm::new(&inst.ds, &loss, &cfg, Some(groups))?;
        let eval = |th: &[f64]| -> Result<(f64, Vec<f64>)> {
            let tape = Tape::new();
            let v = tape.vars(th);
            let r = term.on_tape(&tape, &inst.spec, &v, &inst.ds);
            tape.check_finite()?;
            Ok((r.value(), tape.gradient(r).wrt(&v)))
        };
        check(&inst.theta, |th| eval(th).map(|r| r.0), |th| eval(th).map(|r| r.1))
    })
}

/// Gradient of a random scalar function of a random MLP against finite differences.
pub fn mlp_suite(instances: usize, seed: u64) -> Result<SuiteResult> {
    suite("mlp_forward", instances, seed, |rng| {
        let d = rng.random_range(1..=5);
        let depth = rng.random_range(1..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
        let simplex = rng.random_bool(0.5);
        let out = if simplex { rng.random_range(2..=5) } else { 1 };
        let spec = if simplex { ModelSpec::mlp_simplex(d, &hidden, out) } else { ModelSpec::mlp_scalar(d, &hidden) };
        let ds = random_dataset(rng, 1, d, 1);
        let inst = random_instance(rng, spec, ds);
        let x = inst.ds.row(0).to_vec();
        let w: Vec<f64> = (0..out).map(|_| StandardNormal.sample(rng)).collect();
        let value = |th: &[f64]| -> Result<f64> {
            let y = if simplex { inst.spec.forward_simplex(th, &x)? } else { vec![inst.spec.forward_scalar(th, &x)?] };
            Ok(y.iter().zip(&w).map(|(a, b)| (a * b).exp()).sum::<f64>().ln())
        };
        let grad = |th: &[f64]| {
            value_and_grad(th, |tape, v| {
                let y = if simplex { inst.spec.simplex_on_tape(tape, v, &x) } else { inst.spec.logits_on_tape(tape, v, &x) };
                let terms: Vec<_> = y.iter().zip(&w).map(|(a, &b)| *a * b).collect();
                Ok(tape.log_sum_exp(&terms))
            })
            .map(|(_, g)| g)
        };
        check(&inst.theta, value, grad)
    })
}

/// Every suite, `instances` random cases each.
pub fn run_all(instances: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = vec![
        mlp_suite(instances, seed)?,
        cox_partial_suite(instances, seed + 1)?,
        dro_grad_suite(instances, seed + 2)?,
    ];
    for (k, beta) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        out.push(deephit_suite(beta, instances, seed + 3 + k as u64)?);
    }
    for (k, kind) in [Regularizer::FI, Regularizer::FG, Regularizer::FCI, Regularizer::FCG].into_iter().enumerate() {
        out.push(regularizer_suite(kind, false, instances, seed + 10 + k as u64)?);
        out.push(regularizer_suite(kind, true, instances, seed + 20 + k as u64)?);
    }
    Ok(out)
}
