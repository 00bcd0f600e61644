//! Seeded synthetic survival data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Two subpopulations sharing a feature distribution but with opposite covariate effects.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureConfig {
    pub n: usize,
    pub minority_fraction: f64,
    /// Log-hazard coefficients of the majority; the minority uses their negation.
    pub effect: Vec<f64>,
    /// Rate of the exponential censoring times.
    pub censoring_rate: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self { n: 400, minority_fraction: 0.2, effect: vec![2.0, -1.4, 1.0], censoring_rate: 0.3, seed: 0 }
    }
}

pub const GROUP_ATTRIBUTE: &str = "group";
pub const MAJORITY: &str = "majority";
pub const MINORITY: &str = "minority";

/// Exponential event times with rate `exp(±effectᵀx)`, censored by independent exponential
/// times; labels are stored under [`GROUP_ATTRIBUTE`].
pub fn two_group_mixture<T: Scalar>(cfg: &MixtureConfig) -> Result<SurvivalDataset<T>> {
    if cfg.n < 2 || cfg.effect.is_empty() || !(0.0..1.0).contains(&cfg.minority_fraction) || !(cfg.censoring_rate > 0.0) {
        return Err(Error::Config(format!("invalid mixture configuration {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.effect.len();
    let minority = (cfg.minority_fraction * cfg.n as f64).round() as usize;
    let mut is_minority: Vec<bool> = (0..cfg.n).map(|i| i < minority).collect();
    is_minority.shuffle(&mut rng);
    let censor = Exp::new(cfg.censoring_rate).map_err(|e| Error::Config(e.to_string()))?;
    let mut rows = Vec::with_capacity(cfg.n);
    let mut times = Vec::with_capacity(cfg.n);
    let mut events = Vec::with_capacity(cfg.n);
    for &flip in &is_minority {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lin: f64 = x.iter().zip(&cfg.effect).map(|(a, b)| a * b).sum();
        let rate = if flip { (-lin).exp() } else { lin.exp() };
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let t = -u.ln() / rate;
        let c = censor.sample(&mut rng);
        rows.push(x.into_iter().map(T::of).collect());
        times.push(T::of(t.min(c)));
        events.push(u32::from(t <= c));
    }
    let labels = is_minority.iter().map(|&m| if m { MINORITY } else { MAJORITY }.to_string()).collect();
    SurvivalDataset::new(rows, times, events)?.with_group(GROUP_ATTRIBUTE, labels)
}
