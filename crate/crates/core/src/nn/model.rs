//! Linear scores and small relu MLPs with scalar or softmax heads.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    MlpScalar,
    MlpSimplex,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Where one dense layer lives inside the flat parameter vector.
/// Weights are stored row-major as `[fan_out][fan_in]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Option<Range<usize>>,
}

impl ModelSpec {
    pub fn linear(input_dim: usize) -> Self {
        Self { kind: ModelKind::Linear, input_dim, hidden: Vec::new(), output_dim: 1, activation: Activation::Relu }
    }

    pub fn mlp_scalar(input_dim: usize, hidden: &[usize]) -> Self {
        Self { kind: ModelKind::MlpScalar, input_dim, hidden: hidden.to_vec(), output_dim: 1, activation: Activation::Relu }
    }

    pub fn mlp_simplex(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            kind: ModelKind::MlpSimplex,
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("model input_dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match self.kind {
            ModelKind::Linear if !self.hidden.is_empty() => {
                Err(Error::Config("linear model cannot have hidden layers".into()))
            }
            ModelKind::Linear | ModelKind::MlpScalar if self.output_dim != 1 => {
                Err(Error::Config(format!("scalar model needs output_dim 1, got {}", self.output_dim)))
            }
            ModelKind::MlpSimplex if self.output_dim == 0 => Err(Error::Config("simplex head needs output_dim ≥ 1".into())),
            _ => Ok(()),
        }
    }

    pub fn is_simplex(&self) -> bool {
        self.kind == ModelKind::MlpSimplex
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        if self.kind == ModelKind::Linear {
            return vec![LayerLayout { fan_in: self.input_dim, fan_out: 1, weights: 0..self.input_dim, bias: None }];
        }
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerLayout { fan_in, fan_out, weights, bias: Some(bias) }
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().last().map_or(0, |l| l.bias.as_ref().map_or(l.weights.end, |b| b.end))
    }

    fn check(&self, theta_len: usize, x_len: usize) -> Result<()> {
        if theta_len != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), actual: theta_len });
        }
        if x_len != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, actual: x_len });
        }
        Ok(())
    }

    /// Head outputs before any softmax.
    pub fn forward_logits<T: Scalar>(&self, theta: &[T], x: &[T]) -> Result<Vec<T>> {
        self.check(theta.len(), x.len())?;
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in layers.iter().enumerate() {
            let w = &theta[layer.weights.clone()];
            let mut out: Vec<T> = (0..layer.fan_out)
                .map(|o| w[o * layer.fan_in..(o + 1) * layer.fan_in].iter().zip(&h).map(|(&a, &b)| a * b).sum())
                .collect();
            if let Some(b) = &layer.bias {
                for (o, &bv) in out.iter_mut().zip(&theta[b.clone()]) {
                    *o = *o + bv;
                }
            }
            if k < last {
                for v in out.iter_mut() {
                    *v = v.max(T::zero());
                }
            }
            h = out;
        }
        Ok(h)
    }

    pub fn forward_scalar<T: Scalar>(&self, theta: &[T], x: &[T]) -> Result<T> {
        if self.output_dim != 1 {
            return Err(Error::DimensionMismatch { expected: 1, actual: self.output_dim });
        }
        Ok(self.forward_logits(theta, x)?[0])
    }

    pub fn forward_simplex<T: Scalar>(&self, theta: &[T], x: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.forward_logits(theta, x)?))
    }

    /// Head outputs recorded on a tape; `theta` must already live on that tape.
    pub fn logits_on_tape<'t, T: Scalar>(&self, tape: &'t Tape<T>, theta: &[Var<'t, T>], x: &[T]) -> Vec<Var<'t, T>> {
        debug_assert!(self.check(theta.len(), x.len()).is_ok());
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut hidden: Vec<Var<'t, T>> = Vec::new();
        for (k, layer) in layers.iter().enumerate() {
            let w = &theta[layer.weights.clone()];
            let out: Vec<Var<'t, T>> = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    let z = match (k, &layer.bias) {
                        (0, Some(b)) => tape.affine(row, x, theta[b.start + o]),
                        (0, None) => tape.lincomb(row, x),
                        (_, Some(b)) => tape.dot(row, &hidden) + theta[b.start + o],
                        (_, None) => tape.dot(row, &hidden),
                    };
                    if k < last {
                        z.relu()
                    } else {
                        z
                    }
                })
                .collect();
            hidden = out;
        }
        hidden
    }

    pub fn scalar_on_tape<'t, T: Scalar>(&self, tape: &'t Tape<T>, theta: &[Var<'t, T>], x: &[T]) -> Var<'t, T> {
        self.logits_on_tape(tape, theta, x)[0]
    }

    pub fn simplex_on_tape<'t, T: Scalar>(&self, tape: &'t Tape<T>, theta: &[Var<'t, T>], x: &[T]) -> Vec<Var<'t, T>> {
        let z = self.logits_on_tape(tape, theta, x);
        tape.softmax(&z)
    }

    /// Smallest |pre-activation| over all hidden units, `None` for the linear model.
    pub fn min_abs_preactivation<T: Scalar>(&self, theta: &[T], x: &[T]) -> Option<T> {
        let layers = self.layers();
        if layers.len() < 2 {
            return None;
        }
        let mut h = x.to_vec();
        let mut best = T::infinity();
        for layer in &layers[..layers.len() - 1] {
            let w = &theta[layer.weights.clone()];
            let b = layer.bias.clone().map(|r| &theta[r]);
            h = (0..layer.fan_out)
                .map(|o| {
                    let z: T = w[o * layer.fan_in..(o + 1) * layer.fan_in].iter().zip(&h).map(|(&a, &v)| a * v).sum::<T>()
                        + b.map_or(T::zero(), |b| b[o]);
                    best = best.min(z.abs());
                    z.max(T::zero())
                })
                .collect();
        }
        Some(best)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_theta<T: Scalar>(&self, seed: u64) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![T::zero(); self.num_params()];
        for layer in self.layers() {
            let a = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut theta[layer.weights] {
                *w = T::of(rng.random_range(-a..a));
            }
        }
        theta
    }
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn forward_scalar<T: Scalar>(x: &[T], spec: &ModelSpec, theta: &[T]) -> Result<T> {
    spec.forward_scalar(theta, x)
}

pub fn forward_simplex<T: Scalar>(x: &[T], spec: &ModelSpec, theta: &[T]) -> Result<Vec<T>> {
    spec.forward_simplex(theta, x)
}

/// Trained or initial parameters together with their layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub spec: ModelSpec,
    pub theta: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let theta = spec.init_theta(seed);
        Ok(Self { spec, theta, psi: None })
    }

    pub fn from_theta(spec: ModelSpec, theta: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if theta.len() != spec.num_params() {
            return Err(Error::DimensionMismatch { expected: spec.num_params(), actual: theta.len() });
        }
        Ok(Self { spec, theta, psi: None })
    }

    pub fn with_psi(mut self, psi: Vec<T>) -> Self {
        self.psi = Some(psi);
        self
    }

    pub fn score(&self, x: &[T]) -> Result<T> {
        self.spec.forward_scalar(&self.theta, x)
    }

    pub fn simplex(&self, x: &[T]) -> Result<Vec<T>> {
        self.spec.forward_simplex(&self.theta, x)
    }

    /// Flat CSV listing with columns `block,index,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["block", "index", "value"])?;
        let blocks = [("theta", Some(&self.theta)), ("psi", self.psi.as_ref())];
        for (name, values) in blocks {
            for (k, v) in values.into_iter().flatten().enumerate() {
                out.write_record([name.to_string(), k.to_string(), v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(spec: ModelSpec, r: R) -> Result<Self> {
        let mut theta = Vec::new();
        let mut psi = Vec::new();
        for (row, rec) in csv::Reader::from_reader(r).records().enumerate() {
            let rec = rec?;
            let value: f64 = rec.get(2).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Parse {
                row: row + 1,
                column: "value".into(),
                message: "expected a number".into(),
            })?;
            match rec.get(0) {
                Some("theta") => theta.push(T::of(value)),
                Some("psi") => psi.push(T::of(value)),
                other => {
                    return Err(Error::Parse {
                        row: row + 1,
                        column: "block".into(),
                        message: format!("unknown block {other:?}"),
                    })
                }
            }
        }
        let p = Self::from_theta(spec, theta)?;
        Ok(if psi.is_empty() { p } else { p.with_psi(psi) })
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> ModelParams<T> {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let p: Self = serde_json::from_reader(f)?;
        p.spec.validate()?;
        if p.theta.len() != p.spec.num_params() {
            return Err(Error::DimensionMismatch { expected: p.spec.num_params(), actual: p.theta.len() });
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward() {
        let spec = ModelSpec::linear(2);
        assert_eq!(spec.forward_scalar(&[1.0, -2.0], &[3.0, 1.0]).unwrap(), 1.0);
        assert_eq!(spec.forward_scalar(&[0.0, 0.0], &[5.0, -7.0]).unwrap(), 0.0);
        assert!(spec.forward_scalar(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn small_mlp_by_hand() {
        let spec = ModelSpec::mlp_scalar(2, &[2]);
        // layer 1: 4 weights + 2 bias, layer 2: 2 weights + 1 bias
        assert_eq!(spec.num_params(), 9);
        let theta = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(spec.forward_scalar(&theta, &[1.0, 1.0]).unwrap(), 4.0);
    }

    #[test]
    fn simplex_head() {
        let spec = ModelSpec::mlp_simplex(1, &[3], 4);
        let theta = vec![0.0; spec.num_params()];
        assert_eq!(spec.forward_simplex(&theta, &[2.0]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[2.0_f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tape_forward_matches_plain() {
        let spec = ModelSpec::mlp_simplex(3, &[5, 4], 6);
        let theta: Vec<f64> = spec.init_theta(11);
        let x = [0.3, -1.2, 0.8];
        let plain = spec.forward_simplex(&theta, &x).unwrap();
        let tape = Tape::new();
        let th = tape.vars(&theta);
        let taped: Vec<f64> = spec.simplex_on_tape(&tape, &th, &x).iter().map(|v| v.value()).collect();
        for (a, b) in plain.iter().zip(&taped) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = ModelSpec::mlp_scalar(4, &[24]);
        let a: Vec<f64> = spec.init_theta(3);
        assert_eq!(a, spec.init_theta::<f64>(3));
        assert_ne!(a, spec.init_theta::<f64>(4));
        let bound = (6.0_f64 / 28.0).sqrt();
        assert!(a[..96].iter().all(|w| w.abs() <= bound));
        assert!(a[96..120].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn validation() {
        let mut s = ModelSpec::linear(2);
        s.hidden = vec![3];
        assert!(s.validate().is_err());
        assert!(ModelSpec::mlp_scalar(2, &[0]).validate().is_err());
    }

    #[test]
    fn csv_and_json_roundtrip() {
        let spec = ModelSpec::mlp_scalar(2, &[3]);
        let p = ModelParams::<f64>::init(spec.clone(), 5).unwrap().with_psi(vec![-0.5, 0.25]);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = ModelParams::<f64>::read_csv(spec, buf.as_slice()).unwrap();
        assert_eq!(p, q);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save_json(&path).unwrap();
        assert_eq!(ModelParams::<f64>::load_json(&path).unwrap(), p);
    }
}
