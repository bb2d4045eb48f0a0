//! Fully connected tanh network with a linear scalar output.
//!
//! Parameters live in one flat array. Layer `l` stores its weight matrix
//! row-major (`rows = fan_out`, `cols = fan_in`) at `offset`, followed
//! immediately by its `rows` biases.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Dual2, DualVar, Tape, Var};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network shape: {0}")]
    Shape(String),
    #[error("expected {expected} inputs, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("non-finite input {value} in slot {slot}")]
    NonFiniteInput { slot: usize, value: f64 },
    #[error("parameter array has {got} entries, shape needs {expected}")]
    ParamLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl NetworkShape {
    pub const OUTPUT_DIM: usize = 1;

    /// Four hidden layers of 24 tanh units.
    pub fn standard(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 4,
            hidden_width: 24,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(2..=3).contains(&self.input_dim) {
            return Err(NetworkError::Shape(format!(
                "input_dim must be 2 or 3, got {}",
                self.input_dim
            )));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(NetworkError::Shape(
                "hidden_layers and hidden_width must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut out = Vec::with_capacity(self.hidden_layers + 1);
        let mut offset = 0;
        let mut fan_in = self.input_dim;
        for l in 0..=self.hidden_layers {
            let rows = if l == self.hidden_layers {
                Self::OUTPUT_DIM
            } else {
                self.hidden_width
            };
            out.push(LayerLayout {
                rows,
                cols: fan_in,
                offset,
            });
            offset += rows * fan_in + rows;
            fan_in = rows;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerLayout::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayerLayout {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.rows * self.cols;
        start..start + self.rows
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    shape: NetworkShape,
    layers: Vec<LayerLayout>,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl NetworkParams {
    /// Glorot-uniform weights in `±√(6/(fan_in + fan_out))`, zero biases.
    pub fn init(shape: NetworkShape, seed: u64) -> Result<Self, NetworkError> {
        shape.validate()?;
        let layers = shape.layers();
        let mut values = vec![0.0; shape.param_count()];
        let mut rng = stream_rng(seed, Stream::Init);
        for layer in &layers {
            let bound = (6.0 / (layer.cols + layer.rows) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in &mut values[layer.weight_range()] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(Self {
            shape,
            layers,
            seed,
            values,
        })
    }

    pub fn from_values(shape: NetworkShape, seed: u64, values: Vec<f64>) -> Result<Self, NetworkError> {
        shape.validate()?;
        let expected = shape.param_count();
        if values.len() != expected {
            return Err(NetworkError::ParamLength {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            shape,
            layers: shape.layers(),
            seed,
            values,
        })
    }

    pub fn zeros(shape: NetworkShape) -> Result<Self, NetworkError> {
        Self::from_values(shape, 0, vec![0.0; shape.param_count()])
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn output_bias_mut(&mut self) -> &mut f64 {
        let idx = self.layers.last().expect("at least one layer").bias_range().start;
        &mut self.values[idx]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_point(&self, point: &[f64]) -> Result<(), NetworkError> {
        if point.len() != self.shape.input_dim {
            return Err(NetworkError::InputLength {
                expected: self.shape.input_dim,
                got: point.len(),
            });
        }
        if let Some((slot, &value)) = point.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(NetworkError::NonFiniteInput { slot, value });
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, point: &[f64]) -> Result<f64, NetworkError> {
        self.check_point(point)?;
        let mut act = point.to_vec();
        let mut next = Vec::with_capacity(self.shape.hidden_width);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &self.values[layer.weight_range()];
            let b = &self.values[layer.bias_range()];
            next.clear();
            next.extend(w.chunks_exact(layer.cols).zip(b).map(|(row, bias)| {
                let z = row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + bias;
                if l == last {
                    z
                } else {
                    z.tanh()
                }
            }));
            std::mem::swap(&mut act, &mut next);
        }
        Ok(act[0])
    }

    /// Forward pass propagating a [`Dual2`] seeded in input slot `slot`.
    pub fn forward_dual(&self, point: &[f64], slot: usize) -> Result<Dual2, NetworkError> {
        self.check_point(point)?;
        let mut act: Vec<Dual2> = point
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual2::seed(i, slot, v))
            .collect();
        let mut next = Vec::with_capacity(self.shape.hidden_width);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &self.values[layer.weight_range()];
            let b = &self.values[layer.bias_range()];
            next.clear();
            next.extend(w.chunks_exact(layer.cols).zip(b).map(|(row, &bias)| {
                let mut z = Dual2::constant(bias);
                for (&wi, &a) in row.iter().zip(&act) {
                    z = z + a.scale(wi);
                }
                if l == last {
                    z
                } else {
                    z.tanh()
                }
            }));
            std::mem::swap(&mut act, &mut next);
        }
        Ok(act[0])
    }

    /// `u` with first and second derivatives in the two spatial slots.
    pub fn forward_with_derivatives(&self, point: &[f64]) -> Result<Derivatives, NetworkError> {
        let dx = self.forward_dual(point, 0)?;
        let dy = self.forward_dual(point, 1)?;
        Ok(Derivatives {
            u: dx.value,
            u_x: dx.d1,
            u_y: dy.d1,
            u_xx: dx.d2,
            u_yy: dy.d2,
        })
    }

    /// Records the dual forward pass for slot `slot` on `tape`, with `params`
    /// being the tape leaves of `self.values`.
    pub fn record_dual(
        &self,
        tape: &mut Tape,
        params: &[Var],
        point: &[f64],
        slot: usize,
    ) -> Result<DualVar, NetworkError> {
        self.check_point(point)?;
        if params.len() != self.values.len() {
            return Err(NetworkError::ParamLength {
                expected: self.values.len(),
                got: params.len(),
            });
        }
        let mut act: Vec<DualVar> = point
            .iter()
            .enumerate()
            .map(|(i, &v)| tape.seed_input(i, slot, v))
            .collect();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &params[layer.weight_range()];
            let b = &params[layer.bias_range()];
            let mut next = Vec::with_capacity(layer.rows);
            for (row, &bias) in w.chunks_exact(layer.cols).zip(b) {
                let zero = tape.constant(0.0);
                let mut z = DualVar {
                    value: bias,
                    d1: zero,
                    d2: zero,
                };
                for (&wi, &a) in row.iter().zip(&act) {
                    let term = tape.dual_mul_scalar(a, wi);
                    z = tape.dual_add(z, term);
                }
                next.push(if l == last { z } else { tape.tanh_node(z) });
            }
            act = next;
        }
        Ok(act[0])
    }

    /// Tape version of [`forward_with_derivatives`](Self::forward_with_derivatives).
    pub fn record_with_derivatives(
        &self,
        tape: &mut Tape,
        params: &[Var],
        point: &[f64],
    ) -> Result<DerivativeVars, NetworkError> {
        let dx = self.record_dual(tape, params, point, 0)?;
        let dy = self.record_dual(tape, params, point, 1)?;
        Ok(DerivativeVars {
            u: dx.value,
            u_x: dx.d1,
            u_y: dy.d1,
            u_xx: dx.d2,
            u_yy: dy.d2,
        })
    }
}

/// `(u, u_x, u_y, u_xx, u_yy)` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Derivatives {
    pub u: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub u_xx: f64,
    pub u_yy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerivativeVars {
    pub u: Var,
    pub u_x: Var,
    pub u_y: Var,
    pub u_xx: Var,
    pub u_yy: Var,
}

/// How a `(x, y, k)` triple is turned into a network input vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputEncoding {
    /// Fixed-k model: inputs are `(x, y)` only.
    Spatial,
    /// Parametric model: `log10(k)` mapped affinely so `[k_min, k_max]` → `[-1, 1]`.
    LogK { k_min: f64, k_max: f64 },
    /// Parametric model fed the raw coefficient.
    RawK,
}

impl InputEncoding {
    pub fn input_dim(&self) -> usize {
        match self {
            InputEncoding::Spatial => 2,
            _ => 3,
        }
    }

    pub fn encode_k(&self, k: f64) -> Option<f64> {
        match *self {
            InputEncoding::Spatial => None,
            InputEncoding::LogK { k_min, k_max } => {
                let (lo, hi) = (k_min.log10(), k_max.log10());
                Some(2.0 * (k.log10() - lo) / (hi - lo) - 1.0)
            }
            InputEncoding::RawK => Some(k),
        }
    }

    /// Writes the encoded point into `out` and returns the filled prefix.
    pub fn encode<'a>(&self, x: f64, y: f64, k: f64, out: &'a mut [f64; 3]) -> &'a [f64] {
        out[0] = x;
        out[1] = y;
        match self.encode_k(k) {
            Some(kk) => {
                out[2] = kk;
                &out[..3]
            }
            None => &out[..2],
        }
    }
}
