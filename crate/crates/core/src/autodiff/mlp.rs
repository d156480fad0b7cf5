use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::AutodiffError;

/// Dense layer `y = W x + b`, with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Feed-forward network: tanh on hidden layers, identity on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Tape handles for the parameters of one [`Mlp`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, AutodiffError> {
        validate_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-a..=a));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, AutodiffError> {
        validate_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, AutodiffError> {
        if layers.is_empty() {
            return Err(AutodiffError::InvalidArchitecture("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.nrows() != l.bias.len() || l.weight.is_empty() {
                return Err(AutodiffError::InvalidArchitecture(format!(
                    "layer {i}: weight {:?} vs bias {}",
                    l.weight.dim(),
                    l.bias.len()
                )));
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                return Err(AutodiffError::InvalidArchitecture(format!(
                    "layer {i} expects {} inputs, previous layer emits {}",
                    l.weight.ncols(),
                    layers[i - 1].weight.nrows()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weight.nrows()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, AutodiffError> {
        if x.len() != self.input_dim() {
            return Err(AutodiffError::InputDim {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut h = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.weight.dot(&h) + &l.bias;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h.to_vec())
    }

    /// Row-wise forward pass over a batch (`n x input_dim`).
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>, AutodiffError> {
        if x.ncols() != self.input_dim() {
            return Err(AutodiffError::InputDim {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.dot(&self.layers[0].weight.t()) + &self.layers[0].bias;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.dot(&l.weight.t()) + &l.bias;
            }
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h)
    }

    /// Forward pass with a parameter tangent: returns the outputs and the
    /// directional derivative `J(x) · dparams` for every row of `x`.
    pub fn jvp_batch(
        &self,
        x: &Array2<f64>,
        dparams: &[f64],
    ) -> Result<(Array2<f64>, Array2<f64>), AutodiffError> {
        if dparams.len() != self.param_count() {
            return Err(AutodiffError::ParamCount {
                expected: self.param_count(),
                got: dparams.len(),
            });
        }
        if x.ncols() != self.input_dim() {
            return Err(AutodiffError::InputDim {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let tangents = self.unflatten(dparams);
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        let mut dh: Array2<f64> = Array2::zeros(x.dim());
        for (i, (l, t)) in self.layers.iter().zip(&tangents).enumerate() {
            let z = h.dot(&l.weight.t()) + &l.bias;
            let mut dz = h.dot(&t.weight.t()) + &t.bias;
            if i > 0 {
                dz += &dh.dot(&l.weight.t());
            }
            if i < last {
                h = z.mapv(f64::tanh);
                dh = dz;
                ndarray::Zip::from(&mut dh)
                    .and(&h)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
            } else {
                h = z;
                dh = dz;
            }
        }
        Ok((h, dh))
    }

    /// Records every weight and bias as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = tape.leaf(l.weight.clone());
                let b = tape.leaf(l.bias.clone().insert_axis(Axis(0)));
                (w, b)
            })
            .collect();
        MlpVars { layers }
    }

    /// Records the parameters as constants (no parameter gradients).
    pub fn register_frozen(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = tape.constant(l.weight.clone());
                let b = tape.constant(l.bias.clone().insert_axis(Axis(0)));
                (w, b)
            })
            .collect();
        MlpVars { layers }
    }

    /// Forward pass on the tape; `x` is `n x input_dim`.
    pub fn forward_on(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var, AutodiffError> {
        let (_, cols) = tape.shape(x);
        if cols != self.input_dim() {
            return Err(AutodiffError::InputDim {
                expected: self.input_dim(),
                got: cols,
            });
        }
        let last = vars.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = tape.matmul_t(h, w)?;
            let z = tape.add(z, b)?;
            h = if i < last { tape.tanh(z) } else { z };
        }
        Ok(h)
    }

    /// Parameter gradient flattened in [`Mlp::params`] order.
    pub fn flat_grad(&self, grads: &Gradients, vars: &MlpVars) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for &(w, b) in &vars.layers {
            out.extend(grads.wrt(w).iter());
            out.extend(grads.wrt(b).iter());
        }
        out
    }

    /// Flattened parameters: per layer, row-major weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), AutodiffError> {
        if params.len() != self.param_count() {
            return Err(AutodiffError::ParamCount {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    fn unflatten(&self, flat: &[f64]) -> Vec<Layer> {
        let mut out = self.clone();
        out.set_params(flat).expect("length checked by caller");
        out.layers
    }

    /// Plain-text form: a `mlp <k> <n0> .. <nk>` header, one line of row-major
    /// weights per layer, then one line of biases per layer. Values carry 17
    /// significant digits so 64-bit floats round-trip exactly.
    pub fn to_text(&self) -> String {
        let sizes = self.sizes();
        let mut s = format!("mlp {}", self.layers.len());
        for n in &sizes {
            write!(s, " {n}").unwrap();
        }
        s.push('\n');
        for l in &self.layers {
            s.push_str(&join_exact(l.weight.iter()));
            s.push('\n');
        }
        for l in &self.layers {
            s.push_str(&join_exact(l.bias.iter()));
            s.push('\n');
        }
        s
    }

    /// Parses [`Mlp::to_text`] output from the front of `lines`, consuming
    /// exactly the header and `2k` data lines.
    pub fn from_lines<'a, I>(lines: &mut I) -> Result<Self, AutodiffError>
    where
        I: Iterator<Item = &'a str>,
    {
        let header = next_nonempty(lines).ok_or_else(|| AutodiffError::Format("empty input".into()))?;
        let mut tok = header.split_whitespace();
        if tok.next() != Some("mlp") {
            return Err(AutodiffError::Format(format!("expected `mlp` header, got `{header}`")));
        }
        let k: usize = parse_tok(tok.next(), "layer count")?;
        let sizes: Vec<usize> = tok
            .map(|t| parse_tok(Some(t), "layer size"))
            .collect::<Result<_, _>>()?;
        if k == 0 || sizes.len() != k + 1 {
            return Err(AutodiffError::Format(format!(
                "header declares {k} layers but lists {} sizes",
                sizes.len()
            )));
        }
        validate_sizes(&sizes)?;
        let mut weights = Vec::with_capacity(k);
        for (i, w) in sizes.windows(2).enumerate() {
            let line = next_nonempty(lines)
                .ok_or_else(|| AutodiffError::Format(format!("missing weights for layer {i}")))?;
            let vals = parse_floats(line)?;
            if vals.len() != w[0] * w[1] {
                return Err(AutodiffError::Format(format!(
                    "layer {i}: expected {} weights, found {}",
                    w[0] * w[1],
                    vals.len()
                )));
            }
            weights.push(Array2::from_shape_vec((w[1], w[0]), vals).expect("length checked"));
        }
        let mut layers = Vec::with_capacity(k);
        for (i, weight) in weights.into_iter().enumerate() {
            let line = next_nonempty(lines)
                .ok_or_else(|| AutodiffError::Format(format!("missing biases for layer {i}")))?;
            let vals = parse_floats(line)?;
            if vals.len() != sizes[i + 1] {
                return Err(AutodiffError::Format(format!(
                    "layer {i}: expected {} biases, found {}",
                    sizes[i + 1],
                    vals.len()
                )));
            }
            layers.push(Layer {
                weight,
                bias: Array1::from(vals),
            });
        }
        Self::from_layers(layers)
    }

    pub fn from_text(text: &str) -> Result<Self, AutodiffError> {
        let mut lines = text.lines();
        let mlp = Self::from_lines(&mut lines)?;
        if let Some(extra) = next_nonempty(&mut lines) {
            return Err(AutodiffError::Format(format!("trailing content: `{extra}`")));
        }
        Ok(mlp)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<(), AutodiffError> {
    if sizes.len() < 2 {
        return Err(AutodiffError::InvalidArchitecture(format!(
            "need at least input and output sizes, got {sizes:?}"
        )));
    }
    if sizes.iter().any(|&n| n == 0) {
        return Err(AutodiffError::InvalidArchitecture(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

pub(crate) fn join_exact<'a>(vals: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (i, v) in vals.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:.16e}").unwrap();
    }
    s
}

pub(crate) fn next_nonempty<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> Option<&'a str> {
    lines.map(str::trim).find(|l| !l.is_empty())
}

pub(crate) fn parse_floats(line: &str) -> Result<Vec<f64>, AutodiffError> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| AutodiffError::Format(format!("bad number `{t}`: {e}")))
        })
        .collect()
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T, AutodiffError> {
    let t = tok.ok_or_else(|| AutodiffError::Format(format!("missing {what}")))?;
    t.parse()
        .map_err(|_| AutodiffError::Format(format!("bad {what} `{t}`")))
}
