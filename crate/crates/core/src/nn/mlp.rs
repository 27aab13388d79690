use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::NnError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Elu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    #[default]
    Identity,
}

/// Shape of a dense feed-forward network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub output_dim: usize,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_widths,
            activation: Activation::Elu,
            output_dim,
            output_activation: OutputActivation::Identity,
        }
    }

    /// Two hidden layers of width `problem_dim + 10`.
    pub fn standard(input_dim: usize, problem_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, vec![problem_dim + 10; 2], output_dim)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(NnError::InvalidSpec(format!(
                "all layer widths must be positive, got {} -> {:?} -> {}",
                self.input_dim, self.hidden_widths, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every dense layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self.hidden_widths.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// One named block of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat storage for every trainable quantity of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    values: Vec<T>,
    layout: Vec<ParamEntry>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            layout: Vec::new(),
        }
    }

    /// Appends a block and returns its offset.
    ///
    /// Panics if `values` does not match `shape`.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<T>) -> usize {
        assert_eq!(values.len(), shape.iter().product::<usize>(), "block size mismatch");
        let offset = self.values.len();
        self.layout.push(ParamEntry {
            name: name.into(),
            offset,
            shape,
        });
        self.values.extend(values);
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    pub fn block(&self, entry: &ParamEntry) -> &[T] {
        &self.values[entry.offset..entry.offset + entry.len()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct DenseSlot {
    weights: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// A network registered in a [`ParamStore`]: its spec plus the offsets of
/// each layer's weights and biases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<DenseSlot>,
}

impl Mlp {
    /// Registers a freshly initialized network in `store`.
    ///
    /// Weights are uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: &MlpSpec,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<T> = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.gen_range(-limit..limit)))
                .collect();
            let weights = store.push(format!("{name}.l{l}.weight"), vec![fan_out, fan_in], w);
            let bias = store.push(
                format!("{name}.l{l}.bias"),
                vec![fan_out],
                vec![T::zero(); fan_out],
            );
            layers.push(DenseSlot {
                weights,
                bias,
                fan_in,
                fan_out,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Offset of the output layer's bias vector.
    pub fn output_bias_offset(&self) -> usize {
        self.layers.last().map(|l| l.bias).unwrap_or(0)
    }

    /// Records the network on `tape`; `x` is `input_dim x batch`.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, slot) in self.layers.iter().enumerate() {
            h = tape.affine(h, slot.weights, slot.bias, slot.fan_out);
            if l < last {
                h = match self.spec.activation {
                    Activation::Elu => tape.elu(h),
                };
            }
        }
        h
    }

    /// Single-input evaluation without a tape.
    pub fn eval<T: Scalar>(&self, params: &[T], x: &[T]) -> Result<Vec<T>, NnError> {
        if x.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (l, slot) in self.layers.iter().enumerate() {
            let w = &params[slot.weights..slot.weights + slot.fan_in * slot.fan_out];
            let b = &params[slot.bias..slot.bias + slot.fan_out];
            let mut next: Vec<T> = b.to_vec();
            for (j, out) in next.iter_mut().enumerate() {
                for (k, &hk) in h.iter().enumerate() {
                    *out = *out + w[j * slot.fan_in + k] * hk;
                }
            }
            if l < last {
                for v in &mut next {
                    *v = elu(*v);
                }
            }
            h = next;
        }
        Ok(h)
    }
}

#[inline]
pub fn elu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v.exp() - T::one()
    }
}

/// Fresh store holding a single network, deterministic in `seed`.
pub fn init_mlp<T: Scalar>(spec: &MlpSpec, seed: u64) -> Result<(ParamStore<T>, Mlp), NnError> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::register(&mut store, "mlp", spec, &mut rng)?;
    Ok((store, net))
}

pub fn forward_mlp<T: Scalar>(params: &ParamStore<T>, net: &Mlp, x: &[T]) -> Result<Vec<T>, NnError> {
    net.eval(params.values(), x)
}
