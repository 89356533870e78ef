use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Output nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Identity,
    Tanh,
}

/// Shape of an MLP. `depth` counts linear layers, so `depth - 1` hidden layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpArch {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub layer_norm: bool,
    pub head: Head,
    pub dropout_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[in, out]`.
    pub weight: Tensor,
    /// `[out]`.
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

/// Parameters of a feed-forward network: hidden layers are
/// `linear -> layer norm -> relu -> dropout`, the last layer is linear
/// followed by the head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub norms: Vec<Option<LayerNormParams>>,
    pub head: Head,
    pub dropout_rate: f64,
}

/// Dropout behaviour of a single forward pass.
pub enum Dropout<'a, R: Rng> {
    Off,
    Sample(&'a mut R),
    /// Pre-drawn keep masks (0 or 1), one per hidden layer.
    Fixed(&'a [Tensor]),
}

pub struct Forward {
    pub output: Var,
    /// Parameter nodes in [`MlpParams::tensors`] order.
    pub params: Vec<Var>,
}

const FINAL_ACTOR_INIT: f64 = 1e-3;

impl MlpParams {
    pub fn init(arch: &MlpArch, rng: &mut impl Rng) -> Result<Self> {
        if arch.depth == 0 || arch.input_dim == 0 || arch.output_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate architecture {arch:?}"
            )));
        }
        if arch.depth > 1 && arch.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&arch.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                arch.dropout_rate
            )));
        }
        let mut layers = Vec::with_capacity(arch.depth);
        let mut norms = Vec::with_capacity(arch.depth - 1);
        let mut fan_in = arch.input_dim;
        for l in 0..arch.depth {
            let last = l + 1 == arch.depth;
            let fan_out = if last { arch.output_dim } else { arch.hidden_dim };
            let range = if last && arch.head == Head::Tanh {
                FINAL_ACTOR_INIT
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            let mut uniform =
                |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-range..=range)).collect() };
            layers.push(Linear {
                weight: Tensor::new(vec![fan_in, fan_out], uniform(fan_in * fan_out))?,
                bias: Tensor::new(vec![fan_out], uniform(fan_out))?,
            });
            if !last {
                norms.push(arch.layer_norm.then(|| LayerNormParams {
                    gain: Tensor::full(&[fan_out], 1.0),
                    bias: Tensor::zeros(&[fan_out]),
                }));
            }
            fan_in = fan_out;
        }
        Ok(Self {
            layers,
            norms,
            head: arch.head,
            dropout_rate: arch.dropout_rate,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        if self.layers.len() > 1 {
            self.layers[0].weight.shape()[1]
        } else {
            0
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn has_layer_norm(&self) -> bool {
        self.norms.iter().any(Option::is_some)
    }

    /// Hidden layer widths, i.e. the shapes dropout masks must take per row.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.shape()[1])
            .collect()
    }

    /// All parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if let Some(Some(norm)) = norms.next() {
                out.push(&mut norm.gain);
                out.push(&mut norm.bias);
            }
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("l{l}.weight"), &layer.weight));
            out.push((format!("l{l}.bias"), &layer.bias));
            if let Some(Some(norm)) = self.norms.get(l) {
                out.push((format!("ln{l}.gain"), &norm.gain));
                out.push((format!("ln{l}.bias"), &norm.bias));
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds a network from named tensors, the inverse of [`named_tensors`].
    ///
    /// [`named_tensors`]: MlpParams::named_tensors
    pub fn from_named(mut named: Vec<(String, Tensor)>, head: Head, dropout_rate: f64) -> Result<Self> {
        let mut take = |name: String| -> Option<Tensor> {
            let pos = named.iter().position(|(n, _)| *n == name)?;
            Some(named.swap_remove(pos).1)
        };
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut l = 0;
        while let Some(weight) = take(format!("l{l}.weight")) {
            let bias = take(format!("l{l}.bias"))
                .ok_or_else(|| Error::Architecture(format!("missing l{l}.bias")))?;
            let norm = match (take(format!("ln{l}.gain")), take(format!("ln{l}.bias"))) {
                (Some(gain), Some(bias)) => Some(LayerNormParams { gain, bias }),
                (None, None) => None,
                _ => return Err(Error::Architecture(format!("incomplete ln{l}"))),
            };
            layers.push(Linear { weight, bias });
            norms.push(norm);
            l += 1;
        }
        if layers.is_empty() {
            return Err(Error::Architecture("no layers found".into()));
        }
        if !named.is_empty() {
            let extra: Vec<_> = named.iter().map(|(n, _)| n.clone()).collect();
            return Err(Error::Architecture(format!("unexpected tensors {extra:?}")));
        }
        if norms.pop().flatten().is_some() {
            return Err(Error::Architecture("output layer cannot carry layer norm".into()));
        }
        let params = Self {
            layers,
            norms,
            head,
            dropout_rate,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            let ws = layer.weight.shape();
            if ws.len() != 2 || layer.bias.shape() != [ws[1]] {
                return Err(Error::shape("mlp layer", ws, layer.bias.shape()));
            }
            if l > 0 {
                let prev = self.layers[l - 1].weight.shape()[1];
                if prev != ws[0] {
                    return Err(Error::shape("mlp chain", &[prev], &[ws[0]]));
                }
            }
            if let Some(Some(norm)) = self.norms.get(l) {
                if norm.gain.shape() != [ws[1]] || norm.bias.shape() != [ws[1]] {
                    return Err(Error::shape("mlp layer norm", &[ws[1]], norm.gain.shape()));
                }
            }
        }
        Ok(())
    }

    /// True when `other` has identical layer shapes and normalization layout.
    pub fn same_architecture(&self, other: &MlpParams) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
            && self.head == other.head
    }

    /// Records a forward pass. Parameters enter the graph as trainable
    /// leaves when `trainable`, otherwise as constants.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        input: Var,
        trainable: bool,
        dropout: Dropout<'_, R>,
    ) -> Result<Forward> {
        let params: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let output = self.apply(g, input, &params, dropout)?;
        Ok(Forward { output, params })
    }

    /// Records a forward pass over parameter nodes already on the graph (as
    /// returned in [`Forward::params`]), so several passes share gradients.
    pub fn apply<R: Rng>(
        &self,
        g: &mut Graph,
        input: Var,
        params: &[Var],
        mut dropout: Dropout<'_, R>,
    ) -> Result<Var> {
        let sx = g.shape(input);
        if sx.len() != 2 || sx[1] != self.input_dim() {
            return Err(Error::shape("forward_mlp input", sx, &[self.input_dim()]));
        }
        if params.len() != self.tensors().len() {
            return Err(Error::shape(
                "forward_mlp params",
                &[self.tensors().len()],
                &[params.len()],
            ));
        }
        let batch = sx[0];
        let mut next = params.iter().copied();
        let mut h = input;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = next.next().expect("weight");
            let b = next.next().expect("bias");
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            if l == last {
                break;
            }
            if self.norms[l].is_some() {
                let gain = next.next().expect("ln gain");
                let nb = next.next().expect("ln bias");
                h = g.layer_norm(h, gain, nb)?;
            }
            h = g.relu(h);
            let width = layer.weight.shape()[1];
            match &mut dropout {
                Dropout::Off => {}
                Dropout::Sample(rng) => {
                    if self.dropout_rate > 0.0 {
                        let mask = keep_mask(*rng, batch, width, self.dropout_rate);
                        h = g.mask(h, &scaled(&mask, self.dropout_rate))?;
                    }
                }
                Dropout::Fixed(masks) => {
                    let mask = masks.get(l).ok_or_else(|| {
                        Error::InvalidArgument(format!("missing dropout mask for layer {l}"))
                    })?;
                    h = g.mask(h, &scaled(mask, self.dropout_rate))?;
                }
            }
        }
        if self.head == Head::Tanh {
            h = g.tanh(h);
        }
        Ok(h)
    }

    /// Forward pass with a fresh graph, no gradients.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, x, false, Dropout::Off)?;
        Ok(g.value(out.output).clone())
    }

    /// Forward pass in the given mode. Dropout draws from `rng` only in
    /// train mode.
    pub fn run(&self, input: &Tensor, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let dropout = match mode {
            Mode::Train => Dropout::Sample(rng),
            Mode::Eval => Dropout::Off,
        };
        let out = self.forward(&mut g, x, false, dropout)?;
        Ok(g.value(out.output).clone())
    }
}

/// Bernoulli keep mask (1 with probability `1 - rate`).
pub fn keep_mask(rng: &mut impl Rng, rows: usize, cols: usize, rate: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("mask shape")
}

fn scaled(mask: &Tensor, rate: f64) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    mask.map(|m| m * keep)
}
