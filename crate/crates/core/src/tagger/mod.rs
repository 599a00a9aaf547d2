//! The BiLSTM-CRF tagger: stacked bidirectional LSTM encoder, dropout,
//! fully-connected stack, linear projection to tag space and a linear-chain
//! CRF, trained end to end with hand-derived gradients.

pub mod checkpoint;
pub mod crf;
pub mod network;
pub mod train;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{LstmCell, LstmGrads};
use crate::math::{init_matrix, init_vector};
use crate::schema::TagScheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerConfig {
    pub scheme: TagScheme,
    pub num_bilstm_layers: usize,
    pub lstm_hidden: usize,
    #[serde(default = "default_fc_width")]
    pub fc_width: usize,
    #[serde(default = "default_fc_depth")]
    pub fc_depth: usize,
    pub dropout_rate: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_use_bias")]
    pub use_bias: bool,
    /// Plain SGD by default; set nonzero for classical momentum.
    #[serde(default)]
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            scheme: TagScheme::Bio,
            num_bilstm_layers: 1,
            lstm_hidden: 32,
            fc_width: default_fc_width(),
            fc_depth: default_fc_depth(),
            dropout_rate: 0.1,
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            epochs: 10,
            use_bias: true,
            momentum: 0.0,
            seed: 42,
        }
    }
}

fn default_fc_width() -> usize {
    30
}

fn default_fc_depth() -> usize {
    2
}

fn default_learning_rate() -> f64 {
    0.001
}

fn default_batch_size() -> usize {
    1
}

fn default_use_bias() -> bool {
    true
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bilstm_layers == 0 {
            return Err(Error::config("num_bilstm_layers", "must be at least 1"));
        }
        if self.lstm_hidden == 0 {
            return Err(Error::config("lstm_hidden", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::config("learning_rate", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: init_matrix(out_dim, in_dim, in_dim, rng),
            bias: init_vector(out_dim, in_dim, rng),
        }
    }

    pub fn apply(&self, x: &Array1<f64>, use_bias: bool) -> Array1<f64> {
        let mut y = self.weight.dot(x);
        if use_bias {
            y += &self.bias;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmLayer {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// All learnable tensors of the tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerParams {
    pub config: TaggerConfig,
    pub input_dim: usize,
    pub num_tags: usize,
    pub layers: Vec<BiLstmLayer>,
    pub fc: Vec<Linear>,
    pub proj: Linear,
    /// (K+2)x(K+2) CRF transitions; JSON encodes the frozen -inf cells as
    /// nulls, which plain f64 serialization cannot represent.
    #[serde(with = "serde_transitions")]
    pub transitions: Array2<f64>,
}

mod serde_transitions {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(arr: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let cells: Vec<Option<f64>> = arr
            .iter()
            .map(|&v| if v == f64::NEG_INFINITY { None } else { Some(v) })
            .collect();
        (arr.nrows(), arr.ncols(), cells).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let (rows, cols, cells): (usize, usize, Vec<Option<f64>>) = Deserialize::deserialize(d)?;
        if cells.len() != rows * cols {
            return Err(serde::de::Error::custom("transition matrix shape mismatch"));
        }
        let values: Vec<f64> = cells
            .into_iter()
            .map(|c| c.unwrap_or(f64::NEG_INFINITY))
            .collect();
        Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| serde::de::Error::custom(e.to_string()))
    }
}

impl TaggerParams {
    pub fn new(config: &TaggerConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::config("input_dim", "embedding width must be positive"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let hidden = config.lstm_hidden;
        let num_tags = config.scheme.alphabet_size();
        let mut layers = Vec::with_capacity(config.num_bilstm_layers);
        for layer in 0..config.num_bilstm_layers {
            let in_dim = if layer == 0 { input_dim } else { 2 * hidden };
            layers.push(BiLstmLayer {
                forward: LstmCell::new(in_dim, hidden, &mut rng),
                backward: LstmCell::new(in_dim, hidden, &mut rng),
            });
        }
        let mut fc = Vec::with_capacity(config.fc_depth);
        let mut in_dim = 2 * hidden;
        for _ in 0..config.fc_depth {
            fc.push(Linear::new(config.fc_width, in_dim, &mut rng));
            in_dim = config.fc_width;
        }
        let mut proj = Linear::new(num_tags, in_dim, &mut rng);
        if !config.use_bias {
            for layer in &mut layers {
                layer.forward.bias.fill(0.0);
                layer.backward.bias.fill(0.0);
            }
            for linear in &mut fc {
                linear.bias.fill(0.0);
            }
            proj.bias.fill(0.0);
        }
        Ok(TaggerParams {
            config: config.clone(),
            input_dim,
            num_tags,
            layers,
            fc,
            proj,
            transitions: crf::new_transitions(num_tags),
        })
    }

    pub fn all_finite(&self) -> bool {
        let finite_linear = |l: &Linear| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        };
        self.layers
            .iter()
            .all(|l| l.forward.is_finite() && l.backward.is_finite())
            && self.fc.iter().all(finite_linear)
            && finite_linear(&self.proj)
            && self
                .transitions
                .indexed_iter()
                .all(|((i, j), v)| {
                    v.is_finite()
                        || (*v == f64::NEG_INFINITY
                            && (j == crf::start_index(self.num_tags)
                                || i == crf::stop_index(self.num_tags)))
                })
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct TaggerGrads {
    pub layers: Vec<(LstmGrads, LstmGrads)>,
    pub fc: Vec<LinearGrads>,
    pub proj: LinearGrads,
    pub transitions: Array2<f64>,
}

impl TaggerGrads {
    pub fn zeros(params: &TaggerParams) -> Self {
        let zero_linear = |l: &Linear| LinearGrads {
            weight: Array2::zeros(l.weight.dim()),
            bias: Array1::zeros(l.bias.len()),
        };
        TaggerGrads {
            layers: params
                .layers
                .iter()
                .map(|l| (l.forward.zero_grads(), l.backward.zero_grads()))
                .collect(),
            fc: params.fc.iter().map(zero_linear).collect(),
            proj: zero_linear(&params.proj),
            transitions: Array2::zeros(params.transitions.dim()),
        }
    }

    pub fn add(&mut self, other: &TaggerGrads) {
        for ((af, ab), (bf, bb)) in self.layers.iter_mut().zip(&other.layers) {
            af.w_input += &bf.w_input;
            af.w_recur += &bf.w_recur;
            af.bias += &bf.bias;
            ab.w_input += &bb.w_input;
            ab.w_recur += &bb.w_recur;
            ab.bias += &bb.bias;
        }
        for (a, b) in self.fc.iter_mut().zip(&other.fc) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        self.proj.weight += &other.proj.weight;
        self.proj.bias += &other.proj.bias;
        self.transitions += &other.transitions;
    }
}

/// One SGD (optionally momentum) update. Frozen transition entries are
/// masked; bias tensors are skipped when `use_bias` is off.
pub fn apply_update(
    params: &mut TaggerParams,
    grads: &TaggerGrads,
    velocity: Option<&mut TaggerGrads>,
) {
    let lr = params.config.learning_rate;
    let momentum = params.config.momentum;
    let use_bias = params.config.use_bias;
    let mut masked = grads.transitions.clone();
    crf::mask_frozen(&mut masked, params.num_tags);

    match velocity {
        Some(vel) if momentum > 0.0 => {
            let scale = |v: &mut Array2<f64>, g: &Array2<f64>| {
                v.mapv_inplace(|x| x * momentum);
                *v += g;
            };
            let scale1 = |v: &mut Array1<f64>, g: &Array1<f64>| {
                v.mapv_inplace(|x| x * momentum);
                *v += g;
            };
            for ((layer, (gf, gb)), (vf, vb)) in params
                .layers
                .iter_mut()
                .zip(&grads.layers)
                .zip(vel.layers.iter_mut())
            {
                scale(&mut vf.w_input, &gf.w_input);
                scale(&mut vf.w_recur, &gf.w_recur);
                scale1(&mut vf.bias, &gf.bias);
                scale(&mut vb.w_input, &gb.w_input);
                scale(&mut vb.w_recur, &gb.w_recur);
                scale1(&mut vb.bias, &gb.bias);
                layer.forward.w_input.scaled_add(-lr, &vf.w_input);
                layer.forward.w_recur.scaled_add(-lr, &vf.w_recur);
                layer.backward.w_input.scaled_add(-lr, &vb.w_input);
                layer.backward.w_recur.scaled_add(-lr, &vb.w_recur);
                if use_bias {
                    layer.forward.bias.scaled_add(-lr, &vf.bias);
                    layer.backward.bias.scaled_add(-lr, &vb.bias);
                }
            }
            for ((linear, g), v) in params.fc.iter_mut().zip(&grads.fc).zip(vel.fc.iter_mut()) {
                scale(&mut v.weight, &g.weight);
                scale1(&mut v.bias, &g.bias);
                linear.weight.scaled_add(-lr, &v.weight);
                if use_bias {
                    linear.bias.scaled_add(-lr, &v.bias);
                }
            }
            scale(&mut vel.proj.weight, &grads.proj.weight);
            scale1(&mut vel.proj.bias, &grads.proj.bias);
            params.proj.weight.scaled_add(-lr, &vel.proj.weight);
            if use_bias {
                params.proj.bias.scaled_add(-lr, &vel.proj.bias);
            }
            scale(&mut vel.transitions, &masked);
            let num_tags = params.num_tags;
            azip_update(&mut params.transitions, &vel.transitions, lr, num_tags);
        }
        _ => {
            for (layer, (gf, gb)) in params.layers.iter_mut().zip(&grads.layers) {
                layer.forward.w_input.scaled_add(-lr, &gf.w_input);
                layer.forward.w_recur.scaled_add(-lr, &gf.w_recur);
                layer.backward.w_input.scaled_add(-lr, &gb.w_input);
                layer.backward.w_recur.scaled_add(-lr, &gb.w_recur);
                if use_bias {
                    layer.forward.bias.scaled_add(-lr, &gf.bias);
                    layer.backward.bias.scaled_add(-lr, &gb.bias);
                }
            }
            for (linear, g) in params.fc.iter_mut().zip(&grads.fc) {
                linear.weight.scaled_add(-lr, &g.weight);
                if use_bias {
                    linear.bias.scaled_add(-lr, &g.bias);
                }
            }
            params.proj.weight.scaled_add(-lr, &grads.proj.weight);
            if use_bias {
                params.proj.bias.scaled_add(-lr, &grads.proj.bias);
            }
            let num_tags = params.num_tags;
            azip_update(&mut params.transitions, &masked, lr, num_tags);
        }
    }
}

fn azip_update(transitions: &mut Array2<f64>, grads: &Array2<f64>, lr: f64, num_tags: usize) {
    for ((i, j), t) in transitions.indexed_iter_mut() {
        if j == crf::start_index(num_tags) || i == crf::stop_index(num_tags) {
            continue;
        }
        *t -= lr * grads[[i, j]];
    }
}
