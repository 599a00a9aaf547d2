//! Forward and backward passes of the neural encoder: stacked BiLSTM,
//! inverted dropout on the BiLSTM output, tanh fully-connected stack and
//! linear projection into tag space.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::lstm::{outer_add, LstmTrace};
use crate::tagger::{TaggerGrads, TaggerParams};

/// Everything the backward pass needs from one forward run.
pub struct ForwardCache {
    pub token_vectors: Vec<Array1<f64>>,
    /// Per layer: (forward trace, backward trace over reversed inputs,
    /// layer input vectors).
    pub layer_traces: Vec<(LstmTrace, LstmTrace, Vec<Array1<f64>>)>,
    /// Inverted-dropout mask applied to the top BiLSTM output (all ones in
    /// eval mode).
    pub dropout_mask: Vec<Array1<f64>>,
    /// BiLSTM output after dropout, per token.
    pub encoder_out: Vec<Array1<f64>>,
    /// Per fc layer, per token: post-tanh activations.
    pub fc_out: Vec<Vec<Array1<f64>>>,
    pub emissions: Array2<f64>,
}

/// Runs the encoder over one turn's token vectors. `train_mode` enables
/// dropout, seeded by `dropout_seed`; eval mode is deterministic and
/// dropout-free. T=0 input is rejected.
pub fn forward_emissions(
    params: &TaggerParams,
    token_vectors: &[Array1<f64>],
    train_mode: bool,
    dropout_seed: u64,
) -> Result<ForwardCache> {
    if token_vectors.is_empty() {
        return Err(Error::data("empty turn: no token vectors"));
    }
    if token_vectors[0].len() != params.input_dim {
        return Err(Error::config(
            "input_dim",
            format!(
                "embedding width {} does not match model input width {}",
                token_vectors[0].len(),
                params.input_dim
            ),
        ));
    }
    let t_len = token_vectors.len();
    let hidden = params.config.lstm_hidden;
    let use_bias = params.config.use_bias;

    let mut layer_input: Vec<Array1<f64>> = token_vectors.to_vec();
    let mut layer_traces = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let fwd_trace = layer.forward.forward(&layer_input, None);
        let reversed: Vec<Array1<f64>> = layer_input.iter().rev().cloned().collect();
        let bwd_trace = layer.backward.forward(&reversed, None);
        let mut output = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut v = Array1::zeros(2 * hidden);
            v.slice_mut(s![..hidden]).assign(&fwd_trace.steps[t].hidden);
            v.slice_mut(s![hidden..])
                .assign(&bwd_trace.steps[t_len - 1 - t].hidden);
            output.push(v);
        }
        layer_traces.push((fwd_trace, bwd_trace, std::mem::replace(&mut layer_input, output)));
    }

    // Inverted dropout on the top BiLSTM output.
    let p = params.config.dropout_rate;
    let dropout_mask: Vec<Array1<f64>> = if train_mode && p > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(dropout_seed);
        let keep = 1.0 - p;
        (0..t_len)
            .map(|_| {
                Array1::from_shape_fn(2 * hidden, |_| {
                    if rng.gen_range(0.0..1.0) < p {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
            })
            .collect()
    } else {
        vec![Array1::ones(2 * hidden); t_len]
    };
    let encoder_out: Vec<Array1<f64>> = layer_input
        .iter()
        .zip(&dropout_mask)
        .map(|(v, m)| v * m)
        .collect();

    let mut fc_out: Vec<Vec<Array1<f64>>> = Vec::with_capacity(params.fc.len());
    let mut current = encoder_out.clone();
    for linear in &params.fc {
        let next: Vec<Array1<f64>> = current
            .iter()
            .map(|x| linear.apply(x, use_bias).mapv(f64::tanh))
            .collect();
        fc_out.push(next.clone());
        current = next;
    }

    let mut emissions = Array2::zeros((t_len, params.num_tags));
    for (t, x) in current.iter().enumerate() {
        let row = params.proj.apply(x, use_bias);
        emissions.row_mut(t).assign(&row);
    }

    Ok(ForwardCache {
        token_vectors: token_vectors.to_vec(),
        layer_traces,
        dropout_mask,
        encoder_out,
        fc_out,
        emissions,
    })
}

/// Reverse accumulation from emission gradients down to every encoder
/// parameter, accumulated into `grads`. The gradient w.r.t. the token
/// vectors is discarded (embeddings are frozen).
pub fn backward_emissions(
    params: &TaggerParams,
    cache: &ForwardCache,
    d_emissions: &Array2<f64>,
    grads: &mut TaggerGrads,
) {
    let t_len = cache.token_vectors.len();
    let hidden = params.config.lstm_hidden;

    // Projection layer.
    let top = cache.fc_out.last().unwrap_or(&cache.encoder_out);
    let mut d_current: Vec<Array1<f64>> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let d_row = d_emissions.row(t).to_owned();
        outer_add(&mut grads.proj.weight, &d_row, &top[t]);
        grads.proj.bias += &d_row;
        d_current.push(params.proj.weight.t().dot(&d_row));
    }

    // Fully-connected stack, top down, through the tanh nonlinearity.
    for idx in (0..params.fc.len()).rev() {
        let input = if idx == 0 {
            &cache.encoder_out
        } else {
            &cache.fc_out[idx - 1]
        };
        let output = &cache.fc_out[idx];
        let linear = &params.fc[idx];
        let g = &mut grads.fc[idx];
        let mut d_input = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let d_pre = &d_current[t] * &output[t].mapv(|y| 1.0 - y * y);
            outer_add(&mut g.weight, &d_pre, &input[t]);
            g.bias += &d_pre;
            d_input.push(linear.weight.t().dot(&d_pre));
        }
        d_current = d_input;
    }

    // Dropout mask (already carries the 1/(1-p) scaling).
    for (d, m) in d_current.iter_mut().zip(&cache.dropout_mask) {
        *d = &*d * m;
    }

    // Stacked BiLSTM, top layer down.
    for (layer_idx, layer) in params.layers.iter().enumerate().rev() {
        let (fwd_trace, bwd_trace, _input) = &cache.layer_traces[layer_idx];
        let d_fwd: Vec<Array1<f64>> = d_current
            .iter()
            .map(|d| d.slice(s![..hidden]).to_owned())
            .collect();
        // Backward-direction trace is time-reversed.
        let d_bwd: Vec<Array1<f64>> = d_current
            .iter()
            .rev()
            .map(|d| d.slice(s![hidden..]).to_owned())
            .collect();
        let (gf, gb) = &mut grads.layers[layer_idx];
        let d_in_fwd = layer.forward.backward(fwd_trace, &d_fwd, None, gf);
        let d_in_bwd = layer.backward.backward(bwd_trace, &d_bwd, None, gb);
        if layer_idx == 0 {
            break;
        }
        let mut d_input = Vec::with_capacity(t_len);
        for t in 0..t_len {
            d_input.push(&d_in_fwd[t] + &d_in_bwd[t_len - 1 - t]);
        }
        d_current = d_input;
    }
}

/// Loss and parameter gradients for one turn: CRF negative log-likelihood
/// backpropagated through the whole encoder.
pub fn loss_and_grads(
    params: &TaggerParams,
    token_vectors: &[Array1<f64>],
    gold: &[usize],
    train_mode: bool,
    dropout_seed: u64,
    grads: &mut TaggerGrads,
) -> Result<f64> {
    let cache = forward_emissions(params, token_vectors, train_mode, dropout_seed)?;
    let (nll, d_emissions, d_transitions) =
        super::crf::crf_nll_grad(&cache.emissions, &params.transitions, gold)?;
    grads.transitions += &d_transitions;
    backward_emissions(params, &cache, &d_emissions, grads);
    Ok(nll)
}
