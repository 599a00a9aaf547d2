//! A single LSTM cell with cached forward passes and a hand-derived
//! backward pass. Shared by the character language models and the tagger's
//! BiLSTM layers.
//!
//! Gate layout inside the stacked weight matrices is `[input, forget,
//! output, candidate]`, each block `hidden` rows tall.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{init_matrix, init_vector, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    /// 4H x D input weights.
    pub w_input: Array2<f64>,
    /// 4H x H recurrent weights.
    pub w_recur: Array2<f64>,
    /// 4H bias.
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct LstmGrads {
    pub w_input: Array2<f64>,
    pub w_recur: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-timestep activations cached for backprop.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub gate_in: Array1<f64>,
    pub gate_forget: Array1<f64>,
    pub gate_out: Array1<f64>,
    pub candidate: Array1<f64>,
    pub cell: Array1<f64>,
    pub cell_tanh: Array1<f64>,
    pub hidden: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub inputs: Vec<Array1<f64>>,
    pub steps: Vec<LstmStep>,
}

impl LstmTrace {
    pub fn hidden_states(&self) -> Vec<Array1<f64>> {
        self.steps.iter().map(|s| s.hidden.clone()).collect()
    }

    pub fn last_hidden(&self) -> Option<&Array1<f64>> {
        self.steps.last().map(|s| &s.hidden)
    }

    pub fn last_cell(&self) -> Option<&Array1<f64>> {
        self.steps.last().map(|s| &s.cell)
    }
}

impl LstmCell {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut bias = init_vector(4 * hidden, input_dim + hidden, rng);
        // Forget gate bias starts at 1.0.
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        LstmCell {
            input_dim,
            hidden,
            w_input: init_matrix(4 * hidden, input_dim, input_dim, rng),
            w_recur: init_matrix(4 * hidden, hidden, hidden, rng),
            bias,
        }
    }

    pub fn zero_grads(&self) -> LstmGrads {
        LstmGrads {
            w_input: Array2::zeros(self.w_input.dim()),
            w_recur: Array2::zeros(self.w_recur.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    /// Runs the recurrence over `inputs` starting from `state` (or zeros),
    /// caching every activation.
    pub fn forward(
        &self,
        inputs: &[Array1<f64>],
        state: Option<(&Array1<f64>, &Array1<f64>)>,
    ) -> LstmTrace {
        let h = self.hidden;
        let mut prev_h = state.map(|(h, _)| h.clone()).unwrap_or_else(|| Array1::zeros(h));
        let mut prev_c = state.map(|(_, c)| c.clone()).unwrap_or_else(|| Array1::zeros(h));
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let pre = self.w_input.dot(x) + self.w_recur.dot(&prev_h) + &self.bias;
            let gate_in = pre.slice(s![0..h]).mapv(sigmoid);
            let gate_forget = pre.slice(s![h..2 * h]).mapv(sigmoid);
            let gate_out = pre.slice(s![2 * h..3 * h]).mapv(sigmoid);
            let candidate = pre.slice(s![3 * h..4 * h]).mapv(f64::tanh);
            let cell = &gate_forget * &prev_c + &gate_in * &candidate;
            let cell_tanh = cell.mapv(f64::tanh);
            let hidden = &gate_out * &cell_tanh;
            prev_h = hidden.clone();
            prev_c = cell.clone();
            steps.push(LstmStep {
                gate_in,
                gate_forget,
                gate_out,
                candidate,
                cell,
                cell_tanh,
                hidden,
            });
        }
        LstmTrace {
            inputs: inputs.to_vec(),
            steps,
        }
    }

    /// Reverse accumulation through the unrolled recurrence. `d_hidden`
    /// holds the loss gradient w.r.t. each timestep's hidden output.
    /// Returns gradients for the cell parameters and for each input.
    /// `initial_state` must match what `forward` was given.
    pub fn backward(
        &self,
        trace: &LstmTrace,
        d_hidden: &[Array1<f64>],
        initial_state: Option<(&Array1<f64>, &Array1<f64>)>,
        grads: &mut LstmGrads,
    ) -> Vec<Array1<f64>> {
        let h = self.hidden;
        let t_len = trace.steps.len();
        assert_eq!(d_hidden.len(), t_len);
        let mut d_inputs = vec![Array1::zeros(self.input_dim); t_len];
        let mut carry_h: Array1<f64> = Array1::zeros(h);
        let mut carry_c: Array1<f64> = Array1::zeros(h);
        for t in (0..t_len).rev() {
            let step = &trace.steps[t];
            let dh = &d_hidden[t] + &carry_h;
            let d_gate_out = &dh * &step.cell_tanh;
            let mut dc = &dh * &step.gate_out * step.cell_tanh.mapv(|v| 1.0 - v * v);
            dc += &carry_c;
            let prev_c = if t == 0 {
                initial_state
                    .map(|(_, c)| c.clone())
                    .unwrap_or_else(|| Array1::zeros(h))
            } else {
                trace.steps[t - 1].cell.clone()
            };
            let prev_h = if t == 0 {
                initial_state
                    .map(|(hh, _)| hh.clone())
                    .unwrap_or_else(|| Array1::zeros(h))
            } else {
                trace.steps[t - 1].hidden.clone()
            };
            let d_gate_in = &dc * &step.candidate;
            let d_gate_forget = &dc * &prev_c;
            let d_candidate = &dc * &step.gate_in;
            carry_c = &dc * &step.gate_forget;

            // Pre-activation gradients.
            let mut d_pre = Array1::zeros(4 * h);
            d_pre
                .slice_mut(s![0..h])
                .assign(&(&d_gate_in * &step.gate_in * step.gate_in.mapv(|v| 1.0 - v)));
            d_pre.slice_mut(s![h..2 * h]).assign(
                &(&d_gate_forget * &step.gate_forget * step.gate_forget.mapv(|v| 1.0 - v)),
            );
            d_pre
                .slice_mut(s![2 * h..3 * h])
                .assign(&(&d_gate_out * &step.gate_out * step.gate_out.mapv(|v| 1.0 - v)));
            d_pre
                .slice_mut(s![3 * h..4 * h])
                .assign(&(&d_candidate * step.candidate.mapv(|v| 1.0 - v * v)));

            outer_add(&mut grads.w_input, &d_pre, &trace.inputs[t]);
            outer_add(&mut grads.w_recur, &d_pre, &prev_h);
            grads.bias += &d_pre;
            d_inputs[t] = self.w_input.t().dot(&d_pre);
            carry_h = self.w_recur.t().dot(&d_pre);
        }
        d_inputs
    }

    pub fn sgd_step(&mut self, grads: &LstmGrads, lr: f64) {
        self.w_input.scaled_add(-lr, &grads.w_input);
        self.w_recur.scaled_add(-lr, &grads.w_recur);
        self.bias.scaled_add(-lr, &grads.bias);
    }

    pub fn is_finite(&self) -> bool {
        self.w_input.iter().all(|v| v.is_finite())
            && self.w_recur.iter().all(|v| v.is_finite())
            && self.bias.iter().all(|v| v.is_finite())
    }
}

/// acc += col * row^T
pub fn outer_add(acc: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    for (i, &c) in col.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mut acc_row = acc.row_mut(i);
        acc_row.scaled_add(c, row);
    }
}
