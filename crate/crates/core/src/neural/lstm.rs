//! Single LSTM layer with standard sigmoid/tanh gates, unrolled manually
//! over episode steps.

/// Recurrent state carried between steps. Reset to zeros at episode start.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            hidden: vec![0.0; dim],
            cell: vec![0.0; dim],
        }
    }
}

/// Gate activations cached for backpropagation through one step.
#[derive(Clone, Debug)]
pub struct LstmCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub cell_cand: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub cell: Vec<f64>,
    pub cell_tanh: Vec<f64>,
}

/// Weights are stacked by gate in the order input, forget, candidate,
/// output: `w_ih` is `[4H][input_dim]`, `w_hh` is `[4H][H]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_ih: Vec<f32>,
    pub w_hh: Vec<f32>,
    pub bias: Vec<f32>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_ih: vec![0.0; 4 * hidden_dim * input_dim],
            w_hh: vec![0.0; 4 * hidden_dim * hidden_dim],
            bias: vec![0.0; 4 * hidden_dim],
        }
    }

    fn preactivations(&self, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let n = 4 * self.hidden_dim;
        let mut pre = Vec::with_capacity(n);
        for g in 0..n {
            let mut acc = self.bias[g] as f64;
            let row = &self.w_ih[g * self.input_dim..(g + 1) * self.input_dim];
            for (wv, xv) in row.iter().zip(x) {
                acc += *wv as f64 * xv;
            }
            let row = &self.w_hh[g * self.hidden_dim..(g + 1) * self.hidden_dim];
            for (wv, hv) in row.iter().zip(h_prev) {
                acc += *wv as f64 * hv;
            }
            pre.push(acc);
        }
        pre
    }

    /// One step; returns the new state and the cache needed for backward.
    pub fn forward(&self, x: &[f64], state: &LstmState) -> (LstmState, LstmCache) {
        let hd = self.hidden_dim;
        let pre = self.preactivations(x, &state.hidden);
        let input_gate: Vec<f64> = pre[..hd].iter().map(|&v| sigmoid(v)).collect();
        let forget_gate: Vec<f64> = pre[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
        let cell_cand: Vec<f64> = pre[2 * hd..3 * hd].iter().map(|&v| v.tanh()).collect();
        let output_gate: Vec<f64> = pre[3 * hd..].iter().map(|&v| sigmoid(v)).collect();

        let mut cell = Vec::with_capacity(hd);
        for k in 0..hd {
            cell.push(forget_gate[k] * state.cell[k] + input_gate[k] * cell_cand[k]);
        }
        let cell_tanh: Vec<f64> = cell.iter().map(|&v| v.tanh()).collect();
        let hidden: Vec<f64> = (0..hd).map(|k| output_gate[k] * cell_tanh[k]).collect();

        let cache = LstmCache {
            h_prev: state.hidden.clone(),
            c_prev: state.cell.clone(),
            input_gate,
            forget_gate,
            cell_cand,
            output_gate,
            cell: cell.clone(),
            cell_tanh,
        };
        (LstmState { hidden, cell }, cache)
    }

    /// Backpropagates one step. `d_hidden`/`d_cell` carry gradients flowing
    /// into this step's outputs; returns (d_input, d_hidden_prev,
    /// d_cell_prev) and accumulates parameter gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64],
        cache: &LstmCache,
        d_hidden: &[f64],
        d_cell: &[f64],
        d_w_ih: &mut [f64],
        d_w_hh: &mut [f64],
        d_bias: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim;
        let mut d_pre = vec![0.0f64; 4 * hd];
        let mut d_c_prev = vec![0.0f64; hd];
        for k in 0..hd {
            let i = cache.input_gate[k];
            let f = cache.forget_gate[k];
            let g = cache.cell_cand[k];
            let o = cache.output_gate[k];
            let tc = cache.cell_tanh[k];

            let d_o = d_hidden[k] * tc;
            let d_c = d_cell[k] + d_hidden[k] * o * (1.0 - tc * tc);
            let d_i = d_c * g;
            let d_g = d_c * i;
            let d_f = d_c * cache.c_prev[k];
            d_c_prev[k] = d_c * f;

            d_pre[k] = d_i * i * (1.0 - i);
            d_pre[hd + k] = d_f * f * (1.0 - f);
            d_pre[2 * hd + k] = d_g * (1.0 - g * g);
            d_pre[3 * hd + k] = d_o * o * (1.0 - o);
        }

        let mut d_x = vec![0.0f64; self.input_dim];
        let mut d_h_prev = vec![0.0f64; hd];
        for gate in 0..4 * hd {
            let g = d_pre[gate];
            d_bias[gate] += g;
            let row = &self.w_ih[gate * self.input_dim..(gate + 1) * self.input_dim];
            let drow = &mut d_w_ih[gate * self.input_dim..(gate + 1) * self.input_dim];
            for i in 0..self.input_dim {
                drow[i] += g * x[i];
                d_x[i] += row[i] as f64 * g;
            }
            let row = &self.w_hh[gate * hd..(gate + 1) * hd];
            let drow = &mut d_w_hh[gate * hd..(gate + 1) * hd];
            for k in 0..hd {
                drow[k] += g * cache.h_prev[k];
                d_h_prev[k] += row[k] as f64 * g;
            }
        }
        (d_x, d_h_prev, d_c_prev)
    }
}
