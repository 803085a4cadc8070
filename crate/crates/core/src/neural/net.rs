//! The shared-trunk policy/value network: a convolution stack over the
//! observation block, fully-connected layers over the flattened features
//! joined with the step-countdown vector, an LSTM, and one linear head
//! each for the action distribution and the state value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::layers::{relu_inplace, relu_mask, Conv2d, Linear};
use crate::neural::lstm::{Lstm, LstmCache, LstmState};
use crate::neural::{entropy, log_softmax};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
}

/// Network shape. The trunk is `conv` over `input_channels ×
/// input_height × input_width`, flattened and concatenated with an
/// `aux_dim` vector, then `fc_dims` dense layers feeding an LSTM of
/// `lstm_dim` units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub conv: Vec<ConvSpec>,
    pub aux_dim: usize,
    pub fc_dims: Vec<usize>,
    pub lstm_dim: usize,
    pub num_actions: usize,
}

impl NetConfig {
    /// Desk-scale configuration: the six-layer trunk flattens to 1,600
    /// features on the 40×40×6 observation.
    pub fn desk() -> Self {
        Self {
            input_channels: 6,
            input_height: 40,
            input_width: 40,
            conv: Self::conv_plan(64),
            aux_dim: crate::image::U_DIM,
            fc_dims: vec![256, 128, 64],
            lstm_dim: 64,
            num_actions: 4,
        }
    }

    /// Paper-scale configuration: the final convolution widens 16× so the
    /// trunk flattens to 25,600 features, and the LSTM emits 1,024 units.
    pub fn paper() -> Self {
        Self {
            input_channels: 6,
            input_height: 40,
            input_width: 40,
            conv: Self::conv_plan(1024),
            aux_dim: crate::image::U_DIM,
            fc_dims: vec![2048, 1024, 1024],
            lstm_dim: 1024,
            num_actions: 4,
        }
    }

    fn conv_plan(last_ch: usize) -> Vec<ConvSpec> {
        let plan = [(6, 16, 1), (16, 16, 2), (16, 32, 1), (32, 32, 2), (32, 64, 1)];
        let mut conv: Vec<ConvSpec> = plan
            .iter()
            .map(|&(in_ch, out_ch, stride)| ConvSpec {
                in_ch,
                out_ch,
                stride,
            })
            .collect();
        conv.push(ConvSpec {
            in_ch: 64,
            out_ch: last_ch,
            stride: 2,
        });
        conv
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0
            || self.input_height == 0
            || self.input_width == 0
            || self.lstm_dim == 0
            || self.num_actions < 2
        {
            return Err(Error::ShapeMismatch("degenerate network config".into()));
        }
        let mut ch = self.input_channels;
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.in_ch != ch || spec.out_ch == 0 || spec.stride == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "conv layer {i} expects {ch} input channels"
                )));
            }
            ch = spec.out_ch;
        }
        if self.fc_dims.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch("zero-width dense layer".into()));
        }
        Ok(())
    }

    /// (height, width) entering each conv layer, plus the final extent.
    pub fn conv_extents(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_height, self.input_width)];
        for spec in &self.conv {
            let (h, w) = *dims.last().unwrap();
            dims.push(((h - 1) / spec.stride + 1, (w - 1) / spec.stride + 1));
        }
        dims
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }

    /// Flattened feature count after the conv stack.
    pub fn trunk_dim(&self) -> usize {
        let (h, w) = *self.conv_extents().last().unwrap();
        let ch = self.conv.last().map_or(self.input_channels, |s| s.out_ch);
        ch * h * w
    }

}

/// One step's network input.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    pub pixels: &'a [f32],
    pub aux: &'a [f32],
}

/// Supervision for one step of an episode: the action actually taken, its
/// discounted reward, and its loss weight.
#[derive(Clone, Copy, Debug)]
pub struct StepTarget {
    pub action: usize,
    pub reward: f64,
    pub weight: f64,
}

/// Loss breakdown returned by the episode backward pass.
#[derive(Clone, Debug)]
pub struct BackwardReport {
    pub loss_pi: f64,
    pub loss_v: f64,
    pub entropy_mean: f64,
    /// Per-step reward-minus-value, as used (held constant) in the policy
    /// term.
    pub advantages: Vec<f64>,
}

/// Gradient buffers mirroring the network parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub conv: Vec<(Vec<f64>, Vec<f64>)>,
    pub fc: Vec<(Vec<f64>, Vec<f64>)>,
    pub lstm_w_ih: Vec<f64>,
    pub lstm_w_hh: Vec<f64>,
    pub lstm_bias: Vec<f64>,
    pub value_head: (Vec<f64>, Vec<f64>),
    pub policy_head: (Vec<f64>, Vec<f64>),
}

impl Gradients {
    /// Buffers in the canonical parameter order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in &self.conv {
            out.push(w);
            out.push(b);
        }
        for (w, b) in &self.fc {
            out.push(w);
            out.push(b);
        }
        out.push(&self.lstm_w_ih);
        out.push(&self.lstm_w_hh);
        out.push(&self.lstm_bias);
        out.push(&self.value_head.0);
        out.push(&self.value_head.1);
        out.push(&self.policy_head.0);
        out.push(&self.policy_head.1);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.buffers()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

struct StepCache {
    conv_acts: Vec<Vec<f64>>,
    fc_acts: Vec<Vec<f64>>,
    lstm_cache: LstmCache,
    hidden: Vec<f64>,
    policy: Vec<f64>,
    log_policy: Vec<f64>,
    value: f64,
}

#[derive(Clone, Debug)]
pub struct PolicyValueNet {
    config: NetConfig,
    convs: Vec<Conv2d>,
    fcs: Vec<Linear>,
    lstm: Lstm,
    value_head: Linear,
    policy_head: Linear,
}

impl PolicyValueNet {
    fn build(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let convs: Vec<Conv2d> = config
            .conv
            .iter()
            .map(|s| Conv2d::new(s.in_ch, s.out_ch, s.stride))
            .collect();
        let mut fcs = Vec::new();
        let mut dim = config.trunk_dim() + config.aux_dim;
        for &out in &config.fc_dims {
            fcs.push(Linear::new(dim, out));
            dim = out;
        }
        let lstm = Lstm::new(dim, config.lstm_dim);
        let value_head = Linear::new(config.lstm_dim, 1);
        let policy_head = Linear::new(config.lstm_dim, config.num_actions);
        Ok(Self {
            config,
            convs,
            fcs,
            lstm,
            value_head,
            policy_head,
        })
    }

    /// All parameters zero; the policy is exactly uniform and the value
    /// exactly zero.
    pub fn zeroed(config: NetConfig) -> Result<Self> {
        Self::build(config)
    }

    /// Uniform fan-in initialization of weights and biases with a fixed
    /// seed; the LSTM forget gate bias starts at 1. Nonzero biases keep
    /// pre-activations off the exact ReLU kink even when a unit's inputs
    /// are all inactive.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::build(config)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for conv in &mut net.convs {
            let bound = 1.0 / ((conv.in_ch * 9) as f64).sqrt();
            fill_uniform(&mut conv.weight, bound, &mut rng);
            fill_uniform(&mut conv.bias, bound, &mut rng);
        }
        for fc in &mut net.fcs {
            let bound = 1.0 / (fc.in_dim as f64).sqrt();
            fill_uniform(&mut fc.weight, bound, &mut rng);
            fill_uniform(&mut fc.bias, bound, &mut rng);
        }
        let bound = 1.0 / (net.lstm.input_dim as f64).sqrt();
        fill_uniform(&mut net.lstm.w_ih, bound, &mut rng);
        let bound = 1.0 / (net.lstm.hidden_dim as f64).sqrt();
        fill_uniform(&mut net.lstm.w_hh, bound, &mut rng);
        fill_uniform(&mut net.lstm.bias, bound, &mut rng);
        let hd = net.lstm.hidden_dim;
        net.lstm.bias[hd..2 * hd].fill(1.0);
        let bound = 1.0 / (net.config.lstm_dim as f64).sqrt();
        fill_uniform(&mut net.value_head.weight, bound, &mut rng);
        fill_uniform(&mut net.value_head.bias, bound, &mut rng);
        fill_uniform(&mut net.policy_head.weight, bound, &mut rng);
        fill_uniform(&mut net.policy_head.bias, bound, &mut rng);
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState::zeros(self.config.lstm_dim)
    }

    /// Parameter buffers in canonical order.
    pub fn param_buffers(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for f in &self.fcs {
            out.push(&f.weight);
            out.push(&f.bias);
        }
        out.push(&self.lstm.w_ih);
        out.push(&self.lstm.w_hh);
        out.push(&self.lstm.bias);
        out.push(&self.value_head.weight);
        out.push(&self.value_head.bias);
        out.push(&self.policy_head.weight);
        out.push(&self.policy_head.bias);
        out
    }

    pub fn param_buffers_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out: Vec<&mut Vec<f32>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for f in &mut self.fcs {
            out.push(&mut f.weight);
            out.push(&mut f.bias);
        }
        out.push(&mut self.lstm.w_ih);
        out.push(&mut self.lstm.w_hh);
        out.push(&mut self.lstm.bias);
        out.push(&mut self.value_head.weight);
        out.push(&mut self.value_head.bias);
        out.push(&mut self.policy_head.weight);
        out.push(&mut self.policy_head.bias);
        out
    }

    /// Checkpoint buffer names, aligned with `param_buffers`.
    pub fn buffer_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.convs.len() {
            out.push(format!("conv{i}.weight"));
            out.push(format!("conv{i}.bias"));
        }
        for i in 0..self.fcs.len() {
            out.push(format!("fc{i}.weight"));
            out.push(format!("fc{i}.bias"));
        }
        for name in ["lstm.w_ih", "lstm.w_hh", "lstm.bias"] {
            out.push(name.to_string());
        }
        for name in [
            "value_head.weight",
            "value_head.bias",
            "policy_head.weight",
            "policy_head.bias",
        ] {
            out.push(name.to_string());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_buffers().iter().map(|b| b.len()).sum()
    }

    /// Scalar parameter access by flat index across the canonical order;
    /// used by finite-difference checks.
    pub fn param_at(&self, mut index: usize) -> f32 {
        for buf in self.param_buffers() {
            if index < buf.len() {
                return buf[index];
            }
            index -= buf.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param_at(&mut self, mut index: usize, value: f32) {
        for buf in self.param_buffers_mut() {
            if index < buf.len() {
                buf[index] = value;
                return;
            }
            index -= buf.len();
        }
        panic!("parameter index out of range");
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            conv: self
                .convs
                .iter()
                .map(|c| (vec![0.0; c.weight.len()], vec![0.0; c.bias.len()]))
                .collect(),
            fc: self
                .fcs
                .iter()
                .map(|f| (vec![0.0; f.weight.len()], vec![0.0; f.bias.len()]))
                .collect(),
            lstm_w_ih: vec![0.0; self.lstm.w_ih.len()],
            lstm_w_hh: vec![0.0; self.lstm.w_hh.len()],
            lstm_bias: vec![0.0; self.lstm.bias.len()],
            value_head: (
                vec![0.0; self.value_head.weight.len()],
                vec![0.0; self.value_head.bias.len()],
            ),
            policy_head: (
                vec![0.0; self.policy_head.weight.len()],
                vec![0.0; self.policy_head.bias.len()],
            ),
        }
    }

    fn check_input(&self, input: &StepInput) -> Result<()> {
        if input.pixels.len() != self.config.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "pixel input {} != {}",
                input.pixels.len(),
                self.config.input_len()
            )));
        }
        if input.aux.len() != self.config.aux_dim {
            return Err(Error::ShapeMismatch(format!(
                "aux input {} != {}",
                input.aux.len(),
                self.config.aux_dim
            )));
        }
        Ok(())
    }

    fn run_step(&self, input: &StepInput, state: &LstmState) -> (LstmState, StepCache) {
        let extents = self.config.conv_extents();
        let mut conv_acts: Vec<Vec<f64>> =
            vec![input.pixels.iter().map(|&v| v as f64).collect()];
        for (i, conv) in self.convs.iter().enumerate() {
            let (h, w) = extents[i];
            let mut out = conv.forward(conv_acts.last().unwrap(), h, w);
            relu_inplace(&mut out);
            conv_acts.push(out);
        }

        let mut joined = conv_acts.last().unwrap().clone();
        joined.extend(input.aux.iter().map(|&v| v as f64));
        let mut fc_acts = vec![joined];
        for fc in &self.fcs {
            let mut out = fc.forward(fc_acts.last().unwrap());
            relu_inplace(&mut out);
            fc_acts.push(out);
        }

        let (next_state, lstm_cache) = self.lstm.forward(fc_acts.last().unwrap(), state);
        let hidden = next_state.hidden.clone();
        let value = self.value_head.forward(&hidden)[0];
        let logits = self.policy_head.forward(&hidden);
        let (policy, log_policy) = log_softmax(&logits);

        let cache = StepCache {
            conv_acts,
            fc_acts,
            lstm_cache,
            hidden,
            policy,
            log_policy,
            value,
        };
        (next_state, cache)
    }

    /// Runs one step: returns the action distribution, the value estimate,
    /// and the next recurrent state.
    pub fn forward(
        &self,
        input: StepInput<'_>,
        state: &LstmState,
    ) -> Result<(Vec<f64>, f64, LstmState)> {
        self.check_input(&input)?;
        if state.hidden.len() != self.config.lstm_dim {
            return Err(Error::ShapeMismatch("recurrent state size".into()));
        }
        let (next_state, cache) = self.run_step(&input, state);
        Ok((cache.policy, cache.value, next_state))
    }

    /// Backpropagates one episode, accumulating
    /// `sum_i w_i (L^pi_i + L^v_i)` gradients into `grads`. The
    /// reward-minus-value advantage is held constant inside the policy
    /// term; the value trains only through its squared-error loss.
    pub fn episode_backward(
        &self,
        steps: &[StepInput<'_>],
        targets: &[StepTarget],
        beta: f64,
        grads: &mut Gradients,
    ) -> Result<BackwardReport> {
        if steps.is_empty() || steps.len() != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "episode with {} inputs and {} targets",
                steps.len(),
                targets.len()
            )));
        }
        for s in steps {
            self.check_input(s)?;
        }

        let mut caches = Vec::with_capacity(steps.len());
        let mut state = self.zero_state();
        for input in steps {
            let (next, cache) = self.run_step(input, &state);
            caches.push(cache);
            state = next;
        }

        let mut loss_pi = 0.0;
        let mut loss_v = 0.0;
        let mut entropy_sum = 0.0;
        let mut advantages = Vec::with_capacity(steps.len());
        for (cache, target) in caches.iter().zip(targets) {
            let adv = target.reward - cache.value;
            advantages.push(adv);
            let ent = entropy(&cache.policy);
            entropy_sum += ent;
            loss_pi += target.weight * (-cache.log_policy[target.action] * adv - beta * ent);
            loss_v += target.weight * adv * adv / 2.0;
        }
        if !(loss_pi.is_finite() && loss_v.is_finite()) {
            return Err(Error::NonFinite("episode loss".into()));
        }

        let extents = self.config.conv_extents();
        let trunk_dim = self.config.trunk_dim();
        let mut d_hidden = vec![0.0f64; self.config.lstm_dim];
        let mut d_cell = vec![0.0f64; self.config.lstm_dim];
        for t in (0..steps.len()).rev() {
            let cache = &caches[t];
            let target = &targets[t];
            let w = target.weight;
            let adv = advantages[t];
            let ent = entropy(&cache.policy);

            // d L^pi / d logits with the advantage treated as constant.
            let mut d_logits = Vec::with_capacity(cache.policy.len());
            for (k, (&p, &lp)) in cache.policy.iter().zip(&cache.log_policy).enumerate() {
                let indicator = if k == target.action { 1.0 } else { 0.0 };
                let policy_term = adv * (p - indicator);
                let entropy_term = beta * p * (lp + ent);
                d_logits.push(w * (policy_term + entropy_term));
            }
            let d_value = w * (cache.value - target.reward);

            let mut dh = self.policy_head.backward(
                &cache.hidden,
                &d_logits,
                &mut grads.policy_head.0,
                &mut grads.policy_head.1,
            );
            let dv = self.value_head.backward(
                &cache.hidden,
                &[d_value],
                &mut grads.value_head.0,
                &mut grads.value_head.1,
            );
            for ((a, b), c) in dh.iter_mut().zip(dv).zip(&d_hidden) {
                *a += b + c;
            }

            let (mut d_x, d_h_prev, d_c_prev) = self.lstm.backward(
                cache.fc_acts.last().unwrap(),
                &cache.lstm_cache,
                &dh,
                &d_cell,
                &mut grads.lstm_w_ih,
                &mut grads.lstm_w_hh,
                &mut grads.lstm_bias,
            );
            d_hidden = d_h_prev;
            d_cell = d_c_prev;

            for (i, fc) in self.fcs.iter().enumerate().rev() {
                relu_mask(&mut d_x, &cache.fc_acts[i + 1]);
                let fc_grads = &mut grads.fc[i];
                d_x = fc.backward(&cache.fc_acts[i], &d_x, &mut fc_grads.0, &mut fc_grads.1);
            }

            let mut d_act = d_x[..trunk_dim].to_vec();
            for (i, conv) in self.convs.iter().enumerate().rev() {
                relu_mask(&mut d_act, &cache.conv_acts[i + 1]);
                let (h, w) = extents[i];
                let conv_grads = &mut grads.conv[i];
                d_act = conv.backward(
                    &cache.conv_acts[i],
                    h,
                    w,
                    &d_act,
                    &mut conv_grads.0,
                    &mut conv_grads.1,
                );
            }
        }

        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        Ok(BackwardReport {
            loss_pi,
            loss_v,
            entropy_mean: entropy_sum / steps.len() as f64,
            advantages,
        })
    }

    /// Episode loss with the policy-term advantages supplied externally,
    /// so finite differences see the same stop-gradient the backward pass
    /// applies. The value loss stays live.
    pub fn episode_loss(
        &self,
        steps: &[StepInput<'_>],
        targets: &[StepTarget],
        fixed_advantages: &[f64],
        beta: f64,
    ) -> Result<f64> {
        if steps.len() != targets.len() || steps.len() != fixed_advantages.len() {
            return Err(Error::ShapeMismatch("episode loss arity".into()));
        }
        let mut state = self.zero_state();
        let mut total = 0.0;
        for ((input, target), &adv) in steps.iter().zip(targets).zip(fixed_advantages) {
            self.check_input(input)?;
            let (next, cache) = self.run_step(input, &state);
            state = next;
            let ent = entropy(&cache.policy);
            let dv = target.reward - cache.value;
            total += target.weight
                * (-cache.log_policy[target.action] * adv - beta * ent + dv * dv / 2.0);
        }
        Ok(total)
    }
}

fn fill_uniform(buf: &mut [f32], bound: f64, rng: &mut ChaCha12Rng) {
    for v in buf {
        *v = rng.random_range(-bound..bound) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config() -> NetConfig {
        NetConfig {
            input_channels: 2,
            input_height: 4,
            input_width: 4,
            conv: vec![ConvSpec {
                in_ch: 2,
                out_ch: 2,
                stride: 2,
            }],
            aux_dim: 3,
            fc_dims: vec![5],
            lstm_dim: 3,
            num_actions: 4,
        }
    }

    fn random_episode(
        config: &NetConfig,
        len: usize,
        seed: u64,
    ) -> (Vec<Vec<f32>>, Vec<Vec<f32>>, Vec<StepTarget>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pixels: Vec<Vec<f32>> = (0..len)
            .map(|_| (0..config.input_len()).map(|_| rng.random::<f32>()).collect())
            .collect();
        let aux: Vec<Vec<f32>> = (0..len)
            .map(|_| {
                (0..config.aux_dim)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let targets: Vec<StepTarget> = (0..len)
            .map(|_| StepTarget {
                action: rng.random_range(0..config.num_actions),
                reward: rng.random_range(-1.0..1.0),
                weight: rng.random_range(0.05..1.0),
            })
            .collect();
        (pixels, aux, targets)
    }

    fn inputs<'a>(pixels: &'a [Vec<f32>], aux: &'a [Vec<f32>]) -> Vec<StepInput<'a>> {
        pixels
            .iter()
            .zip(aux)
            .map(|(p, a)| StepInput { pixels: p, aux: a })
            .collect()
    }

    #[test]
    fn zeroed_net_is_uniform_with_zero_value() {
        let net = PolicyValueNet::zeroed(small_config()).unwrap();
        let (pixels, aux, _) = random_episode(net.config(), 1, 1);
        let (policy, value, _) = net
            .forward(
                StepInput {
                    pixels: &pixels[0],
                    aux: &aux[0],
                },
                &net.zero_state(),
            )
            .unwrap();
        assert_eq!(policy, vec![0.25; 4]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = PolicyValueNet::init(small_config(), 2).unwrap();
        let (pixels, aux, _) = random_episode(net.config(), 1, 3);
        let input = StepInput {
            pixels: &pixels[0],
            aux: &aux[0],
        };
        let a = net.forward(input, &net.zero_state()).unwrap();
        let b = net.forward(input, &net.zero_state()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2.hidden, b.2.hidden);
        assert_eq!(a.2.cell, b.2.cell);
    }

    #[test]
    fn policy_sums_to_one() {
        let net = PolicyValueNet::init(small_config(), 4).unwrap();
        let (pixels, aux, _) = random_episode(net.config(), 1, 5);
        let (policy, _, _) = net
            .forward(
                StepInput {
                    pixels: &pixels[0],
                    aux: &aux[0],
                },
                &net.zero_state(),
            )
            .unwrap();
        assert!((policy.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(policy.iter().all(|&p| p > 0.0));
    }

    /// Straight-line scalar reimplementation of the whole forward pass.
    fn oracle_forward(
        net: &PolicyValueNet,
        pixels: &[f32],
        aux: &[f32],
        state: &LstmState,
    ) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>) {
        let cfg = net.config();
        let extents = cfg.conv_extents();
        let mut act: Vec<f64> = pixels.iter().map(|&v| v as f64).collect();
        for (li, conv) in net.convs.iter().enumerate() {
            let (h, w) = extents[li];
            let (oh, ow) = conv.out_hw(h, w);
            let mut next = vec![0.0f64; conv.out_ch * oh * ow];
            for oc in 0..conv.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias[oc] as f64;
                        for ic in 0..conv.in_ch {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * conv.stride + ky) as isize - 1;
                                    let ix = (ox * conv.stride + kx) as isize - 1;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= h as isize
                                        || ix >= w as isize
                                    {
                                        continue;
                                    }
                                    let wv = conv.weight
                                        [(oc * conv.in_ch + ic) * 9 + ky * 3 + kx]
                                        as f64;
                                    acc += wv
                                        * act[ic * h * w + iy as usize * w + ix as usize];
                                }
                            }
                        }
                        next[oc * oh * ow + oy * ow + ox] = acc.max(0.0);
                    }
                }
            }
            act = next;
        }
        act.extend(aux.iter().map(|&v| v as f64));
        for fc in &net.fcs {
            let mut next = vec![0.0f64; fc.out_dim];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut acc = fc.bias[o] as f64;
                for i in 0..fc.in_dim {
                    acc += fc.weight[o * fc.in_dim + i] as f64 * act[i];
                }
                *slot = acc.max(0.0);
            }
            act = next;
        }
        let hd = net.lstm.hidden_dim;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut gates = vec![0.0f64; 4 * hd];
        for (g, slot) in gates.iter_mut().enumerate() {
            let mut acc = net.lstm.bias[g] as f64;
            for i in 0..net.lstm.input_dim {
                acc += net.lstm.w_ih[g * net.lstm.input_dim + i] as f64 * act[i];
            }
            for k in 0..hd {
                acc += net.lstm.w_hh[g * hd + k] as f64 * state.hidden[k];
            }
            *slot = acc;
        }
        let mut hidden = vec![0.0f64; hd];
        let mut cell = vec![0.0f64; hd];
        for k in 0..hd {
            let i = sig(gates[k]);
            let f = sig(gates[hd + k]);
            let g = gates[2 * hd + k].tanh();
            let o = sig(gates[3 * hd + k]);
            cell[k] = f * state.cell[k] + i * g;
            hidden[k] = o * cell[k].tanh();
        }
        let mut value = net.value_head.bias[0] as f64;
        for k in 0..hd {
            value += net.value_head.weight[k] as f64 * hidden[k];
        }
        let mut logits = vec![0.0f64; net.policy_head.out_dim];
        for (o, slot) in logits.iter_mut().enumerate() {
            let mut acc = net.policy_head.bias[o] as f64;
            for k in 0..hd {
                acc += net.policy_head.weight[o * hd + k] as f64 * hidden[k];
            }
            *slot = acc;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
        let policy: Vec<f64> = logits.iter().map(|&v| (v - max).exp() / denom).collect();
        (policy, value, hidden, cell)
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let net = PolicyValueNet::init(small_config(), 6).unwrap();
        let (pixels, aux, _) = random_episode(net.config(), 2, 7);
        let mut state = net.zero_state();
        for t in 0..2 {
            let input = StepInput {
                pixels: &pixels[t],
                aux: &aux[t],
            };
            let (policy, value, next) = net.forward(input, &state).unwrap();
            let (op, ov, oh, oc) = oracle_forward(&net, &pixels[t], &aux[t], &state);
            for (a, b) in policy.iter().zip(&op) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((value - ov).abs() < 1e-12);
            for (a, b) in next.hidden.iter().zip(&oh) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in next.cell.iter().zip(&oc) {
                assert!((a - b).abs() < 1e-12);
            }
            state = next;
        }
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let net = PolicyValueNet::init(small_config(), 8).unwrap();
        let (pixels, aux, mut targets) = random_episode(net.config(), 3, 9);
        for t in &mut targets {
            t.weight = 0.0;
        }
        let mut grads = net.zero_gradients();
        net.episode_backward(&inputs(&pixels, &aux), &targets, 0.01, &mut grads)
            .unwrap();
        for buf in grads.buffers() {
            assert!(buf.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn zero_advantage_and_beta_give_zero_gradients() {
        let net = PolicyValueNet::init(small_config(), 10).unwrap();
        let (pixels, aux, mut targets) = random_episode(net.config(), 2, 11);
        // Set each reward to the value the net already predicts, so the
        // advantage vanishes and the value loss sits at its minimum.
        let ins = inputs(&pixels, &aux);
        let mut state = net.zero_state();
        for (t, input) in targets.iter_mut().zip(&ins) {
            let (_, value, next) = net.forward(*input, &state).unwrap();
            t.reward = value;
            state = next;
        }
        let mut grads = net.zero_gradients();
        let report = net
            .episode_backward(&ins, &targets, 0.0, &mut grads)
            .unwrap();
        assert!(report.advantages.iter().all(|&a| a == 0.0));
        for buf in grads.buffers() {
            for &g in buf {
                assert!(g.abs() < 1e-12, "{g}");
            }
        }
    }

    /// Central finite difference at one parameter; divides by the actual
    /// step realized after f32 rounding.
    pub(crate) fn fd_gradient(
        net: &mut PolicyValueNet,
        ins: &[StepInput<'_>],
        targets: &[StepTarget],
        advantages: &[f64],
        beta: f64,
        idx: usize,
        eps: f32,
    ) -> f64 {
        let orig = net.param_at(idx);
        net.set_param_at(idx, orig + eps);
        let plus = net.episode_loss(ins, targets, advantages, beta).unwrap();
        net.set_param_at(idx, orig - eps);
        let minus = net.episode_loss(ins, targets, advantages, beta).unwrap();
        let h = (orig + eps) as f64 - (orig - eps) as f64;
        net.set_param_at(idx, orig);
        (plus - minus) / h
    }

    /// Relative error against finite differences. Measures at eps = 1e-4
    /// and re-measures any suspect parameter at a tighter step: a wrong
    /// analytic gradient stays wrong at every step size, while a ReLU
    /// kink inside the probe window disappears. Gradients under 1e-4 are
    /// compared absolutely at that floor.
    pub(crate) fn fd_relative_error(
        net: &mut PolicyValueNet,
        ins: &[StepInput<'_>],
        targets: &[StepTarget],
        advantages: &[f64],
        beta: f64,
        idx: usize,
        analytic: f64,
    ) -> f64 {
        let mut best = f64::INFINITY;
        for eps in [1e-4f32, 1e-6] {
            let numeric = fd_gradient(net, ins, targets, advantages, beta, idx, eps);
            let rel =
                (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
            best = best.min(rel);
            if best < 1e-3 {
                break;
            }
        }
        best
    }

    /// Composed-net gradient check: analytic episode gradients against
    /// central finite differences of the episode loss with the advantage
    /// held fixed.
    #[test]
    fn episode_gradients_match_finite_differences() {
        let mut net = PolicyValueNet::init(small_config(), 12).unwrap();
        for traj in 0..3 {
            let (pixels, aux, targets) = random_episode(net.config(), 3, 100 + traj);
            let ins = inputs(&pixels, &aux);
            let beta = 0.01;
            let mut grads = net.zero_gradients();
            let report = net
                .episode_backward(&ins, &targets, beta, &mut grads)
                .unwrap();
            let flat: Vec<f64> = grads
                .buffers()
                .iter()
                .flat_map(|b| b.iter().copied())
                .collect();

            let mut worst = 0.0f64;
            for (idx, &analytic) in flat.iter().enumerate() {
                let rel = fd_relative_error(
                    &mut net,
                    &ins,
                    &targets,
                    &report.advantages,
                    beta,
                    idx,
                    analytic,
                );
                worst = worst.max(rel);
            }
            assert!(worst < 1e-3, "trajectory {traj}: max rel err {worst}");
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward_bits() {
        use crate::neural::checkpoint::{load_checkpoint, save_checkpoint};
        use crate::neural::optim::RmsProp;
        let net = PolicyValueNet::init(small_config(), 13).unwrap();
        let mut opt = RmsProp::new(&net, 7e-4, 0.99, 1e-8);
        // Touch the moments so they are non-trivial.
        let (pixels, aux, targets) = random_episode(net.config(), 2, 14);
        let mut grads = net.zero_gradients();
        let mut net = net;
        net.episode_backward(&inputs(&pixels, &aux), &targets, 0.01, &mut grads)
            .unwrap();
        opt.step(&mut net, &grads).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &net, Some(&opt)).unwrap();
        let (loaded, loaded_opt) = load_checkpoint(&path).unwrap();
        assert_eq!(net.param_buffers(), loaded.param_buffers());
        let loaded_opt = loaded_opt.unwrap();
        assert_eq!(opt.moments(), loaded_opt.moments());
        assert_eq!(opt.lr, loaded_opt.lr);

        let input = StepInput {
            pixels: &pixels[0],
            aux: &aux[0],
        };
        let a = net.forward(input, &net.zero_state()).unwrap();
        let b = loaded.forward(input, &loaded.zero_state()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn desk_and_paper_trunk_dimensions() {
        assert_eq!(NetConfig::desk().trunk_dim(), 1600);
        assert_eq!(NetConfig::paper().trunk_dim(), 25_600);
        assert_eq!(NetConfig::paper().lstm_dim, 1024);
        NetConfig::desk().validate().unwrap();
        NetConfig::paper().validate().unwrap();
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let net = PolicyValueNet::zeroed(small_config()).unwrap();
        let bad = vec![0.0f32; 7];
        let aux = vec![0.0f32; 3];
        assert!(net
            .forward(
                StepInput {
                    pixels: &bad,
                    aux: &aux
                },
                &net.zero_state()
            )
            .is_err());
        let pixels = vec![0.0f32; net.config().input_len()];
        assert!(net
            .forward(
                StepInput {
                    pixels: &pixels,
                    aux: &bad
                },
                &net.zero_state()
            )
            .is_err());
    }
}
