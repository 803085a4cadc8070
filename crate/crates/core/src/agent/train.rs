//! Batched self-play training: per batch, one episode length is drawn,
//! a mini-batch of episodes is rolled out, win/lose action counters are
//! tallied over the whole batch, loss weights are derived from them, and
//! one accumulated RMSProp update is applied.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde_json::json;

use crate::agent::{
    compute_self_play_reward, compute_weights, discount_rewards, run_self_play_episode,
    run_step_reward_episode, sample_action, u_vector, FreqCounters,
};
use crate::bdw::Scorer;
use crate::error::{Error, Result};
use crate::image::{make_observation, Image};
use crate::neural::{NetConfig, PolicyValueNet, RmsProp, StepInput, StepTarget};
use crate::ops::{apply_operator, Action, StepSchedule, MAX_STEPS};

/// Batches kept when summarizing recent action histograms.
const RECENT_WINDOW: usize = 50;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub gamma: f64,
    pub beta: f64,
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    /// Total episodes; training runs `episodes / batch_size` full batches.
    pub episodes: usize,
    pub imax_min: usize,
    pub imax_max: usize,
    pub self_play: bool,
    pub freq_weight: bool,
    /// Reproduces the literal all-entries minimum in the weight rule.
    pub strict_eq4_min: bool,
    pub seed: u64,
    pub scorer: Scorer,
    pub net: NetConfig,
    /// 0 disables periodic evaluation against the frozen random opponent.
    pub eval_every_batches: usize,
    pub eval_episodes: usize,
    /// Stop once an evaluation reaches this win rate (and the recent win
    /// histogram stays under `early_stop_max_share`, when set).
    pub early_stop_win_rate: Option<f64>,
    pub early_stop_max_share: Option<f64>,
    /// When false, metrics report wall_time_s as 0 so logs are
    /// byte-reproducible.
    pub report_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            gamma: 0.99,
            beta: 0.01,
            lr: 7e-4,
            rmsprop_decay: crate::neural::DEFAULT_DECAY,
            rmsprop_epsilon: crate::neural::DEFAULT_EPSILON,
            episodes: 10_000,
            imax_min: 1,
            imax_max: MAX_STEPS,
            self_play: true,
            freq_weight: true,
            strict_eq4_min: false,
            seed: 0,
            scorer: Scorer::Bdw,
            net: NetConfig::desk(),
            eval_every_batches: 0,
            eval_episodes: 128,
            early_stop_win_rate: None,
            early_stop_max_share: None,
            report_wall_time: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.episodes == 0 {
            return Err(Error::InvalidArgument(
                "batch size and episodes must be positive".into(),
            ));
        }
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {}", self.gamma)));
        }
        if self.imax_min == 0 || self.imax_min > self.imax_max || self.imax_max > MAX_STEPS {
            return Err(Error::InvalidArgument(format!(
                "episode length range {}..={}",
                self.imax_min, self.imax_max
            )));
        }
        Ok(())
    }
}

/// Win rate against the frozen uniform-random opponent at one point of
/// training.
#[derive(Clone, Copy, Debug)]
pub struct EvalPoint {
    pub batch: usize,
    pub episodes_done: usize,
    pub win_rate: f64,
    pub mean_reward: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: PolicyValueNet,
    pub optimizer: RmsProp,
    pub batches_run: usize,
    pub episodes_run: usize,
    pub evals: Vec<EvalPoint>,
    pub total_counters: FreqCounters,
    /// Counters aggregated over the trailing window of batches.
    pub recent_counters: FreqCounters,
    pub stopped_early: bool,
}

/// Independent generator streams: network init uses the raw seed; batch,
/// episode, and evaluation draws each get their own stream family.
fn stream_rng(seed: u64, kind: u64, index: u64) -> ChaCha12Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((kind << 48) | index);
    rng
}

const STREAM_BATCH: u64 = 1;
const STREAM_EPISODE: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Plays episodes where the self player samples from the policy and the
/// opponent plays uniformly at random; returns the fraction won and the
/// mean terminal reward.
pub fn evaluate_vs_random(
    net: &PolicyValueNet,
    images: &[Image],
    episodes: usize,
    scorer: &Scorer,
    imax_range: (usize, usize),
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let mut wins = 0usize;
    for e in 0..episodes {
        let original = &images[e % images.len()];
        let i_max = rng.random_range(imax_range.0..=imax_range.1);
        let schedule = StepSchedule::new(original.width())?;
        let mut self_img = original.clone();
        let mut opp_img = original.clone();
        let mut state = net.zero_state();
        for step in 0..i_max {
            let u = u_vector(i_max, step);
            let obs = make_observation(original, &self_img, &u)?;
            let (policy, _, next) = net.forward(
                StepInput {
                    pixels: &obs.pixels,
                    aux: &obs.u,
                },
                &state,
            )?;
            state = next;
            let action = Action::from_index(sample_action(&policy, rng)).unwrap();
            let opp_action = Action::from_index(rng.random_range(0..4)).unwrap();
            self_img = apply_operator(&self_img, action, &schedule, step)?;
            opp_img = apply_operator(&opp_img, opp_action, &schedule, step)?;
        }
        let reward = compute_self_play_reward(scorer, original, &self_img, &opp_img)?;
        if reward > 0.0 {
            wins += 1;
        }
    }
    let win_rate = wins as f64 / episodes as f64;
    Ok((win_rate, 2.0 * win_rate - 1.0))
}

/// Runs the full training procedure over `images`, writing one JSON
/// metrics object per batch to `metrics`.
pub fn train(
    config: &TrainConfig,
    images: &[Image],
    metrics: &mut dyn Write,
) -> Result<TrainOutcome> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }

    let mut net = PolicyValueNet::init(config.net.clone(), config.seed)?;
    let mut optimizer = RmsProp::new(&net, config.lr, config.rmsprop_decay, config.rmsprop_epsilon);
    let num_batches = (config.episodes / config.batch_size).max(1);

    let mut total_counters = FreqCounters::default();
    let mut window: VecDeque<FreqCounters> = VecDeque::with_capacity(RECENT_WINDOW);
    let mut evals = Vec::new();
    let mut episodes_run = 0usize;
    let mut batches_run = 0usize;
    let mut stopped_early = false;

    for batch_idx in 0..num_batches {
        let batch_start = Instant::now();
        let mut batch_rng = stream_rng(config.seed, STREAM_BATCH, batch_idx as u64);
        let i_max = batch_rng.random_range(config.imax_min..=config.imax_max);

        // Roll out the mini-batch; each episode owns a derived stream.
        let mut traces = Vec::with_capacity(config.batch_size);
        for j in 0..config.batch_size {
            let original = &images[batch_rng.random_range(0..images.len())];
            let mut episode_rng =
                stream_rng(config.seed, STREAM_EPISODE, (episodes_run + j) as u64);
            let trace = if config.self_play {
                let mut trace = run_self_play_episode(&net, original, i_max, &mut episode_rng)?;
                let reward = compute_self_play_reward(
                    &config.scorer,
                    original,
                    &trace.final_self,
                    trace.final_opp.as_ref().expect("self-play trace"),
                )?;
                trace.final_reward = reward;
                trace.rewards = discount_rewards(reward, i_max, config.gamma);
                trace
            } else {
                run_step_reward_episode(
                    &net,
                    &config.scorer,
                    original,
                    i_max,
                    &mut episode_rng,
                )?
            };
            traces.push(trace);
        }
        episodes_run += config.batch_size;

        // Count first, then weight (the weight of every step depends on
        // the whole batch's counters).
        let mut counters = FreqCounters::default();
        if config.self_play {
            for trace in &traces {
                counters.tally(trace);
            }
            if config.freq_weight {
                compute_weights(&mut traces, &counters, config.strict_eq4_min);
            }
        }
        total_counters.merge(&counters);
        if window.len() == RECENT_WINDOW {
            window.pop_front();
        }
        window.push_back(counters);

        // Accumulate gradients over the batch, then update once.
        let mut grads = net.zero_gradients();
        let mut loss_pi = 0.0;
        let mut loss_v = 0.0;
        let mut entropy_sum = 0.0;
        let mut steps_total = 0usize;
        for trace in &traces {
            let inputs = trace.step_inputs();
            let targets: Vec<StepTarget> = (0..trace.i_max)
                .map(|i| StepTarget {
                    action: trace.actions[i].index(),
                    reward: trace.rewards[i],
                    weight: trace.weights[i],
                })
                .collect();
            let report = net.episode_backward(&inputs, &targets, config.beta, &mut grads)?;
            loss_pi += report.loss_pi;
            loss_v += report.loss_v;
            entropy_sum += report.entropy_mean * trace.i_max as f64;
            steps_total += trace.i_max;
        }
        optimizer.step(&mut net, &grads)?;
        batches_run += 1;

        let mean_reward =
            traces.iter().map(|t| t.final_reward).sum::<f64>() / traces.len() as f64;
        let wall = if config.report_wall_time {
            batch_start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let line = json!({
            "batch": batch_idx,
            "mean_reward": mean_reward,
            "action_hist_win": window.back().unwrap().win.to_vec(),
            "action_hist_lose": window.back().unwrap().lose.to_vec(),
            "mean_entropy": entropy_sum / steps_total as f64,
            "loss_v": loss_v,
            "loss_pi": loss_pi,
            "wall_time_s": wall,
        });
        writeln!(metrics, "{line}").map_err(|e| Error::Io {
            path: "<metrics>".into(),
            source: e,
        })?;

        // Periodic evaluation against the frozen random opponent.
        let is_last = batch_idx + 1 == num_batches;
        if config.eval_every_batches > 0
            && ((batch_idx + 1) % config.eval_every_batches == 0 || is_last)
        {
            let mut eval_rng = stream_rng(config.seed, STREAM_EVAL, evals.len() as u64);
            let (win_rate, mean_reward) = evaluate_vs_random(
                &net,
                images,
                config.eval_episodes,
                &config.scorer,
                (config.imax_min, config.imax_max),
                &mut eval_rng,
            )?;
            evals.push(EvalPoint {
                batch: batch_idx + 1,
                episodes_done: episodes_run,
                win_rate,
                mean_reward,
            });
            if let Some(target) = config.early_stop_win_rate {
                let recent = aggregate(&window);
                let share_ok = config.early_stop_max_share.is_none_or(|limit| {
                    let total: u64 = recent.win.iter().sum();
                    total > 0
                        && recent.win.iter().all(|&c| c as f64 <= limit * total as f64)
                });
                if win_rate >= target && share_ok {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    metrics.flush().ok();
    Ok(TrainOutcome {
        recent_counters: aggregate(&window),
        net,
        optimizer,
        batches_run,
        episodes_run,
        evals,
        total_counters,
        stopped_early,
    })
}

fn aggregate(window: &VecDeque<FreqCounters>) -> FreqCounters {
    let mut out = FreqCounters::default();
    for c in window {
        out.merge(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_config(images: usize) -> (TrainConfig, Vec<Image>) {
        use rand::Rng;
        let net = NetConfig {
            input_channels: 6,
            input_height: 40,
            input_width: 40,
            conv: vec![
                crate::neural::ConvSpec {
                    in_ch: 6,
                    out_ch: 2,
                    stride: 2,
                },
                crate::neural::ConvSpec {
                    in_ch: 2,
                    out_ch: 2,
                    stride: 2,
                },
            ],
            aux_dim: crate::image::U_DIM,
            fc_dims: vec![8],
            lstm_dim: 4,
            num_actions: 4,
        };
        let config = TrainConfig {
            episodes: 8,
            batch_size: 4,
            imax_min: 1,
            imax_max: 3,
            net,
            report_wall_time: false,
            ..TrainConfig::default()
        };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(91);
        let images = (0..images)
            .map(|_| Image::from_fn(20, 10, |_, _| [rng.random(), rng.random(), rng.random()]))
            .collect();
        (config, images)
    }

    #[test]
    fn two_runs_are_bit_identical() {
        let (config, images) = tiny_config(4);
        let mut log_a = Vec::new();
        let mut log_b = Vec::new();
        let out_a = train(&config, &images, &mut log_a).unwrap();
        let out_b = train(&config, &images, &mut log_b).unwrap();
        assert_eq!(log_a, log_b);
        let pa = out_a.net.param_buffers();
        let pb = out_b.net.param_buffers();
        assert_eq!(pa, pb);
    }

    #[test]
    fn metrics_lines_have_expected_keys() {
        let (config, images) = tiny_config(2);
        let mut log = Vec::new();
        train(&config, &images, &mut log).unwrap();
        let text = String::from_utf8(log).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in [
                "batch",
                "mean_reward",
                "action_hist_win",
                "action_hist_lose",
                "mean_entropy",
                "loss_v",
                "loss_pi",
                "wall_time_s",
            ] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
            assert_eq!(v["wall_time_s"], 0.0);
        }
    }

    #[test]
    fn no_self_play_mode_runs_without_opponent() {
        let (mut config, images) = tiny_config(2);
        config.self_play = false;
        let mut log = Vec::new();
        let out = train(&config, &images, &mut log).unwrap();
        // No victory/defeat counters are tallied in this mode.
        assert_eq!(out.total_counters.total(), 0);
    }

    #[test]
    fn counters_count_every_self_action() {
        let (config, images) = tiny_config(3);
        let mut log = Vec::new();
        let out = train(&config, &images, &mut log).unwrap();
        // Episode lengths are shared per batch; recover them from the log.
        let text = String::from_utf8(log).unwrap();
        let mut expected = 0u64;
        for (idx, _) in text.lines().enumerate() {
            let mut rng = stream_rng(config.seed, STREAM_BATCH, idx as u64);
            let i_max = rng.random_range(config.imax_min..=config.imax_max);
            expected += (i_max * config.batch_size) as u64;
        }
        assert_eq!(out.total_counters.total(), expected);
    }
}
