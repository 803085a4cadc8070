//! Self-play episode execution, reward computation, frequency-aware loss
//! weights, and greedy inference.

mod train;

pub use train::{evaluate_vs_random, train, EvalPoint, TrainConfig, TrainOutcome};

use rand::Rng;

use crate::bdw::Scorer;
use crate::error::Result;
use crate::image::{make_observation, Image, Observation, U_DIM};
use crate::neural::{LstmState, PolicyValueNet, StepInput};
use crate::ops::{apply_operator, steps_for_ratio, Action, StepSchedule};

/// Step-countdown vector observed at step `step` (0-based) of an episode
/// of length `i_max`: ones occupy the trailing `i_max - step` positions.
pub fn u_vector(i_max: usize, step: usize) -> [f32; U_DIM] {
    debug_assert!(i_max <= U_DIM && step <= i_max);
    let mut u = [0.0f32; U_DIM];
    for slot in u.iter_mut().skip(U_DIM - i_max + step) {
        *slot = 1.0;
    }
    u
}

/// Samples an action index from a distribution by inverse CDF.
pub fn sample_action(policy: &[f64], rng: &mut impl Rng) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in policy.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    policy.len() - 1
}

/// Argmax with ties resolved toward the smaller index.
pub fn greedy_action(policy: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in policy.iter().enumerate().skip(1) {
        if p > policy[best] {
            best = i;
        }
    }
    best
}

/// One episode of rollout data. For self-play episodes the trace holds
/// both players' actions and final images; only the self trajectory
/// carries observations, rewards, and weights.
#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub i_max: usize,
    pub actions: Vec<Action>,
    pub opp_actions: Vec<Action>,
    pub observations: Vec<Observation>,
    /// Discounted per-step rewards; filled once the outcome is known.
    pub rewards: Vec<f64>,
    /// Episode outcome: +1 or -1 under self-play, the telescoped score
    /// change under per-step rewards.
    pub final_reward: f64,
    pub weights: Vec<f64>,
    pub entropies: Vec<f64>,
    pub final_self: Image,
    pub final_opp: Option<Image>,
}

impl EpisodeTrace {
    /// Network inputs for the self trajectory.
    pub fn step_inputs(&self) -> Vec<StepInput<'_>> {
        self.observations
            .iter()
            .map(|obs| StepInput {
                pixels: &obs.pixels,
                aux: &obs.u,
            })
            .collect()
    }
}

/// Rolls out self and opponent from the same original with independent
/// action samples from the same policy and separate recurrent states.
/// Rewards are left empty; the caller scores the final images.
pub fn run_self_play_episode(
    net: &PolicyValueNet,
    original: &Image,
    i_max: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeTrace> {
    let schedule = StepSchedule::new(original.width())?;
    let mut self_img = original.clone();
    let mut opp_img = original.clone();
    let mut self_state = net.zero_state();
    let mut opp_state = net.zero_state();
    let mut actions = Vec::with_capacity(i_max);
    let mut opp_actions = Vec::with_capacity(i_max);
    let mut observations = Vec::with_capacity(i_max);
    let mut entropies = Vec::with_capacity(i_max);

    for step in 0..i_max {
        let u = u_vector(i_max, step);
        let obs_self = make_observation(original, &self_img, &u)?;
        let obs_opp = make_observation(original, &opp_img, &u)?;

        let (policy_self, _, next_self) = net.forward(
            StepInput {
                pixels: &obs_self.pixels,
                aux: &obs_self.u,
            },
            &self_state,
        )?;
        self_state = next_self;
        let action = Action::from_index(sample_action(&policy_self, rng)).unwrap();

        let (policy_opp, _, next_opp) = net.forward(
            StepInput {
                pixels: &obs_opp.pixels,
                aux: &obs_opp.u,
            },
            &opp_state,
        )?;
        opp_state = next_opp;
        let opp_action = Action::from_index(sample_action(&policy_opp, rng)).unwrap();

        entropies.push(crate::neural::entropy(&policy_self));
        observations.push(obs_self);
        actions.push(action);
        opp_actions.push(opp_action);
        self_img = apply_operator(&self_img, action, &schedule, step)?;
        opp_img = apply_operator(&opp_img, opp_action, &schedule, step)?;
    }

    Ok(EpisodeTrace {
        i_max,
        actions,
        opp_actions,
        observations,
        rewards: Vec::new(),
        final_reward: 0.0,
        weights: vec![1.0; i_max],
        entropies,
        final_self: self_img,
        final_opp: Some(opp_img),
    })
}

/// Single-trajectory rollout where each step is rewarded by the change in
/// the candidate's score, with no opponent. Used by the no-self-play
/// ablation.
pub fn run_step_reward_episode(
    net: &PolicyValueNet,
    scorer: &Scorer,
    original: &Image,
    i_max: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeTrace> {
    let schedule = StepSchedule::new(original.width())?;
    let mut img = original.clone();
    let mut state = net.zero_state();
    let mut actions = Vec::with_capacity(i_max);
    let mut observations = Vec::with_capacity(i_max);
    let mut entropies = Vec::with_capacity(i_max);
    let mut rewards = Vec::with_capacity(i_max);
    let mut prev_score = scorer.score(original, &img)?;

    for step in 0..i_max {
        let u = u_vector(i_max, step);
        let obs = make_observation(original, &img, &u)?;
        let (policy, _, next) = net.forward(
            StepInput {
                pixels: &obs.pixels,
                aux: &obs.u,
            },
            &state,
        )?;
        state = next;
        let action = Action::from_index(sample_action(&policy, rng)).unwrap();
        entropies.push(crate::neural::entropy(&policy));
        observations.push(obs);
        actions.push(action);
        img = apply_operator(&img, action, &schedule, step)?;
        let score = scorer.score(original, &img)?;
        rewards.push(score - prev_score);
        prev_score = score;
    }

    let final_reward = rewards.iter().sum();
    Ok(EpisodeTrace {
        i_max,
        actions,
        opp_actions: Vec::new(),
        observations,
        rewards,
        final_reward,
        weights: vec![1.0; i_max],
        entropies,
        final_self: img,
        final_opp: None,
    })
}

/// Victory/defeat reward: +1 when the self result is strictly better than
/// the opponent's under the scorer's orientation, -1 otherwise (ties
/// count as defeat).
pub fn compute_self_play_reward(
    scorer: &Scorer,
    original: &Image,
    self_final: &Image,
    opp_final: &Image,
) -> Result<f64> {
    let self_score = scorer.score(original, self_final)?;
    let opp_score = scorer.score(original, opp_final)?;
    if scorer.orientation().better(self_score, opp_score) {
        Ok(1.0)
    } else {
        Ok(-1.0)
    }
}

/// Discounted per-step rewards: the final step receives the episode
/// reward, and each earlier step is exactly gamma times its successor.
pub fn discount_rewards(final_reward: f64, i_max: usize, gamma: f64) -> Vec<f64> {
    let mut rewards = vec![0.0; i_max];
    let mut current = final_reward;
    for slot in rewards.iter_mut().rev() {
        *slot = current;
        current *= gamma;
    }
    rewards
}

/// Per-action selection counts split by episode outcome.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FreqCounters {
    pub win: [u64; 4],
    pub lose: [u64; 4],
}

impl FreqCounters {
    pub fn tally(&mut self, trace: &EpisodeTrace) {
        let bucket = if trace.final_reward > 0.0 {
            &mut self.win
        } else {
            &mut self.lose
        };
        for action in &trace.actions {
            bucket[action.index()] += 1;
        }
    }

    pub fn merge(&mut self, other: &FreqCounters) {
        for i in 0..4 {
            self.win[i] += other.win[i];
            self.lose[i] += other.lose[i];
        }
    }

    pub fn total(&self) -> u64 {
        self.win.iter().sum::<u64>() + self.lose.iter().sum::<u64>()
    }
}

/// Smallest strictly positive entry; falls back to zero only when the
/// whole class is empty.
fn min_positive(counts: &[u64; 4]) -> u64 {
    counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0)
}

/// Fills each trace's loss weights from the batch counters: a step of a
/// winning episode weighs min(f_win)/f_win[action], a losing one
/// min(f_lose)/f_lose[action]. The minimum runs over strictly positive
/// entries unless `strict_min` literally includes zeros (which zeroes
/// every weight as soon as one action was never selected in that class).
pub fn compute_weights(traces: &mut [EpisodeTrace], counters: &FreqCounters, strict_min: bool) {
    for trace in traces {
        let counts = if trace.final_reward > 0.0 {
            &counters.win
        } else {
            &counters.lose
        };
        let min_val = if strict_min {
            *counts.iter().min().unwrap()
        } else {
            min_positive(counts)
        };
        for (w, action) in trace.weights.iter_mut().zip(&trace.actions) {
            *w = min_val as f64 / counts[action.index()] as f64;
        }
    }
}

/// Greedy single-path retargeting to the requested size ratio. Applies
/// exactly `steps_for_ratio(ratio)` operators and never evaluates a
/// scorer.
pub fn infer(net: &PolicyValueNet, original: &Image, ratio: f64) -> Result<(Image, Vec<Action>)> {
    infer_steps(net, original, steps_for_ratio(ratio)?)
}

/// Greedy inference for an explicit number of steps.
pub fn infer_steps(
    net: &PolicyValueNet,
    original: &Image,
    steps: usize,
) -> Result<(Image, Vec<Action>)> {
    let schedule = StepSchedule::new(original.width())?;
    let mut img = original.clone();
    let mut state: LstmState = net.zero_state();
    let mut actions = Vec::with_capacity(steps);
    for step in 0..steps {
        let u = u_vector(steps, step);
        let obs = make_observation(original, &img, &u)?;
        let (policy, _, next) = net.forward(
            StepInput {
                pixels: &obs.pixels,
                aux: &obs.u,
            },
            &state,
        )?;
        state = next;
        let action = Action::from_index(greedy_action(&policy)).unwrap();
        actions.push(action);
        img = apply_operator(&img, action, &schedule, step)?;
    }
    Ok((img, actions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{ConvSpec, NetConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_net_config() -> NetConfig {
        NetConfig {
            input_channels: 6,
            input_height: 40,
            input_width: 40,
            conv: vec![
                ConvSpec {
                    in_ch: 6,
                    out_ch: 2,
                    stride: 2,
                },
                ConvSpec {
                    in_ch: 2,
                    out_ch: 2,
                    stride: 2,
                },
            ],
            aux_dim: U_DIM,
            fc_dims: vec![8],
            lstm_dim: 4,
            num_actions: 4,
        }
    }

    fn test_image(seed: u64) -> Image {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Image::from_fn(24, 12, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn u_vector_layout() {
        assert_eq!(u_vector(1, 0), {
            let mut u = [0.0; U_DIM];
            u[19] = 1.0;
            u
        });
        let u = u_vector(3, 0);
        assert_eq!(u[..17], [0.0; 17]);
        assert_eq!(u[17..], [1.0; 3]);
        let u = u_vector(3, 2);
        assert_eq!(u.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(u[19], 1.0);
        assert_eq!(u_vector(20, 0), [1.0; U_DIM]);
    }

    #[test]
    fn discounting_matches_example() {
        let r = discount_rewards(1.0, 3, 0.99);
        assert!((r[0] - 0.9801).abs() < 1e-12);
        assert!((r[1] - 0.99).abs() < 1e-12);
        assert!((r[2] - 1.0).abs() < 1e-12);
        for i in 0..2 {
            assert_eq!(r[i], 0.99 * r[i + 1]);
        }
    }

    #[test]
    fn self_play_reward_cases() {
        let img = test_image(81);
        // Ties count as defeat.
        let tie = compute_self_play_reward(&Scorer::Bdw, &img, &img, &img).unwrap();
        assert_eq!(tie, -1.0);
        // Strictly better candidate wins, in either argument order.
        let cropped = crate::ops::crop_left(&img, 1).unwrap();
        let scaled = crate::ops::scale_to(&img, 23).unwrap();
        let s_crop = crate::bdw::bdw(&img, &cropped).unwrap();
        let s_scale = crate::bdw::bdw(&img, &scaled).unwrap();
        assert_ne!(s_crop, s_scale);
        let fwd = compute_self_play_reward(&Scorer::Bdw, &img, &cropped, &scaled).unwrap();
        let rev = compute_self_play_reward(&Scorer::Bdw, &img, &scaled, &cropped).unwrap();
        assert_eq!(fwd, if s_crop < s_scale { 1.0 } else { -1.0 });
        assert_eq!(fwd, -rev);
    }

    #[test]
    fn higher_better_scorer_flips_the_inequality() {
        use std::os::unix::fs::PermissionsExt;
        // Stub that scores an image by its width; wider must win.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("width.sh");
        std::fs::write(&path, "#!/bin/sh\nhead -2 \"$1\" | tail -1 | cut -d' ' -f1\n").unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        let scorer = Scorer::External {
            command: path.to_string_lossy().into_owned(),
        };
        let img = test_image(88);
        let wide = crate::ops::crop_left(&img, 1).unwrap();
        let narrow = crate::ops::crop_left(&img, 3).unwrap();
        assert_eq!(
            compute_self_play_reward(&scorer, &img, &wide, &narrow).unwrap(),
            1.0
        );
        assert_eq!(
            compute_self_play_reward(&scorer, &img, &narrow, &wide).unwrap(),
            -1.0
        );
    }

    /// Generator whose every draw maps to the same unit-interval value.
    struct ConstRng(u64);

    impl rand::RngCore for ConstRng {
        fn next_u32(&mut self) -> u32 {
            (self.0 >> 32) as u32
        }
        fn next_u64(&mut self) -> u64 {
            self.0
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            dest.fill(0);
        }
    }

    #[test]
    fn forced_sampling_produces_identical_trajectories() {
        let net = PolicyValueNet::zeroed(tiny_net_config()).unwrap();
        let img = test_image(82);
        // A constant draw in the third quartile always picks action 2
        // from the uniform policy of a zeroed net.
        let mut rng = ConstRng(((0.6 * 2f64.powi(53)) as u64) << 11);
        let trace = run_self_play_episode(&net, &img, 4, &mut rng).unwrap();
        assert_eq!(trace.actions, vec![Action::Scale; 4]);
        assert_eq!(trace.opp_actions, vec![Action::Scale; 4]);
        assert_eq!(Some(&trace.final_self), trace.final_opp.as_ref());
    }

    #[test]
    fn episode_shapes_and_u_bookkeeping() {
        let net = PolicyValueNet::zeroed(tiny_net_config()).unwrap();
        let img = test_image(83);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let trace = run_self_play_episode(&net, &img, 3, &mut rng).unwrap();
        assert_eq!(trace.actions.len(), 3);
        assert_eq!(trace.observations.len(), 3);
        for (step, obs) in trace.observations.iter().enumerate() {
            let ones = obs.u.iter().filter(|&&v| v == 1.0).count();
            assert_eq!(ones, 3 - step);
        }
    }

    #[test]
    fn weights_from_frequency_counters() {
        let mut counters = FreqCounters {
            win: [6, 2, 0, 0],
            ..Default::default()
        };
        let img = test_image(84);
        let mut traces = vec![EpisodeTrace {
            i_max: 2,
            actions: vec![Action::CropRight, Action::CropLeft],
            opp_actions: vec![],
            observations: vec![],
            rewards: vec![1.0, 1.0],
            final_reward: 1.0,
            weights: vec![1.0; 2],
            entropies: vec![],
            final_self: img.clone(),
            final_opp: None,
        }];
        compute_weights(&mut traces, &counters, false);
        assert_eq!(traces[0].weights[0], 1.0); // least-frequent selected action
        assert!((traces[0].weights[1] - 1.0 / 3.0).abs() < 1e-15);

        // Degenerate single-action class.
        counters.win = [5, 0, 0, 0];
        traces[0].actions = vec![Action::CropLeft, Action::CropLeft];
        compute_weights(&mut traces, &counters, false);
        assert_eq!(traces[0].weights, vec![1.0, 1.0]);

        // Literal minimum zeroes the weights as soon as any action is
        // unused in the class.
        counters.win = [6, 2, 0, 0];
        compute_weights(&mut traces, &counters, true);
        assert_eq!(traces[0].weights, vec![0.0, 0.0]);
    }

    #[test]
    fn counter_conservation() {
        use rand::Rng;
        let net = PolicyValueNet::init(tiny_net_config(), 9).unwrap();
        let img = test_image(85);
        let mut counters = FreqCounters::default();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut total_steps = 0;
        for _ in 0..5 {
            let i_max = rng.random_range(1..=6);
            let mut trace = run_self_play_episode(&net, &img, i_max, &mut rng).unwrap();
            trace.final_reward = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            counters.tally(&trace);
            total_steps += i_max as u64;
        }
        assert_eq!(counters.total(), total_steps);
    }

    #[test]
    fn greedy_ties_prefer_smaller_index() {
        assert_eq!(greedy_action(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(greedy_action(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(greedy_action(&[0.1, 0.2, 0.3, 0.4]), 3);
    }

    #[test]
    fn infer_applies_exact_step_count() {
        let net = PolicyValueNet::init(tiny_net_config(), 11).unwrap();
        let img = test_image(86);
        let schedule = StepSchedule::new(img.width()).unwrap();
        let (out, actions) = infer(&net, &img, 0.75).unwrap();
        assert_eq!(actions.len(), 10);
        assert_eq!(out.width(), schedule.target(9));
        assert!(infer(&net, &img, 0.4).is_err());
    }

    #[test]
    fn biased_policy_head_forces_crop_left() {
        let mut net = PolicyValueNet::init(tiny_net_config(), 12).unwrap();
        // Push the first policy logit far above the rest via its bias.
        let names = net.buffer_names();
        let idx = names.iter().position(|n| n == "policy_head.bias").unwrap();
        net.param_buffers_mut()[idx][0] = 100.0;
        let img = test_image(87);
        let schedule = StepSchedule::new(img.width()).unwrap();
        let (out, actions) = infer(&net, &img, 0.75).unwrap();
        assert!(actions.iter().all(|&a| a == Action::CropLeft));
        let mut expect = img.clone();
        for step in 0..10 {
            expect = apply_operator(&expect, Action::CropLeft, &schedule, step).unwrap();
        }
        assert_eq!(out, expect);
    }
}
