//! Dynamic-programming search over operator-count states, the exhaustive
//! testing oracle, and the generated-image tally behind the efficiency
//! comparison with step-by-step inference.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::bdw::Scorer;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::ops::{apply_operator, Action, StepSchedule, MAX_STEPS};

/// Search result plus its cost tallies. Serializes with keys `sequence`,
/// `score`, `images_generated`, `bdw_evaluations`, and `wall_time_s`.
#[derive(Clone, Debug, Serialize)]
pub struct SearchReport {
    pub sequence: Vec<Action>,
    pub score: f64,
    pub images_generated: u64,
    pub bdw_evaluations: u64,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub best_image: Image,
}

struct State {
    sequence: Vec<Action>,
    image: Image,
    score: f64,
}

/// Level-by-level expansion over operator-count vectors. Each level applies
/// every action to every surviving state; states reaching the same count
/// vector are merged, keeping the best-scoring image (ties keep the
/// lexicographically smallest action sequence). Every generated image and
/// every scorer call is tallied.
pub fn multiop_search(
    original: &Image,
    steps: usize,
    schedule: &StepSchedule,
    scorer: &Scorer,
) -> Result<SearchReport> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "step count {steps} outside 1..={MAX_STEPS}"
        )));
    }
    let start = Instant::now();
    let orientation = scorer.orientation();
    let mut images_generated = 0u64;
    let mut scorer_calls = 0u64;

    let mut level: BTreeMap<[u8; 4], State> = BTreeMap::new();
    level.insert(
        [0; 4],
        State {
            sequence: Vec::new(),
            image: original.clone(),
            score: f64::NAN, // the root is never compared
        },
    );

    for step in 0..steps {
        let mut next: BTreeMap<[u8; 4], State> = BTreeMap::new();
        for (counts, state) in &level {
            for action in Action::ALL {
                let image = apply_operator(&state.image, action, schedule, step)?;
                images_generated += 1;
                let score = scorer.score(original, &image)?;
                scorer_calls += 1;

                let mut new_counts = *counts;
                new_counts[action.index()] += 1;
                let mut sequence = state.sequence.clone();
                sequence.push(action);

                match next.get_mut(&new_counts) {
                    None => {
                        next.insert(
                            new_counts,
                            State {
                                sequence,
                                image,
                                score,
                            },
                        );
                    }
                    Some(existing) => {
                        let replace = orientation.better(score, existing.score)
                            || (score == existing.score && sequence < existing.sequence);
                        if replace {
                            *existing = State {
                                sequence,
                                image,
                                score,
                            };
                        }
                    }
                }
            }
        }
        level = next;
    }

    let best = level
        .into_values()
        .reduce(|best, s| {
            if orientation.better(s.score, best.score)
                || (s.score == best.score && s.sequence < best.sequence)
            {
                s
            } else {
                best
            }
        })
        .expect("at least one state per level");

    Ok(SearchReport {
        sequence: best.sequence,
        score: best.score,
        images_generated,
        bdw_evaluations: scorer_calls,
        wall_time_s: start.elapsed().as_secs_f64(),
        best_image: best.image,
    })
}

/// Cap on exhaustive search depth (4^4 = 256 sequences).
pub const EXHAUSTIVE_MAX_STEPS: usize = 4;

/// Evaluates every action sequence of length `steps` and returns the global
/// optimum of the final-image score. Prefix images are shared, so the
/// image tally is the number of tree edges.
pub fn exhaustive_search(
    original: &Image,
    steps: usize,
    schedule: &StepSchedule,
    scorer: &Scorer,
) -> Result<SearchReport> {
    if steps == 0 || steps > EXHAUSTIVE_MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "step count {steps} outside 1..={EXHAUSTIVE_MAX_STEPS}"
        )));
    }
    let start = Instant::now();
    let mut images_generated = 0u64;
    let mut scorer_calls = 0u64;
    let mut best: Option<State> = None;

    fn descend(
        original: &Image,
        image: &Image,
        sequence: &mut Vec<Action>,
        steps: usize,
        schedule: &StepSchedule,
        scorer: &Scorer,
        images_generated: &mut u64,
        scorer_calls: &mut u64,
        best: &mut Option<State>,
    ) -> Result<()> {
        let depth = sequence.len();
        if depth == steps {
            let score = scorer.score(original, image)?;
            *scorer_calls += 1;
            let better = match best {
                None => true,
                Some(b) => {
                    scorer.orientation().better(score, b.score)
                        || (score == b.score && sequence.as_slice() < b.sequence.as_slice())
                }
            };
            if better {
                *best = Some(State {
                    sequence: sequence.clone(),
                    image: image.clone(),
                    score,
                });
            }
            return Ok(());
        }
        for action in Action::ALL {
            let next = apply_operator(image, action, schedule, depth)?;
            *images_generated += 1;
            sequence.push(action);
            descend(
                original,
                &next,
                sequence,
                steps,
                schedule,
                scorer,
                images_generated,
                scorer_calls,
                best,
            )?;
            sequence.pop();
        }
        Ok(())
    }

    let mut sequence = Vec::new();
    descend(
        original,
        original,
        &mut sequence,
        steps,
        schedule,
        scorer,
        &mut images_generated,
        &mut scorer_calls,
        &mut best,
    )?;
    let best = best.expect("non-empty search space");

    Ok(SearchReport {
        sequence: best.sequence,
        score: best.score,
        images_generated,
        bdw_evaluations: scorer_calls,
        wall_time_s: start.elapsed().as_secs_f64(),
        best_image: best.image,
    })
}

/// Applies the same action for every step; used as a search-space bound.
pub fn single_operator_rollout(
    original: &Image,
    action: Action,
    steps: usize,
    schedule: &StepSchedule,
    scorer: &Scorer,
) -> Result<f64> {
    let mut image = original.clone();
    for step in 0..steps {
        image = apply_operator(&image, action, schedule, step)?;
    }
    scorer.score(original, &image)
}
