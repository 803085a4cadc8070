//! Multi-operator image retargeting at desk scale.
//!
//! The crate houses the four width-reducing operators (left/right crop,
//! horizontal scale, seam carving), the bidirectional warping distance
//! used to judge retargeted results, a dynamic-programming search over
//! operator combinations, a small deterministic neural-network kernel,
//! and a self-play actor-critic agent that learns to pick one operator
//! per step.

pub mod agent;
pub mod bdw;
pub mod error;
pub mod image;
pub mod multiop;
pub mod neural;
pub mod ops;
pub mod seam;
pub mod synthetic;

pub use bdw::{bdw, directional_warp_cost, Orientation, Scorer};
pub use error::{Error, Result};
pub use image::{
    load_image, make_observation, resize_bilinear, save_image, Image, Observation, OBS_SIZE,
    U_DIM,
};
pub use multiop::{exhaustive_search, multiop_search, SearchReport};
pub use ops::{
    apply_operator, crop_left, crop_right, scale_to, steps_for_ratio, Action, StepSchedule,
    MAX_STEPS, STEP_FRACTION,
};
pub use seam::carve_seams;
