//! The four retargeting operators and the width schedule that shrinks an
//! image by 2.5% of its original width per step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_bilinear, Image};
use crate::seam::carve_seams;

/// Fraction of the original width removed per step.
pub const STEP_FRACTION: f64 = 0.025;
/// Maximum number of steps; 20 steps reach half the original width.
pub const MAX_STEPS: usize = 20;

/// A retargeting operator. Integer codes 0..=3 match the action space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "CRL")]
    CropLeft = 0,
    #[serde(rename = "CRR")]
    CropRight = 1,
    #[serde(rename = "SCL")]
    Scale = 2,
    #[serde(rename = "SC")]
    SeamCarve = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::CropLeft,
        Action::CropRight,
        Action::Scale,
        Action::SeamCarve,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Action::CropLeft => "CRL",
            Action::CropRight => "CRR",
            Action::Scale => "SCL",
            Action::SeamCarve => "SC",
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Per-step target widths for one original image. Targets are rounded from
/// the cumulative fraction of the original width, so rounding never drifts
/// and step 20 lands exactly on round(width / 2).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepSchedule {
    original_width: usize,
    targets: [usize; MAX_STEPS],
}

impl StepSchedule {
    pub fn new(original_width: usize) -> Result<Self> {
        if original_width == 0 {
            return Err(Error::InvalidArgument("zero original width".into()));
        }
        let mut targets = [0usize; MAX_STEPS];
        for (i, t) in targets.iter_mut().enumerate() {
            *t = (original_width as f64 * (1.0 - STEP_FRACTION * (i + 1) as f64)).round()
                as usize;
        }
        Ok(Self {
            original_width,
            targets,
        })
    }

    pub fn original_width(&self) -> usize {
        self.original_width
    }

    /// Target width after step `step` (0-based).
    pub fn target(&self, step: usize) -> usize {
        self.targets[step]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Width an image must have going into step `step`.
    pub fn expected_input_width(&self, step: usize) -> usize {
        if step == 0 {
            self.original_width
        } else {
            self.targets[step - 1]
        }
    }
}

/// Maps a target size ratio in [0.5, 0.975] to the number of steps.
pub fn steps_for_ratio(ratio: f64) -> Result<usize> {
    if !(0.5..=0.975).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} outside [0.5, 0.975]"
        )));
    }
    let steps = ((1.0 - ratio) / STEP_FRACTION).round() as usize;
    if !(1..=MAX_STEPS).contains(&steps) {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} maps to {steps} steps"
        )));
    }
    Ok(steps)
}

/// Removes the `k` leftmost columns.
pub fn crop_left(img: &Image, k: usize) -> Result<Image> {
    crop(img, k, 0)
}

/// Removes the `k` rightmost columns.
pub fn crop_right(img: &Image, k: usize) -> Result<Image> {
    crop(img, 0, k)
}

fn crop(img: &Image, left: usize, right: usize) -> Result<Image> {
    let removed = left + right;
    if removed >= img.width() {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {removed} of {} columns",
            img.width()
        )));
    }
    let new_width = img.width() - removed;
    Ok(Image::from_fn(new_width, img.height(), |x, y| {
        img.pixel(x + left, y)
    }))
}

/// Horizontal-only bilinear resample; the height is preserved.
pub fn scale_to(img: &Image, new_width: usize) -> Result<Image> {
    if new_width == 0 || new_width > img.width() {
        return Err(Error::InvalidArgument(format!(
            "scale target {new_width} outside 1..={}",
            img.width()
        )));
    }
    resize_bilinear(img, new_width, img.height())
}

/// Applies one operator unit: the output width is the schedule target for
/// `step_index`, the height is unchanged.
pub fn apply_operator(
    img: &Image,
    action: Action,
    schedule: &StepSchedule,
    step_index: usize,
) -> Result<Image> {
    if step_index >= MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "step index {step_index} exceeds {MAX_STEPS}"
        )));
    }
    let expected = schedule.expected_input_width(step_index);
    if img.width() != expected {
        return Err(Error::ScheduleMismatch {
            step: step_index,
            expected,
            actual: img.width(),
        });
    }
    let target = schedule.target(step_index);
    let k = img.width() - target;
    match action {
        Action::CropLeft => crop_left(img, k),
        Action::CropRight => crop_right(img, k),
        Action::Scale => scale_to(img, target),
        Action::SeamCarve => carve_seams(img, k),
    }
}
