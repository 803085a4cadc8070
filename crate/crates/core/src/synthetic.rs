//! Synthetic image generators with known-best operators.
//!
//! Two families are built so the distance-optimal operator differs by
//! class:
//!
//! * crop-favoring: a flat left half followed by per-column stripes whose
//!   first stripe repeats the flat color. Left crops (and the leftmost
//!   seam, which equals them) remove only redundant flat columns, so the
//!   warped distance stays at zero, while scaling aliases the stripes.
//! * scale-favoring: a smooth horizontal ramp plus per-row banding.
//!   Scaling preserves the ramp's endpoints and shape, while crops (and
//!   seams, which collapse to the cheap boundary column) shift the ramp
//!   against the anchored alignment and pay for every removed column once
//!   enough columns are gone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::image::Image;

/// Flat left half, strong vertical stripes on the right. Left cropping is
/// distance-free up to half the width.
pub fn crop_favoring_image(width: usize, height: usize, rng: &mut impl Rng) -> Image {
    let low = rng.random_range(0.05..0.20) as f32;
    let high = rng.random_range(0.80..0.95) as f32;
    let flat = width / 2;
    Image::from_fn(width, height, |x, _| {
        let v = if x < flat || (x - flat) % 2 == 0 {
            low
        } else {
            high
        };
        [v, v, v]
    })
}

/// Horizontal luminance ramp with per-row banding. Scaling keeps the ramp
/// aligned; removals do not.
pub fn scale_favoring_image(width: usize, height: usize, rng: &mut impl Rng) -> Image {
    let base = rng.random_range(0.12..0.20);
    let span = rng.random_range(0.55..0.65);
    let band = rng.random_range(0.06..0.10);
    let rising = rng.random_bool(0.5);
    Image::from_fn(width, height, |x, y| {
        let t = x as f64 / (width - 1) as f64;
        let t = if rising { t } else { 1.0 - t };
        let stripe = if y % 2 == 0 { band } else { -band };
        let v = (base + span * t + stripe).clamp(0.0, 1.0) as f32;
        [v, v, v]
    })
}

/// Interleaved corpus: even indices favor left cropping, odd indices
/// favor scaling.
pub fn mixed_corpus(count: usize, width: usize, height: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            if i % 2 == 0 {
                crop_favoring_image(width, height, &mut rng)
            } else {
                scale_favoring_image(width, height, &mut rng)
            }
        })
        .collect()
}

/// Corpus of scale-favoring images only; with episodes long enough,
/// scaling strictly dominates on every image.
pub fn scale_dominant_corpus(count: usize, width: usize, height: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| scale_favoring_image(width, height, &mut rng))
        .collect()
}
