//! Vertical seam removal with forward-energy costs.
//!
//! A seam is an 8-connected top-to-bottom path of one pixel per row. The
//! cost of a step into (row, col) is the brightness gradient created by
//! stitching the column's neighbors together after removal, computed on
//! luma with edge-clamped lookups. Seams are removed one at a time and all
//! costs are recomputed on the reduced image after every removal.

use crate::error::{Error, Result};
use crate::image::Image;

/// Removes `k` vertical seams, one at a time.
pub fn carve_seams(img: &Image, k: usize) -> Result<Image> {
    if k >= img.width() {
        return Err(Error::InvalidArgument(format!(
            "cannot carve {k} seams from width {}",
            img.width()
        )));
    }
    let mut current = img.clone();
    for _ in 0..k {
        let seam = find_seam(&current);
        current = remove_seam(&current, &seam);
    }
    Ok(current)
}

/// Transition costs into (row, col) from the three predecessor columns:
/// (from col-1, from col, from col+1). Lookups are edge-clamped.
#[inline]
fn transition_costs(luma: &[f64], width: usize, row: usize, col: usize) -> (f64, f64, f64) {
    let at = |r: usize, c: usize| luma[r * width + c];
    let left = at(row, col.saturating_sub(1));
    let right = at(row, (col + 1).min(width - 1));
    let base = (right - left).abs();
    let above = at(row - 1, col);
    (base + (above - left).abs(), base, base + (above - right).abs())
}

/// Minimum-cost seam under the leftmost tie-break: the end column is the
/// smallest minimizer, and each backtracking step prefers the smallest
/// predecessor column among equal cumulative costs.
pub fn find_seam(img: &Image) -> Vec<usize> {
    let (width, height) = (img.width(), img.height());
    if width == 1 {
        return vec![0; height];
    }
    let luma = img.luma_plane();
    // Cumulative cost and chosen predecessor per cell; row 0 pays no
    // transition cost.
    let mut cost = vec![0.0f64; width * height];
    let mut pred = vec![0usize; width * height];
    for row in 1..height {
        for col in 0..width {
            let (cl, cu, cr) = transition_costs(&luma, width, row, col);
            let mut best = cost[(row - 1) * width + col] + cu;
            let mut best_pred = col;
            if col > 0 {
                let candidate = cost[(row - 1) * width + col - 1] + cl;
                if candidate < best || (candidate == best && col - 1 < best_pred) {
                    best = candidate;
                    best_pred = col - 1;
                }
            }
            if col + 1 < width {
                let candidate = cost[(row - 1) * width + col + 1] + cr;
                if candidate < best {
                    best = candidate;
                    best_pred = col + 1;
                }
            }
            cost[row * width + col] = best;
            pred[row * width + col] = best_pred;
        }
    }

    let last_row = &cost[(height - 1) * width..];
    let mut end = 0;
    for (c, &v) in last_row.iter().enumerate() {
        if v < last_row[end] {
            end = c;
        }
    }
    let mut seam = vec![0usize; height];
    seam[height - 1] = end;
    for row in (1..height).rev() {
        seam[row - 1] = pred[row * width + seam[row]];
    }
    seam
}

fn remove_seam(img: &Image, seam: &[usize]) -> Image {
    Image::from_fn(img.width() - 1, img.height(), |x, y| {
        let sx = if x < seam[y] { x } else { x + 1 };
        img.pixel(sx, y)
    })
}
