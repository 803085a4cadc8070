//! Bi-directional warping distance between an original and a retargeted
//! image, plus the pluggable scorer used to swap in external rewards.
//!
//! The directional cost aligns source columns to target columns with a
//! monotonic, boundary-anchored correspondence (first column to first,
//! last to last), where a pair costs the sum over rows of squared luma
//! differences. The bidirectional score is the larger of the two
//! directions, so it is symmetric by construction. Its scale depends
//! heavily on image content and is unbounded above.

use std::io::Write;
use std::process::Command;

use crate::error::{Error, Result};
use crate::image::{save_image, Image};

/// Whether smaller or larger scorer values indicate a better candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    LowerBetter,
    HigherBetter,
}

impl Orientation {
    /// Strictly better under this orientation.
    #[inline]
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Orientation::LowerBetter => a < b,
            Orientation::HigherBetter => a > b,
        }
    }
}

/// Cost of aligning `source` columns onto `target` columns.
pub fn directional_warp_cost(source: &Image, target: &Image) -> Result<f64> {
    if source.height() != target.height() {
        return Err(Error::DimensionMismatch(format!(
            "warp cost heights {} vs {}",
            source.height(),
            target.height()
        )));
    }
    let s = source.luma_columns();
    let t = target.luma_columns();
    let (ns, nt) = (s.len(), t.len());

    let pair = |i: usize, j: usize| -> f64 {
        s[i].iter()
            .zip(&t[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };

    // Full (ns × nt) table; every cell on the path pays its pair cost and
    // steps move down, right, or diagonally.
    let mut table = vec![0.0f64; ns * nt];
    for i in 0..ns {
        for j in 0..nt {
            let d = pair(i, j);
            let prev = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => table[j - 1],
                (_, 0) => table[(i - 1) * nt],
                _ => {
                    let up = table[(i - 1) * nt + j];
                    let left = table[i * nt + j - 1];
                    let diag = table[(i - 1) * nt + j - 1];
                    up.min(left).min(diag)
                }
            };
            table[i * nt + j] = d + prev;
        }
    }
    Ok(table[ns * nt - 1])
}

/// Bi-directional warping distance: the larger directional cost.
pub fn bdw(original: &Image, retargeted: &Image) -> Result<f64> {
    let forward = directional_warp_cost(original, retargeted)?;
    let backward = directional_warp_cost(retargeted, original)?;
    Ok(forward.max(backward))
}

/// Evaluation function for retargeted candidates. The built-in kind is the
/// BDW distance (lower is better); the external kind delegates to a
/// program that prints one decimal number for an image file (higher is
/// better).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scorer {
    Bdw,
    External { command: String },
}

impl Scorer {
    /// Parses `bdw` or `external:<command>`.
    pub fn parse(spec: &str) -> Result<Scorer> {
        if spec == "bdw" {
            Ok(Scorer::Bdw)
        } else if let Some(command) = spec.strip_prefix("external:") {
            if command.is_empty() {
                return Err(Error::InvalidArgument("empty external command".into()));
            }
            Ok(Scorer::External {
                command: command.to_string(),
            })
        } else {
            Err(Error::InvalidArgument(format!(
                "unknown scorer '{spec}': expected 'bdw' or 'external:<command>'"
            )))
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            Scorer::Bdw => Orientation::LowerBetter,
            Scorer::External { .. } => Orientation::HigherBetter,
        }
    }

    /// Scores a candidate. The BDW kind measures distance to the original;
    /// the external kind judges the candidate alone.
    pub fn score(&self, original: &Image, candidate: &Image) -> Result<f64> {
        match self {
            Scorer::Bdw => bdw(original, candidate),
            Scorer::External { command } => external_score(command, candidate),
        }
    }
}

/// Writes the candidate to a temporary PPM and invokes
/// `<command> <image-path>`, parsing one decimal number from stdout.
fn external_score(command: &str, candidate: &Image) -> Result<f64> {
    let mut file = tempfile::Builder::new()
        .prefix("retarget-score-")
        .suffix(".ppm")
        .tempfile()
        .map_err(|e| Error::Scorer(format!("temp file: {e}")))?;
    file.flush().ok();
    save_image(candidate, file.path())?;

    let output = Command::new(command)
        .arg(file.path())
        .output()
        .map_err(|e| Error::Scorer(format!("spawn '{command}': {e}")))?;
    if !output.status.success() {
        return Err(Error::Scorer(format!(
            "'{command}' exited with {}",
            output.status
        )));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let token = stdout
        .split_whitespace()
        .next()
        .ok_or_else(|| Error::Scorer(format!("'{command}' printed no output")))?;
    let value: f64 = token
        .parse()
        .map_err(|_| Error::Scorer(format!("'{command}' printed non-numeric '{token}'")))?;
    if !value.is_finite() {
        return Err(Error::Scorer(format!("'{command}' printed {value}")));
    }
    Ok(value)
}
