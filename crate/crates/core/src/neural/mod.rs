//! Minimal deterministic neural-network kernel: conv/dense/LSTM layers,
//! manual backpropagation, softmax/entropy, RMSProp, and checkpointing.
//!
//! Everything is single-threaded and runs the same op sequence for the
//! same inputs, so forward and backward passes are bit-reproducible.
//! Parameters live in single precision; arithmetic runs in double
//! precision.

pub mod checkpoint;
pub mod layers;
pub mod lstm;
pub mod net;
pub mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use lstm::LstmState;
pub use net::{
    BackwardReport, ConvSpec, Gradients, NetConfig, PolicyValueNet, StepInput, StepTarget,
};
pub use optim::{rmsprop_update, RmsProp, DEFAULT_DECAY, DEFAULT_EPSILON};

/// Numerically stable softmax along with its logarithm.
pub fn log_softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&v| v - max).collect();
    let log_sum = shifted.iter().map(|&v| v.exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = shifted.iter().map(|&v| v - log_sum).collect();
    let probs: Vec<f64> = log_probs.iter().map(|&v| v.exp()).collect();
    (probs, log_probs)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).0
}

/// Shannon entropy in nats, with 0·log 0 taken as 0.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let (p, _) = log_softmax(&[3.0, -1.0, 0.5, 100.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn entropy_of_uniform_is_log4() {
        let h = entropy(&[0.25; 4]);
        assert!((h - 4.0f64.ln()).abs() < 1e-12);
        assert!((h - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn entropy_of_one_hot_is_zero() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn entropy_direct_summation_example() {
        let p = [0.5, 0.25, 0.125, 0.125];
        // Independent oracle: plain term-by-term accumulation.
        let mut expected = 0.0;
        for v in p {
            expected -= v * f64::ln(v);
        }
        let h = entropy(&p);
        assert!((h - expected).abs() < 1e-15);
        assert!((h - 1.2130).abs() < 1e-4);
    }

    #[test]
    fn entropy_bounded_by_log_n() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(71);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..10.0f64)).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let h = entropy(&p);
            assert!((0.0..=4.0f64.ln() + 1e-12).contains(&h));
        }
    }
}
