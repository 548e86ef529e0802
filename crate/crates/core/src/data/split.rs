use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Disjoint train/validation/test index lists covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Seeded shuffle of `0..n`, then a contiguous partition.
///
/// Validation and test sizes are `round(n · ratio)` (test capped so the
/// total never exceeds `n`); train takes the remainder.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r < 0.0) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let n_val = ((n as f64 * va).round() as usize).min(n);
    let n_test = ((n as f64 * te).round() as usize).min(n - n_val);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = n - n_val - n_test;
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(Splits {
        train: order,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighty_ten_ten() {
        let s = split_dataset(10, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(s.sizes(), (8, 1, 1));
        assert_eq!(s, split_dataset(10, (0.8, 0.1, 0.1), 1).unwrap());
    }

    #[test]
    fn rounding_rule_on_seven() {
        assert_eq!(split_dataset(7, (0.8, 0.1, 0.1), 0).unwrap().sizes(), (5, 1, 1));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        assert!(split_dataset(10, (0.8, 0.1, 0.2), 0).is_err());
        assert!(split_dataset(10, (0.8, 0.1, 0.1 + 1e-12), 0).is_ok());
    }
}
