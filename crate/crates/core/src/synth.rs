// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic activations that look like post-ReLU data: a share of
//! exact zeros and a long-tailed magnitude distribution clipped to a layer
//! maximum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::{BitWidth, FixedTensor, Layout, Signedness};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReluLike {
    pub zero_fraction: f64,
    /// Mean of the geometric magnitude distribution.
    pub mean_magnitude: f64,
    pub max_magnitude: u32,
}

impl Default for ReluLike {
    fn default() -> Self {
        ReluLike {
            zero_fraction: 0.3,
            mean_magnitude: 48.0,
            max_magnitude: 4095,
        }
    }
}

impl ReluLike {
    pub fn validate(&self, width: BitWidth) -> Result<()> {
        if !(0.0..1.0).contains(&self.zero_fraction) {
            return Err(Error::Profile("zero fraction must lie in [0, 1)".into()));
        }
        if !(self.mean_magnitude.is_finite() && self.mean_magnitude >= 1.0) {
            return Err(Error::Profile("mean magnitude must be at least 1".into()));
        }
        if self.max_magnitude == 0 || (self.max_magnitude as u64) >> width.bits() != 0 {
            return Err(Error::ValueTooWide {
                value: self.max_magnitude as u64,
                width: width.bits(),
            });
        }
        Ok(())
    }

    /// `n` values drawn from `rng`.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<i32> {
        // support starts at 1 so a nonzero draw stays nonzero
        let geo = Geometric::new(1.0 / self.mean_magnitude).expect("validated mean");
        (0..n)
            .map(|_| {
                if rng.random_bool(self.zero_fraction) {
                    0
                } else {
                    (geo.sample(rng) + 1).min(self.max_magnitude as u64) as i32
                }
            })
            .collect()
    }

    /// An NHWC activation tensor `[1, h, w, c]`.
    pub fn tensor(&self, (h, w, c): (usize, usize, usize), width: BitWidth, seed: u64) -> Result<FixedTensor> {
        self.validate(width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = self.sample(h * w * c, &mut rng);
        FixedTensor::new(vec![1, h, w, c], values, width, Signedness::Unsigned, Layout::Nhwc)?
            .with_relu_output(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let r = ReluLike::default();
        let a = r.tensor((8, 8, 32), BitWidth::W16, 7).unwrap();
        let b = r.tensor((8, 8, 32), BitWidth::W16, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| (0..=4095).contains(&v)));
        let zeros = a.values().iter().filter(|&&v| v == 0).count() as f64 / a.len() as f64;
        assert!((zeros - 0.3).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_parameters() {
        let r = ReluLike {
            max_magnitude: 300,
            ..ReluLike::default()
        };
        assert!(r.validate(BitWidth::W8).is_err());
        assert!(ReluLike {
            zero_fraction: 1.0,
            ..ReluLike::default()
        }
        .validate(BitWidth::W16)
        .is_err());
    }
}
