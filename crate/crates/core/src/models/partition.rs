use serde::{Deserialize, Serialize};

use crate::autodiff::GateMask;
use crate::error::{Error, Result};

/// Split of the latent vector into contiguous blocks, each tied to the
/// ground-truth factors its training pairs share.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    /// `P + 1` ascending offsets, `0 … M`.
    pub boundaries: Vec<usize>,
    /// Factor ids captured by each partition.
    pub factor_map: Vec<Vec<usize>>,
}

impl PartitionSpec {
    pub fn new(boundaries: Vec<usize>, factor_map: Vec<Vec<usize>>) -> Result<Self> {
        let spec = Self {
            boundaries,
            factor_map,
        };
        spec.check_layout()?;
        Ok(spec)
    }

    /// Four 2-d partitions for dSprites: shape, size, rotation, and x/y together.
    pub fn dsprites() -> Self {
        Self {
            boundaries: vec![0, 2, 4, 6, 8],
            factor_map: vec![vec![0], vec![1], vec![2], vec![3, 4]],
        }
    }

    /// One partition spanning all `latent_dim` dimensions and all factors.
    pub fn single(latent_dim: usize, num_factors: usize) -> Self {
        Self {
            boundaries: vec![0, latent_dim],
            factor_map: vec![(0..num_factors).collect()],
        }
    }

    pub fn latent_dim(&self) -> usize {
        *self.boundaries.last().unwrap_or(&0)
    }

    pub fn num_partitions(&self) -> usize {
        self.boundaries.len().saturating_sub(1)
    }

    pub fn dims(&self, partition: usize) -> std::ops::Range<usize> {
        self.boundaries[partition]..self.boundaries[partition + 1]
    }

    pub fn mask(&self, partition: usize) -> Result<GateMask> {
        GateMask::for_partition(&self.boundaries, partition)
    }

    /// Partition whose pairs share exactly `factors` (order-insensitive).
    pub fn partition_for(&self, factors: &[usize]) -> Option<usize> {
        let mut want = factors.to_vec();
        want.sort_unstable();
        self.factor_map.iter().position(|f| {
            let mut have = f.clone();
            have.sort_unstable();
            have == want
        })
    }

    fn check_layout(&self) -> Result<()> {
        let b = &self.boundaries;
        if b.len() < 2 || b[0] != 0 || b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "partition boundaries must start at 0 and strictly ascend, got {b:?}"
            )));
        }
        if self.factor_map.len() != self.num_partitions() {
            return Err(Error::Config(format!(
                "{} partitions but {} factor_map entries",
                self.num_partitions(),
                self.factor_map.len()
            )));
        }
        Ok(())
    }

    /// Full check against a dataset with `num_factors` factors: every factor
    /// is mapped exactly once.
    pub fn validate(&self, num_factors: usize) -> Result<()> {
        self.check_layout()?;
        let mut seen = vec![0usize; num_factors];
        for f in self.factor_map.iter().flatten() {
            if *f >= num_factors {
                return Err(Error::Config(format!("factor id {f} out of range (K = {num_factors})")));
            }
            seen[*f] += 1;
        }
        if let Some(k) = seen.iter().position(|&c| c != 1) {
            return Err(Error::Config(format!(
                "factor {k} is mapped {} times; each factor needs exactly one partition",
                seen[k]
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dsprites_layout() {
        let spec = PartitionSpec::dsprites();
        spec.validate(5).unwrap();
        assert_eq!(spec.num_partitions(), 4);
        assert_eq!(spec.dims(3), 6..8);
        assert_eq!(spec.partition_for(&[4, 3]), Some(3));
        assert_eq!(spec.partition_for(&[1]), Some(1));
        assert_eq!(spec.mask(1).unwrap().count_active(), 2);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(PartitionSpec::new(vec![0, 4, 4, 8], vec![vec![0], vec![1], vec![2]]).is_err());
        assert!(PartitionSpec::new(vec![1, 8], vec![vec![0]]).is_err());
        let dup = PartitionSpec::new(vec![0, 4, 8], vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert!(dup.validate(3).is_err());
        let missing = PartitionSpec::new(vec![0, 4, 8], vec![vec![0], vec![1]]).unwrap();
        assert!(missing.validate(3).is_err());
        PartitionSpec::single(8, 5).validate(5).unwrap();
    }
}
