//! Sprite images, their ground-truth factors, and the factor-matched pair
//! sampler that decides which latent partition each step trains.

mod archive;
mod factors;
mod npy;
mod pairing;
mod procedural;

use std::path::PathBuf;

pub use archive::{load_archive, load_archive_with_bases, write_archive};
pub use factors::{FactorTable, DESK_BASES, DSPRITES_BASES, FACTOR_NAMES};
pub use pairing::{epoch_schedule, PairBatch, PairSampler};
pub use procedural::{generate_procedural, rasterize, Shape, CANVAS};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Pixels per image.
pub const PIXELS: usize = CANVAS * CANVAS;
const WORDS: usize = PIXELS / 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Archive(PathBuf),
    Procedural,
}

/// Binary 64×64 images, bit-packed row-major, with one factor row each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    bits: Vec<u64>,
    pub factors: FactorTable,
    pub source: Source,
}

/// Packs one image of 0/1 bytes.
pub(crate) fn pack(pixels: &[u8], out: &mut Vec<u64>) -> Result<()> {
    debug_assert_eq!(pixels.len(), PIXELS);
    for chunk in pixels.chunks_exact(64) {
        let mut word = 0u64;
        for (bit, &p) in chunk.iter().enumerate() {
            match p {
                0 => {}
                1 => word |= 1 << bit,
                other => return Err(Error::Domain(format!("pixel value {other} is not binary"))),
            }
        }
        out.push(word);
    }
    Ok(())
}

impl Dataset {
    /// Builds a dataset from packed images; `bits` holds 64 words per image.
    pub(crate) fn from_bits(bits: Vec<u64>, factors: FactorTable, source: Source) -> Result<Self> {
        if bits.len() != factors.len() * WORDS {
            return Err(Error::Dimension(format!(
                "{} image words for {} factor rows",
                bits.len(),
                factors.len()
            )));
        }
        Ok(Self { bits, factors, source })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    fn words(&self, i: usize) -> &[u64] {
        &self.bits[i * WORDS..(i + 1) * WORDS]
    }

    pub fn pixel(&self, i: usize, p: usize) -> bool {
        self.words(i)[p / 64] >> (p % 64) & 1 == 1
    }

    /// Image `i` as 0/1 bytes, row-major.
    pub fn image(&self, i: usize) -> Vec<u8> {
        (0..PIXELS).map(|p| self.pixel(i, p) as u8).collect()
    }

    pub fn pixel_count(&self, i: usize) -> u32 {
        self.words(i).iter().map(|w| w.count_ones()).sum()
    }

    /// Stacks the given images into a `rows.len() × 4096` tensor of 0/1 values.
    pub fn batch<T: Scalar>(&self, rows: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(rows.len() * PIXELS);
        for &i in rows {
            for &w in self.words(i) {
                data.extend((0..64).map(|b| if w >> b & 1 == 1 { T::one() } else { T::zero() }));
            }
        }
        Tensor::new(vec![rows.len(), PIXELS], data).expect("batch shape")
    }
}
