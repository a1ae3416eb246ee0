use crate::error::{Error, Result};

/// Class counts of (shape, size, rotation, x, y) in the full sprite grid.
pub const DSPRITES_BASES: [usize; 5] = [3, 6, 40, 32, 32];
/// Reduced grid that keeps every factor type but trains in minutes.
pub const DESK_BASES: [usize; 5] = [3, 4, 8, 8, 8];

pub const FACTOR_NAMES: [&str; 5] = ["shape", "size", "rotation", "x", "y"];

/// Ground-truth factor classes of every image, stored row-major `N×K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorTable {
    bases: Vec<usize>,
    strides: Vec<usize>,
    classes: Vec<u32>,
}

fn strides_for(bases: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; bases.len()];
    for k in (0..bases.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * bases[k + 1];
    }
    strides
}

fn check_bases(bases: &[usize]) -> Result<()> {
    if bases.is_empty() || bases.contains(&0) {
        return Err(Error::Config(format!("factor bases must be non-empty and positive, got {bases:?}")));
    }
    Ok(())
}

impl FactorTable {
    /// The full factorial grid in canonical (row-major) order.
    pub fn full_grid(bases: &[usize]) -> Result<Self> {
        check_bases(bases)?;
        let strides = strides_for(bases);
        let n: usize = bases.iter().product();
        let mut classes = Vec::with_capacity(n * bases.len());
        for i in 0..n {
            for (&s, &b) in strides.iter().zip(bases) {
                classes.push(((i / s) % b) as u32);
            }
        }
        Ok(Self {
            bases: bases.to_vec(),
            strides,
            classes,
        })
    }

    /// A table over an arbitrary subset of the grid. Every class must be
    /// below its base.
    pub fn from_classes(bases: &[usize], classes: Vec<u32>) -> Result<Self> {
        check_bases(bases)?;
        let k = bases.len();
        if classes.len() % k != 0 {
            return Err(Error::Dimension(format!("{} class entries is not a multiple of {k}", classes.len())));
        }
        if let Some(pos) = classes.iter().enumerate().position(|(i, &c)| c as usize >= bases[i % k]) {
            return Err(Error::Domain(format!(
                "row {} factor {} has class {} outside base {}",
                pos / k,
                pos % k,
                classes[pos],
                bases[pos % k]
            )));
        }
        Ok(Self {
            bases: bases.to_vec(),
            strides: strides_for(bases),
            classes,
        })
    }

    pub fn bases(&self) -> &[usize] {
        &self.bases
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn num_factors(&self) -> usize {
        self.bases.len()
    }

    pub fn len(&self) -> usize {
        self.classes.len() / self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Size of the full grid over these bases.
    pub fn grid_size(&self) -> usize {
        self.bases.iter().product()
    }

    pub fn classes(&self, row: usize) -> &[u32] {
        let k = self.bases.len();
        &self.classes[row * k..(row + 1) * k]
    }

    pub fn class(&self, row: usize, factor: usize) -> u32 {
        self.classes[row * self.bases.len() + factor]
    }

    /// Grid position of a class tuple.
    pub fn index(&self, classes: &[u32]) -> Result<usize> {
        if classes.len() != self.bases.len() {
            return Err(Error::Dimension(format!(
                "expected {} classes, got {}",
                self.bases.len(),
                classes.len()
            )));
        }
        let mut idx = 0;
        for ((&c, &b), &s) in classes.iter().zip(&self.bases).zip(&self.strides) {
            if c as usize >= b {
                return Err(Error::Domain(format!("class {c} outside base {b}")));
            }
            idx += c as usize * s;
        }
        Ok(idx)
    }

    /// Inverse of [`FactorTable::index`].
    pub fn unindex(&self, index: usize) -> Result<Vec<u32>> {
        if index >= self.grid_size() {
            return Err(Error::Domain(format!("index {index} outside grid of {}", self.grid_size())));
        }
        Ok(self
            .strides
            .iter()
            .zip(&self.bases)
            .map(|(&s, &b)| ((index / s) % b) as u32)
            .collect())
    }

    /// `class / (base − 1)`, or 0 for a single-class factor.
    pub fn value(&self, row: usize, factor: usize) -> f64 {
        let b = self.bases[factor];
        if b < 2 {
            0.0
        } else {
            self.class(row, factor) as f64 / (b - 1) as f64
        }
    }

    /// Normalised values of the given rows, `rows.len() × K` row-major.
    pub fn values(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .flat_map(|&r| (0..self.num_factors()).map(move |k| self.value(r, k)))
            .collect()
    }
}
