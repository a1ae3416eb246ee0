use std::f64::consts::PI;

use super::{pack, Dataset, FactorTable, Source, PIXELS};
use crate::error::Result;

/// Side length of every image.
pub const CANVAS: usize = 64;

/// Sprite centres are spread over this pixel range on both axes.
const POSITION_RANGE: (f64, f64) = (16.0, 48.0);
/// Scale values are spread over this range.
const SCALE_RANGE: (f64, f64) = (0.5, 1.0);
/// Half-extent in pixels of a sprite at scale 1.
const HALF_SIZE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Ellipse,
    Heart,
}

impl Shape {
    pub fn from_class(class: u32) -> Self {
        match class % 3 {
            0 => Shape::Square,
            1 => Shape::Ellipse,
            _ => Shape::Heart,
        }
    }

    /// Point-in-shape test in sprite coordinates scaled to half-extent 1,
    /// `v` pointing down the image.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
            Shape::Ellipse => u * u + 4.0 * v * v <= 1.0,
            Shape::Heart => {
                // (x² + y² − 1)³ ≤ x²y³ spans roughly [−1.14, 1.14] × [−1, 1.25]
                let x = 1.15 * u;
                let y = -1.15 * v + 0.12;
                let r = x * x + y * y - 1.0;
                r * r * r <= x * x * y * y * y
            }
        }
    }
}

/// `i`-th of `n` evenly spaced values over `[lo, hi]`; the midpoint when `n = 1`.
fn linspace(lo: f64, hi: f64, n: usize, i: u32) -> f64 {
    if n < 2 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Cosine and sine with values within rounding of 0 or ±1 snapped, so
/// quarter turns map the pixel grid onto itself exactly.
fn snapped_cos_sin(angle: f64) -> (f64, f64) {
    let snap = |x: f64| {
        let r = x.round();
        if (x - r).abs() < 1e-12 {
            r
        } else {
            x
        }
    };
    (snap(angle.cos()), snap(angle.sin()))
}

/// Rasterises one sprite by testing pixel centres.
pub fn rasterize(shape: Shape, scale: f64, angle: f64, cx: f64, cy: f64) -> Vec<u8> {
    let (c, s) = snapped_cos_sin(angle);
    let half = HALF_SIZE * scale;
    let mut out = vec![0u8; PIXELS];
    for row in 0..CANVAS {
        let dy = row as f64 + 0.5 - cy;
        for col in 0..CANVAS {
            let dx = col as f64 + 0.5 - cx;
            let u = (c * dx + s * dy) / half;
            let v = (-s * dx + c * dy) / half;
            if shape.contains(u, v) {
                out[row * CANVAS + col] = 1;
            }
        }
    }
    out
}

/// Renders the full factorial grid over `bases` = (shape, size, rotation,
/// x, y) in canonical index order.
pub fn generate_procedural(bases: &[usize; 5]) -> Result<Dataset> {
    let factors = FactorTable::full_grid(bases)?;
    let mut bits = Vec::with_capacity(factors.len() * PIXELS / 64);
    for i in 0..factors.len() {
        let c = factors.classes(i);
        let shape = Shape::from_class(c[0]);
        let scale = linspace(SCALE_RANGE.0, SCALE_RANGE.1, bases[1], c[1]);
        let angle = 2.0 * PI * c[2] as f64 / bases[2] as f64;
        let cx = linspace(POSITION_RANGE.0, POSITION_RANGE.1, bases[3], c[3]);
        let cy = linspace(POSITION_RANGE.0, POSITION_RANGE.1, bases[4], c[4]);
        pack(&rasterize(shape, scale, angle, cx, cy), &mut bits)?;
    }
    Dataset::from_bits(bits, factors, Source::Procedural)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid(img: &[u8]) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (p, &v) in img.iter().enumerate() {
            if v == 1 {
                sx += (p % CANVAS) as f64;
                sy += (p / CANVAS) as f64;
                n += 1.0;
            }
        }
        (sx / n, sy / n)
    }

    #[test]
    fn single_image_grid_is_not_blank() {
        let ds = generate_procedural(&[1, 1, 1, 1, 1]).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.pixel_count(0) > 0);
    }

    #[test]
    fn x_class_step_moves_centroid_by_one_grid_step() {
        let bases = [3, 2, 8, 32, 2];
        let ds = generate_procedural(&bases).unwrap();
        let step = (POSITION_RANGE.1 - POSITION_RANGE.0) / 31.0;
        for shape in 0..3 {
            for rot in [0, 3] {
                for x in [0, 10, 30] {
                    let a = ds.factors.index(&[shape, 0, rot, x, 1]).unwrap();
                    let b = ds.factors.index(&[shape, 0, rot, x + 1, 1]).unwrap();
                    let (ca, cb) = (centroid(&ds.image(a)), centroid(&ds.image(b)));
                    assert!((cb.0 - ca.0 - step).abs() <= 0.5, "shape {shape} x {x}: {ca:?} -> {cb:?}");
                    assert!((cb.1 - ca.1).abs() <= 0.5);
                }
            }
        }
    }

    #[test]
    fn square_quarter_turn_is_identical() {
        let bases = [1, 6, 40, 4, 4];
        let ds = generate_procedural(&bases).unwrap();
        for size in 0..6 {
            for x in 0..4 {
                let a = ds.factors.index(&[0, size, 0, x, 2]).unwrap();
                let b = ds.factors.index(&[0, size, 10, x, 2]).unwrap();
                assert_eq!(ds.image(a), ds.image(b));
            }
        }
    }

    #[test]
    fn rotation_changes_asymmetric_shapes() {
        let e0 = rasterize(Shape::Ellipse, 1.0, 0.0, 32.0, 32.0);
        let e1 = rasterize(Shape::Ellipse, 1.0, PI / 2.0, 32.0, 32.0);
        assert_ne!(e0, e1);
        let h0 = rasterize(Shape::Heart, 1.0, 0.0, 32.0, 32.0);
        let h1 = rasterize(Shape::Heart, 1.0, PI, 32.0, 32.0);
        assert_ne!(h0, h1);
    }

    #[test]
    fn larger_scale_covers_more_pixels_and_stays_on_canvas() {
        for shape in [Shape::Square, Shape::Ellipse, Shape::Heart] {
            let small: u32 = rasterize(shape, 0.5, 0.3, 32.0, 32.0).iter().map(|&p| p as u32).sum();
            let big: u32 = rasterize(shape, 1.0, 0.3, 32.0, 32.0).iter().map(|&p| p as u32).sum();
            assert!(big > 3 * small, "{shape:?}: {small} vs {big}");
            // extreme corner placement must not touch the border
            let img = rasterize(shape, 1.0, PI / 4.0, 16.0, 16.0);
            assert!(img[..CANVAS].iter().all(|&p| p == 0));
            assert!((0..CANVAS).all(|r| img[r * CANVAS] == 0));
        }
    }

    #[test]
    fn generation_is_deterministic_and_binary() {
        let a = generate_procedural(&[3, 2, 3, 2, 2]).unwrap();
        let b = generate_procedural(&[3, 2, 3, 2, 2]).unwrap();
        assert_eq!(a, b);
        assert!((0..a.len()).all(|i| a.image(i).iter().all(|&p| p <= 1)));
    }
}
