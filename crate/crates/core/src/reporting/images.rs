use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::CANVAS;
use crate::error::{Error, Result};
use crate::models::VaeModel;
use crate::tensor::{Scalar, Tensor};

/// An 8-bit greyscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    /// Copies a 64×64 probability image in at tile position `(row, col)`.
    fn blit<T: Scalar>(&mut self, tile: &[T], row: usize, col: usize) {
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                let p = tile[y * CANVAS + x].to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
                self.pixels[(row * CANVAS + y) * self.width + col * CANVAS + x] = (p * 255.0).round() as u8;
            }
        }
    }

    /// Binary PGM (`P5`).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraversalSpec {
    /// Latent dimensions to traverse, one grid row each.
    pub dims: Vec<usize>,
    /// Values run over `[−range, range]`.
    pub range: f64,
    /// With a single step the encoded mean itself is decoded.
    pub steps: usize,
}

impl Default for TraversalSpec {
    fn default() -> Self {
        Self {
            dims: (0..8).collect(),
            range: 2.0,
            steps: 9,
        }
    }
}

impl TraversalSpec {
    fn value(&self, step: usize, mean: f64) -> f64 {
        if self.steps == 1 {
            mean
        } else {
            -self.range + 2.0 * self.range * step as f64 / (self.steps - 1) as f64
        }
    }
}

/// Encodes `image` (1×4096), then for each listed dimension replaces its
/// mean with each grid value and decodes with ε = 0 in eval mode. Rows are
/// dimensions, columns are steps.
pub fn traversal_grid<T: Scalar>(model: &mut VaeModel<T>, image: &Tensor<T>, spec: &TraversalSpec) -> Result<GrayImage> {
    let m = model.latent_dim();
    if let Some(&d) = spec.dims.iter().find(|&&d| d >= m) {
        return Err(Error::Contract(format!("traversal dimension {d} outside latent width {m}")));
    }
    if spec.steps == 0 || spec.dims.is_empty() || !(spec.range.is_finite() && spec.range >= 0.0) {
        return Err(Error::Contract("traversal needs dims, a finite range and at least one step".into()));
    }
    let mu = model.embed(image)?;
    if mu.shape()[0] != 1 {
        return Err(Error::Dimension("traversal takes a single base image".into()));
    }
    let mut z = Vec::with_capacity(spec.dims.len() * spec.steps * m);
    for &d in &spec.dims {
        for s in 0..spec.steps {
            let mut row = mu.data().to_vec();
            row[d] = T::lit(spec.value(s, mu.data()[d].to_f64().unwrap_or(0.0)));
            z.extend(row);
        }
    }
    let z = Tensor::new(vec![spec.dims.len() * spec.steps, m], z)?;
    let decoded = model.decode_latents(&z)?;
    let mut img = GrayImage::new(CANVAS * spec.steps, CANVAS * spec.dims.len());
    for r in 0..spec.dims.len() {
        for c in 0..spec.steps {
            img.blit(decoded.row(r * spec.steps + c), r, c);
        }
    }
    Ok(img)
}

pub fn render_traversals<T: Scalar>(
    model: &mut VaeModel<T>,
    image: &Tensor<T>,
    spec: &TraversalSpec,
    path: &Path,
) -> Result<()> {
    traversal_grid(model, image, spec)?.save_pgm(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelStats {
    pub images: usize,
    /// Mean absolute per-pixel error between targets and reconstructions.
    pub mean_abs_error: f64,
}

/// Target/reconstruction pairs side by side, `cols` pairs per row.
pub fn recon_panel<T: Scalar>(model: &mut VaeModel<T>, targets: &Tensor<T>, cols: usize) -> Result<(GrayImage, PanelStats)> {
    let (b, _) = targets.dims2()?;
    if cols == 0 || b == 0 {
        return Err(Error::Contract("panel needs at least one image and one column".into()));
    }
    let recon = model.reconstruct(targets)?;
    let rows = b.div_ceil(cols);
    let mut img = GrayImage::new(2 * CANVAS * cols, CANVAS * rows);
    for i in 0..b {
        let (r, c) = (i / cols, i % cols);
        img.blit(targets.row(i), r, 2 * c);
        img.blit(recon.row(i), r, 2 * c + 1);
    }
    let total: f64 = targets
        .data()
        .iter()
        .zip(recon.data())
        .map(|(t, p)| (t.to_f64().unwrap() - p.to_f64().unwrap()).abs())
        .sum();
    let stats = PanelStats {
        images: b,
        mean_abs_error: total / targets.numel() as f64,
    };
    Ok((img, stats))
}

/// Writes the panel as PGM and its statistics as JSON next to it.
pub fn render_recon_panel<T: Scalar>(
    model: &mut VaeModel<T>,
    targets: &Tensor<T>,
    cols: usize,
    path: &Path,
) -> Result<PanelStats> {
    let (img, stats) = recon_panel(model, targets, cols)?;
    img.save_pgm(path)?;
    let sidecar = path.with_extension("json");
    let json = serde_json::to_string_pretty(&stats).expect("serialisable stats");
    std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_procedural;
    use crate::models::{ModelConfig, Variant};

    fn model() -> VaeModel<f32> {
        let config = ModelConfig {
            encoder_hidden: vec![32, 16],
            decoder_hidden: vec![16, 32],
            ..ModelConfig::dsprites(Variant::BETA_DEFAULT)
        };
        VaeModel::new(config, 3).unwrap()
    }

    #[test]
    fn traversal_tiles_and_single_step_reconstructs() {
        let ds = generate_procedural(&[1, 1, 1, 2, 2]).unwrap();
        let mut m = model();
        let image = ds.batch::<f32>(&[3]);
        let spec = TraversalSpec {
            dims: vec![0, 5, 7],
            range: 2.0,
            steps: 4,
        };
        let grid = traversal_grid(&mut m, &image, &spec).unwrap();
        assert_eq!((grid.width, grid.height), (64 * 4, 64 * 3));

        let single = TraversalSpec {
            dims: vec![1, 2],
            range: 2.0,
            steps: 1,
        };
        let grid = traversal_grid(&mut m, &image, &single).unwrap();
        let mut plain = GrayImage::new(64, 64);
        plain.blit(m.reconstruct(&image).unwrap().row(0), 0, 0);
        for r in 0..2 {
            let tile: Vec<u8> = (0..64).flat_map(|y| grid.pixels[(r * 64 + y) * 64..(r * 64 + y + 1) * 64].to_vec()).collect();
            assert_eq!(tile, plain.pixels);
        }

        let bad = TraversalSpec { dims: vec![8], ..single };
        assert!(matches!(traversal_grid(&mut m, &image, &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn traversal_columns_follow_the_grid_values() {
        let spec = TraversalSpec {
            dims: vec![0],
            range: 2.0,
            steps: 5,
        };
        let values: Vec<f64> = (0..5).map(|s| spec.value(s, 0.3)).collect();
        assert_eq!(values, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn panel_layout_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_procedural(&[3, 1, 1, 1, 2]).unwrap();
        let mut m = model();
        let targets = ds.batch::<f32>(&[0, 1, 2, 3, 4]);
        let path = dir.path().join("panel.pgm");
        let stats = render_recon_panel(&mut m, &targets, 3, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n384 128\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 384 * 128);
        // untrained decoder outputs sit near one half
        assert!(stats.mean_abs_error > 0.2 && stats.mean_abs_error < 0.8);
        let side: PanelStats = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side, stats);

        // targets land in the left tile of each pair
        let (img, _) = recon_panel(&mut m, &targets, 3).unwrap();
        let first: Vec<u8> = (0..64).flat_map(|y| img.pixels[y * 384..y * 384 + 64].to_vec()).collect();
        let expected: Vec<u8> = ds.image(0).iter().map(|&p| p * 255).collect();
        assert_eq!(first, expected);
    }

    #[test]
    fn rendering_is_byte_identical_on_repeat() {
        let ds = generate_procedural(&[1, 1, 2, 1, 1]).unwrap();
        let image = ds.batch::<f32>(&[1]);
        let spec = TraversalSpec::default();
        let a = traversal_grid(&mut model(), &image, &spec).unwrap().to_pgm();
        let b = traversal_grid(&mut model(), &image, &spec).unwrap().to_pgm();
        assert_eq!(a, b);
    }
}
