use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::FrameEncoder;
use crate::error::{D3Error, Result};

pub const GRID_CELLS: usize = 16;
pub const GRID_DIM: usize = GRID_CELLS * GRID_CELLS;

/// Mean Rec.601 luma over a 16x16 grid of cells, scaled to `[0, 1]`,
/// row-major. On a 224x224 frame each cell is 14x14 pixels.
pub fn luminance_grid(frame: &RgbImage) -> Result<Vec<f64>> {
    let (w, h) = frame.dimensions();
    let (w, h) = (w as usize, h as usize);
    if w < GRID_CELLS || h < GRID_CELLS {
        return Err(D3Error::ShapeError(format!(
            "luminance grid needs at least {GRID_CELLS}x{GRID_CELLS} pixels, got {w}x{h}"
        )));
    }
    let col_of: Vec<usize> = (0..w).map(|x| x * GRID_CELLS / w).collect();
    // Integer luma in thousandths keeps pure white at exactly 1.0.
    let mut sums = [0u64; GRID_DIM];
    let mut counts = [0u64; GRID_DIM];
    for (y, row) in frame.as_raw().chunks_exact(w * 3).enumerate() {
        let base = (y * GRID_CELLS / h) * GRID_CELLS;
        for (x, px) in row.chunks_exact(3).enumerate() {
            let luma = 299 * u64::from(px[0]) + 587 * u64::from(px[1]) + 114 * u64::from(px[2]);
            sums[base + col_of[x]] += luma;
            counts[base + col_of[x]] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| s as f64 / (n as f64 * 1000.0 * 255.0))
        .collect())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LuminanceGrid;

impl FrameEncoder for LuminanceGrid {
    fn output_dim(&self) -> usize {
        GRID_DIM
    }

    fn encode_frame(&self, frame: &RgbImage) -> Result<Vec<f64>> {
        luminance_grid(frame)
    }
}

/// Luminance grid followed by a fixed Gaussian random matrix
/// (`N(0, 1/256)` entries) drawn from a seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    output_dim: usize,
    matrix: Vec<f64>,
}

impl RandomProjection {
    pub fn new(output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (GRID_DIM as f64).sqrt();
        let matrix = (0..output_dim * GRID_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self { output_dim, matrix }
    }
}

impl FrameEncoder for RandomProjection {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn encode_frame(&self, frame: &RgbImage) -> Result<Vec<f64>> {
        let grid = luminance_grid(frame)?;
        Ok(self
            .matrix
            .chunks_exact(GRID_DIM)
            .map(|row| row.iter().zip(&grid).map(|(a, b)| a * b).sum())
            .collect())
    }
}
