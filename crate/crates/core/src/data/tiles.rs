//! Square crops for training (random) and evaluation (grid).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StereoSample;
use crate::error::{precondition, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum CropMode {
    /// Non-overlapping tiles covering the image in row-major order.
    Grid,
    /// `count` tiles with uniformly drawn pixel origins.
    Random { count: usize, seed: u64 },
}

/// A crop with its origin in the source sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub y0: usize,
    pub x0: usize,
    pub sample: StereoSample,
}

pub fn tile_origins(height: usize, width: usize, tile: usize, mode: CropMode) -> Result<Vec<(usize, usize)>> {
    precondition(tile > 0 && tile <= height && tile <= width, || {
        format!("tile {tile} does not fit a {height}x{width} image")
    })?;
    Ok(match mode {
        CropMode::Grid => {
            precondition(height % tile == 0 && width % tile == 0, || {
                format!("grid tiling needs {height}x{width} to be a multiple of {tile}")
            })?;
            (0..height / tile).flat_map(|ty| (0..width / tile).map(move |tx| (ty * tile, tx * tile))).collect()
        }
        CropMode::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| (rng.random_range(0..=height - tile), rng.random_range(0..=width - tile)))
                .collect()
        }
    })
}

/// Cuts `tile x tile` crops; every raster of the sample uses the same window.
pub fn crop_tiles(sample: &StereoSample, tile: usize, mode: CropMode) -> Result<Vec<Tile>> {
    sample.check()?;
    tile_origins(sample.height, sample.width, tile, mode)?
        .into_iter()
        .map(|(y0, x0)| Ok(Tile { y0, x0, sample: sample.crop(y0, x0, tile, tile)? }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_origins() {
        let o = tile_origins(1024, 1024, 512, CropMode::Grid).unwrap();
        assert_eq!(o, vec![(0, 0), (0, 512), (512, 0), (512, 512)]);
        assert!(tile_origins(1000, 1024, 512, CropMode::Grid).is_err());
        assert!(tile_origins(256, 256, 512, CropMode::Grid).is_err());
    }

    #[test]
    fn random_origins_are_reproducible_and_in_bounds() {
        let mode = CropMode::Random { count: 50, seed: 11 };
        let a = tile_origins(300, 200, 64, mode).unwrap();
        assert_eq!(a, tile_origins(300, 200, 64, mode).unwrap());
        assert!(a.iter().all(|&(y, x)| y + 64 <= 300 && x + 64 <= 200));
    }
}
