//! Periodic band-limited value noise for scene backgrounds.
//!
//! The field is a weighted sum of a few bilinearly interpolated random grids
//! with doubling frequencies. It is continuous in scene coordinates, so
//! affine warps of the background are exact; there is no raster to resample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Octave {
    size: usize,
    weight: f64,
    values: Vec<f64>,
}

pub struct NoiseField {
    octaves: Vec<Octave>,
    norm: f64,
}

impl NoiseField {
    pub fn new(seed: u64, base_size: usize, octaves: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut list = Vec::with_capacity(octaves);
        let mut norm = 0.0;
        for o in 0..octaves {
            let size = base_size << o;
            let weight = 0.6f64.powi(o as i32);
            norm += weight;
            let values = (0..size * size)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            list.push(Octave {
                size,
                weight,
                values,
            });
        }
        NoiseField {
            octaves: list,
            norm,
        }
    }

    /// Sample at periodic scene coordinates (period 1 in both axes).
    /// Returns a luminance in roughly [0.1, 0.9].
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let mut acc = 0.0;
        for oct in &self.octaves {
            let g = oct.size as f64;
            let x = (u.rem_euclid(1.0)) * g;
            let y = (v.rem_euclid(1.0)) * g;
            let x0 = x.floor() as usize % oct.size;
            let y0 = y.floor() as usize % oct.size;
            let x1 = (x0 + 1) % oct.size;
            let y1 = (y0 + 1) % oct.size;
            let fx = x - x.floor();
            let fy = y - y.floor();
            let v00 = oct.values[y0 * oct.size + x0];
            let v01 = oct.values[y0 * oct.size + x1];
            let v10 = oct.values[y1 * oct.size + x0];
            let v11 = oct.values[y1 * oct.size + x1];
            let top = v00 + fx * (v01 - v00);
            let bottom = v10 + fx * (v11 - v10);
            acc += oct.weight * (top + fy * (bottom - top));
        }
        (0.5 + 0.4 * acc / self.norm).clamp(0.1, 0.9)
    }
}
