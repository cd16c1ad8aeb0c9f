//! Seeded 3D simplex noise for the stochastic wind field.
//!
//! Classic skew/unskew simplex lattice with the 12-gradient set. Output
//! is continuous, deterministic for a seed, and bounded to roughly
//! [-1, 1].

use rand::seq::SliceRandom;

use crate::rng;

const F3: f64 = 1.0 / 3.0;
const G3: f64 = 1.0 / 6.0;

const GRADS: [[f64; 3]; 12] = [
    [1.0, 1.0, 0.0],
    [-1.0, 1.0, 0.0],
    [1.0, -1.0, 0.0],
    [-1.0, -1.0, 0.0],
    [1.0, 0.0, 1.0],
    [-1.0, 0.0, 1.0],
    [1.0, 0.0, -1.0],
    [-1.0, 0.0, -1.0],
    [0.0, 1.0, 1.0],
    [0.0, -1.0, 1.0],
    [0.0, 1.0, -1.0],
    [0.0, -1.0, -1.0],
];

#[derive(Debug, Clone)]
pub struct SimplexNoise {
    perm: [u8; 512],
}

impl SimplexNoise {
    pub fn new(seed: u64) -> Self {
        let mut table: Vec<u8> = (0..=255).collect();
        table.shuffle(&mut rng::stream(seed, "simplex-perm", 0));
        let mut perm = [0_u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Self { perm }
    }

    #[inline]
    fn grad_index(&self, i: i64, j: i64, k: i64) -> usize {
        let p = &self.perm;
        let ii = (i & 255) as usize;
        let jj = (j & 255) as usize;
        let kk = (k & 255) as usize;
        (p[ii + p[jj + p[kk] as usize] as usize] % 12) as usize
    }

    /// Noise value at (x, y, z), approximately in [-1, 1].
    pub fn sample(&self, x: f64, y: f64, z: f64) -> f64 {
        // Skew input space to determine the simplex cell.
        let s = (x + y + z) * F3;
        let i = (x + s).floor();
        let j = (y + s).floor();
        let k = (z + s).floor();
        let t = (i + j + k) * G3;
        let x0 = x - (i - t);
        let y0 = y - (j - t);
        let z0 = z - (k - t);

        // Rank the coordinates to pick the simplex corner order.
        let (i1, j1, k1, i2, j2, k2) = if x0 >= y0 {
            if y0 >= z0 {
                (1, 0, 0, 1, 1, 0)
            } else if x0 >= z0 {
                (1, 0, 0, 1, 0, 1)
            } else {
                (0, 0, 1, 1, 0, 1)
            }
        } else if y0 < z0 {
            (0, 0, 1, 0, 1, 1)
        } else if x0 < z0 {
            (0, 1, 0, 0, 1, 1)
        } else {
            (0, 1, 0, 1, 1, 0)
        };

        let corners = [
            (x0, y0, z0, 0, 0, 0),
            (x0 - i1 as f64 + G3, y0 - j1 as f64 + G3, z0 - k1 as f64 + G3, i1, j1, k1),
            (
                x0 - i2 as f64 + 2.0 * G3,
                y0 - j2 as f64 + 2.0 * G3,
                z0 - k2 as f64 + 2.0 * G3,
                i2,
                j2,
                k2,
            ),
            (
                x0 - 1.0 + 3.0 * G3,
                y0 - 1.0 + 3.0 * G3,
                z0 - 1.0 + 3.0 * G3,
                1,
                1,
                1,
            ),
        ];

        let (bi, bj, bk) = (i as i64, j as i64, k as i64);
        let mut total = 0.0;
        for &(cx, cy, cz, di, dj, dk) in &corners {
            let falloff = 0.6 - cx * cx - cy * cy - cz * cz;
            if falloff > 0.0 {
                let g = GRADS[self.grad_index(bi + di, bj + dj, bk + dk)];
                let dot = g[0] * cx + g[1] * cy + g[2] * cz;
                let f2 = falloff * falloff;
                total += f2 * f2 * dot;
            }
        }
        32.0 * total
    }

    /// Two-octave fractal sample normalized back to roughly [-1, 1].
    pub fn sample_octaves2(&self, x: f64, y: f64, z: f64) -> f64 {
        (self.sample(x, y, z) + 0.5 * self.sample(2.0 * x, 2.0 * y, 2.0 * z)) / 1.5
    }
}
