//! 2D Lagrangian puff plume simulation.
//!
//! Plumes are simulated at a fixed 1 mol/s emission rate on a grid of
//! 60 m pixels. Puffs are released from the origin during the emission
//! window, advect through a stochastic simplex-noise wind field, grow
//! geometrically, and deposit onto the grid as truncated Gaussians at
//! the end of the run (the column snapshot an imager would see).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::grid::{Grid, MaskGrid};
use crate::morph::open3x3;
use crate::noise::SimplexNoise;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("timestep must be positive, got {0}")]
    BadTimestep(f64),
    #[error("origin ({row}, {col}) outside the {size}x{size} grid")]
    OriginOutsideGrid { row: f64, col: f64, size: usize },
    #[error("source grid {got} is smaller than the {tile} px tile")]
    SourceTooSmall { got: usize, tile: usize },
}

/// Fixed emission rate of every simulated plume (scaled later during
/// injection).
pub const UNIT_EMISSION_MOL_S: f64 = 1.0;

/// Mask threshold on the unit-rate plume, in ppm-m.
pub const MASK_THRESHOLD_PPM_M: f64 = 0.00024;

/// ppm-m per mmol/m^2 of methane column.
pub const MMOL_TO_PPM_M: f64 = 24.0;

/// Converts column density (mmol/m^2) to path-integrated mixing ratio
/// (ppm-m).
pub fn mmol_to_ppm_m(c: f64) -> f64 {
    c * MMOL_TO_PPM_M
}

/// Plume duration buckets in seconds; a bucket is chosen uniformly, then
/// the duration uniformly within it.
pub const PLUME_DURATION_BUCKETS: [(f64, f64); 4] =
    [(250.0, 550.0), (550.0, 1200.0), (1200.0, 2400.0), (2400.0, 3000.0)];

/// Simulator hyperparameters. Ranged fields are sampled by
/// [`sample_config`]; the rest are fixed defaults that remain
/// configurable.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_plumes: usize,
    pub sim_duration_s: f64,
    pub plume_duration_s: f64,
    pub grid_size_px: usize,
    pub pixel_size_m: f64,
    pub center_relative_diff_scale: f64,
    pub puff_initial_radius_m: f64,
    pub puff_spread_rate: f64,
    pub mean_wind_speed_mps: f64,
    pub wind_direction_rad: f64,
    pub velocity_clip_mps: f64,
    pub diffusivity: f64,
    pub puff_release_mean: f64,
    pub puff_release_std: f64,
    pub dt_s: f64,
    pub intermittent: bool,
    pub mean_on_time_s: f64,
    pub mean_off_time_s: f64,
    pub wind_spatial_wavelength_m: f64,
    pub wind_temporal_wavelength_s: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_plumes: 1,
            sim_duration_s: 3000.0,
            plume_duration_s: 1000.0,
            grid_size_px: 384,
            pixel_size_m: 60.0,
            center_relative_diff_scale: 15.0,
            puff_initial_radius_m: 10.0,
            puff_spread_rate: 1.0025,
            mean_wind_speed_mps: 5.0,
            wind_direction_rad: 0.0,
            velocity_clip_mps: 30.0,
            diffusivity: 40.0,
            puff_release_mean: 20.0,
            puff_release_std: 4.0,
            dt_s: 5.0,
            intermittent: true,
            mean_on_time_s: 300.0,
            mean_off_time_s: 100.0,
            wind_spatial_wavelength_m: 8000.0,
            wind_temporal_wavelength_s: 600.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Emission start time; every plume emits until the end of the
    /// simulation.
    pub fn emit_start_s(&self) -> f64 {
        self.sim_duration_s - self.plume_duration_s
    }
}

/// Draws a configuration from the simulator hyperparameter ranges.
pub fn sample_config(rng: &mut impl Rng) -> SimConfig {
    let bucket = PLUME_DURATION_BUCKETS[rng.gen_range(0..PLUME_DURATION_BUCKETS.len())];
    SimConfig {
        num_plumes: rng.gen_range(1..=10),
        plume_duration_s: rng.gen_range(bucket.0..bucket.1),
        center_relative_diff_scale: rng.gen_range(10.0..20.0),
        puff_initial_radius_m: rng.gen_range(3.0..20.0),
        puff_spread_rate: rng.gen_range(1.002..1.003),
        mean_wind_speed_mps: rng.gen_range(0.0..10.0),
        wind_direction_rad: rng.gen_range(0.0..std::f64::consts::TAU),
        diffusivity: rng.gen_range(30.0..50.0),
        seed: rng.gen(),
        ..SimConfig::default()
    }
}

/// Per-tile plume origins: a two-component mixture of a shared cluster
/// (within 1 km of a cluster center) and uniform placement, so some
/// tiles carry overlapping plume tails.
pub fn sample_origins(config: &SimConfig, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let n = config.grid_size_px as f64;
    let cluster_px = 1000.0 / config.pixel_size_m;
    let center = (rng.gen_range(0.0..n), rng.gen_range(0.0..n));
    (0..config.num_plumes)
        .map(|_| {
            if rng.gen_bool(0.5) {
                (
                    (center.0 + rng.gen_range(-cluster_px..cluster_px)).clamp(0.0, n - 1.0),
                    (center.1 + rng.gen_range(-cluster_px..cluster_px)).clamp(0.0, n - 1.0),
                )
            } else {
                (rng.gen_range(0.0..n), rng.gen_range(0.0..n))
            }
        })
        .collect()
}

/// One simulated plume at unit emission rate: column concentration
/// (mmol/m^2), derived mask, origin and emission window.
#[derive(Debug, Clone, PartialEq)]
pub struct PlumeInstance {
    pub conc: Grid<f64>,
    pub mask: MaskGrid,
    /// (row, col) pixel coordinates of the source.
    pub origin_px: (f64, f64),
    pub emit_window_s: (f64, f64),
}

/// Mass bookkeeping from one simulation run.
#[derive(Debug, Clone, Default)]
pub struct SimStats {
    pub released_mol: f64,
    pub deposited_mol: f64,
    pub exited_mol: f64,
    pub puff_count: usize,
    pub max_step_displacement_m: f64,
}

struct Puff {
    x_m: f64,
    y_m: f64,
    radius_m: f64,
    mass_mol: f64,
}

struct WindField {
    noise_u: SimplexNoise,
    noise_v: SimplexNoise,
    mean_u: f64,
    mean_v: f64,
    amplitude: f64,
    spatial_scale: f64,
    temporal_scale: f64,
    clip: f64,
}

impl WindField {
    fn new(config: &SimConfig) -> Self {
        // Velocity amplitude from the diffusivity via the random-walk
        // equivalence sigma_v = sqrt(2 K / dt).
        let amplitude = (2.0 * config.diffusivity / config.dt_s).sqrt();
        Self {
            noise_u: SimplexNoise::new(config.seed ^ 0x75),
            noise_v: SimplexNoise::new(config.seed ^ 0x76),
            mean_u: config.mean_wind_speed_mps * config.wind_direction_rad.cos(),
            mean_v: config.mean_wind_speed_mps * config.wind_direction_rad.sin(),
            amplitude,
            spatial_scale: config.wind_spatial_wavelength_m,
            temporal_scale: config.wind_temporal_wavelength_s,
            clip: config.velocity_clip_mps,
        }
    }

    fn sample(&self, x_m: f64, y_m: f64, t_s: f64) -> (f64, f64) {
        let sx = x_m / self.spatial_scale;
        let sy = y_m / self.spatial_scale;
        let st = t_s / self.temporal_scale;
        let u = self.mean_u + self.amplitude * self.noise_u.sample_octaves2(sx, sy, st);
        let v = self.mean_v + self.amplitude * self.noise_v.sample_octaves2(sx, sy, st);
        clip_vector(u, v, self.clip)
    }
}

fn clip_vector(u: f64, v: f64, limit: f64) -> (f64, f64) {
    let mag = (u * u + v * v).sqrt();
    if mag > limit {
        let s = limit / mag;
        (u * s, v * s)
    } else {
        (u, v)
    }
}

/// Runs one plume at unit emission rate from `origin_px` (row, col).
pub fn simulate_plume(
    config: &SimConfig,
    origin_px: (f64, f64),
    rng: &mut impl Rng,
) -> Result<(PlumeInstance, SimStats), SimError> {
    if config.dt_s <= 0.0 {
        return Err(SimError::BadTimestep(config.dt_s));
    }
    let size = config.grid_size_px;
    let p = config.pixel_size_m;
    if origin_px.0 < 0.0
        || origin_px.1 < 0.0
        || origin_px.0 >= size as f64
        || origin_px.1 >= size as f64
    {
        return Err(SimError::OriginOutsideGrid {
            row: origin_px.0,
            col: origin_px.1,
            size,
        });
    }

    let wind = WindField::new(config);
    let release = Normal::new(config.puff_release_mean, config.puff_release_std)
        .expect("release std is positive");
    let jitter = Normal::new(0.0, 1.0).unwrap();
    let origin_x = (origin_px.1 + 0.5) * p;
    let origin_y = (origin_px.0 + 0.5) * p;
    let emit_start = config.emit_start_s();
    let n_steps = (config.sim_duration_s / config.dt_s).round() as usize;
    let growth = config.puff_spread_rate.powf(config.dt_s);

    let mut puffs: Vec<Puff> = Vec::new();
    let mut stats = SimStats::default();

    // Two-state telegraph intermittency with exponential holding times.
    let mut emitting = true;
    let mut next_flip = if config.intermittent {
        exponential(config.mean_on_time_s, rng)
    } else {
        f64::INFINITY
    };

    for step in 0..n_steps {
        let t = step as f64 * config.dt_s;

        // Advect and grow existing puffs.
        for puff in &mut puffs {
            let (wu, wv) = wind.sample(puff.x_m, puff.y_m, t);
            let (vu, vv) = clip_vector(
                wu + jitter.sample(rng) * config.center_relative_diff_scale,
                wv + jitter.sample(rng) * config.center_relative_diff_scale,
                config.velocity_clip_mps,
            );
            puff.x_m += vu * config.dt_s;
            puff.y_m += vv * config.dt_s;
            let d = (vu * vu + vv * vv).sqrt() * config.dt_s;
            if d > stats.max_step_displacement_m {
                stats.max_step_displacement_m = d;
            }
            puff.radius_m *= growth;
        }

        while t >= next_flip {
            emitting = !emitting;
            let mean = if emitting {
                config.mean_on_time_s
            } else {
                config.mean_off_time_s
            };
            next_flip += exponential(mean, rng);
        }

        if t >= emit_start && emitting {
            let n = release.sample(rng).round().max(0.0) as usize;
            if n > 0 {
                let mass = UNIT_EMISSION_MOL_S * config.dt_s / n as f64;
                for _ in 0..n {
                    puffs.push(Puff {
                        x_m: origin_x,
                        y_m: origin_y,
                        radius_m: config.puff_initial_radius_m,
                        mass_mol: mass,
                    });
                }
                stats.released_mol += UNIT_EMISSION_MOL_S * config.dt_s;
            }
        }
    }

    stats.puff_count = puffs.len();
    let mut conc = Grid::zeros(size, size);
    for puff in &puffs {
        stats.deposited_mol += deposit_puff(&mut conc, puff, size, p);
    }
    stats.exited_mol = stats.released_mol - stats.deposited_mol;

    let mask = extract_mask(&conc.map(mmol_to_ppm_m));
    Ok((
        PlumeInstance {
            conc,
            mask,
            origin_px,
            emit_window_s: (emit_start, config.sim_duration_s),
        },
        stats,
    ))
}

fn exponential(mean: f64, rng: &mut impl Rng) -> f64 {
    -mean * (1.0 - rng.gen::<f64>()).ln()
}

/// Deposits one puff as a separable Gaussian truncated at +-3 sigma.
/// The normalizer spans the full truncation window whether or not it is
/// on the grid, so mass leaving the domain is genuinely lost. Returns
/// the mass (mol) landing on the grid.
fn deposit_puff(conc: &mut Grid<f64>, puff: &Puff, size: usize, pixel_m: f64) -> f64 {
    let sigma = puff.radius_m;
    let half = 3.0 * sigma;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);

    // Index windows (possibly off-grid) covering the truncated support;
    // always include the nearest pixel so narrow puffs keep their mass.
    let window = |center_m: f64| -> (i64, i64) {
        let lo = ((center_m - half) / pixel_m - 0.5).ceil() as i64;
        let hi = ((center_m + half) / pixel_m - 0.5).floor() as i64;
        let nearest = (center_m / pixel_m - 0.5).round() as i64;
        (lo.min(nearest), hi.max(nearest))
    };
    let (cx0, cx1) = window(puff.x_m);
    let (cy0, cy1) = window(puff.y_m);

    let weights = |i0: i64, i1: i64, center_m: f64| -> (Vec<f64>, f64) {
        let mut w = Vec::with_capacity((i1 - i0 + 1) as usize);
        let mut total = 0.0;
        for i in i0..=i1 {
            let d = (i as f64 + 0.5) * pixel_m - center_m;
            let v = (-d * d * inv2s2).exp();
            w.push(v);
            total += v;
        }
        (w, total)
    };
    let (wx, sx) = weights(cx0, cx1, puff.x_m);
    let (wy, sy) = weights(cy0, cy1, puff.y_m);
    let norm = sx * sy;
    if norm <= 0.0 {
        return 0.0;
    }

    // mmol per m^2 per unit weight.
    let scale = puff.mass_mol * 1000.0 / (norm * pixel_m * pixel_m);
    let mut on_grid_weight = 0.0;
    for (iy, wy_v) in (cy0..=cy1).zip(&wy) {
        if iy < 0 || iy >= size as i64 {
            continue;
        }
        for (ix, wx_v) in (cx0..=cx1).zip(&wx) {
            if ix < 0 || ix >= size as i64 {
                continue;
            }
            let w = wx_v * wy_v;
            on_grid_weight += w;
            let cur = conc.get(iy as usize, ix as usize);
            conc.set(iy as usize, ix as usize, cur + scale * w);
        }
    }
    puff.mass_mol * on_grid_weight / norm
}

/// Thresholds a ppm-m field at the mask threshold and smooths the result
/// with one erosion followed by one dilation (3x3 element).
pub fn extract_mask(conc_ppm_m: &Grid<f64>) -> MaskGrid {
    let raw = conc_ppm_m.map(|v| v >= MASK_THRESHOLD_PPM_M);
    open3x3(&raw)
}

/// How a tile is cropped out of the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Random,
    Center,
}

/// A plume cropped to tile coordinates. Origins that fall outside the
/// crop are flagged absent while tail pixels are retained.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedPlume {
    pub conc: Grid<f64>,
    pub mask: MaskGrid,
    pub origin_px: Option<(f64, f64)>,
    pub emit_window_s: (f64, f64),
}

/// A set of plumes cropped consistently to one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePlumes {
    pub size: usize,
    pub offset: (usize, usize),
    pub plumes: Vec<CroppedPlume>,
}

/// Crops all instances with one shared offset: random offsets are drawn
/// uniformly over the valid range, the deterministic center crop sits at
/// the midpoint.
pub fn crop_tile(
    instances: &[PlumeInstance],
    tile_size: usize,
    mode: CropMode,
    rng: &mut impl Rng,
) -> Result<TilePlumes, SimError> {
    let source = instances
        .first()
        .map(|p| p.conc.rows())
        .unwrap_or(tile_size);
    if source < tile_size {
        return Err(SimError::SourceTooSmall {
            got: source,
            tile: tile_size,
        });
    }
    let max_off = source - tile_size;
    let offset = match mode {
        CropMode::Random => (rng.gen_range(0..=max_off), rng.gen_range(0..=max_off)),
        CropMode::Center => (max_off / 2, max_off / 2),
    };
    let plumes = instances
        .iter()
        .map(|inst| {
            let origin = (
                inst.origin_px.0 - offset.0 as f64,
                inst.origin_px.1 - offset.1 as f64,
            );
            let inside = origin.0 >= 0.0
                && origin.1 >= 0.0
                && origin.0 < tile_size as f64
                && origin.1 < tile_size as f64;
            CroppedPlume {
                conc: inst.conc.crop(offset.0, offset.1, tile_size),
                mask: inst.mask.crop(offset.0, offset.1, tile_size),
                origin_px: inside.then_some(origin),
                emit_window_s: inst.emit_window_s,
            }
        })
        .collect();
    Ok(TilePlumes {
        size: tile_size,
        offset,
        plumes,
    })
}
