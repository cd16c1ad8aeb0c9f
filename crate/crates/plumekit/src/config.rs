//! Run configuration: a flat key = value text format with typed
//! accessors and validation. CLI flags and environment variables
//! override file values.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("split fractions must sum to 1, got {0}")]
    BadFractions(f64),
    #[error("threshold {key} = {value} outside {range}")]
    BadThreshold {
        key: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pipeline-wide settings shared by the CLI subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,

    // Input paths; `None` falls back to the bundled synthetic data.
    pub transmittance_std: Option<PathBuf>,
    pub transmittance_ch4: Option<PathBuf>,
    pub srf: Option<PathBuf>,
    pub lut: Option<PathBuf>,
    pub tiles: Option<PathBuf>,
    pub granule: Option<PathBuf>,
    pub water_mask: Option<PathBuf>,
    pub predictions: Option<PathBuf>,

    // Operating thresholds.
    pub plume_threshold: f64,
    pub origin_threshold: f64,
    pub peak_enh_min_ppm_m: f64,

    // Viewing geometry defaults.
    pub solar_zenith_deg: f64,
    pub sat_zenith_deg: f64,

    // Dataset generation.
    pub num_tiles: usize,
    pub sim_dt_s: f64,
    pub sim_duration_s: f64,
    pub synthetic_bands: usize,

    // Split fractions.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            out_dir: PathBuf::from("out"),
            transmittance_std: None,
            transmittance_ch4: None,
            srf: None,
            lut: None,
            tiles: None,
            granule: None,
            water_mask: None,
            predictions: None,
            plume_threshold: 0.4,
            origin_threshold: 0.3,
            peak_enh_min_ppm_m: 50.0,
            solar_zenith_deg: 30.0,
            sat_zenith_deg: 10.0,
            num_tiles: 8,
            sim_dt_s: 5.0,
            sim_duration_s: 3000.0,
            synthetic_bands: 48,
            train_fraction: 0.70,
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl RunConfig {
    /// Parses the flat `key = value` format. Blank lines and `#`
    /// comments are skipped; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    reason: "expected key = value".into(),
                });
            };
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies one key/value override (same keys as the file format).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: String| ConfigError::BadValue {
            key: key.to_string(),
            reason,
        };
        let parse_f64 = |key: &str, v: &str| -> Result<f64, ConfigError> {
            v.parse::<f64>()
                .map_err(|e| bad(key, e.to_string()))
                .and_then(|x| {
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(bad(key, format!("non-finite value {x}")))
                    }
                })
        };
        let parse_usize =
            |key: &str, v: &str| v.parse::<usize>().map_err(|e| bad(key, e.to_string()));
        match key {
            "seed" => self.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(key, e.to_string()))?,
            "threads" => self.threads = parse_usize(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "transmittance_std" => self.transmittance_std = Some(PathBuf::from(value)),
            "transmittance_ch4" => self.transmittance_ch4 = Some(PathBuf::from(value)),
            "srf" => self.srf = Some(PathBuf::from(value)),
            "lut" => self.lut = Some(PathBuf::from(value)),
            "tiles" => self.tiles = Some(PathBuf::from(value)),
            "granule" => self.granule = Some(PathBuf::from(value)),
            "water_mask" => self.water_mask = Some(PathBuf::from(value)),
            "predictions" => self.predictions = Some(PathBuf::from(value)),
            "plume_threshold" => self.plume_threshold = parse_f64(key, value)?,
            "origin_threshold" => self.origin_threshold = parse_f64(key, value)?,
            "peak_enh_min_ppm_m" => self.peak_enh_min_ppm_m = parse_f64(key, value)?,
            "solar_zenith_deg" => self.solar_zenith_deg = parse_f64(key, value)?,
            "sat_zenith_deg" => self.sat_zenith_deg = parse_f64(key, value)?,
            "num_tiles" => self.num_tiles = parse_usize(key, value)?,
            "sim_dt_s" => self.sim_dt_s = parse_f64(key, value)?,
            "sim_duration_s" => self.sim_duration_s = parse_f64(key, value)?,
            "synthetic_bands" => self.synthetic_bands = parse_usize(key, value)?,
            "train_fraction" => self.train_fraction = parse_f64(key, value)?,
            "val_fraction" => self.val_fraction = parse_f64(key, value)?,
            "test_fraction" => self.test_fraction = parse_f64(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let total = self.train_fraction + self.val_fraction + self.test_fraction;
        if (total - 1.0).abs() > 1e-9
            || self.train_fraction <= 0.0
            || self.val_fraction <= 0.0
            || self.test_fraction <= 0.0
        {
            return Err(ConfigError::BadFractions(total));
        }
        for (key, value) in [
            ("plume_threshold", self.plume_threshold),
            ("origin_threshold", self.origin_threshold),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(ConfigError::BadThreshold {
                    key: if key == "plume_threshold" {
                        "plume_threshold"
                    } else {
                        "origin_threshold"
                    },
                    value,
                    range: "(0, 1)",
                });
            }
        }
        if !(self.peak_enh_min_ppm_m >= 0.0) {
            return Err(ConfigError::BadThreshold {
                key: "peak_enh_min_ppm_m",
                value: self.peak_enh_min_ppm_m,
                range: "[0, inf)",
            });
        }
        if !(self.sim_dt_s > 0.0) || !(self.sim_duration_s > 0.0) {
            return Err(ConfigError::BadThreshold {
                key: "sim_dt_s",
                value: self.sim_dt_s,
                range: "(0, inf)",
            });
        }
        if !(0.0..90.0).contains(&self.solar_zenith_deg)
            || !(0.0..90.0).contains(&self.sat_zenith_deg)
        {
            return Err(ConfigError::BadThreshold {
                key: "solar_zenith_deg",
                value: self.solar_zenith_deg,
                range: "[0, 90)",
            });
        }
        Ok(())
    }

    /// Serializes back to the flat file format (defaults included).
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        for (k, v) in [
            ("transmittance_std", &self.transmittance_std),
            ("transmittance_ch4", &self.transmittance_ch4),
            ("srf", &self.srf),
            ("lut", &self.lut),
            ("tiles", &self.tiles),
            ("granule", &self.granule),
            ("water_mask", &self.water_mask),
            ("predictions", &self.predictions),
        ] {
            if let Some(path) = v {
                kv(k, path.display().to_string());
            }
        }
        kv("plume_threshold", self.plume_threshold.to_string());
        kv("origin_threshold", self.origin_threshold.to_string());
        kv("peak_enh_min_ppm_m", self.peak_enh_min_ppm_m.to_string());
        kv("solar_zenith_deg", self.solar_zenith_deg.to_string());
        kv("sat_zenith_deg", self.sat_zenith_deg.to_string());
        kv("num_tiles", self.num_tiles.to_string());
        kv("sim_dt_s", self.sim_dt_s.to_string());
        kv("sim_duration_s", self.sim_duration_s.to_string());
        kv("synthetic_bands", self.synthetic_bands.to_string());
        kv("train_fraction", self.train_fraction.to_string());
        kv("val_fraction", self.val_fraction.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        out
    }
}
