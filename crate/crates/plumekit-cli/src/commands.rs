//! Subcommand implementations.

use std::path::PathBuf;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde_json::json;

use plumekit::config::RunConfig;
use plumekit::granule::{run_granule, GranuleOutput, GranuleParams};
use plumekit::grid::MaskGrid;
use plumekit::inject::{
    inject as inject_specs, sample_eval_emission, InjectionSpec, ZenithAngles,
};
use plumekit::io::{external, geojson, raster, tiles};
use plumekit::loss::SlotPrediction;
use plumekit::metrics::{evaluate as evaluate_metrics, EvalConfig, GtInstance};
use plumekit::retrieval::{unit_absorption_spectrum, MatchedFilterBackend};
use plumekit::rng::stream;
use plumekit::sim::{
    crop_tile, mmol_to_ppm_m, sample_config, sample_origins, simulate_plume, CropMode, SimConfig,
};
use plumekit::specfit::{fit_plume, FitParams};
use plumekit::spectral::{
    build_lut as build_lut_table, default_conc_axis, default_plm_axis, load_srf_csv,
    path_length_multiplier, MethaneLut, TransmittancePair,
};
use plumekit::split::split_of;
use plumekit::synth::{background_cube, granule_fixture, swir_instrument, SceneParams};

use crate::runlog::RunLog;

const TILE_SIZE: usize = 256;

fn ensure_out(config: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating output directory {}", config.out_dir.display()))
}

fn default_path(config: &RunConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

/// Loads the LUT: explicit file first, then user transmittance + SRF
/// tables, falling back to the bundled synthetic instrument.
fn resolve_lut(config: &RunConfig, log: &mut RunLog) -> anyhow::Result<MethaneLut> {
    if let Some(path) = &config.lut {
        log.input(path);
        return MethaneLut::read_file(path)
            .with_context(|| format!("reading lookup table {}", path.display()));
    }
    let default = default_path(config, "lut.bin");
    if default.exists() {
        log.input(&default);
        return MethaneLut::read_file(&default)
            .with_context(|| format!("reading lookup table {}", default.display()));
    }
    build_lut_from_inputs(config, log)
}

fn build_lut_from_inputs(config: &RunConfig, log: &mut RunLog) -> anyhow::Result<MethaneLut> {
    match (&config.transmittance_std, &config.transmittance_ch4, &config.srf) {
        (Some(std_path), Some(ch4_path), Some(srf_path)) => {
            log.input(std_path);
            log.input(ch4_path);
            log.input(srf_path);
            let pair = TransmittancePair::from_files(std_path, ch4_path)?;
            let srfs = load_srf_csv(srf_path)?;
            Ok(build_lut_table(
                &pair,
                &srfs,
                default_conc_axis(),
                default_plm_axis(),
            )?)
        }
        (None, None, None) => {
            log.note("lut_source", json!("bundled synthetic spectrum"));
            let inst = swir_instrument(config.synthetic_bands);
            Ok(inst.build_lut())
        }
        _ => bail!(
            "transmittance_std, transmittance_ch4 and srf must be supplied together \
             (or all omitted for the bundled synthetic spectrum)"
        ),
    }
}

pub fn build_lut(config: &RunConfig) -> anyhow::Result<()> {
    ensure_out(config)?;
    let mut log = RunLog::new("build-lut", config.seed);
    let lut = build_lut_from_inputs(config, &mut log)?;
    let out = default_path(config, "lut.bin");
    lut.write_file(&out)?;
    log.output(&out);
    log.note("bands", json!(lut.bands()));
    log.write(&config.out_dir)?;
    println!(
        "wrote {} ({} bands, {} x {} table)",
        out.display(),
        lut.bands(),
        lut.conc_axis().len(),
        lut.plm_axis().len()
    );
    Ok(())
}

pub fn simulate(config: &RunConfig) -> anyhow::Result<()> {
    ensure_out(config)?;
    let mut log = RunLog::new("simulate", config.seed);
    let fractions = (
        config.train_fraction,
        config.val_fraction,
        config.test_fraction,
    );
    let tiles: Vec<tiles::Tile> = (0..config.num_tiles)
        .into_par_iter()
        .map(|i| -> anyhow::Result<tiles::Tile> {
            let tile_id = format!("tile-{i:05}");
            let split = split_of(&tile_id, fractions, config.seed);
            let mut cfg_rng = stream(config.seed, "sim-config", i as u64);
            let sim_config = SimConfig {
                dt_s: config.sim_dt_s,
                sim_duration_s: config.sim_duration_s,
                ..sample_config(&mut cfg_rng)
            };
            let origins = sample_origins(&sim_config, &mut cfg_rng);
            let instances = origins
                .iter()
                .enumerate()
                .map(|(p, &origin)| {
                    let mut rng = stream(config.seed, "sim", (i * 64 + p) as u64);
                    simulate_plume(&sim_config, origin, &mut rng).map(|(inst, _)| inst)
                })
                .collect::<Result<Vec<_>, _>>()?;
            // Training tiles get random crops; evaluation splits use the
            // deterministic central crop for fixed pairings.
            let mode = match split {
                plumekit::split::Split::Train => CropMode::Random,
                _ => CropMode::Center,
            };
            let mut crop_rng = stream(config.seed, "crop", i as u64);
            let cropped = crop_tile(&instances, TILE_SIZE, mode, &mut crop_rng)?;
            Ok(tiles::Tile {
                plumes: cropped.plumes,
                radiance: None,
                provenance: Some(json!({
                    "tile_id": tile_id,
                    "split": split.as_str(),
                    "sim_seed": sim_config.seed,
                    "wind_speed_mps": sim_config.mean_wind_speed_mps,
                    "plume_duration_s": sim_config.plume_duration_s,
                    "crop_offset": [cropped.offset.0, cropped.offset.1],
                })),
            })
        })
        .collect::<Result<_, _>>()?;

    let set = tiles::TileSet {
        tile_size: TILE_SIZE,
        pixel_size_m: 60.0,
        tiles,
    };
    let out = default_path(config, "tiles.bin");
    set.write_file(&out)?;
    log.output(&out);
    log.note("tiles", json!(config.num_tiles));
    log.write(&config.out_dir)?;
    println!("wrote {} ({} tiles)", out.display(), config.num_tiles);
    Ok(())
}

fn tiles_input(config: &RunConfig, fallback: &str) -> PathBuf {
    config
        .tiles
        .clone()
        .unwrap_or_else(|| default_path(config, fallback))
}

pub fn inject(config: &RunConfig) -> anyhow::Result<()> {
    ensure_out(config)?;
    let mut log = RunLog::new("inject", config.seed);
    let tiles_path = tiles_input(config, "tiles.bin");
    log.input(&tiles_path);
    let mut set = tiles::TileSet::read_file(&tiles_path)
        .with_context(|| format!("reading tiles {}", tiles_path.display()))?;
    let lut = resolve_lut(config, &mut log)?;
    let inst = swir_instrument(config.synthetic_bands);
    if inst.srfs.len() != lut.bands() {
        bail!(
            "lookup table has {} bands but the synthetic background instrument has {}; \
             set synthetic_bands to match",
            lut.bands(),
            inst.srfs.len()
        );
    }

    let zeniths = ZenithAngles::Scalar {
        solar_deg: config.solar_zenith_deg,
        sat_deg: config.sat_zenith_deg,
    };
    let scene = SceneParams {
        rows: set.tile_size,
        cols: set.tile_size,
        ..SceneParams::default()
    };
    let results: Vec<(tiles::Tile, usize)> = set
        .tiles
        .par_iter()
        .enumerate()
        .map(|(i, tile)| -> anyhow::Result<(tiles::Tile, usize)> {
            let mut bg_rng = stream(config.seed, "inject-bg", i as u64);
            let background = background_cube(&inst, &scene, &mut bg_rng);
            let mut emission_rng = stream(config.seed, "emission", i as u64);
            let emissions: Vec<f64> = tile
                .plumes
                .iter()
                .map(|_| sample_eval_emission(&mut emission_rng))
                .collect();
            let specs: Vec<InjectionSpec<'_>> = tile
                .plumes
                .iter()
                .zip(&emissions)
                .map(|(p, &rate)| InjectionSpec {
                    conc_mmol: &p.conc,
                    emission_kg_per_hr: rate,
                })
                .collect();
            let injected = inject_specs(&background, &specs, &zeniths, &lut)?;
            let mut provenance = tile
                .provenance
                .clone()
                .unwrap_or_else(|| json!({"tile_id": format!("tile-{i:05}")}));
            provenance["emissions_kg_hr"] = json!(emissions);
            provenance["solar_zenith_deg"] = json!(config.solar_zenith_deg);
            provenance["sat_zenith_deg"] = json!(config.sat_zenith_deg);
            Ok((
                tiles::Tile {
                    plumes: tile.plumes.clone(),
                    radiance: Some(injected),
                    provenance: Some(provenance),
                },
                tile.plumes.len(),
            ))
        })
        .collect::<Result<_, _>>()?;

    let total_plumes: usize = results.iter().map(|(_, n)| n).sum();
    set.tiles = results.into_iter().map(|(t, _)| t).collect();
    let out = default_path(config, "injected.bin");
    set.write_file(&out)?;
    log.output(&out);
    log.note("plumes_injected", json!(total_plumes));
    log.write(&config.out_dir)?;
    println!(
        "wrote {} ({} tiles, {} plumes)",
        out.display(),
        set.tiles.len(),
        total_plumes
    );
    Ok(())
}

fn tile_id_of(tile: &tiles::Tile, index: usize) -> String {
    tile.provenance
        .as_ref()
        .and_then(|p| p["tile_id"].as_str())
        .map(str::to_string)
        .unwrap_or_else(|| format!("tile-{index:05}"))
}

pub fn retrieve(config: &RunConfig, backend: &str) -> anyhow::Result<()> {
    ensure_out(config)?;
    let mut log = RunLog::new("retrieve", config.seed);
    let pred_dir = default_path(config, "predictions");
    std::fs::create_dir_all(&pred_dir)?;

    match backend {
        "matched-filter" => {
            let tiles_path = tiles_input(config, "injected.bin");
            log.input(&tiles_path);
            let set = tiles::TileSet::read_file(&tiles_path)?;
            let lut = resolve_lut(config, &mut log)?;
            let plm = path_length_multiplier(config.solar_zenith_deg, config.sat_zenith_deg)?;
            let sig = unit_absorption_spectrum(&lut, plm)?;
            let mf = MatchedFilterBackend::new(sig);
            let manifests: Vec<PathBuf> = set
                .tiles
                .par_iter()
                .enumerate()
                .map(|(i, tile)| -> anyhow::Result<PathBuf> {
                    let cube = tile
                        .radiance
                        .as_ref()
                        .with_context(|| format!("tile {i} has no radiance; run inject first"))?;
                    let pred = mf.predict(cube)?;
                    Ok(external::save_external(&pred, &pred_dir, &tile_id_of(tile, i))?)
                })
                .collect::<Result<_, _>>()?;
            for m in &manifests {
                log.output(m);
            }
            println!(
                "wrote {} prediction sets under {}",
                manifests.len(),
                pred_dir.display()
            );
        }
        "external" => {
            let src = config
                .predictions
                .clone()
                .context("backend external requires the predictions config key")?;
            let mut count = 0_usize;
            let mut clipped = 0_usize;
            for entry in std::fs::read_dir(&src)? {
                let path = entry?.path();
                if path.file_name().map_or(false, |n| {
                    n.to_string_lossy().ends_with("_manifest.json")
                }) {
                    log.input(&path);
                    let (pred, stats, tile_id) = external::load_external(&path)?;
                    external::save_external(&pred, &pred_dir, &tile_id)?;
                    clipped += stats.clipped;
                    count += 1;
                }
            }
            if count == 0 {
                bail!("no *_manifest.json files found in {}", src.display());
            }
            log.note("clipped_values", json!(clipped));
            println!(
                "validated and re-wrote {count} external prediction sets ({clipped} values clipped)"
            );
        }
        other => bail!("unknown backend {other:?}; expected matched-filter or external"),
    }
    log.write(&config.out_dir)?;
    Ok(())
}

fn load_or_synthesize_granule(
    config: &RunConfig,
    lut: &MethaneLut,
    log: &mut RunLog,
) -> anyhow::Result<plumekit::RadianceCube> {
    if let Some(path) = &config.granule {
        log.input(path);
        let raster = raster::read_file(path)?;
        return Ok(raster.cube);
    }
    let cached = default_path(config, "granule.pkr");
    if cached.exists() {
        log.input(&cached);
        return Ok(raster::read_file(&cached)?.cube);
    }
    // Self-contained demo granule: three plumes on a synthetic scene.
    let inst = swir_instrument(config.synthetic_bands);
    let fixture = granule_fixture(&inst, lut, 512, config.seed);
    let bytes = raster::encode_cube(&fixture.cube, None, raster::Dtype::F32);
    raster::write_file(&cached, &bytes)?;
    log.note("granule_source", json!("synthetic fixture (3 plumes)"));
    log.output(&cached);
    println!("synthesized demo granule at {}", cached.display());
    Ok(fixture.cube)
}

fn load_water_mask(config: &RunConfig, log: &mut RunLog) -> anyhow::Result<Option<MaskGrid>> {
    let Some(path) = &config.water_mask else {
        return Ok(None);
    };
    log.input(path);
    let (grid, _) = raster::decode_grid(&std::fs::read(path)?)?;
    Ok(Some(grid.map(|v| v > 0.5)))
}

fn granule_params(config: &RunConfig) -> GranuleParams {
    GranuleParams {
        plume_threshold: config.plume_threshold,
        origin_threshold: config.origin_threshold,
        min_peak_ppm_m: config.peak_enh_min_ppm_m,
        ..GranuleParams::default()
    }
}

fn run_granule_pipeline(
    config: &RunConfig,
    log: &mut RunLog,
) -> anyhow::Result<(plumekit::RadianceCube, MethaneLut, GranuleOutput)> {
    let lut = resolve_lut(config, log)?;
    let cube = load_or_synthesize_granule(config, &lut, log)?;
    let water = load_water_mask(config, log)?;
    let plm = path_length_multiplier(config.solar_zenith_deg, config.sat_zenith_deg)?;
    let sig = unit_absorption_spectrum(&lut, plm)?;
    let backend = MatchedFilterBackend::new(sig);
    let output = run_granule(&cube, &backend, water.as_ref(), &granule_params(config))?;
    Ok((cube, lut, output))
}

pub fn granule(config: &RunConfig) -> anyhow::Result<()> {
    ensure_out(config)?;
    let mut log = RunLog::new("granule", config.seed);
    let (_, _, output) = run_granule_pipeline(config, &mut log)?;

    let mosaic_path = default_path(config, "mosaic.pkr");
    raster::write_file(
        &mosaic_path,
        &raster::encode_grid(&output.mosaic.grid, None, raster::Dtype::F32),
    )?;
    log.output(&mosaic_path);

    let records_path = default_path(config, "records.geojson");
    let doc = geojson::records_to_geojson(&output.outcome.kept, &output.outcome.rejected, None);
    std::fs::write(&records_path, serde_json::to_vec_pretty(&doc)?)?;
    log.output(&records_path);
    log.note("candidates", json!(output.candidate_count));
    log.note("kept", json!(output.outcome.kept.len()));
    log.note("rejected", json!(output.outcome.rejected.len()));
    log.write(&config.out_dir)?;
    println!(
        "granule: {} candidates -> {} records kept, {} rejected; mosaic {} records {}",
        output.candidate_count,
        output.outcome.kept.len(),
        output.outcome.rejected.len(),
        mosaic_path.display(),
        records_path.display()
    );
    Ok(())
}

pub fn spectral_fit(config: &RunConfig, spectra: bool) -> anyhow::Result<()> {
    ensure_out(config)?;
    let mut log = RunLog::new("spectral-fit", config.seed);
    let (cube, lut, mut output) = run_granule_pipeline(config, &mut log)?;
    let plm = path_length_multiplier(config.solar_zenith_deg, config.sat_zenith_deg)?;
    let params = FitParams::default();

    let masks: Vec<MaskGrid> = output.outcome.kept.iter().map(|r| r.mask.clone()).collect();
    let mut csv = String::from(
        "plume_id,fit_enh_ppm_m,obs_enh_ppm_m,d_cor,d_norm,valid,in_pixels,bg_pool\n",
    );
    let spectra_dir = default_path(config, "fit_spectra");
    if spectra {
        std::fs::create_dir_all(&spectra_dir)?;
    }
    for (idx, record) in output.outcome.kept.iter_mut().enumerate() {
        let others: Vec<&MaskGrid> = masks
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != idx)
            .map(|(_, m)| m)
            .collect();
        let outcome = fit_plume(
            &cube,
            &output.mosaic.grid,
            &record.mask,
            &others,
            &lut,
            plm,
            &params,
        )?;
        csv.push_str(&format!(
            "{},{:.3},{:.3},{:.6},{:.6},{},{},{}\n",
            record.id,
            outcome.scores.fit_enh,
            outcome.scores.obs_enh,
            outcome.scores.d_cor,
            outcome.scores.d_norm,
            outcome.scores.valid,
            outcome.in_pixel_count,
            outcome.bg_pool_count,
        ));
        if spectra {
            let mut spec_csv = String::from("band,lambda_um,rho_obs,rho_fit\n");
            for (k, &band) in outcome.fit.fit_bands.iter().enumerate() {
                spec_csv.push_str(&format!(
                    "{},{:.6},{:.9},{:.9}\n",
                    band,
                    lut.band_centers_um()[band],
                    outcome.fit.rho_obs[k],
                    outcome.fit.rho_fit[k],
                ));
            }
            let path = spectra_dir.join(format!("plume_{:03}.csv", record.id));
            std::fs::write(&path, spec_csv)?;
        }
        record.fit = Some(outcome.scores);
    }

    let report_path = default_path(config, "fit_report.csv");
    std::fs::write(&report_path, csv)?;
    log.output(&report_path);
    let records_path = default_path(config, "records.geojson");
    let doc = geojson::records_to_geojson(&output.outcome.kept, &output.outcome.rejected, None);
    std::fs::write(&records_path, serde_json::to_vec_pretty(&doc)?)?;
    log.output(&records_path);
    log.write(&config.out_dir)?;

    let valid = output
        .outcome
        .kept
        .iter()
        .filter(|r| r.fit.as_ref().is_some_and(|f| f.valid))
        .count();
    println!(
        "spectral-fit: {}/{} records valid; {}",
        valid,
        output.outcome.kept.len(),
        report_path.display()
    );
    Ok(())
}

fn gt_instances_of(tile: &tiles::Tile, pixel_size_m: f64) -> Vec<GtInstance> {
    let provenance = tile.provenance.as_ref();
    let emissions: Vec<f64> = provenance
        .and_then(|p| p["emissions_kg_hr"].as_array())
        .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
        .unwrap_or_default();
    let wind = provenance
        .and_then(|p| p["wind_speed_mps"].as_f64())
        .unwrap_or(0.0);
    let _ = pixel_size_m;
    tile.plumes
        .iter()
        .enumerate()
        .map(|(p, plume)| {
            let rate_kg_hr = emissions.get(p).copied().unwrap_or(0.0);
            let rate_mol_s = rate_kg_hr / plumekit::inject::KG_PER_HR_PER_MOL_S;
            let enh = plume.conc.map(|v| mmol_to_ppm_m(v) * rate_mol_s);
            // Wind below 5 cm/s makes the ratio meaningless; leave those
            // plumes unstratified.
            let erbws = (wind > 0.05).then(|| rate_kg_hr / wind);
            GtInstance {
                enh,
                mask: plume.mask.clone(),
                origin_px: plume.origin_px,
                erbws,
            }
        })
        .collect()
}

pub fn evaluate(config: &RunConfig) -> anyhow::Result<()> {
    ensure_out(config)?;
    let mut log = RunLog::new("evaluate", config.seed);
    let tiles_path = tiles_input(config, "injected.bin");
    log.input(&tiles_path);
    let set = tiles::TileSet::read_file(&tiles_path)?;
    let pred_dir = config
        .predictions
        .clone()
        .unwrap_or_else(|| default_path(config, "predictions"));

    let mut preds: Vec<SlotPrediction> = Vec::new();
    let mut gts: Vec<Vec<GtInstance>> = Vec::new();
    for (i, tile) in set.tiles.iter().enumerate() {
        let tile_id = tile_id_of(tile, i);
        let manifest = pred_dir.join(format!("{tile_id}_manifest.json"));
        if !manifest.exists() {
            bail!(
                "no prediction manifest for {tile_id} under {}",
                pred_dir.display()
            );
        }
        let (pred, _, _) = external::load_external(&manifest)?;
        preds.push(pred);
        gts.push(gt_instances_of(tile, set.pixel_size_m));
    }
    let tiles_ref: Vec<(&SlotPrediction, &[GtInstance])> = preds
        .iter()
        .zip(&gts)
        .map(|(p, g)| (p, g.as_slice()))
        .collect();

    let eval_config = EvalConfig {
        plume_threshold: config.plume_threshold,
        origin_threshold: config.origin_threshold,
        pixel_size_m: set.pixel_size_m,
        ..EvalConfig::default()
    };
    let report = evaluate_metrics(&tiles_ref, &eval_config);

    let csv_path = default_path(config, "eval_report.csv");
    std::fs::write(&csv_path, report.to_csv_string())?;
    log.output(&csv_path);
    let summary_path = default_path(config, "eval_summary.txt");
    std::fs::write(&summary_path, report.to_text_summary())?;
    log.output(&summary_path);
    log.write(&config.out_dir)?;
    print!("{}", report.to_text_summary());
    println!("wrote {} and {}", csv_path.display(), summary_path.display());
    Ok(())
}

pub fn report(config: &RunConfig) -> anyhow::Result<()> {
    let mut printed = false;
    for name in ["eval_summary.txt", "fit_report.csv"] {
        let path = default_path(config, name);
        if path.exists() {
            println!("== {} ==", path.display());
            print!("{}", std::fs::read_to_string(&path)?);
            println!();
            printed = true;
        }
    }
    let records = default_path(config, "records.geojson");
    if records.exists() {
        let summaries = geojson::records_from_geojson(&std::fs::read_to_string(&records)?)?;
        println!("== {} ==", records.display());
        for r in &summaries {
            println!(
                "plume {}: origin ({:.1}, {:.1}) px, peak {:.1} ppm-m, area {} px, detection {:.2}{}{}",
                r.id,
                r.origin_row,
                r.origin_col,
                r.peak_enhancement_ppm_m,
                r.area_px,
                r.detection_fraction,
                r.fit_valid
                    .map(|v| if v { ", fit valid" } else { ", fit invalid" })
                    .unwrap_or(""),
                r.rejection_reason
                    .as_deref()
                    .map(|s| format!(", rejected: {s}"))
                    .unwrap_or_default(),
            );
        }
        printed = true;
    }
    if !printed {
        bail!(
            "nothing to report in {}; run evaluate, granule or spectral-fit first",
            config.out_dir.display()
        );
    }
    Ok(())
}

