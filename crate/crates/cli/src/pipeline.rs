//! Subcommand implementations.
//!
//! Every random stream is seeded from the master seed and a fixed path such
//! as (`fit`, l, j), never from worker identity, so outputs do not depend on
//! the worker count.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fmm_core::bma::{accumulate_kernel_probs, accumulate_warp_probs, averaged_warp_derivative, rjmcmc_average, BmaResult};
use fmm_core::diagnostics::{residual_variogram_envelope, track_variogram, Variogram};
use fmm_core::ingest::{load_track, standardize, StandardizedTrack};
use fmm_core::io;
use fmm_core::kernels::{KernelFamily, KernelSpec, KnotGrid};
use fmm_core::mcmc::{fit_model, FitConfig, ModelFit, ModelSpec, PriorConfig};
use fmm_core::predict::{sample_path, single_model_chain, PathDraws};
use fmm_core::rng::{derive_seed, tag};
use fmm_core::sim::{canonical_warp, simulate, SimConfig};
use fmm_core::warp::{build_candidate_set, CandidateConfig, WarpField, WarpSet};
use fmm_core::FmmError;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::CliError;

fn mkdir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// Load the configured track in model units.
pub fn load_model_track(cfg: &RunConfig) -> Result<StandardizedTrack, CliError> {
    let path = cfg
        .track
        .as_ref()
        .ok_or_else(|| CliError::Config("no track given (use --track)".into()))?;
    let records = load_track(path)?;
    if cfg.standardize {
        Ok(standardize(&records)?)
    } else {
        let times = records.iter().map(|r| r.time).collect();
        let positions = records.iter().map(|r| [r.x, r.y]).collect();
        Ok(StandardizedTrack::from_model_units(times, positions)?)
    }
}

fn fit_config(cfg: &RunConfig) -> FitConfig {
    FitConfig {
        n_iter: cfg.iters,
        n_keep: cfg.keep,
        ..FitConfig::default()
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let warp = if cfg.warped { Some(canonical_warp(cfg.seed)?) } else { None };
    let out = simulate(&SimConfig {
        n_obs: cfg.n_obs,
        m_knots: cfg.knots,
        missingness: cfg.missing,
        warp,
        ..SimConfig::stationary(cfg.seed)
    })?;
    mkdir(&cfg.out)?;
    let files = io::write_sim_output(&cfg.out, &out)?;
    let mut manifest = Manifest::new();
    for (k, v) in cfg.entries() {
        manifest.config(k, v);
    }
    for f in &files {
        manifest.file(f);
    }
    manifest.write(&cfg.out, &cfg.out.join("manifest.txt"))?;
    log::info!("simulated {} observations into {}", out.track.len(), cfg.out.display());
    Ok(files)
}

/// Generate a candidate set; returns the set and exhausted-combo count.
pub fn generate_warps(cfg: &RunConfig) -> Result<(WarpSet, usize), CliError> {
    let cand_cfg = CandidateConfig {
        per_combo: cfg.per_combo,
        max_attempts: cfg.max_attempts,
        ..CandidateConfig::default()
    };
    let set = with_pool(cfg.workers, || build_candidate_set(&cand_cfg, derive_seed(cfg.seed, &[tag("warps")])))??;
    let exhausted = set.report.iter().filter(|r| r.exhausted(cfg.per_combo)).count();
    if exhausted > 0 {
        log::warn!(
            "{exhausted} of {} warp parameter combinations exhausted their attempt budget",
            set.report.len()
        );
    }
    Ok((set.warps, exhausted))
}

pub fn cmd_warps(cfg: &RunConfig) -> Result<WarpSet, CliError> {
    let (set, exhausted) = generate_warps(cfg)?;
    io::write_warp_set(&cfg.out, &set)?;
    println!(
        "wrote {} warps ({} candidates + identity) to {}; {exhausted} combos exhausted",
        set.len(),
        set.len() - 1,
        cfg.out.display()
    );
    Ok(set)
}

fn load_warps(cfg: &RunConfig) -> Result<WarpSet, CliError> {
    match &cfg.warp_dir {
        Some(d) => Ok(io::read_warp_set(d)?),
        None => Ok(WarpSet::new(vec![WarpField::identity(fmm_core::warp::DEFAULT_GRID_LEN)])),
    }
}

fn fit_seed(master: u64, l: usize, j: usize) -> u64 {
    derive_seed(master, &[tag("fit"), l as u64, j as u64])
}

pub fn cmd_fit(cfg: &RunConfig, kernel: KernelFamily, warp_id: &str) -> Result<PathBuf, CliError> {
    let track = load_model_track(cfg)?;
    let warps = load_warps(cfg)?;
    let j = warps
        .fields
        .iter()
        .position(|w| w.id == warp_id)
        .ok_or_else(|| CliError::Core(FmmError::Unknown(format!("warp id {warp_id}"))))?;
    let warp = &warps.fields[j];
    let knots = KnotGrid::new(cfg.knots)?;
    let spec = ModelSpec::new(kernel, warp_id, j);
    let prior = PriorConfig::default();
    let (fit, elapsed) = timed(|| fit_model(&track, &knots, warp, &spec, &prior, &fit_config(cfg), fit_seed(cfg.seed, spec.l, j)));
    let fit = fit?;
    mkdir(&cfg.out)?;
    let path = cfg.out.join(io::fit_file_name(&spec));
    io::write_fit(&path, &fit)?;
    if cfg.dump_basis {
        let phi = fit.draws.last().map(|d| d.phi).unwrap_or(0.0);
        let basis = fmm_core::kernels::build_basis(&track.times, &knots, &KernelSpec::new(kernel, phi)?, warp)?;
        io::write_basis(&cfg.out.join(format!("basis_{}_{}.csv", spec.l, warp_id)), &basis)?;
    }
    println!(
        "fit {} / {warp_id}: {} draws in {:.2}s (acceptance φ={:.2} σ_s²={:.2} σ_μ/s={:.2})",
        kernel,
        fit.len(),
        elapsed.as_secs_f64(),
        fit.acceptance.phi,
        fit.acceptance.sigma2_s,
        fit.acceptance.sigma_ratio
    );
    Ok(path)
}

/// Outputs of the full pipeline that callers may want to inspect.
#[derive(Debug)]
pub struct BmaRun {
    pub result: BmaResult,
    pub warps: WarpSet,
    pub fits: Vec<ModelFit>,
    pub files: Vec<PathBuf>,
}

fn query_grid(n: usize) -> Vec<f64> {
    fmm_core::warp::unit_grid(n)
}

fn write_paths_and_variograms(
    cfg: &RunConfig,
    track: &StandardizedTrack,
    knots: &KnotGrid,
    warps: &WarpSet,
    fits: &[ModelFit],
    chain: &BmaResult,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let out = &cfg.out;
    let (drawn, t_pred) = timed(|| -> Result<(PathDraws, PathDraws), CliError> {
        let obs = sample_path(track, knots, warps, fits, chain, &track.times, None, derive_seed(cfg.seed, &[tag("paths-obs")]))?;
        let grid = sample_path(
            track,
            knots,
            warps,
            fits,
            chain,
            &query_grid(cfg.query_points),
            None,
            derive_seed(cfg.seed, &[tag("paths")]),
        )?;
        Ok((obs, grid))
    });
    let (obs_paths, grid_paths) = drawn?;
    manifest.stage("predict", t_pred);

    let raw = cfg.standardize.then_some(&track.std);
    let paths = out.join("paths.csv");
    let summary = out.join("path_summary.csv");
    io::write_paths(&paths, &summary, &grid_paths, raw)?;
    let obs_file = out.join("paths_obs.csv");
    let obs_summary = out.join("paths_obs_summary.csv");
    io::write_paths(&obs_file, &obs_summary, &obs_paths, None)?;
    for f in [paths, summary, obs_file, obs_summary] {
        manifest.file(f);
    }

    let (vg, t_diag) = timed(|| -> Result<(Variogram, Variogram), CliError> {
        let data = track_variogram(track, cfg.bins, cfg.max_lag)?;
        let (resid, _) = residual_variogram_envelope(&obs_paths, track, cfg.bins, cfg.max_lag)?;
        Ok((data, resid))
    });
    let (data_vg, resid_vg) = vg?;
    manifest.stage("diagnostics", t_diag);
    let f1 = out.join("variogram_data.csv");
    let f2 = out.join("variogram_residuals.csv");
    io::write_variogram(&f1, &data_vg)?;
    io::write_variogram(&f2, &resid_vg)?;
    manifest.file(f1);
    manifest.file(f2);
    Ok(())
}

/// Fit every (kernel, warp) model, average, predict and diagnose.
pub fn cmd_bma(cfg: &RunConfig) -> Result<BmaRun, CliError> {
    cfg.validate()?;
    let total = Instant::now();
    let out = cfg.out.clone();
    mkdir(&out)?;
    let mut manifest = Manifest::new();
    for (k, v) in cfg.entries() {
        manifest.config(k, v);
    }

    let track = load_model_track(cfg)?;
    let knots = KnotGrid::new(cfg.knots)?;
    let prior = PriorConfig::default();

    let (warps, t_warps) = timed(|| -> Result<WarpSet, CliError> {
        let warp_out = out.join("warps");
        let mut set = match &cfg.warp_dir {
            Some(d) => io::read_warp_set(d)?,
            None => generate_warps(cfg)?.0,
        };
        if let Some(max) = cfg.max_warps {
            set.fields.truncate(max.max(1));
        }
        io::write_warp_set(&warp_out, &set)?;
        Ok(set)
    });
    let warps = warps?;
    manifest.stage("warps", t_warps);
    manifest.file(out.join("warps").join("index.csv"));
    for w in &warps.fields {
        manifest.file(out.join("warps").join(io::warp_file_name(&w.id)));
    }

    let specs: Vec<ModelSpec> = cfg
        .kernels
        .iter()
        .flat_map(|&f| warps.fields.iter().enumerate().map(move |(j, w)| ModelSpec::new(f, w.id.clone(), j)))
        .collect();
    log::info!("fitting {} models on {} workers", specs.len(), cfg.workers);
    let fit_cfg = fit_config(cfg);
    let (results, t_fit) = timed(|| {
        with_pool(cfg.workers, || {
            specs
                .par_iter()
                .map(|spec| {
                    let warp = &warps.fields[spec.j];
                    fit_model(&track, &knots, warp, spec, &prior, &fit_cfg, fit_seed(cfg.seed, spec.l, spec.j))
                })
                .collect::<Vec<_>>()
        })
    });
    let results = results?;
    manifest.stage("fit", t_fit);

    let fit_dir = out.join("fits");
    mkdir(&fit_dir)?;
    let mut fits = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (spec, r) in specs.iter().zip(results) {
        match r {
            Ok(fit) => {
                let path = fit_dir.join(io::fit_file_name(spec));
                io::write_fit(&path, &fit)?;
                manifest.file(path);
                fits.push(fit);
            }
            Err(e) => failures.push(format!("{} / {}: {e}", spec.family, spec.warp_id)),
        }
    }
    if !failures.is_empty() {
        let report = out.join("fit_errors.txt");
        std::fs::write(&report, failures.join("\n") + "\n").map_err(|e| CliError::io(&report, e))?;
        manifest.file(report);
        manifest.write(&out, &out.join("manifest.txt"))?;
        return Err(CliError::FitFailures(failures.len(), specs.len()));
    }

    let n_rj = fits.iter().map(|f| f.len()).min().unwrap_or(0);
    let (result, t_bma) = timed(|| with_pool(cfg.workers, || rjmcmc_average(&fits, &prior, n_rj, derive_seed(cfg.seed, &[tag("bma")]))));
    let result = result??;
    manifest.stage("bma", t_bma);

    let mp = out.join("model_probs.csv");
    let kp = out.join("kernel_probs.csv");
    let mc = out.join("model_chain.csv");
    let wp = out.join("warp_probs.csv");
    let wd = out.join("warp_derivative.csv");
    io::write_model_probs(&mp, &result, &warps)?;
    io::write_kernel_probs(&kp, &result)?;
    io::write_model_chain(&mc, &result)?;
    let wprobs = accumulate_warp_probs(&result.models, &result.model_probs);
    let ids: Vec<String> = warps.fields.iter().map(|w| w.id.clone()).collect();
    write_warp_probs(&wp, &ids, &wprobs)?;
    let (grid, deriv) = averaged_warp_derivative(&result, &warps)?;
    io::write_series(&wd, ["t", "dwdt"], &grid, &deriv)?;
    for f in [mp, kp, mc, wp, wd] {
        manifest.file(f);
    }

    with_pool(cfg.workers, || write_paths_and_variograms(cfg, &track, &knots, &warps, &fits, &result, &mut manifest))??;

    manifest.stage("total", total.elapsed());
    let mpath = out.join("manifest.txt");
    let files = manifest.files().to_vec();
    manifest.write(&out, &mpath)?;
    print_kernel_summary(&result);
    Ok(BmaRun {
        result,
        warps,
        fits,
        files,
    })
}

fn write_warp_probs(path: &Path, ids: &[String], probs: &std::collections::BTreeMap<String, f64>) -> Result<(), CliError> {
    let mut text = String::from("warp_id,prob\n");
    for id in ids {
        text.push_str(&format!("{id},{}\n", probs.get(id).copied().unwrap_or(0.0)));
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn print_kernel_summary(result: &BmaResult) {
    for (f, p) in &result.kernel_probs {
        println!("{:>4} {p:.4}", f.code());
    }
}

/// Rebuild the model chain written by `bma` in `dir`.
pub fn read_bma_dir(dir: &Path, prior: &PriorConfig) -> Result<(WarpSet, Vec<ModelFit>, BmaResult), CliError> {
    let warps = io::read_warp_set(&dir.join("warps"))?;
    let (models, model_probs) = io::read_model_probs(&dir.join("model_probs.csv"), &warps)?;
    let (model_chain, draw_index): (Vec<usize>, Vec<usize>) =
        io::read_model_chain(&dir.join("model_chain.csv"))?.into_iter().unzip();
    let fits = models
        .iter()
        .map(|m| io::read_fit(&dir.join("fits").join(io::fit_file_name(m)), prior))
        .collect::<Result<Vec<_>, _>>()?;
    let kernel_probs = accumulate_kernel_probs(&models, &model_probs);
    let n_rj_iter = model_chain.len();
    Ok((
        warps,
        fits,
        BmaResult {
            models,
            model_probs,
            kernel_probs,
            model_chain,
            draw_index,
            n_rj_iter,
        },
    ))
}

/// Path draws from a `bma` output directory or a single fit file.
pub fn cmd_predict(cfg: &RunConfig, bma_dir: Option<&Path>, fit_file: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let track = load_model_track(cfg)?;
    let knots = KnotGrid::new(cfg.knots)?;
    let prior = PriorConfig::default();
    let (warps, fits, chain) = match (bma_dir, fit_file) {
        (Some(dir), _) => read_bma_dir(dir, &prior)?,
        (None, Some(f)) => {
            let fit = io::read_fit(f, &prior)?;
            let warps = load_warps(cfg)?;
            if warps.fields.get(fit.spec.j).map(|w| w.id.as_str()) != Some(fit.spec.warp_id.as_str()) {
                return Err(CliError::Core(FmmError::Unknown(format!("warp id {}", fit.spec.warp_id))));
            }
            let chain = single_model_chain(&fit);
            (warps, vec![fit], chain)
        }
        (None, None) => return Err(CliError::Config("predict needs --bma-dir or --fit".into())),
    };
    mkdir(&cfg.out)?;
    let mut manifest = Manifest::new();
    for (k, v) in cfg.entries() {
        manifest.config(k, v);
    }
    let paths = with_pool(cfg.workers, || {
        sample_path(
            &track,
            &knots,
            &warps,
            &fits,
            &chain,
            &query_grid(cfg.query_points),
            None,
            derive_seed(cfg.seed, &[tag("paths")]),
        )
    })??;
    let p = cfg.out.join("paths.csv");
    let s = cfg.out.join("path_summary.csv");
    io::write_paths(&p, &s, &paths, cfg.standardize.then_some(&track.std))?;
    let obs = with_pool(cfg.workers, || {
        sample_path(&track, &knots, &warps, &fits, &chain, &track.times, None, derive_seed(cfg.seed, &[tag("paths-obs")]))
    })??;
    let po = cfg.out.join("paths_obs.csv");
    let so = cfg.out.join("paths_obs_summary.csv");
    io::write_paths(&po, &so, &obs, None)?;
    let files = vec![p, s, po, so];
    for f in &files {
        manifest.file(f);
    }
    manifest.write(&cfg.out, &cfg.out.join("manifest.txt"))?;
    Ok(files)
}

/// Data variogram, plus a residual envelope when model-unit path draws at
/// the observation times are supplied.
pub fn cmd_diagnose(cfg: &RunConfig, paths_obs: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let track = load_model_track(cfg)?;
    mkdir(&cfg.out)?;
    let mut files = Vec::new();
    let data = track_variogram(&track, cfg.bins, cfg.max_lag)?;
    let f = cfg.out.join("variogram_data.csv");
    io::write_variogram(&f, &data)?;
    files.push(f);
    if let Some(p) = paths_obs {
        let paths = io::read_paths(p)?;
        let (resid, _) = residual_variogram_envelope(&paths, &track, cfg.bins, cfg.max_lag)?;
        let f = cfg.out.join("variogram_residuals.csv");
        io::write_variogram(&f, &resid)?;
        files.push(f);
    }
    Ok(files)
}
