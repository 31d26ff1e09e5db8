//! CSV interchange formats.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces every value bit for bit. Metadata travels in
//! leading `# key=value` lines, which readers skip as comments.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Writer};

use crate::bma::BmaResult;
use crate::diagnostics::Variogram;
use crate::ingest::{Standardization, TelemetryRecord};
use crate::kernels::{BasisMatrix, KernelFamily};
use crate::mcmc::{Acceptance, Draw, ModelFit, ModelSpec, PriorConfig};
use crate::predict::{summarize_paths, PathDraws};
use crate::sim::SimOutput;
use crate::warp::{WarpField, WarpParams, WarpSet, IDENTITY_ID};
use crate::{FmmError, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FmmError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> FmmError {
    FmmError::Parse {
        row: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: format!("{}: {e}", path.display()),
    }
}

/// Open a writer, emit metadata lines, then return a CSV writer with `header`.
fn csv_writer(path: &Path, meta: &[(String, String)], header: &[&str]) -> Result<Writer<BufWriter<File>>> {
    let mut out = create(path)?;
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").map_err(|e| FmmError::io(path, e))?;
    }
    let mut w = Writer::from_writer(out);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    Ok(w)
}

fn finish(path: &Path, mut w: Writer<BufWriter<File>>) -> Result<()> {
    w.flush().map_err(|e| FmmError::io(path, e))
}

fn row<I: IntoIterator<Item = String>>(path: &Path, w: &mut Writer<BufWriter<File>>, fields: I) -> Result<()> {
    w.write_record(fields.into_iter().collect::<Vec<_>>())
        .map_err(|e| csv_err(path, e))
}

/// Read metadata lines and data records from a file written by this module.
fn read_table(path: &Path) -> Result<(BTreeMap<String, String>, StringRecord, Vec<StringRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| FmmError::io(path, e))?;
    let mut meta = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut rdr = ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let records = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((meta, header, records))
}

fn num(path: &Path, rec: &StringRecord, i: usize) -> Result<f64> {
    let field = rec.get(i).unwrap_or("");
    field.trim().parse::<f64>().map_err(|_| FmmError::Parse {
        row: rec.position().map(|p| p.line() as usize).unwrap_or(0),
        message: format!("{}: bad number {field:?} in column {}", path.display(), i + 1),
    })
}

fn meta_num(path: &Path, meta: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    meta.get(key)
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| FmmError::Parse {
            row: 1,
            message: format!("{}: missing metadata {key}", path.display()),
        })
}

fn s(v: f64) -> String {
    v.to_string()
}

pub fn write_track(path: &Path, records: &[TelemetryRecord]) -> Result<()> {
    let mut w = csv_writer(path, &[], &["time", "x", "y"])?;
    for r in records {
        row(path, &mut w, [s(r.time), s(r.x), s(r.y)])?;
    }
    finish(path, w)
}

pub fn warp_file_name(id: &str) -> String {
    format!("warp_{id}.csv")
}

/// Write a candidate set as one file per warp plus `index.csv`.
pub fn write_warp_set(dir: &Path, set: &WarpSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FmmError::io(dir, e))?;
    let index = dir.join("index.csv");
    let mut iw = csv_writer(&index, &[], &["id", "sigma_w", "phi_w", "file"])?;
    for wf in &set.fields {
        let file = warp_file_name(&wf.id);
        let (sw, pw) = wf
            .params
            .map(|p| (s(p.sigma_w), s(p.phi_w)))
            .unwrap_or_default();
        row(&index, &mut iw, [wf.id.clone(), sw, pw, file.clone()])?;
        let path = dir.join(&file);
        let mut w = csv_writer(&path, &[], &["t", "w", "dwdt"])?;
        for i in 0..wf.grid_times.len() {
            row(&path, &mut w, [s(wf.grid_times[i]), s(wf.values[i]), s(wf.derivative[i])])?;
        }
        finish(&path, w)?;
    }
    finish(&index, iw)
}

pub fn read_warp_set(dir: &Path) -> Result<WarpSet> {
    let index = dir.join("index.csv");
    let (_, _, recs) = read_table(&index)?;
    let mut fields = Vec::with_capacity(recs.len());
    for r in &recs {
        let id = r.get(0).unwrap_or("").to_string();
        let params = match (r.get(1), r.get(2)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => Some(WarpParams::new(num(&index, r, 1)?, num(&index, r, 2)?)?),
            _ => None,
        };
        let file = dir.join(r.get(3).unwrap_or(""));
        let (_, _, rows) = read_table(&file)?;
        let mut grid = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        for rr in &rows {
            grid.push(num(&file, rr, 0)?);
            values.push(num(&file, rr, 1)?);
        }
        if id == IDENTITY_ID {
            fields.push(WarpField::identity(grid.len()));
        } else {
            fields.push(WarpField::from_values(id, grid, values, params)?);
        }
    }
    Ok(WarpSet::new(fields))
}

pub fn fit_file_name(spec: &ModelSpec) -> String {
    format!("fit_{}_{}.csv", spec.l, spec.warp_id)
}

pub fn write_fit(path: &Path, fit: &ModelFit) -> Result<()> {
    let meta = vec![
        ("family".to_string(), fit.spec.family.code().to_string()),
        ("warp_id".to_string(), fit.spec.warp_id.clone()),
        ("l".to_string(), fit.spec.l.to_string()),
        ("j".to_string(), fit.spec.j.to_string()),
        ("seed".to_string(), fit.seed.to_string()),
        ("n_iter".to_string(), fit.n_iter.to_string()),
        ("burn_in".to_string(), fit.burn_in.to_string()),
        ("thin".to_string(), fit.thin.to_string()),
        ("acc_phi".to_string(), s(fit.acceptance.phi)),
        ("acc_sigma2_s".to_string(), s(fit.acceptance.sigma2_s)),
        ("acc_sigma_ratio".to_string(), s(fit.acceptance.sigma_ratio)),
        ("ig_convention".to_string(), "shape-scale".to_string()),
    ];
    let mut w = csv_writer(path, &meta, &["iter", "phi", "sigma2_s", "sigma_ratio", "loglik", "logprior"])?;
    for k in 0..fit.len() {
        let d = fit.draws[k];
        row(
            path,
            &mut w,
            [
                k.to_string(),
                s(d.phi),
                s(d.sigma2_s),
                s(d.sigma_ratio),
                s(fit.loglik[k]),
                s(fit.logprior[k]),
            ],
        )?;
    }
    finish(path, w)
}

pub fn read_fit(path: &Path, prior: &PriorConfig) -> Result<ModelFit> {
    let (meta, _, recs) = read_table(path)?;
    let family: KernelFamily = meta
        .get("family")
        .ok_or_else(|| FmmError::Parse {
            row: 1,
            message: format!("{}: missing family", path.display()),
        })?
        .parse()?;
    let warp_id = meta.get("warp_id").cloned().unwrap_or_default();
    let j = meta_num(path, &meta, "j")? as usize;
    let mut fit = ModelFit {
        spec: ModelSpec::new(family, warp_id, j),
        draws: Vec::with_capacity(recs.len()),
        phi_index: Vec::with_capacity(recs.len()),
        loglik: Vec::with_capacity(recs.len()),
        logprior: Vec::with_capacity(recs.len()),
        acceptance: Acceptance {
            phi: meta_num(path, &meta, "acc_phi")?,
            sigma2_s: meta_num(path, &meta, "acc_sigma2_s")?,
            sigma_ratio: meta_num(path, &meta, "acc_sigma_ratio")?,
        },
        seed: meta.get("seed").and_then(|v| v.parse().ok()).unwrap_or(0),
        n_iter: meta_num(path, &meta, "n_iter")? as usize,
        burn_in: meta_num(path, &meta, "burn_in")? as usize,
        thin: meta_num(path, &meta, "thin")? as usize,
    };
    for r in &recs {
        let phi = num(path, r, 1)?;
        let idx = if family.is_phi_free() {
            0
        } else {
            prior
                .phi_grid
                .iter()
                .position(|g| *g == phi)
                .ok_or_else(|| FmmError::Parse {
                    row: r.position().map(|p| p.line() as usize).unwrap_or(0),
                    message: format!("{}: φ={phi} is not on the prior grid", path.display()),
                })?
        };
        fit.draws.push(Draw {
            phi,
            sigma2_s: num(path, r, 2)?,
            sigma_ratio: num(path, r, 3)?,
        });
        fit.phi_index.push(idx);
        fit.loglik.push(num(path, r, 4)?);
        fit.logprior.push(num(path, r, 5)?);
    }
    Ok(fit)
}

pub fn write_model_probs(path: &Path, result: &BmaResult, warps: &WarpSet) -> Result<()> {
    let mut w = csv_writer(path, &[], &["l", "family", "warp_id", "sigma_w", "phi_w", "prob"])?;
    for (m, p) in result.models.iter().zip(&result.model_probs) {
        let params = warps.get(&m.warp_id).and_then(|wf| wf.params);
        let (sw, pw) = params.map(|p| (s(p.sigma_w), s(p.phi_w))).unwrap_or_default();
        row(
            path,
            &mut w,
            [m.l.to_string(), m.family.code().to_string(), m.warp_id.clone(), sw, pw, s(*p)],
        )?;
    }
    finish(path, w)
}

pub fn write_kernel_probs(path: &Path, result: &BmaResult) -> Result<()> {
    let mut w = csv_writer(path, &[], &["family", "prob"])?;
    for f in KernelFamily::ALL {
        if let Some(p) = result.kernel_probs.get(&f) {
            row(path, &mut w, [f.code().to_string(), s(*p)])?;
        }
    }
    finish(path, w)
}

pub fn write_model_chain(path: &Path, result: &BmaResult) -> Result<()> {
    let mut w = csv_writer(path, &[], &["iter", "model", "draw"])?;
    for (i, (m, d)) in result.model_chain.iter().zip(&result.draw_index).enumerate() {
        row(path, &mut w, [i.to_string(), m.to_string(), d.to_string()])?;
    }
    finish(path, w)
}

/// Models and probabilities from `model_probs.csv`; warp ids are resolved in `warps`.
pub fn read_model_probs(path: &Path, warps: &WarpSet) -> Result<(Vec<ModelSpec>, Vec<f64>)> {
    let (_, _, records) = read_table(path)?;
    let mut models = Vec::with_capacity(records.len());
    let mut probs = Vec::with_capacity(records.len());
    for r in &records {
        let family: KernelFamily = r.get(1).unwrap_or("").parse()?;
        let id = r.get(2).unwrap_or("");
        let j = warps
            .fields
            .iter()
            .position(|w| w.id == id)
            .ok_or_else(|| FmmError::Unknown(format!("warp id {id} in {}", path.display())))?;
        models.push(ModelSpec::new(family, id, j));
        probs.push(num(path, r, 5)?);
    }
    Ok((models, probs))
}

/// `(model, draw)` pairs from `model_chain.csv`.
pub fn read_model_chain(path: &Path) -> Result<Vec<(usize, usize)>> {
    let (_, _, records) = read_table(path)?;
    records
        .iter()
        .map(|r| Ok((num(path, r, 1)? as usize, num(path, r, 2)? as usize)))
        .collect()
}

/// Two-column `t, value` series (warp derivatives, probabilities over time).
pub fn write_series(path: &Path, header: [&str; 2], t: &[f64], v: &[f64]) -> Result<()> {
    let mut w = csv_writer(path, &[], &header)?;
    for (a, b) in t.iter().zip(v) {
        row(path, &mut w, [s(*a), s(*b)])?;
    }
    finish(path, w)
}

fn to_raw(p: [f64; 2], t: f64, std: Option<&Standardization>) -> (f64, [f64; 2]) {
    match std {
        Some(st) => (st.time_from_unit(t), st.position_to_raw(p)),
        None => (t, p),
    }
}

/// Path draws as `draw,t,x,y` plus a summary file; raw units when `std` is given.
pub fn write_paths(path: &Path, summary_path: &Path, paths: &PathDraws, std: Option<&Standardization>) -> Result<()> {
    let mut w = csv_writer(path, &[], &["draw", "t", "x", "y"])?;
    for (r, d) in paths.draws.iter().enumerate() {
        for (t, p) in paths.query_times.iter().zip(d) {
            let (tt, pp) = to_raw(*p, *t, std);
            row(path, &mut w, [r.to_string(), s(tt), s(pp[0]), s(pp[1])])?;
        }
    }
    finish(path, w)?;
    let mut w = csv_writer(
        summary_path,
        &[("level".to_string(), "0.95".to_string())],
        &["t", "mean_x", "lo_x", "hi_x", "mean_y", "lo_y", "hi_y"],
    )?;
    for rowv in summarize_paths(paths, 0.95) {
        let (t, mean) = to_raw(rowv.mean, rowv.t, std);
        let (_, lo) = to_raw(rowv.lo, rowv.t, std);
        let (_, hi) = to_raw(rowv.hi, rowv.t, std);
        row(
            summary_path,
            &mut w,
            [s(t), s(mean[0]), s(lo[0]), s(hi[0]), s(mean[1]), s(lo[1]), s(hi[1])],
        )?;
    }
    finish(summary_path, w)
}

/// Path draws written by [`write_paths`] without a standardization.
pub fn read_paths(path: &Path) -> Result<PathDraws> {
    let (_, _, records) = read_table(path)?;
    let mut query_times = Vec::new();
    let mut draws: Vec<Vec<[f64; 2]>> = Vec::new();
    for r in &records {
        let d = num(path, r, 0)? as usize;
        if d == draws.len() {
            draws.push(Vec::new());
        } else if d + 1 != draws.len() {
            return Err(FmmError::Parse {
                row: r.position().map(|p| p.line() as usize).unwrap_or(0),
                message: format!("{}: draws out of order", path.display()),
            });
        }
        if d == 0 {
            query_times.push(num(path, r, 1)?);
        }
        draws[d].push([num(path, r, 2)?, num(path, r, 3)?]);
    }
    if draws.iter().any(|d| d.len() != query_times.len()) {
        return Err(FmmError::Parse {
            row: 0,
            message: format!("{}: draws have unequal lengths", path.display()),
        });
    }
    let source = (0..draws.len()).map(|r| (0, r)).collect();
    Ok(PathDraws {
        query_times,
        draws,
        source,
    })
}

pub fn write_variogram(path: &Path, v: &Variogram) -> Result<()> {
    let meta = vec![
        ("bins".to_string(), v.bins().to_string()),
        ("max_lag".to_string(), s(v.max_lag)),
        ("estimator".to_string(), "classical".to_string()),
    ];
    let mut w = csv_writer(path, &meta, &["lag", "semivariance", "count", "lo", "hi"])?;
    for b in 0..v.bins() {
        let (lo, hi) = match &v.envelope {
            Some(e) if v.semivariance[b].is_some() => (s(e[b].0), s(e[b].1)),
            _ => (String::new(), String::new()),
        };
        row(
            path,
            &mut w,
            [
                s(v.lag_centers[b]),
                v.semivariance[b].map(s).unwrap_or_default(),
                v.counts[b].to_string(),
                lo,
                hi,
            ],
        )?;
    }
    finish(path, w)
}

/// Row-major basis dump with a one-line header.
pub fn write_basis(path: &Path, basis: &BasisMatrix) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| FmmError::io(path, e);
    writeln!(
        out,
        "# family={} phi={} warp_id={} n={} m={}",
        basis.kernel.family.code(),
        basis.kernel.phi,
        basis.warp_id,
        basis.nrows(),
        basis.ncols()
    )
    .map_err(io)?;
    for i in 0..basis.nrows() {
        let line: Vec<String> = basis.h.row(i).iter().map(|v| s(*v)).collect();
        writeln!(out, "{}", line.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Files written for a simulation, in write order.
pub fn write_sim_output(dir: &Path, out: &SimOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| FmmError::io(dir, e))?;
    let track = dir.join("track.csv");
    write_track(&track, &out.track.to_records())?;

    let truth = dir.join("truth_path.csv");
    let mut w = csv_writer(&truth, &[], &["t", "x", "y"])?;
    for (t, p) in out.truth_times.iter().zip(&out.truth_path) {
        row(&truth, &mut w, [s(*t), s(p[0]), s(p[1])])?;
    }
    finish(&truth, w)?;

    let params = dir.join("truth_params.csv");
    let tp = out.truth_params;
    let mut w = csv_writer(
        &params,
        &[
            ("seed".to_string(), out.seed.to_string()),
            ("observation_design".to_string(), "regular grid with interior thinning".to_string()),
            ("mu0".to_string(), "0;0".to_string()),
        ],
        &["param", "value"],
    )?;
    row(&params, &mut w, ["family".to_string(), tp.family.code().to_string()])?;
    row(&params, &mut w, ["phi".to_string(), s(tp.phi)])?;
    row(&params, &mut w, ["sigma2_s".to_string(), s(tp.sigma2_s)])?;
    row(&params, &mut w, ["sigma2".to_string(), s(tp.sigma2)])?;
    row(&params, &mut w, ["sigma_ratio".to_string(), s(tp.sigma_ratio())])?;
    row(&params, &mut w, ["warp_id".to_string(), out.warp_truth.id.clone()])?;
    finish(&params, w)?;

    let warp = dir.join("truth_warp.csv");
    write_series(&warp, ["t", "w"], &out.warp_truth.grid_times, &out.warp_truth.values)?;
    let deriv = dir.join("truth_warp_derivative.csv");
    write_series(&deriv, ["t", "dwdt"], &out.warp_truth.grid_times, &out.warp_truth.derivative)?;
    Ok(vec![track, truth, params, warp, deriv])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_track, standardize};
    use crate::kernels::{build_basis, KernelSpec, KnotGrid};
    use crate::warp::{build_candidate_set, CandidateConfig};

    #[test]
    fn warp_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CandidateConfig {
            sigma_values: vec![0.01, 0.02],
            phi_values: vec![0.5, 0.6],
            per_combo: 2,
            max_attempts: 10,
            grid_len: 101,
        };
        let set = build_candidate_set(&cfg, 1).unwrap().warps;
        write_warp_set(dir.path(), &set).unwrap();
        let back = read_warp_set(dir.path()).unwrap();
        assert_eq!(back.fields, set.fields);
    }

    #[test]
    fn fit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let prior = PriorConfig::default();
        let fit = ModelFit {
            spec: ModelSpec::new(KernelFamily::Gaussian, "c001_002", 7),
            draws: vec![
                Draw { phi: prior.phi_grid[3], sigma2_s: 0.0012345678901234, sigma_ratio: 3.3 },
                Draw { phi: prior.phi_grid[99], sigma2_s: 1e-5, sigma_ratio: 0.1 },
            ],
            phi_index: vec![3, 99],
            loglik: vec![-1234.5678, 17.25],
            logprior: vec![-3.0, -4.0 / 3.0],
            acceptance: Acceptance { phi: 0.25, sigma2_s: 0.4, sigma_ratio: 1.0 / 3.0 },
            seed: u64::MAX,
            n_iter: 2000,
            burn_in: 400,
            thin: 1,
        };
        let path = dir.path().join(fit_file_name(&fit.spec));
        write_fit(&path, &fit).unwrap();
        assert_eq!(read_fit(&path, &prior).unwrap(), fit);
    }

    #[test]
    fn track_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            TelemetryRecord { time: 0.0, x: 1.5, y: -2.0 },
            TelemetryRecord { time: 10.0, x: 2.5, y: -1.0 },
            TelemetryRecord { time: 25.0, x: 0.1, y: 3.0 },
        ];
        let path = dir.path().join("t.csv");
        write_track(&path, &recs).unwrap();
        assert_eq!(load_track(&path).unwrap(), recs);
        standardize(&recs).unwrap();
    }

    #[test]
    fn basis_dump_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let b = build_basis(
            &[0.0, 0.5, 1.0],
            &KnotGrid::new(4).unwrap(),
            &KernelSpec::new(KernelFamily::Bm, 0.0).unwrap(),
            &WarpField::identity(401),
        )
        .unwrap();
        let path = dir.path().join("b.csv");
        write_basis(&path, &b).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# family=BM phi=0 warp_id=identity n=3 m=4");
        assert_eq!(lines.next().unwrap(), "1,0,0,0");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn paths_and_chain_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let paths = PathDraws {
            query_times: vec![0.0, 0.25, 1.0],
            draws: vec![
                vec![[0.0, 1.0], [0.5, -0.25], [1.0 / 3.0, 2.0]],
                vec![[1e-9, 0.0], [7.0, 8.0], [-1.0, 0.125]],
            ],
            source: vec![(0, 0), (0, 1)],
        };
        let p = dir.path().join("p.csv");
        write_paths(&p, &dir.path().join("s.csv"), &paths, None).unwrap();
        assert_eq!(read_paths(&p).unwrap(), paths);

        let warps = WarpSet::new(vec![WarpField::identity(101)]);
        let result = BmaResult {
            models: vec![
                ModelSpec::new(KernelFamily::Gaussian, IDENTITY_ID, 0),
                ModelSpec::new(KernelFamily::Bm, IDENTITY_ID, 0),
            ],
            model_probs: vec![0.75, 0.25],
            kernel_probs: BTreeMap::new(),
            model_chain: vec![0, 0, 1, 0],
            draw_index: vec![3, 4, 5, 6],
            n_rj_iter: 4,
        };
        let mp = dir.path().join("mp.csv");
        let mc = dir.path().join("mc.csv");
        write_model_probs(&mp, &result, &warps).unwrap();
        write_model_chain(&mc, &result).unwrap();
        let (models, probs) = read_model_probs(&mp, &warps).unwrap();
        assert_eq!(models, result.models);
        assert_eq!(probs, result.model_probs);
        assert_eq!(read_model_chain(&mc).unwrap(), vec![(0, 3), (0, 4), (1, 5), (0, 6)]);
    }
}
