//! Seeded simulation checks against analytic covariances and warp behavior.

use fmm_core::kernels::{build_basis, KernelFamily, KernelSpec, KnotGrid};
use fmm_core::sim::{simulate, simulate_warped_experiment, SimConfig};
use fmm_core::warp::WarpField;

fn bm_config(seed: u64, m: usize) -> SimConfig {
    SimConfig {
        n_obs: 10,
        kernel: KernelSpec::new(KernelFamily::Bm, 0.0).unwrap(),
        m_knots: m,
        sigma2_s: 0.001,
        sigma2: 0.01,
        ..SimConfig::stationary(seed)
    }
}

/// Replicate BM paths have covariance σ²·#{knots ≤ min(s, t)}, the knot-sum
/// form of σ²·min(s, t).
#[test]
fn bm_replicates_match_knot_count_covariance() {
    let m = 400;
    let reps = 10_000;
    let (i03, i07) = (300, 700);
    let mut a = Vec::with_capacity(reps);
    let mut b = Vec::with_capacity(reps);
    for r in 0..reps {
        let out = simulate(&bm_config(r as u64, m)).unwrap();
        assert_eq!(out.truth_times[i03], 0.3);
        assert_eq!(out.truth_times[i07], 0.7);
        a.push(out.truth_path[i03][0]);
        b.push(out.truth_path[i07][0]);
    }
    let knots = KnotGrid::new(m).unwrap();
    let below = knots.knots.iter().filter(|&&k| k <= 0.3).count() as f64;
    let expected = 0.01 * below;

    let ma = a.iter().sum::<f64>() / reps as f64;
    let mb = b.iter().sum::<f64>() / reps as f64;
    let prods: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let cov = prods.iter().sum::<f64>() / (reps - 1) as f64;
    let var_prod = prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var_prod / reps as f64).sqrt();
    assert!((cov - expected).abs() < 3.0 * se, "cov {cov} expected {expected} se {se}");
    // The knot count tracks min(s, t) on the knot scale.
    assert!((below * knots.spacing - 0.3).abs() <= knots.spacing);
}

#[test]
fn dense_bm_basis_reproduces_min_covariance() {
    let knots = KnotGrid::new(2000).unwrap();
    let times = [0.1, 0.25, 0.5, 0.9];
    let basis = build_basis(&times, &knots, &KernelSpec::new(KernelFamily::Bm, 0.0).unwrap(), &WarpField::identity(401)).unwrap();
    let gram = &basis.h * basis.h.transpose() * knots.spacing;
    for i in 0..times.len() {
        for k in 0..times.len() {
            let exact = times[i].min(times[k]);
            assert!((gram[(i, k)] - exact).abs() <= 2.0 * knots.spacing);
        }
    }
}

fn mean_sq_second_diff(p: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for i in 1..p.len() - 1 {
        for c in 0..2 {
            let d = p[i + 1][c] - 2.0 * p[i][c] + p[i - 1][c];
            s += d * d;
        }
    }
    s / (p.len() - 2) as f64
}

/// Where the warp runs fast, the path covers more warped time per unit of
/// real time, so its second differences on a uniform grid are larger.
#[test]
fn expanded_stretch_is_rougher_per_unit_time() {
    let seeds = 0..20u64;
    let mut rougher = 0;
    for seed in seeds.clone() {
        let out = simulate_warped_experiment(seed).unwrap();
        let w = &out.warp_truth;
        let mut thirds: Vec<(f64, f64)> = (0..3)
            .map(|k| {
                let (a, b) = (k * 333, k * 333 + 334);
                let (t0, t1) = (out.truth_times[a], out.truth_times[b - 1]);
                let d: Vec<f64> = w
                    .grid_times
                    .iter()
                    .zip(&w.derivative)
                    .filter(|(t, _)| **t >= t0 && **t <= t1)
                    .map(|(_, d)| *d)
                    .collect();
                let mean_d = d.iter().sum::<f64>() / d.len() as f64;
                (mean_d, mean_sq_second_diff(&out.truth_path[a..b]))
            })
            .collect();
        thirds.sort_by(|a, b| a.0.total_cmp(&b.0));
        if thirds[2].1 > thirds[0].1 {
            rougher += 1;
        }
    }
    assert!(rougher >= 18, "expanded third rougher in {rougher}/20 seeds");
}

#[test]
fn warped_scenario_is_reproducible_and_monotone() {
    let a = simulate_warped_experiment(3).unwrap();
    let b = simulate_warped_experiment(3).unwrap();
    assert_eq!(a.track, b.track);
    assert_eq!(a.warp_truth, b.warp_truth);
    assert!(a.warp_truth.values.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(a.track.len(), 300);
}
