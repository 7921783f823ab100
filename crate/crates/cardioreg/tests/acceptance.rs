//! End-to-end acceptance suite.
//!
//! Runs one check per numbered criterion, prints a single PASS/FAIL line for
//! each, and exits nonzero if any failed. Criteria 1-5 exercise the library
//! directly against independent oracles; criteria 6-11 drive the CLI binary
//! on synthetic datasets and check the emitted artifacts.
//!
//! This is a `harness = false` test so the per-criterion report always
//! prints, in order, even on failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use cardioreg::metrics;
use cardioreg::objective::{sjac_loss, total_loss, LossWeights};
use cardioreg::phantom::{self, PhantomSpec};
use cardioreg::pipeline::{self, RegConfig};
use cardioreg::sdf::signed_distance_field;
use cardioreg::siren::SirenModel;
use cardioreg::volume::{Grid3, NormFrame};

const BIN: &str = env!("CARGO_BIN_EXE_cardioreg");

fn main() {
    cardioreg::linalg::reexec_with_tuned_blas();

    let work = tempfile::TempDir::new().expect("create work dir");
    let criteria: Vec<(u32, &str, Box<dyn FnOnce(&Path) -> Result<String, String>>)> = vec![
        (1, "full-loss parameter gradients vs finite differences", Box::new(|_| criterion_1())),
        (2, "spatial Jacobian vs finite differences", Box::new(|_| criterion_2())),
        (3, "signed distance field vs brute force", Box::new(|_| criterion_3())),
        (4, "Jacobian regularizer value table", Box::new(|_| criterion_4())),
        (5, "self-registration stability", Box::new(|_| criterion_5())),
        (6, "phantom cycle accuracy, both modes", Box::new(criterion_6)),
        (7, "DSC ordering over alpha", Box::new(criterion_7)),
        (8, "twist phantom: SDF+CT beats SDF-only TRE", Box::new(criterion_8)),
        (9, "twist phantom: sequential error accumulation", Box::new(criterion_9)),
        (10, "bitwise determinism of full runs", Box::new(criterion_10)),
        (11, "pipeline shape: 19 checkpoints and metric rows", Box::new(criterion_11)),
    ];

    let mut failures = 0;
    for (n, title, f) in criteria {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(work.path())));
        let line = match outcome {
            Ok(Ok(detail)) => format!("criterion {n}: PASS — {title}: {detail}"),
            Ok(Err(reason)) => {
                failures += 1;
                format!("criterion {n}: FAIL — {title}: {reason}")
            }
            Err(p) => {
                failures += 1;
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                format!("criterion {n}: FAIL — {title}: panicked: {msg}")
            }
        };
        println!("{line} [{:.1}s]", t0.elapsed().as_secs_f64());
    }

    if failures > 0 {
        eprintln!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn random_grid(dims: [usize; 3], spacing: [f64; 3], seed: u64, lo: f64, hi: f64) -> Grid3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims[0] * dims[1] * dims[2];
    let values = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Grid3::new(dims, spacing, [0.0; 3], values).unwrap()
}

fn interior_points(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, 3), |_| rng.gen_range(-0.6..0.6))
}

/// Tiny f64 model with every parameter nonzero (the output layer starts at
/// zero, which would make gradient and Jacobian checks trivial).
fn perturbed_model(seed: u64) -> SirenModel<f64> {
    let mut model = SirenModel::<f64>::init(seed, 2, 8, 30.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let params: Vec<f64> = model
        .flat_params()
        .iter()
        .map(|&p| if p == 0.0 { rng.gen_range(-0.05..0.05) } else { p })
        .collect();
    model.set_flat_params(&params).unwrap();
    model
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN)
        .args(args)
        .output()
        .map_err(|e| format!("spawn {BIN}: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`cardioreg {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// Data rows of a CSV written by the CLI (comment and header stripped),
/// split into fields.
fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect())
}

struct PairRow {
    dsc: f64,
    hd95: f64,
    njf: f64,
}

fn read_metrics(regdir: &Path) -> Result<Vec<PairRow>, String> {
    csv_rows(&regdir.join("metrics.csv"))?
        .iter()
        .map(|r| {
            if r.len() != 6 {
                return Err(format!("metrics.csv: bad row {r:?}"));
            }
            Ok(PairRow {
                dsc: r[3].parse().map_err(|e| format!("dsc: {e}"))?,
                hd95: r[4].parse().map_err(|e| format!("hd95: {e}"))?,
                njf: r[5].parse().map_err(|e| format!("neg_jac_fraction: {e}"))?,
            })
        })
        .collect()
}

/// Per-frame mean TRE rows of tre.csv, keyed by frame index.
fn read_mean_tre(regdir: &Path) -> Result<BTreeMap<usize, f64>, String> {
    let mut out = BTreeMap::new();
    for r in csv_rows(&regdir.join("tre.csv"))? {
        if r.len() == 4 && r[0] == "mean" {
            let frame: usize = r[1].parse().map_err(|e| format!("frame: {e}"))?;
            let tre: f64 = r[3].parse().map_err(|e| format!("tre: {e}"))?;
            out.insert(frame, tre);
        }
    }
    if out.is_empty() {
        return Err(format!("{}: no mean TRE rows", regdir.join("tre.csv").display()));
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------- criterion 1: dL/dtheta

fn criterion_1() -> Result<String, String> {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let dims = [16, 16, 16];
        let spacing = [1.0, 1.0, 2.0];
        let source_ct = random_grid(dims, spacing, seed * 11 + 1, -100.0, 300.0);
        let source_sdf = random_grid(dims, spacing, seed * 11 + 2, -10.0, 10.0);
        let target_ct = random_grid(dims, spacing, seed * 11 + 3, -100.0, 300.0);
        let target_sdf = random_grid(dims, spacing, seed * 11 + 4, -10.0, 10.0);
        let frame = NormFrame::from_grid(&target_ct);
        let pts = interior_points(24, seed * 11 + 5);
        let w = LossWeights::new(0.8, 0.05, 10.0).unwrap();
        let model = perturbed_model(seed);

        let loss_of = |m: &SirenModel<f64>| -> f64 {
            let (u, mut tape) = m.forward(&pts);
            let jac = m.spatial_jacobian(&mut tape);
            total_loss(&pts, &u, &jac, &source_ct, &source_sdf, &target_ct, &target_sdf, &frame, &w)
                .unwrap()
                .0
        };

        let (u, mut tape) = model.forward(&pts);
        let jac = model.spatial_jacobian(&mut tape);
        let (_, dl_du, dl_dj) =
            total_loss(&pts, &u, &jac, &source_ct, &source_sdf, &target_ct, &target_sdf, &frame, &w)
                .map_err(|e| e.to_string())?;
        let g = model.backward(&tape, &dl_du, Some(&dl_dj)).unwrap().flatten();

        let h = 1e-6;
        let g_max = g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut m = model.clone();
        let base = m.flat_params();
        for i in 0..base.len() {
            let mut pp = base.clone();
            pp[i] += h;
            m.set_flat_params(&pp).unwrap();
            let lp = loss_of(&m);
            pp[i] = base[i] - h;
            m.set_flat_params(&pp).unwrap();
            let lm = loss_of(&m);
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1e-6 * g_max.max(1e-9));
            worst = worst.max((g[i] - fd).abs() / denom);
        }
    }
    if worst <= 1e-4 {
        Ok(format!("max rel err {worst:.2e} over 10 seeds (tol 1e-4)"))
    } else {
        Err(format!("max rel err {worst:.2e} exceeds 1e-4"))
    }
}

// ------------------------------------------------ criterion 2: dPhi/dx

fn criterion_2() -> Result<String, String> {
    let mut worst = 0.0f64;
    let h = 1e-6;
    for seed in 0..10u64 {
        let model = perturbed_model(seed + 50);
        let pts = interior_points(100, seed + 60);
        let (_, mut tape) = model.forward(&pts);
        let jac = model.spatial_jacobian(&mut tape);
        for p in 0..pts.nrows() {
            for d in 0..3 {
                let mut xp = pts.row(p).to_owned().insert_axis(ndarray::Axis(0));
                xp[[0, d]] += h;
                let (up, _) = model.forward(&xp);
                xp[[0, d]] = pts[[p, d]] - h;
                let (um, _) = model.forward(&xp);
                for i in 0..3 {
                    let fd = (up[[0, i]] - um[[0, i]]) / (2.0 * h);
                    let analytic = jac[p][i][d] - if i == d { 1.0 } else { 0.0 };
                    let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-3);
                    worst = worst.max(rel);
                }
            }
        }
    }
    if worst <= 1e-6 {
        Ok(format!("max rel err {worst:.2e} over 10 models x 100 points (tol 1e-6)"))
    } else {
        Err(format!("max rel err {worst:.2e} exceeds 1e-6"))
    }
}

// ------------------------------------------------ criterion 3: SDF oracle

fn brute_force_sdf(mask: &Grid3) -> Vec<f64> {
    let [nx, ny, nz] = mask.dims();
    let sp = mask.spacing();
    let mut out = vec![0.0; mask.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = mask.index(i, j, k);
                let inside = mask.is_set(idx);
                let mut best = f64::INFINITY;
                for kk in 0..nz {
                    for jj in 0..ny {
                        for ii in 0..nx {
                            if mask.is_set(mask.index(ii, jj, kk)) == inside {
                                continue;
                            }
                            let dx = (ii as f64 - i as f64) * sp[0];
                            let dy = (jj as f64 - j as f64) * sp[1];
                            let dz = (kk as f64 - k as f64) * sp[2];
                            best = best.min(dx * dx + dy * dy + dz * dz);
                        }
                    }
                }
                out[idx] = if inside { -best.sqrt() } else { best.sqrt() };
            }
        }
    }
    out
}

fn criterion_3() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let dims = [
            rng.gen_range(3..=12usize),
            rng.gen_range(3..=12usize),
            rng.gen_range(3..=12usize),
        ];
        let spacing = if case % 2 == 0 { [1.0, 1.0, 2.0] } else { [1.0, 1.0, 1.0] };
        let density = rng.gen_range(0.1..0.9);
        let mut m = Grid3::zeros(dims, spacing, [0.0; 3]).unwrap();
        for v in m.values_mut() {
            *v = if rng.gen_bool(density) { 1.0 } else { 0.0 };
        }
        // the SDF is undefined for empty or full masks; pin one voxel of each class
        let n = m.len();
        m.values_mut()[0] = 1.0;
        m.values_mut()[n - 1] = 0.0;

        let got = signed_distance_field(&m).map_err(|e| e.to_string())?;
        let want = brute_force_sdf(&m);
        for (g, w) in got.values().iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    if worst <= 1e-6 {
        Ok(format!("max abs err {worst:.2e} mm over 20 masks (tol 1e-6 mm)"))
    } else {
        Err(format!("max abs err {worst:.2e} mm exceeds 1e-6 mm"))
    }
}

// ------------------------------------------- criterion 4: regularizer table

fn criterion_4() -> Result<String, String> {
    let diag = |d: f64| {
        let mut j = [[0.0; 3]; 3];
        j[0][0] = d;
        j[1][1] = 1.0;
        j[2][2] = 1.0;
        j
    };
    let cases = [(1.0, 0.0), (2.0, 0.5), (-0.01, 10.0)];
    for (det, want) in cases {
        let (got, _) = sjac_loss(&diag(det), 10.0);
        if (got - want).abs() > 1e-12 {
            return Err(format!("det {det}: loss {got}, expected {want}"));
        }
    }
    Ok("det {1, 2, -0.01} -> loss {0, 0.5, 10 clipped} with tau=10".into())
}

// ------------------------------------- criterion 5: self-registration

fn criterion_5() -> Result<String, String> {
    let spec = PhantomSpec { frames: 2, ..PhantomSpec::default() };
    let (frames, _) = phantom::generate(&spec).map_err(|e| e.to_string())?;
    let cfg = RegConfig {
        weights: LossWeights::new(0.0, 0.05, 10.0).unwrap(),
        epochs_first: 200,
        ..RegConfig::default()
    };
    let reg = pipeline::register_pair(&frames[0], &frames[0], &cfg, None).map_err(|e| e.to_string())?;
    let mean_u = pipeline::mean_displacement_mm(&reg, &frames[0].sample_mask, 10_000, 0)
        .map_err(|e| e.to_string())?;
    let njf = metrics::neg_jac_fraction(&reg, &frames[0].sample_mask, 10_000, 0)
        .map_err(|e| e.to_string())?;
    if mean_u <= 0.5 && njf == 0.0 {
        Ok(format!("mean |u| {mean_u:.3} mm (tol 0.5), neg-Jacobian fraction {njf}"))
    } else {
        Err(format!("mean |u| {mean_u:.3} mm (tol 0.5), neg-Jacobian fraction {njf} (must be 0)"))
    }
}

// ------------------------------- criteria 6-11: full runs through the CLI

fn ds20(work: &Path) -> PathBuf {
    work.join("ds20")
}

/// Lazily generates the 20-frame contracting phantom and trains the two
/// alpha=1.0 runs shared by criteria 6, 10, and 11.
///
/// The CT channel gets heavy noise (sigma 30 against a 150-200 HU wall
/// contrast) so that the image term is genuinely imperfect, as in real
/// scans; masks and SDFs derive from the analytic geometry, so runs with
/// alpha=1.0 are unaffected by the noise level.
fn ensure_main_runs(work: &Path) -> Result<(), String> {
    let ds = ds20(work);
    if !ds.exists() {
        run_cli(&[
            "phantom",
            ds.to_str().unwrap(),
            "--frames",
            "20",
            "--noise",
            "30",
            "--seed",
            "0",
        ])?;
    }
    for mode in ["sequential", "nonsequential"] {
        let out = work.join(format!("run_{mode}_a100"));
        if out.exists() {
            continue;
        }
        run_cli(&[
            "register",
            ds.to_str().unwrap(),
            out.to_str().unwrap(),
            "--mode",
            mode,
            "--alpha",
            "1.0",
            "--epochs-first",
            "500",
            "--epochs-rest",
            "300",
            "--seed",
            "0",
        ])?;
        run_cli(&["evaluate", ds.to_str().unwrap(), out.to_str().unwrap()])?;
    }
    Ok(())
}

fn criterion_6(work: &Path) -> Result<String, String> {
    ensure_main_runs(work)?;
    let mut report = Vec::new();
    for mode in ["sequential", "nonsequential"] {
        let rows = read_metrics(&work.join(format!("run_{mode}_a100")))?;
        let mean_dsc = mean(&rows.iter().map(|r| r.dsc).collect::<Vec<_>>());
        let mean_hd = mean(&rows.iter().map(|r| r.hd95).collect::<Vec<_>>());
        let max_njf = rows.iter().map(|r| r.njf).fold(0.0f64, f64::max);
        if mean_dsc < 0.95 {
            return Err(format!("{mode}: mean DSC {mean_dsc:.4} < 0.95"));
        }
        if mean_hd > 4.0 {
            return Err(format!("{mode}: mean HD95 {mean_hd:.3} mm > 4 mm"));
        }
        if max_njf > 0.01 {
            return Err(format!("{mode}: worst neg-Jacobian fraction {max_njf} > 0.01"));
        }
        report.push(format!(
            "{mode} DSC {mean_dsc:.4}, HD95 {mean_hd:.2} mm, worst njf {max_njf:.4}"
        ));
    }
    Ok(report.join("; "))
}

fn criterion_7(work: &Path) -> Result<String, String> {
    ensure_main_runs(work)?;
    let ds = ds20(work);
    let mut dsc = BTreeMap::new();
    for (tag, alpha) in [("a000", "0.0"), ("a080", "0.8")] {
        let out = work.join(format!("run_sequential_{tag}"));
        if !out.exists() {
            run_cli(&[
                "register",
                ds.to_str().unwrap(),
                out.to_str().unwrap(),
                "--mode",
                "sequential",
                "--alpha",
                alpha,
                "--epochs-first",
                "500",
                "--epochs-rest",
                "300",
                "--seed",
                "0",
            ])?;
            run_cli(&["evaluate", ds.to_str().unwrap(), out.to_str().unwrap()])?;
        }
        let rows = read_metrics(&out)?;
        dsc.insert(tag, mean(&rows.iter().map(|r| r.dsc).collect::<Vec<_>>()));
    }
    let rows = read_metrics(&work.join("run_sequential_a100"))?;
    let d100 = mean(&rows.iter().map(|r| r.dsc).collect::<Vec<_>>());
    let d000 = dsc["a000"];
    let d080 = dsc["a080"];
    let detail = format!("mean DSC: alpha 0.0 -> {d000:.4}, 0.8 -> {d080:.4}, 1.0 -> {d100:.4}");
    if d000 < d080 && d080 <= d100 + 0.01 {
        Ok(detail)
    } else {
        Err(format!("{detail}; expected DSC(0.0) < DSC(0.8) <= DSC(1.0) + 0.01"))
    }
}

// Twist-phantom runs for criteria 8 and 9. A rotationally symmetric shell
// has a twist-invariant SDF, so the tangential motion is only visible to the
// CT channel through the wall texture; SDF-only (alpha=1.0) training cannot
// recover it. These use a smaller network/budget than criterion 6 because
// nine runs are needed; the comparisons are all within this configuration.
const TWIST_SEEDS: [u64; 3] = [1, 2, 3];
const TWIST_FRAMES: usize = 10;

fn twist_run(work: &Path, mode: &str, alpha: &str, seed: u64) -> Result<PathBuf, String> {
    let ds = work.join("ds_twist");
    if !ds.exists() {
        run_cli(&[
            "phantom",
            ds.to_str().unwrap(),
            "--twist",
            "15",
            "--frames",
            &TWIST_FRAMES.to_string(),
            "--seed",
            "0",
        ])?;
    }
    let out = work.join(format!("twist_{mode}_a{alpha}_s{seed}"));
    if !out.exists() {
        run_cli(&[
            "register",
            ds.to_str().unwrap(),
            out.to_str().unwrap(),
            "--mode",
            mode,
            "--alpha",
            alpha,
            "--hidden-layers",
            "3",
            "--width",
            "128",
            "--batch",
            "5000",
            "--epochs-first",
            "400",
            "--epochs-rest",
            "250",
            "--lr",
            "3e-5",
            "--seed",
            &seed.to_string(),
        ])?;
        run_cli(&[
            "evaluate",
            ds.to_str().unwrap(),
            out.to_str().unwrap(),
            "--landmarks",
            ds.join("landmarks.json").to_str().unwrap(),
        ])?;
    }
    Ok(out)
}

fn criterion_8(work: &Path) -> Result<String, String> {
    let peak = TWIST_FRAMES / 2; // maximum contraction and twist
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in TWIST_SEEDS {
        let both = twist_run(work, "nonsequential", "0.8", seed)?;
        let sdf_only = twist_run(work, "nonsequential", "1.0", seed)?;
        let t_both = read_mean_tre(&both)?[&peak];
        let t_sdf = read_mean_tre(&sdf_only)?[&peak];
        if t_both < t_sdf {
            wins += 1;
        }
        detail.push(format!("seed {seed}: {t_both:.3} vs {t_sdf:.3} mm"));
    }
    let detail = format!(
        "peak-twist frame TRE (alpha 0.8 vs 1.0): {}; {wins}/3 seeds better",
        detail.join(", ")
    );
    if wins >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9(work: &Path) -> Result<String, String> {
    let last = TWIST_FRAMES - 1;
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in TWIST_SEEDS {
        let seq = twist_run(work, "sequential", "0.8", seed)?;
        let nonseq = twist_run(work, "nonsequential", "0.8", seed)?;
        let t_seq = read_mean_tre(&seq)?[&last];
        let t_nonseq = read_mean_tre(&nonseq)?[&last];
        if t_seq >= t_nonseq {
            wins += 1;
        }
        detail.push(format!("seed {seed}: {t_seq:.3} vs {t_nonseq:.3} mm"));
    }
    let detail = format!(
        "final-frame TRE (sequential vs non-sequential): {}; {wins}/3 seeds accumulate",
        detail.join(", ")
    );
    if wins >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_10(work: &Path) -> Result<String, String> {
    ensure_main_runs(work)?;
    let ds = ds20(work);
    let mut compared = 0;
    for mode in ["sequential", "nonsequential"] {
        let first = work.join(format!("run_{mode}_a100"));
        let rerun = work.join(format!("rerun_{mode}_a100"));
        if !rerun.exists() {
            run_cli(&[
                "register",
                ds.to_str().unwrap(),
                rerun.to_str().unwrap(),
                "--mode",
                mode,
                "--alpha",
                "1.0",
                "--epochs-first",
                "500",
                "--epochs-rest",
                "300",
                "--seed",
                "0",
            ])?;
        }
        let mut names: Vec<String> = fs::read_dir(&first)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .filter(|n| n == "loss.csv" || n.ends_with(".ckpt"))
            .collect();
        names.sort();
        if names.len() < 2 {
            return Err(format!("{mode}: expected loss.csv plus checkpoints, found {names:?}"));
        }
        for name in names {
            let a = fs::read(first.join(&name)).map_err(|e| format!("{name}: {e}"))?;
            let b = fs::read(rerun.join(&name)).map_err(|e| format!("{mode} rerun {name}: {e}"))?;
            if a != b {
                return Err(format!("{mode}: {name} differs between identical runs"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} files bitwise identical across rerun of both modes"))
}

fn criterion_11(work: &Path) -> Result<String, String> {
    ensure_main_runs(work)?;
    for mode in ["sequential", "nonsequential"] {
        let out = work.join(format!("run_{mode}_a100"));
        let ckpts = fs::read_dir(&out)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().and_then(|x| x.to_str()) == Some("ckpt"))
            .count();
        if ckpts != 19 {
            return Err(format!("{mode}: {ckpts} checkpoints, expected 19"));
        }
        let rows = read_metrics(&out)?;
        if rows.len() != 19 {
            return Err(format!("{mode}: {} metric rows, expected 19", rows.len()));
        }
    }
    Ok("19 checkpoints and 19 metric rows in each mode".into())
}
