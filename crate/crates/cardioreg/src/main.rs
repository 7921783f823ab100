use cardioreg::io::{
    self, checkpoint_path, LandmarkFile, Landmark, NiftiDtype,
};
use cardioreg::metrics;
use cardioreg::phantom::{self, PhantomSpec};
use cardioreg::pipeline::{self, Mode, PairRegistration, RegConfig};
use cardioreg::objective::LossWeights;
use cardioreg::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cardioreg", version, about = "SDF-guided implicit-network registration of 4D cardiac volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic contracting-shell dataset with ground-truth landmarks
    Phantom(PhantomArgs),
    /// Compute the signed distance field of a binary mask volume
    Sdf { mask: PathBuf, out: PathBuf },
    /// Train pairwise registrations over a dataset's cardiac cycle
    Register(RegisterArgs),
    /// Compute DSC/HD95/TRE metrics for a finished registration run
    Evaluate(EvaluateArgs),
    /// Warp a source volume or mask through a trained checkpoint
    Warp(WarpArgs),
    /// Propagate frame-0 landmarks through a registration run
    Track(TrackArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// output dataset directory
    out: PathBuf,
    /// JSON file with the full phantom description (flags below override it)
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
    /// apex-to-base twist in degrees at peak contraction
    #[arg(long)]
    twist: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// grid size as NXxNYxNZ, e.g. 64x64x32
    #[arg(long)]
    dims: Option<String>,
    /// overwrite an existing dataset directory
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RegisterArgs {
    dataset: PathBuf,
    outdir: PathBuf,
    #[arg(long, default_value = "sequential")]
    mode: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    lambda: f64,
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    #[arg(long = "epochs-first", default_value_t = 2000)]
    epochs_first: usize,
    #[arg(long = "epochs-rest", default_value_t = 1000)]
    epochs_rest: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 10_000)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "hidden-layers", default_value_t = 5)]
    hidden_layers: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 30.0)]
    omega: f64,
    /// sampling-mask dilation radius in mm
    #[arg(long, default_value_t = 10.0)]
    dilation: f64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    dataset: PathBuf,
    regdir: PathBuf,
    /// reference landmark tracks (TRE is skipped when omitted)
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// output directory for the CSVs (defaults to the registration directory)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WarpArgs {
    checkpoint: PathBuf,
    volume: PathBuf,
    out: PathBuf,
    /// treat the input as a binary mask (threshold the warped values at 0.5)
    #[arg(long)]
    mask: bool,
}

#[derive(Args)]
struct TrackArgs {
    regdir: PathBuf,
    landmarks: PathBuf,
    out: PathBuf,
    /// maximum allowed inversion residual in mm
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

fn main() -> ExitCode {
    cardioreg::linalg::reexec_with_tuned_blas();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Sdf { mask, out } => cmd_sdf(&mask, &out),
        Command::Register(a) => cmd_register(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Warp(a) => cmd_warp(a),
        Command::Track(a) => cmd_track(a),
    }
}

fn refuse_overwrite(dir: &Path, force: bool) -> Result<()> {
    if !force && dir.is_dir() && dir.read_dir()?.next().is_some() {
        return Err(Error::InvalidArgument(format!(
            "{} already exists and is not empty (use --force to overwrite)",
            dir.display()
        )));
    }
    Ok(())
}

fn parse_dims(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!("dims must look like 64x64x32, got '{s}'")));
    }
    let mut d = [0usize; 3];
    for (a, p) in parts.iter().enumerate() {
        d[a] = p
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad dimension '{p}' in '{s}'")))?;
    }
    Ok(d)
}

fn cmd_phantom(a: PhantomArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<PhantomSpec>(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        }
        None => PhantomSpec::default(),
    };
    if let Some(f) = a.frames {
        spec.frames = f;
    }
    if let Some(v) = a.amplitude {
        spec.amplitude = v;
    }
    if let Some(v) = a.twist {
        spec.twist_max_deg = v;
    }
    if let Some(v) = a.noise {
        spec.noise_sigma = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(d) = &a.dims {
        spec.dims = parse_dims(d)?;
    }
    spec.validate()?;
    refuse_overwrite(&a.out, a.force)?;

    let (frames, gt) = phantom::generate(&spec)?;
    let landmarks = LandmarkFile {
        frames: spec.frames,
        landmarks: gt
            .names
            .iter()
            .zip(&gt.tracks)
            .map(|(n, t)| Landmark { name: n.clone(), points: t.clone(), residuals_mm: None })
            .collect(),
    };
    io::write_dataset(&a.out, &frames, &landmarks)?;
    io::atomic_write(
        &a.out.join("phantom_spec.json"),
        serde_json::to_string_pretty(&spec)?.as_bytes(),
    )?;
    println!(
        "wrote {} frames + masks + SDFs and {} landmarks to {}",
        spec.frames,
        landmarks.landmarks.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_sdf(mask: &Path, out: &Path) -> Result<()> {
    let m = io::read_volume(mask)?;
    let sdf = cardioreg::sdf::signed_distance_field(&m)?;
    io::write_nifti(out, &sdf, NiftiDtype::Float32)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_register(a: RegisterArgs) -> Result<()> {
    let cfg = RegConfig {
        weights: LossWeights::new(a.alpha, a.lambda, a.tau)?,
        epochs_first: a.epochs_first,
        epochs_rest: a.epochs_rest,
        batch_size: a.batch,
        learning_rate: a.lr,
        hidden_layers: a.hidden_layers,
        width: a.width,
        omega: a.omega,
        dilation_mm: a.dilation,
        seed: a.seed,
        mode: a.mode.parse()?,
    };
    cfg.validate()?;
    // load (and validate) the dataset before touching the output directory,
    // so a bad input never leaves a partial run behind
    let frames = io::load_dataset(&a.dataset, cfg.dilation_mm)?;
    refuse_overwrite(&a.outdir, a.force)?;
    fs::create_dir_all(&a.outdir)?;

    let regs = pipeline::run_cycle(&frames, &cfg)?;
    let echo = serde_json::to_string(&cfg)?;
    let mut rows = Vec::new();
    for reg in &regs {
        io::write_checkpoint(
            &checkpoint_path(&a.outdir, reg.source_index, reg.target_index),
            reg,
            Some(&cfg),
        )?;
        for (epoch, loss) in reg.loss_trace.iter().enumerate() {
            rows.push(format!("{},{},{},{}", reg.source_index, reg.target_index, epoch, loss));
        }
    }
    io::write_csv(&a.outdir.join("loss.csv"), &echo, "source,target,epoch,loss", &rows)?;
    io::atomic_write(&a.outdir.join("config.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    println!("trained {} pairs into {}", regs.len(), a.outdir.display());
    Ok(())
}

/// Checkpoints of a run, ordered by target index.
fn load_run(regdir: &Path) -> Result<Vec<PairRegistration>> {
    let mut names: Vec<PathBuf> = fs::read_dir(regdir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("ckpt"))
        .collect();
    if names.is_empty() {
        return Err(Error::Parse(format!("{}: no .ckpt files found", regdir.display())));
    }
    names.sort();
    let mut regs: Vec<PairRegistration> = names.iter().map(|p| io::read_checkpoint(p)).collect::<Result<_>>()?;
    regs.sort_by_key(|r| r.target_index);
    Ok(regs)
}

fn run_mode(regs: &[PairRegistration]) -> Result<Mode> {
    let seq = regs.iter().enumerate().all(|(k, r)| r.source_index == k && r.target_index == k + 1);
    let nonseq = regs
        .iter()
        .enumerate()
        .all(|(k, r)| r.source_index == 0 && r.target_index == k + 1);
    // a single pair (0 -> 1) satisfies both schedules; either tag works
    if seq {
        Ok(Mode::Sequential)
    } else if nonseq {
        Ok(Mode::NonSequential)
    } else {
        Err(Error::Parse(
            "checkpoint pair indices match neither the sequential nor the non-sequential schedule"
                .into(),
        ))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let regs = load_run(&a.regdir)?;
    let dilation = 10.0;
    let frames = io::load_dataset(&a.dataset, dilation)?;
    let outdir = a.out.clone().unwrap_or_else(|| a.regdir.clone());
    fs::create_dir_all(&outdir)?;
    let echo = serde_json::json!({
        "dataset": a.dataset.display().to_string(),
        "regdir": a.regdir.display().to_string(),
        "landmarks": a.landmarks.as_ref().map(|p| p.display().to_string()),
    })
    .to_string();

    let mut rows = Vec::new();
    let mut curve_rows = Vec::new();
    for reg in &regs {
        let src = &frames[reg.source_index];
        let tgt = frames
            .get(reg.target_index)
            .ok_or_else(|| Error::Parse(format!("checkpoint targets frame {} but dataset has {} frames", reg.target_index, frames.len())))?;
        let warped = pipeline::warp_mask(reg, &src.lv_mask)?;
        let dsc = metrics::dice(&warped, &tgt.lv_mask)?;
        let hd = metrics::hd95(&warped, &tgt.lv_mask)?;
        let njf = metrics::neg_jac_fraction(reg, &tgt.sample_mask, 10_000, 0)?;
        rows.push(format!(
            "{:.3},{},{},{},{},{}",
            tgt.cycle_percent, reg.source_index, reg.target_index, dsc, hd, njf
        ));
        curve_rows.push(format!("{:.3},{},0", tgt.cycle_percent, dsc));
    }
    io::write_csv(
        &outdir.join("metrics.csv"),
        &echo,
        "frame_pct,source,target,dsc,hd95,neg_jac_fraction",
        &rows,
    )?;
    io::write_csv(&outdir.join("dsc_curve.csv"), &echo, "frame_pct,mean,std", &curve_rows)?;

    if let Some(lm_path) = &a.landmarks {
        let reference = LandmarkFile::read(lm_path)?;
        if reference.frames != frames.len() {
            return Err(Error::Parse(format!(
                "landmark file covers {} frames, dataset has {}",
                reference.frames,
                frames.len()
            )));
        }
        let mode = run_mode(&regs)?;
        let lm0: Vec<[f64; 3]> = reference.landmarks.iter().map(|l| l.points[0]).collect();
        let tracked = pipeline::track_landmarks(&regs, &lm0, mode)?;
        let mut tre_rows = Vec::new();
        let mut per_frame: Vec<Vec<f64>> = vec![Vec::new(); frames.len()];
        for (i, lm) in reference.landmarks.iter().enumerate() {
            let errs = metrics::tre(&tracked.points[i], &lm.points)?;
            for (t, e) in errs.iter().enumerate() {
                tre_rows.push(format!(
                    "{},{},{:.3},{}",
                    lm.name, t, frames[t].cycle_percent, e
                ));
                per_frame[t].push(*e);
            }
        }
        for (t, errs) in per_frame.iter().enumerate() {
            if !errs.is_empty() {
                tre_rows.push(format!("mean,{},{:.3},{}", t, frames[t].cycle_percent, mean(errs)));
            }
        }
        io::write_csv(
            &outdir.join("tre.csv"),
            &echo,
            "landmark,frame,frame_pct,tre_mm",
            &tre_rows,
        )?;
    }
    println!("wrote metrics for {} pairs to {}", regs.len(), outdir.display());
    Ok(())
}

fn cmd_warp(a: WarpArgs) -> Result<()> {
    let reg = io::read_checkpoint(&a.checkpoint)?;
    let vol = io::read_volume(&a.volume)?;
    let out = if a.mask {
        let w = pipeline::warp_mask(&reg, &vol)?;
        io::write_nifti(&a.out, &w, NiftiDtype::Int16)?;
        w
    } else {
        let w = pipeline::warp_volume(&reg, &vol)?;
        io::write_nifti(&a.out, &w, NiftiDtype::Float32)?;
        w
    };
    let _ = out;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_track(a: TrackArgs) -> Result<()> {
    let regs = load_run(&a.regdir)?;
    let mode = run_mode(&regs)?;
    let input = LandmarkFile::read(&a.landmarks)?;
    let lm0: Vec<[f64; 3]> = input.landmarks.iter().map(|l| l.points[0]).collect();
    let tracked = pipeline::track_landmarks(&regs, &lm0, mode)?;

    let frames = regs.len() + 1;
    let mut worst = 0.0f64;
    let out = LandmarkFile {
        frames,
        landmarks: input
            .landmarks
            .iter()
            .enumerate()
            .map(|(i, l)| {
                worst = worst.max(tracked.residuals_mm[i].iter().cloned().fold(0.0, f64::max));
                Landmark {
                    name: l.name.clone(),
                    points: tracked.points[i].clone(),
                    residuals_mm: Some(tracked.residuals_mm[i].clone()),
                }
            })
            .collect(),
    };
    out.write(&a.out)?;
    if worst > a.tol {
        return Err(Error::NoConvergence { residual_mm: worst, iters: 50 });
    }
    println!(
        "tracked {} landmarks over {} frames (worst residual {:.2e} mm)",
        out.landmarks.len(),
        frames,
        worst
    );
    Ok(())
}
