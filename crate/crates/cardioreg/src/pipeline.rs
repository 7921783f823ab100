//! Pairwise registration training and cycle schedules.
//!
//! Direction convention: the trained map Phi(x) = x + u(x) takes points given
//! in the TARGET frame (normalized coordinates) into the SOURCE frame, so
//! warping the source onto the target grid is a direct pull-back and landmark
//! propagation from source to target inverts Phi by fixed-point iteration.

use crate::linalg::Scalar;
use crate::objective::{total_loss, LossWeights, Sampler};
use crate::siren::{AdamState, SirenModel};
use crate::volume::{Grid3, NormFrame};
use crate::{Error, Result};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CONVENTION: &str = "target_to_source";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sequential,
    NonSequential,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Sequential => write!(f, "sequential"),
            Mode::NonSequential => write!(f, "nonsequential"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "nonsequential" => Ok(Mode::NonSequential),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode '{other}' (expected sequential|nonsequential)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegConfig {
    pub weights: LossWeights,
    pub epochs_first: usize,
    pub epochs_rest: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_layers: usize,
    pub width: usize,
    pub omega: f64,
    pub dilation_mm: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            epochs_first: 2000,
            epochs_rest: 1000,
            batch_size: 10_000,
            learning_rate: 1e-5,
            hidden_layers: 5,
            width: 256,
            omega: 30.0,
            dilation_mm: 10.0,
            seed: 0,
            mode: Mode::Sequential,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs_first == 0 || self.epochs_rest == 0 {
            return Err(Error::InvalidArgument("epoch counts must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("network dims must be >= 1".into()));
        }
        if !(self.dilation_mm >= 0.0) {
            return Err(Error::InvalidArgument("dilation_mm must be >= 0".into()));
        }
        Ok(())
    }
}

/// One time frame of the cycle: CT image, wall mask, its SDF, and the dilated
/// sampling mask used to draw training points.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub frame_index: usize,
    pub cycle_percent: f64,
    pub ct: Grid3,
    pub lv_mask: Grid3,
    pub sdf: Grid3,
    pub sample_mask: Grid3,
}

impl FrameBundle {
    /// Builds the derived grids (SDF, dilated sampling mask) from CT + mask.
    pub fn derive(
        frame_index: usize,
        frames_total: usize,
        ct: Grid3,
        lv_mask: Grid3,
        dilation_mm: f64,
    ) -> Result<Self> {
        ct.check_same_geometry(&lv_mask, "ct vs mask")?;
        let sdf = crate::sdf::signed_distance_field(&lv_mask)?;
        let sample_mask = crate::volume::dilate_mask(&lv_mask, dilation_mm)?;
        Ok(Self {
            frame_index,
            cycle_percent: 100.0 * frame_index as f64 / frames_total as f64,
            ct,
            lv_mask,
            sdf,
            sample_mask,
        })
    }

    pub fn check_consistent(&self) -> Result<()> {
        self.ct.check_same_geometry(&self.lv_mask, "ct vs mask")?;
        self.ct.check_same_geometry(&self.sdf, "ct vs sdf")?;
        self.ct.check_same_geometry(&self.sample_mask, "ct vs sample mask")?;
        Ok(())
    }
}

/// A trained pairwise registration with enough geometry to evaluate the
/// deformation at world points of the target frame.
#[derive(Debug, Clone)]
pub struct PairRegistration {
    pub model: SirenModel<f64>,
    pub source_index: usize,
    pub target_index: usize,
    pub convention: String,
    pub loss_trace: Vec<f64>,
    pub frame: NormFrame,
    pub grid_dims: [usize; 3],
    pub grid_spacing: [f64; 3],
    pub grid_origin: [f64; 3],
}

impl PairRegistration {
    pub fn check_geometry(&self, g: &Grid3) -> Result<()> {
        let same = g.dims() == self.grid_dims
            && g.spacing()
                .iter()
                .zip(&self.grid_spacing)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0))
            && g.origin()
                .iter()
                .zip(&self.grid_origin)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0));
        if same {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "grid {:?}/{:?}/{:?} vs registration {:?}/{:?}/{:?}",
                g.dims(),
                g.spacing(),
                g.origin(),
                self.grid_dims,
                self.grid_spacing,
                self.grid_origin
            )))
        }
    }

    /// Displacements u(x) in mm at world points of the target frame.
    pub fn displacement_mm(&self, points_world: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let n = points_world.len();
        let mut xs = Array2::zeros((n, 3));
        for (p, w) in points_world.iter().enumerate() {
            let q = self.frame.world_to_normalized(*w);
            for a in 0..3 {
                xs[[p, a]] = q[a];
            }
        }
        let (u, _) = self.model.forward(&xs);
        let half = self.frame.half_extent();
        (0..n)
            .map(|p| [u[[p, 0]] * half[0], u[[p, 1]] * half[1], u[[p, 2]] * half[2]])
            .collect()
    }

    /// Phi(x) for a world point x of the target frame, in source-frame mm.
    pub fn map_point(&self, p_world: [f64; 3]) -> [f64; 3] {
        let q = self.frame.world_to_normalized(p_world);
        let xs = Array2::from_shape_vec((1, 3), q.to_vec()).unwrap();
        let (u, _) = self.model.forward(&xs);
        self.frame
            .normalized_to_world([q[0] + u[[0, 0]], q[1] + u[[0, 1]], q[2] + u[[0, 2]]])
    }

    /// Per-point Jacobians of Phi at normalized points.
    pub fn jacobians(&self, points_norm: &Array2<f64>) -> Vec<[[f64; 3]; 3]> {
        let (_, mut tape) = self.model.forward(points_norm);
        self.model.spatial_jacobian(&mut tape)
    }
}

fn pair_seed(base: u64, source: usize, target: usize) -> u64 {
    base ^ (source as u64).wrapping_mul(0x9e3779b97f4a7c15)
        ^ (target as u64).wrapping_mul(0xc2b2ae3d27d4eb4f)
}

/// Trains one pairwise registration. Epoch count is `epochs_first` when
/// starting from scratch and `epochs_rest` when warm-started from `init`.
pub fn register_pair(
    source: &FrameBundle,
    target: &FrameBundle,
    cfg: &RegConfig,
    init: Option<&SirenModel<f64>>,
) -> Result<PairRegistration> {
    cfg.validate()?;
    source.check_consistent()?;
    target.check_consistent()?;
    source.ct.check_same_geometry(&target.ct, "source vs target")?;
    train_pair_impl::<f32>(source, target, cfg, init)
}

/// Same as register_pair but in f64 throughout (used by gradient-sensitive
/// tests; production training runs in f32).
pub fn register_pair_f64(
    source: &FrameBundle,
    target: &FrameBundle,
    cfg: &RegConfig,
    init: Option<&SirenModel<f64>>,
) -> Result<PairRegistration> {
    cfg.validate()?;
    source.check_consistent()?;
    target.check_consistent()?;
    source.ct.check_same_geometry(&target.ct, "source vs target")?;
    train_pair_impl::<f64>(source, target, cfg, init)
}

fn train_pair_impl<F: Scalar>(
    source: &FrameBundle,
    target: &FrameBundle,
    cfg: &RegConfig,
    init: Option<&SirenModel<f64>>,
) -> Result<PairRegistration> {
    let frame = NormFrame::from_grid(&target.ct);
    let epochs = if init.is_some() { cfg.epochs_rest } else { cfg.epochs_first };
    let mut model: SirenModel<F> = match init {
        Some(m) => m.convert(),
        None => SirenModel::<f64>::init(cfg.seed, cfg.hidden_layers, cfg.width, cfg.omega)?.convert(),
    };
    let sampler = Sampler::new(&target.sample_mask, &frame)?;
    let mut rng =
        ChaCha8Rng::seed_from_u64(pair_seed(cfg.seed, source.frame_index, target.frame_index));
    let mut adam = AdamState::<F>::new(model.param_count(), cfg.learning_rate);
    let mut loss_trace = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let pts = sampler.sample(cfg.batch_size, &mut rng);
        let pts_f = pts.mapv(F::from_f64);
        let (u, mut tape) = model.forward(&pts_f);
        let jac = model.spatial_jacobian(&mut tape);

        let u64d = u.mapv(F::as_f64);
        let jac64: Vec<[[f64; 3]; 3]> = jac
            .iter()
            .map(|j| {
                let mut o = [[0.0; 3]; 3];
                for r in 0..3 {
                    for s in 0..3 {
                        o[r][s] = j[r][s].as_f64();
                    }
                }
                o
            })
            .collect();

        let (loss, dl_du, dl_dj) = total_loss(
            &pts,
            &u64d,
            &jac64,
            &source.ct,
            &source.sdf,
            &target.ct,
            &target.sdf,
            &frame,
            &cfg.weights,
        )
        .map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { epoch: Some(epoch) },
            other => other,
        })?;
        loss_trace.push(loss);

        let dl_du_f = dl_du.mapv(F::from_f64);
        let dl_dj_f: Vec<[[F; 3]; 3]> = dl_dj
            .iter()
            .map(|j| {
                let mut o = [[F::from_f64(0.0); 3]; 3];
                for r in 0..3 {
                    for s in 0..3 {
                        o[r][s] = F::from_f64(j[r][s]);
                    }
                }
                o
            })
            .collect();
        let grads = model.backward(&tape, &dl_du_f, Some(&dl_dj_f))?;
        let mut params = model.flat_params();
        adam.apply(&mut params, &grads.flatten()).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { epoch: Some(epoch) },
            other => other,
        })?;
        model.set_flat_params(&params)?;
    }

    Ok(PairRegistration {
        model: model.convert(),
        source_index: source.frame_index,
        target_index: target.frame_index,
        convention: CONVENTION.to_string(),
        loss_trace,
        frame,
        grid_dims: target.ct.dims(),
        grid_spacing: target.ct.spacing(),
        grid_origin: target.ct.origin(),
    })
}

/// Registers a whole cycle. Sequential mode chains neighboring frames
/// (f0->f1, f1->f2, ...); non-sequential registers frame 0 to every other
/// frame (f0->f1, f0->f2, ...). Both warm-start each pair from the previous
/// pair's trained weights.
pub fn run_cycle(frames: &[FrameBundle], cfg: &RegConfig) -> Result<Vec<PairRegistration>> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cycle needs >= 2 frames, got {}",
            frames.len()
        )));
    }
    let pairs: Vec<(usize, usize)> = match cfg.mode {
        Mode::Sequential => (0..frames.len() - 1).map(|t| (t, t + 1)).collect(),
        Mode::NonSequential => (1..frames.len()).map(|t| (0, t)).collect(),
    };
    let mut regs: Vec<PairRegistration> = Vec::with_capacity(pairs.len());
    for (src, tgt) in pairs {
        let init = regs.last().map(|r| &r.model);
        let reg = register_pair(&frames[src], &frames[tgt], cfg, init)?;
        regs.push(reg);
    }
    Ok(regs)
}

fn warp_grid(reg: &PairRegistration, src: &Grid3, threshold: bool) -> Result<Grid3> {
    reg.check_geometry(src)?;
    let [nx, ny, nz] = src.dims();
    let mut centers = Vec::with_capacity(src.len());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                centers.push(src.voxel_center(i, j, k));
            }
        }
    }
    let mut out = Grid3::zeros(src.dims(), src.spacing(), src.origin())?;
    // evaluate the network in chunks to bound tape memory
    let chunk = 32_768;
    let mut idx = 0;
    while idx < centers.len() {
        let hi = (idx + chunk).min(centers.len());
        let n = hi - idx;
        let mut xs = Array2::zeros((n, 3));
        let mut qs = Vec::with_capacity(n);
        for (p, c) in centers[idx..hi].iter().enumerate() {
            let q = reg.frame.world_to_normalized(*c);
            for a in 0..3 {
                xs[[p, a]] = q[a];
            }
            qs.push(q);
        }
        let (u, _) = reg.model.forward(&xs);
        for p in 0..n {
            let phi = reg.frame.normalized_to_world([
                qs[p][0] + u[[p, 0]],
                qs[p][1] + u[[p, 1]],
                qs[p][2] + u[[p, 2]],
            ]);
            let v = src.trilinear_sample(phi);
            out.values_mut()[idx + p] = if threshold {
                if v > 0.5 {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            };
        }
        idx = hi;
    }
    Ok(out)
}

/// Pull-back warp of a binary source mask onto the target grid
/// (trilinear sample at Phi(x), threshold 0.5).
pub fn warp_mask(reg: &PairRegistration, src_mask: &Grid3) -> Result<Grid3> {
    warp_grid(reg, src_mask, true)
}

/// Pull-back warp of a scalar source volume onto the target grid.
pub fn warp_volume(reg: &PairRegistration, src: &Grid3) -> Result<Grid3> {
    warp_grid(reg, src, false)
}

/// Dense displacement field on the target grid, one mm-valued volume per axis.
pub fn displacement_field(reg: &PairRegistration) -> Result<[Grid3; 3]> {
    let dims = reg.grid_dims;
    let probe = Grid3::zeros(dims, reg.grid_spacing, reg.grid_origin)?;
    let [nx, ny, nz] = dims;
    let mut centers = Vec::with_capacity(probe.len());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                centers.push(probe.voxel_center(i, j, k));
            }
        }
    }
    let u = reg.displacement_mm(&centers);
    let mut out = [probe.clone(), probe.clone(), probe];
    for (idx, d) in u.iter().enumerate() {
        for a in 0..3 {
            out[a].values_mut()[idx] = d[a];
        }
    }
    Ok(out)
}

/// Inverts Phi at a source-frame world point by fixed-point iteration
/// y <- p - u(y); returns the target-frame point and the residual
/// |Phi(y) - p| in mm.
pub fn invert_point(
    reg: &PairRegistration,
    p_world: [f64; 3],
    iters: usize,
    tol_mm: f64,
) -> Result<([f64; 3], f64)> {
    let half = reg.frame.half_extent();
    let p = reg.frame.world_to_normalized(p_world);
    let mut y = p;
    let mut residual = f64::INFINITY;
    for _ in 0..=iters {
        let xs = Array2::from_shape_vec((1, 3), y.to_vec()).unwrap();
        let (u, _) = reg.model.forward(&xs);
        let u = [u[[0, 0]], u[[0, 1]], u[[0, 2]]];
        residual = (0..3)
            .map(|a| ((y[a] + u[a] - p[a]) * half[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol_mm {
            return Ok((reg.frame.normalized_to_world(y), residual));
        }
        for a in 0..3 {
            y[a] = p[a] - u[a];
        }
    }
    Err(Error::NoConvergence { residual_mm: residual, iters })
}

/// Landmark positions per frame with per-step inversion residuals:
/// points[landmark][frame], residuals[landmark][frame].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackedLandmarks {
    pub points: Vec<Vec<[f64; 3]>>,
    pub residuals_mm: Vec<Vec<f64>>,
}

/// Propagates frame-0 landmarks through a cycle of registrations.
/// Non-sequential: each frame is reached by inverting its direct f0->ft map.
/// Sequential: inversions are composed step by step.
pub fn track_landmarks(
    regs: &[PairRegistration],
    lm0: &[[f64; 3]],
    mode: Mode,
) -> Result<TrackedLandmarks> {
    for (k, r) in regs.iter().enumerate() {
        let (want_src, want_tgt) = match mode {
            Mode::Sequential => (k, k + 1),
            Mode::NonSequential => (0, k + 1),
        };
        if r.source_index != want_src || r.target_index != want_tgt {
            return Err(Error::InvalidArgument(format!(
                "registration {k} is pair {}->{} but {mode} mode expects {}->{}",
                r.source_index, r.target_index, want_src, want_tgt
            )));
        }
    }
    let frames = regs.len() + 1;
    let mut points = vec![Vec::with_capacity(frames); lm0.len()];
    let mut residuals = vec![Vec::with_capacity(frames); lm0.len()];
    for (i, &p0) in lm0.iter().enumerate() {
        points[i].push(p0);
        residuals[i].push(0.0);
        let mut current = p0;
        for (k, reg) in regs.iter().enumerate() {
            let start = match mode {
                Mode::Sequential => current,
                Mode::NonSequential => p0,
            };
            let (y, res) = invert_point(reg, start, 50, 1e-4).map_err(|e| match e {
                Error::NoConvergence { residual_mm, iters } => Error::InvalidArgument(format!(
                    "landmark {i} failed to invert at frame {}: residual {residual_mm:.6} mm after {iters} iterations",
                    k + 1
                )),
                other => other,
            })?;
            points[i].push(y);
            residuals[i].push(res);
            current = y;
        }
    }
    Ok(TrackedLandmarks { points, residuals_mm: residuals })
}

/// Mean displacement magnitude (mm) over points sampled in a mask.
pub fn mean_displacement_mm(
    reg: &PairRegistration,
    mask: &Grid3,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let pts = crate::objective::sample_batch(mask, &reg.frame, n_samples, seed)?;
    let world: Vec<[f64; 3]> = (0..pts.nrows())
        .map(|p| reg.frame.normalized_to_world([pts[[p, 0]], pts[[p, 1]], pts[[p, 2]]]))
        .collect();
    let u = reg.displacement_mm(&world);
    Ok(u.iter()
        .map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
        .sum::<f64>()
        / n_samples as f64)
}

/// Identity registration on a given geometry (zero network), mainly for
/// baseline checks and CLI plumbing tests.
pub fn identity_registration(template: &Grid3, source_index: usize, target_index: usize) -> PairRegistration {
    let model = SirenModel::<f64>::init(0, 1, 4, 30.0).expect("tiny model");
    PairRegistration {
        model: zero_output(model),
        source_index,
        target_index,
        convention: CONVENTION.to_string(),
        loss_trace: Vec::new(),
        frame: NormFrame::from_grid(template),
        grid_dims: template.dims(),
        grid_spacing: template.spacing(),
        grid_origin: template.origin(),
    }
}

fn zero_output(model: SirenModel<f64>) -> SirenModel<f64> {
    // init already zeroes the output layer; keep the helper explicit
    model
}
