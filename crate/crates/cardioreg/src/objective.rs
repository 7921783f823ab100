//! Training objective: NCC similarity on CT and SDF channels, the clipped
//! symmetric Jacobian-determinant regularizer, and the masked point sampler.
//!
//! All loss arithmetic is f64 regardless of the training precision; batch
//! points live in target-frame normalized coordinates and are converted to
//! world mm only for grid sampling.

use crate::volume::{Grid3, NormFrame};
use crate::{Error, Result};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Loss hyperparameters: alpha blends CT vs SDF similarity, lambda weights
/// the Jacobian regularizer clipped at tau, epsilon guards NCC variances.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    pub epsilon: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, lambda: f64, tau: f64) -> Result<Self> {
        let w = Self { alpha, lambda, tau, epsilon: 1e-8 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, lambda: 0.05, tau: 10.0, epsilon: 1e-8 }
    }
}

/// Draws batch points uniformly over the set voxels of a sampling mask:
/// uniform voxel choice, then uniform jitter within the voxel extent,
/// then conversion to normalized coordinates.
pub struct Sampler {
    voxel_centers: Vec<[f64; 3]>,
    spacing: [f64; 3],
    frame: NormFrame,
}

impl Sampler {
    pub fn new(mask: &Grid3, frame: &NormFrame) -> Result<Self> {
        let [nx, ny, nz] = mask.dims();
        let mut voxel_centers = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if mask.is_set(mask.index(i, j, k)) {
                        voxel_centers.push(mask.voxel_center(i, j, k));
                    }
                }
            }
        }
        if voxel_centers.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Self { voxel_centers, spacing: mask.spacing(), frame: *frame })
    }

    /// n points, N x 3, in normalized coordinates.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Array2<f64> {
        let mut out = Array2::zeros((n, 3));
        for p in 0..n {
            let c = self.voxel_centers[rng.gen_range(0..self.voxel_centers.len())];
            let mut w = [0.0; 3];
            for a in 0..3 {
                w[a] = c[a] + rng.gen_range(-0.5..0.5) * self.spacing[a];
            }
            let q = self.frame.world_to_normalized(w);
            for a in 0..3 {
                out[[p, a]] = q[a];
            }
        }
        out
    }
}

/// One-shot batch draw with a fresh seeded generator.
pub fn sample_batch(mask: &Grid3, frame: &NormFrame, n: usize, seed: u64) -> Result<Array2<f64>> {
    let sampler = Sampler::new(mask, frame)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(n, &mut rng))
}

/// Zero-normalized cross-correlation loss 1 - cov/(N sigma_a sigma_b + eps)
/// with population standard deviations, plus analytic gradients.
pub fn ncc_loss(a: &[f64], b: &[f64], epsilon: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let n = a.len();
    assert_eq!(n, b.len(), "ncc: input lengths differ");
    assert!(n >= 2, "ncc needs at least two samples");
    let nf = n as f64;
    let mean_a = a.iter().sum::<f64>() / nf;
    let mean_b = b.iter().sum::<f64>() / nf;
    let ca: Vec<f64> = a.iter().map(|&v| v - mean_a).collect();
    let cb: Vec<f64> = b.iter().map(|&v| v - mean_b).collect();
    let cov: f64 = ca.iter().zip(&cb).map(|(&x, &y)| x * y).sum();
    let var_a: f64 = ca.iter().map(|&x| x * x).sum::<f64>() / nf;
    let var_b: f64 = cb.iter().map(|&y| y * y).sum::<f64>() / nf;
    let sd_a = var_a.sqrt();
    let sd_b = var_b.sqrt();
    let den = nf * sd_a * sd_b + epsilon;
    let loss = 1.0 - cov / den;

    let mut da = vec![0.0; n];
    let mut db = vec![0.0; n];
    for i in 0..n {
        // d cov/da_i = cb_i; d den/da_i = sd_b * ca_i / sd_a (0 if degenerate)
        let mut ga = -cb[i] / den;
        let mut gb = -ca[i] / den;
        if sd_a > 0.0 {
            ga += cov * sd_b * ca[i] / (sd_a * den * den);
        }
        if sd_b > 0.0 {
            gb += cov * sd_a * cb[i] / (sd_b * den * den);
        }
        da[i] = ga;
        db[i] = gb;
    }
    (loss, da, db)
}

pub fn det3(j: &[[f64; 3]; 3]) -> f64 {
    j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
}

/// Cofactor matrix: d det(J) / d J_ij.
pub fn cofactor3(j: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for r in 0..3 {
        for s in 0..3 {
            let (r1, r2) = match r {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c1, c2) = match s {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1];
            c[r][s] = if (r + s) % 2 == 0 { minor } else { -minor };
        }
    }
    c
}

/// Clipped symmetric Jacobian-determinant penalty
/// min{ (det J - 1)^2 / |det J|, tau }, with zero gradient when clipped
/// or at det = 0 (treated as +inf and clipped).
pub fn sjac_loss(j: &[[f64; 3]; 3], tau: f64) -> (f64, [[f64; 3]; 3]) {
    let d = det3(j);
    if d == 0.0 {
        return (tau, [[0.0; 3]; 3]);
    }
    let q = (d - 1.0) * (d - 1.0) / d.abs();
    if q >= tau {
        return (tau, [[0.0; 3]; 3]);
    }
    // dq/dd = [2(d-1)|d| - (d-1)^2 sign(d)] / d^2
    let dq_dd = (2.0 * (d - 1.0) * d.abs() - (d - 1.0) * (d - 1.0) * d.signum()) / (d * d);
    let cof = cofactor3(j);
    let mut grad = [[0.0; 3]; 3];
    for r in 0..3 {
        for s in 0..3 {
            grad[r][s] = dq_dd * cof[r][s];
        }
    }
    (q, grad)
}

/// The combined training loss over one batch and its cotangents.
///
/// `points_norm` are batch points x in target-frame normalized coordinates,
/// `displacements` the network outputs u(x) (normalized units) and
/// `jacobians` the per-point grad Phi. Returns the scalar loss, dL/du per
/// point, and dL/d(grad Phi) per point, ready for the network reverse pass.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    points_norm: &Array2<f64>,
    displacements: &Array2<f64>,
    jacobians: &[[[f64; 3]; 3]],
    source_ct: &Grid3,
    source_sdf: &Grid3,
    target_ct: &Grid3,
    target_sdf: &Grid3,
    frame: &NormFrame,
    weights: &LossWeights,
) -> Result<(f64, Array2<f64>, Vec<[[f64; 3]; 3]>)> {
    let n = points_norm.nrows();
    if displacements.nrows() != n || jacobians.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "batch sizes differ: {} points, {} displacements, {} jacobians",
            n,
            displacements.nrows(),
            jacobians.len()
        )));
    }
    weights.validate()?;
    let half = frame.half_extent();

    let mut phi_world = Vec::with_capacity(n);
    let mut a_ct = Vec::with_capacity(n);
    let mut b_ct = Vec::with_capacity(n);
    let mut a_sdf = Vec::with_capacity(n);
    let mut b_sdf = Vec::with_capacity(n);
    for p in 0..n {
        let x = [points_norm[[p, 0]], points_norm[[p, 1]], points_norm[[p, 2]]];
        let phi = [
            x[0] + displacements[[p, 0]],
            x[1] + displacements[[p, 1]],
            x[2] + displacements[[p, 2]],
        ];
        let xw = frame.normalized_to_world(x);
        let pw = frame.normalized_to_world(phi);
        a_ct.push(source_ct.trilinear_sample(pw));
        b_ct.push(target_ct.trilinear_sample(xw));
        a_sdf.push(source_sdf.trilinear_sample(pw));
        b_sdf.push(target_sdf.trilinear_sample(xw));
        phi_world.push(pw);
    }

    let (loss_ct, da_ct, _) = ncc_loss(&a_ct, &b_ct, weights.epsilon);
    let (loss_sdf, da_sdf, _) = ncc_loss(&a_sdf, &b_sdf, weights.epsilon);

    let mut reg_sum = 0.0;
    let mut dl_dj = vec![[[0.0; 3]; 3]; n];
    let reg_scale = weights.lambda / n as f64;
    for p in 0..n {
        let (l, g) = sjac_loss(&jacobians[p], weights.tau);
        reg_sum += l;
        for r in 0..3 {
            for s in 0..3 {
                dl_dj[p][r][s] = reg_scale * g[r][s];
            }
        }
    }
    let loss = (1.0 - weights.alpha) * loss_ct + weights.alpha * loss_sdf
        + weights.lambda * reg_sum / n as f64;

    let mut dl_du = Array2::zeros((n, 3));
    for p in 0..n {
        let g_ct = source_ct.trilinear_gradient(phi_world[p]);
        let g_sdf = source_sdf.trilinear_gradient(phi_world[p]);
        for a in 0..3 {
            // chain: d sample / d u_a = grad_world_a * d world / d normalized
            dl_du[[p, a]] = ((1.0 - weights.alpha) * da_ct[p] * g_ct[a]
                + weights.alpha * da_sdf[p] * g_sdf[a])
                * half[a];
        }
    }

    if !loss.is_finite()
        || dl_du.iter().any(|v| !v.is_finite())
        || dl_dj.iter().flatten().flatten().any(|v| !v.is_finite())
    {
        return Err(Error::NonFiniteGradient { epoch: None });
    }
    Ok((loss, dl_du, dl_dj))
}
