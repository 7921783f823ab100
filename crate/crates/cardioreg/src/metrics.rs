//! Evaluation metrics: Dice overlap, 95th-percentile symmetric surface
//! distance, landmark registration error, and a negative-determinant
//! diagnostic for trained deformations.

use crate::edt::squared_edt;
use crate::objective::det3;
use crate::volume::Grid3;
use crate::{Error, Result};

/// Per-pair evaluation record, one CSV row downstream.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PairMetrics {
    pub source_frame: usize,
    pub target_frame: usize,
    pub dsc: f64,
    pub hd95: f64,
    pub tre: Option<Vec<f64>>,
    pub neg_jac_fraction: f64,
}

/// Dice coefficient 2|A∩B| / (|A|+|B|); both masks empty counts as perfect
/// agreement (1.0).
pub fn dice(a: &Grid3, b: &Grid3) -> Result<f64> {
    a.check_same_geometry(b, "metric operands")?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for idx in 0..a.len() {
        let sa = a.is_set(idx);
        let sb = b.is_set(idx);
        inter += (sa && sb) as usize;
        total += sa as usize + sb as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Boundary voxels: set voxels with at least one unset 6-neighbor, where the
/// grid border counts as unset.
fn boundary(mask: &Grid3) -> Vec<bool> {
    let [nx, ny, nz] = mask.dims();
    let mut out = vec![false; mask.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = mask.index(i, j, k);
                if !mask.is_set(idx) {
                    continue;
                }
                let exposed = i == 0
                    || i == nx - 1
                    || j == 0
                    || j == ny - 1
                    || k == 0
                    || k == nz - 1
                    || !mask.is_set(mask.index(i - 1, j, k))
                    || !mask.is_set(mask.index(i + 1, j, k))
                    || !mask.is_set(mask.index(i, j - 1, k))
                    || !mask.is_set(mask.index(i, j + 1, k))
                    || !mask.is_set(mask.index(i, j, k - 1))
                    || !mask.is_set(mask.index(i, j, k + 1));
                out[idx] = exposed;
            }
        }
    }
    out
}

fn percentile_linear(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// 95th percentile of pooled symmetric boundary-to-boundary distances (mm).
pub fn hd95(a: &Grid3, b: &Grid3) -> Result<f64> {
    a.check_same_geometry(b, "metric operands")?;
    let ba = boundary(a);
    let bb = boundary(b);
    if !ba.iter().any(|&v| v) || !bb.iter().any(|&v| v) {
        return Err(Error::EmptyMask);
    }
    let edt_a = squared_edt(a.dims(), a.spacing(), |idx| ba[idx]);
    let edt_b = squared_edt(b.dims(), b.spacing(), |idx| bb[idx]);
    let mut dists = Vec::new();
    for idx in 0..a.len() {
        if ba[idx] {
            dists.push(edt_b[idx].sqrt());
        }
        if bb[idx] {
            dists.push(edt_a[idx].sqrt());
        }
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(percentile_linear(&dists, 0.95))
}

/// Per-landmark Euclidean registration error in mm.
pub fn tre(predicted: &[[f64; 3]], reference: &[[f64; 3]]) -> Result<Vec<f64>> {
    if predicted.len() != reference.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted vs {} reference landmarks",
            predicted.len(),
            reference.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| {
            ((p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2) + (p[2] - r[2]).powi(2)).sqrt()
        })
        .collect())
}

/// Fraction of mask-sampled points where the deformation determinant is
/// non-positive. `jacobian_at` receives points in the registration's
/// normalized frame.
pub(crate) fn neg_jac_fraction_impl(
    mask: &Grid3,
    frame: &crate::volume::NormFrame,
    n_samples: usize,
    seed: u64,
    jacobian_at: impl Fn(&ndarray::Array2<f64>) -> Vec<[[f64; 3]; 3]>,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let pts = crate::objective::sample_batch(mask, frame, n_samples, seed)?;
    let jacs = jacobian_at(&pts);
    let neg = jacs.iter().filter(|j| det3(j) <= 0.0).count();
    Ok(neg as f64 / n_samples as f64)
}

/// Fraction of mask-sampled points where det grad Phi of a trained
/// registration is non-positive.
pub fn neg_jac_fraction(
    reg: &crate::pipeline::PairRegistration,
    mask: &Grid3,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    reg.check_geometry(mask)?;
    neg_jac_fraction_impl(mask, &reg.frame, n_samples, seed, |pts| reg.jacobians(pts))
}
