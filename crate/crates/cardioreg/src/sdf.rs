//! Signed Euclidean distance fields from binary masks.
//!
//! Distances are exact voxel-center-to-voxel-center distances in mm,
//! anisotropy-aware. Negative inside the mask, positive outside; under
//! the voxel-center convention no value is zero.

use crate::edt::squared_edt;
use crate::volume::Grid3;
use crate::{Error, Result};

/// Exact signed distance field of a binary mask.
///
/// At an unset voxel the value is the distance (mm) to the nearest set
/// voxel center; at a set voxel it is minus the distance to the nearest
/// unset voxel center.
pub fn signed_distance_field(mask: &Grid3) -> Result<Grid3> {
    let n_set = mask.count_set();
    if n_set == 0 {
        return Err(Error::EmptyMask);
    }
    if n_set == mask.len() {
        return Err(Error::FullMask);
    }
    let d_out = squared_edt(mask.dims(), mask.spacing(), |i| mask.is_set(i));
    let d_in = squared_edt(mask.dims(), mask.spacing(), |i| !mask.is_set(i));
    let values = (0..mask.len())
        .map(|i| if mask.is_set(i) { -d_in[i].sqrt() } else { d_out[i].sqrt() })
        .collect();
    Grid3::new(mask.dims(), mask.spacing(), mask.origin(), values)
}
