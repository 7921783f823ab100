//! Exact anisotropic squared Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas transform run per axis, with
//! parabola abscissae scaled by the physical spacing of that axis. Seeds
//! start at squared distance 0; everything else at infinity.

/// 1D squared-distance transform with uniform sample spacing `h`.
///
/// `f` holds incoming squared distances (may contain `INFINITY`), `out`
/// receives `min_j (h*(i-j))^2 + f[j]`. Scratch vectors are caller-provided
/// so scanline loops do not reallocate.
fn dt_1d(f: &[f64], h: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    // lower envelope over parabolas with finite height only
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let xq = q as f64 * h;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let xp = p as f64 * h;
                    // intersection of parabolas rooted at xp and xq
                    let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out[..n].fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for i in 0..n {
        let x = i as f64 * h;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let j = v[k];
        let d = x - j as f64 * h;
        out[i] = d * d + f[j];
    }
}

/// Exact squared distance (mm^2) from every voxel center to the nearest
/// seed voxel center, honoring per-axis spacing. Returns all-infinity if
/// no voxel is a seed.
pub fn squared_edt(dims: [usize; 3], spacing: [f64; 3], seed: impl Fn(usize) -> bool) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let mut d: Vec<f64> = (0..n).map(|i| if seed(i) { 0.0 } else { f64::INFINITY }).collect();

    let max_dim = nx.max(ny).max(nz);
    let mut line = vec![0.0; max_dim];
    let mut out = vec![0.0; max_dim];
    let mut v: Vec<usize> = Vec::with_capacity(max_dim);
    let mut z: Vec<f64> = Vec::with_capacity(max_dim + 1);

    // x-axis
    for k in 0..nz {
        for j in 0..ny {
            let base = nx * (j + ny * k);
            line[..nx].copy_from_slice(&d[base..base + nx]);
            dt_1d(&line[..nx], spacing[0], &mut out[..nx], &mut v, &mut z);
            d[base..base + nx].copy_from_slice(&out[..nx]);
        }
    }
    // y-axis
    for k in 0..nz {
        for i in 0..nx {
            for j in 0..ny {
                line[j] = d[i + nx * (j + ny * k)];
            }
            dt_1d(&line[..ny], spacing[1], &mut out[..ny], &mut v, &mut z);
            for j in 0..ny {
                d[i + nx * (j + ny * k)] = out[j];
            }
        }
    }
    // z-axis
    for j in 0..ny {
        for i in 0..nx {
            for k in 0..nz {
                line[k] = d[i + nx * (j + ny * k)];
            }
            dt_1d(&line[..nz], spacing[2], &mut out[..nz], &mut v, &mut z);
            for k in 0..nz {
                d[i + nx * (j + ny * k)] = out[k];
            }
        }
    }
    d
}
