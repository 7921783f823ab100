//! File formats and dataset layout.
//!
//! Volumes are stored either as a minimal single-file NIfTI-1 subset
//! (little-endian, magic "n+1\0", datatype int16/float32/float64, ≤3 dims,
//! data at offset 352) or as a raw pair `<name>.json` + `<name>.f32`.
//! Checkpoints are a length-prefixed JSON header followed by the float64
//! parameter payload. All writes go through a write-temp-then-rename helper
//! so a killed run never leaves a truncated file that parses.

use crate::pipeline::{FrameBundle, PairRegistration, RegConfig, CONVENTION};
use crate::siren::SirenModel;
use crate::volume::{Grid3, NormFrame};
use crate::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const NIFTI_HEADER_SIZE: usize = 348;
pub const NIFTI_DATA_OFFSET: usize = 352;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn put_i16(buf: &mut [u8], off: usize, v: i16) {
    buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
}
fn put_i32(buf: &mut [u8], off: usize, v: i32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}
fn put_f32(buf: &mut [u8], off: usize, v: f32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}
fn get_i16(buf: &[u8], off: usize) -> i16 {
    i16::from_le_bytes(buf[off..off + 2].try_into().unwrap())
}
fn get_i32(buf: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}
fn get_f32(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    Int16,
    Float32,
    Float64,
}

impl NiftiDtype {
    fn code(self) -> i16 {
        match self {
            NiftiDtype::Int16 => 4,
            NiftiDtype::Float32 => 16,
            NiftiDtype::Float64 => 64,
        }
    }
    fn bitpix(self) -> i16 {
        match self {
            NiftiDtype::Int16 => 16,
            NiftiDtype::Float32 => 32,
            NiftiDtype::Float64 => 64,
        }
    }
    fn bytes(self) -> usize {
        self.bitpix() as usize / 8
    }
}

pub fn write_nifti(path: &Path, g: &Grid3, dtype: NiftiDtype) -> Result<()> {
    let [nx, ny, nz] = g.dims();
    let n = g.len();
    let mut buf = vec![0u8; NIFTI_DATA_OFFSET + n * dtype.bytes()];
    put_i32(&mut buf, 0, NIFTI_HEADER_SIZE as i32);
    // dim[8] at offset 40
    put_i16(&mut buf, 40, 3);
    put_i16(&mut buf, 42, nx as i16);
    put_i16(&mut buf, 44, ny as i16);
    put_i16(&mut buf, 46, nz as i16);
    for d in 4..8 {
        put_i16(&mut buf, 40 + 2 * d, 1);
    }
    put_i16(&mut buf, 70, dtype.code());
    put_i16(&mut buf, 72, dtype.bitpix());
    // pixdim[8] at offset 76
    put_f32(&mut buf, 76, 1.0);
    for a in 0..3 {
        put_f32(&mut buf, 80 + 4 * a, g.spacing()[a] as f32);
    }
    put_f32(&mut buf, 108, NIFTI_DATA_OFFSET as f32); // vox_offset
    put_f32(&mut buf, 112, 1.0); // scl_slope
    put_i16(&mut buf, 252, 1); // qform_code: identity quaternion + offset
    for a in 0..3 {
        put_f32(&mut buf, 268 + 4 * a, g.origin()[a] as f32);
    }
    buf[344..348].copy_from_slice(b"n+1\0");

    let data = &mut buf[NIFTI_DATA_OFFSET..];
    for (i, &v) in g.values().iter().enumerate() {
        match dtype {
            NiftiDtype::Int16 => {
                let q = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                data[2 * i..2 * i + 2].copy_from_slice(&q.to_le_bytes());
            }
            NiftiDtype::Float32 => {
                data[4 * i..4 * i + 4].copy_from_slice(&(v as f32).to_le_bytes());
            }
            NiftiDtype::Float64 => {
                data[8 * i..8 * i + 8].copy_from_slice(&v.to_le_bytes());
            }
        }
    }
    atomic_write(path, &buf)
}

pub fn read_nifti(path: &Path) -> Result<Grid3> {
    let buf = fs::read(path)?;
    let bad = |msg: String| Error::Parse(format!("{}: {msg}", path.display()));
    if buf.len() < NIFTI_DATA_OFFSET {
        return Err(bad("file shorter than NIfTI-1 header".into()));
    }
    if get_i32(&buf, 0) != NIFTI_HEADER_SIZE as i32 {
        return Err(bad(format!("sizeof_hdr = {}, expected 348 (little-endian)", get_i32(&buf, 0))));
    }
    if &buf[344..348] != b"n+1\0" {
        return Err(bad("magic is not \"n+1\" (single-file NIfTI-1)".into()));
    }
    let ndim = get_i16(&buf, 40);
    if !(1..=3).contains(&ndim) {
        return Err(bad(format!("ndim = {ndim}, only volumes with <= 3 dims supported")));
    }
    let mut dims = [1usize; 3];
    for (a, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = get_i16(&buf, 42 + 2 * a);
        if v < 1 {
            return Err(bad(format!("dim[{}] = {v}", a + 1)));
        }
        *d = v as usize;
    }
    let dtype = match get_i16(&buf, 70) {
        4 => NiftiDtype::Int16,
        16 => NiftiDtype::Float32,
        64 => NiftiDtype::Float64,
        other => return Err(bad(format!("unsupported datatype code {other} (want 4, 16 or 64)"))),
    };
    let mut spacing = [1.0f64; 3];
    for a in 0..3 {
        let v = get_f32(&buf, 80 + 4 * a) as f64;
        if v > 0.0 {
            spacing[a] = v;
        }
    }
    let vox_offset = get_f32(&buf, 108) as usize;
    let offset = if vox_offset >= NIFTI_DATA_OFFSET { vox_offset } else { NIFTI_DATA_OFFSET };
    let mut origin = [0.0f64; 3];
    for a in 0..3 {
        origin[a] = get_f32(&buf, 268 + 4 * a) as f64;
    }
    let n: usize = dims.iter().product();
    let need = offset + n * dtype.bytes();
    if buf.len() < need {
        return Err(bad(format!(
            "payload truncated: {} bytes, header declares {need}",
            buf.len()
        )));
    }
    let data = &buf[offset..need];
    let values: Vec<f64> = (0..n)
        .map(|i| match dtype {
            NiftiDtype::Int16 => get_i16(data, 2 * i) as f64,
            NiftiDtype::Float32 => get_f32(data, 4 * i) as f64,
            NiftiDtype::Float64 => f64::from_le_bytes(data[8 * i..8 * i + 8].try_into().unwrap()),
        })
        .collect();
    Grid3::new(dims, spacing, origin, values)
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct RawHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    byte_order: String,
}

/// Raw pair: `<name>.json` metadata next to `<name>.f32` little-endian data.
pub fn write_raw(json_path: &Path, g: &Grid3) -> Result<()> {
    let hdr = RawHeader {
        dims: g.dims(),
        spacing: g.spacing(),
        origin: g.origin(),
        dtype: "f32".into(),
        byte_order: "little".into(),
    };
    atomic_write(json_path, serde_json::to_string_pretty(&hdr)?.as_bytes())?;
    let mut data = Vec::with_capacity(g.len() * 4);
    for &v in g.values() {
        data.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(&json_path.with_extension("f32"), &data)
}

pub fn read_raw(json_path: &Path) -> Result<Grid3> {
    let text = fs::read_to_string(json_path)?;
    let hdr: RawHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", json_path.display())))?;
    if hdr.dtype != "f32" || hdr.byte_order != "little" {
        return Err(Error::Parse(format!(
            "{}: only little-endian f32 raw volumes supported, got {}/{}",
            json_path.display(),
            hdr.dtype,
            hdr.byte_order
        )));
    }
    let data = fs::read(json_path.with_extension("f32"))?;
    let n: usize = hdr.dims.iter().product();
    if data.len() != 4 * n {
        return Err(Error::Parse(format!(
            "{}: payload is {} bytes, dims imply {}",
            json_path.with_extension("f32").display(),
            data.len(),
            4 * n
        )));
    }
    let values = (0..n)
        .map(|i| f32::from_le_bytes(data[4 * i..4 * i + 4].try_into().unwrap()) as f64)
        .collect();
    Grid3::new(hdr.dims, hdr.spacing, hdr.origin, values)
}

/// Dispatches on extension: `.nii` or `.json` (raw pair).
pub fn read_volume(path: &Path) -> Result<Grid3> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => read_nifti(path),
        Some("json") => read_raw(path),
        _ => Err(Error::Parse(format!(
            "{}: unknown volume extension (expected .nii or .json)",
            path.display()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Landmark {
    pub name: String,
    /// world-mm position per frame
    pub points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals_mm: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LandmarkFile {
    pub frames: usize,
    pub landmarks: Vec<Landmark>,
}

impl LandmarkFile {
    pub fn validate(&self) -> Result<()> {
        for lm in &self.landmarks {
            if lm.points.len() != self.frames {
                return Err(Error::Parse(format!(
                    "landmark '{}' has {} points but file declares {} frames",
                    lm.name,
                    lm.points.len(),
                    self.frames
                )));
            }
            if let Some(r) = &lm.residuals_mm {
                if r.len() != self.frames {
                    return Err(Error::Parse(format!(
                        "landmark '{}' has {} residuals but file declares {} frames",
                        lm.name,
                        r.len(),
                        self.frames
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let f: LandmarkFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        f.validate()?;
        Ok(f)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    version: u32,
    hidden_layers: usize,
    width: usize,
    omega: f64,
    convention: String,
    source_index: usize,
    target_index: usize,
    param_count: usize,
    frame_center: [f64; 3],
    frame_half_extent: [f64; 3],
    grid_dims: [usize; 3],
    grid_spacing: [f64; 3],
    grid_origin: [f64; 3],
    config: Option<RegConfig>,
}

/// Checkpoint layout: u64 LE header length, JSON header, f64 LE parameters.
pub fn write_checkpoint(path: &Path, reg: &PairRegistration, cfg: Option<&RegConfig>) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        hidden_layers: reg.model.hidden_layers(),
        width: reg.model.width(),
        omega: reg.model.omega(),
        convention: reg.convention.clone(),
        source_index: reg.source_index,
        target_index: reg.target_index,
        param_count: reg.model.param_count(),
        frame_center: reg.frame.center(),
        frame_half_extent: reg.frame.half_extent(),
        grid_dims: reg.grid_dims,
        grid_spacing: reg.grid_spacing,
        grid_origin: reg.grid_origin,
        config: cfg.cloned(),
    };
    let hjson = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + hjson.len() + 8 * header.param_count);
    buf.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    buf.extend_from_slice(&hjson);
    for p in reg.model.params_f64() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> Result<PairRegistration> {
    let buf = fs::read(path)?;
    let bad = |msg: String| Error::Parse(format!("{}: {msg}", path.display()));
    if buf.len() < 8 {
        return Err(bad("checkpoint shorter than its length prefix".into()));
    }
    let hlen = u64::from_le_bytes(buf[0..8].try_into().unwrap()) as usize;
    if buf.len() < 8 + hlen {
        return Err(bad("checkpoint header truncated".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&buf[8..8 + hlen])
        .map_err(|e| bad(format!("bad header JSON: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    if header.convention != CONVENTION {
        return Err(bad(format!(
            "unknown direction convention '{}' (expected '{CONVENTION}')",
            header.convention
        )));
    }
    let payload = &buf[8 + hlen..];
    if payload.len() != 8 * header.param_count {
        return Err(bad(format!(
            "parameter payload is {} bytes, header declares {} parameters",
            payload.len(),
            header.param_count
        )));
    }
    let params: Vec<f64> = (0..header.param_count)
        .map(|i| f64::from_le_bytes(payload[8 * i..8 * i + 8].try_into().unwrap()))
        .collect();
    let mut model =
        SirenModel::<f64>::init(0, header.hidden_layers, header.width, header.omega)?;
    if model.param_count() != header.param_count {
        return Err(bad(format!(
            "declared architecture {}x{} has {} parameters, header says {}",
            header.hidden_layers,
            header.width,
            model.param_count(),
            header.param_count
        )));
    }
    model.set_flat_params(&params)?;
    Ok(PairRegistration {
        model,
        source_index: header.source_index,
        target_index: header.target_index,
        convention: header.convention,
        loss_trace: Vec::new(),
        frame: NormFrame::new(header.frame_center, header.frame_half_extent)?,
        grid_dims: header.grid_dims,
        grid_spacing: header.grid_spacing,
        grid_origin: header.grid_origin,
    })
}

/// Dense displacement field on the target grid: three volumes + convention meta.
pub fn write_field(dir: &Path, reg: &PairRegistration) -> Result<()> {
    let [ux, uy, uz] = crate::pipeline::displacement_field(reg)?;
    fs::create_dir_all(dir)?;
    write_nifti(&dir.join("u_x.nii"), &ux, NiftiDtype::Float32)?;
    write_nifti(&dir.join("u_y.nii"), &uy, NiftiDtype::Float32)?;
    write_nifti(&dir.join("u_z.nii"), &uz, NiftiDtype::Float32)?;
    let meta = serde_json::json!({
        "convention": reg.convention,
        "units": "mm",
        "source_index": reg.source_index,
        "target_index": reg.target_index,
    });
    atomic_write(&dir.join("field.json"), serde_json::to_string_pretty(&meta)?.as_bytes())
}

// ---- dataset layout -------------------------------------------------------

pub fn frame_path(dataset: &Path, t: usize) -> PathBuf {
    dataset.join("frames").join(format!("frame_{t:03}.nii"))
}
pub fn mask_path(dataset: &Path, t: usize) -> PathBuf {
    dataset.join("masks").join(format!("mask_{t:03}.nii"))
}
pub fn sdf_path(dataset: &Path, t: usize) -> PathBuf {
    dataset.join("sdfs").join(format!("sdf_{t:03}.nii"))
}
pub fn checkpoint_path(regdir: &Path, source: usize, target: usize) -> PathBuf {
    regdir.join(format!("pair_{source:03}_to_{target:03}.ckpt"))
}

/// Writes a complete dataset directory: frames/, masks/, sdfs/, landmarks.json.
pub fn write_dataset(
    dir: &Path,
    frames: &[FrameBundle],
    landmarks: &LandmarkFile,
) -> Result<()> {
    for f in frames {
        write_nifti(&frame_path(dir, f.frame_index), &f.ct, NiftiDtype::Float32)?;
        write_nifti(&mask_path(dir, f.frame_index), &f.lv_mask, NiftiDtype::Int16)?;
        write_nifti(&sdf_path(dir, f.frame_index), &f.sdf, NiftiDtype::Float32)?;
    }
    landmarks.write(&dir.join("landmarks.json"))
}

/// Number of frames present in a dataset directory.
pub fn dataset_frame_count(dir: &Path) -> Result<usize> {
    let frames_dir = dir.join("frames");
    if !frames_dir.is_dir() {
        return Err(Error::Parse(format!(
            "{}: not a dataset (missing frames/)",
            dir.display()
        )));
    }
    let mut t = 0;
    while frame_path(dir, t).is_file() {
        t += 1;
    }
    if t < 2 {
        return Err(Error::Parse(format!(
            "{}: dataset has {t} frames, need at least 2",
            dir.display()
        )));
    }
    Ok(t)
}

/// Loads a dataset into frame bundles; SDFs are read if present, else
/// recomputed, and sampling masks are rebuilt with the given dilation.
pub fn load_dataset(dir: &Path, dilation_mm: f64) -> Result<Vec<FrameBundle>> {
    let n = dataset_frame_count(dir)?;
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let ct = read_nifti(&frame_path(dir, t))?;
        let lv_mask = read_nifti(&mask_path(dir, t))?;
        ct.check_same_geometry(&lv_mask, "frame vs mask")?;
        let sdf = if sdf_path(dir, t).is_file() {
            read_nifti(&sdf_path(dir, t))?
        } else {
            crate::sdf::signed_distance_field(&lv_mask)?
        };
        let sample_mask = crate::volume::dilate_mask(&lv_mask, dilation_mm)?;
        frames.push(FrameBundle {
            frame_index: t,
            cycle_percent: 100.0 * t as f64 / n as f64,
            ct,
            lv_mask,
            sdf,
            sample_mask,
        });
    }
    Ok(frames)
}

// ---- CSV ------------------------------------------------------------------

/// CSV with a config-echo comment line, a header row, then data rows.
pub fn write_csv(path: &Path, config_echo: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::new();
    text.push_str("# config: ");
    text.push_str(config_echo);
    text.push('\n');
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}
