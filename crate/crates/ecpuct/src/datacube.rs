//! Thermogram storage: the frame cube, its flattened pixel-matrix view,
//! regions of interest, and file formats.
//!
//! A cube holds `Q` frames of `Nx x Ny` pixels as `f64` in memory. The
//! flattened form used by the detectors is a `Q x M` matrix with
//! `M = Nx * Ny` and pixel `j = x * Ny + y` (the y index varies fastest).
//! On disk, cubes travel as TCUBE: a little-endian binary format with a
//! 24-byte header and `f32` samples in frame-major order, matching the
//! in-memory flattening exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

const TCUBE_MAGIC: &[u8; 4] = b"TCUB";
const TCUBE_VERSION: u32 = 1;

/// What a cube's samples mean. Stored in the sidecar, checked by the
/// pipeline stages so a compressed cube is not compressed twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeKind {
    /// Camera (or synthetic) temperatures, heating trend included.
    Raw,
    /// Trend removed, excitation band preserved.
    Detrended,
    /// Pulse-compressed impulse-response estimates.
    ImpulseResponse,
}

impl CubeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CubeKind::Raw => "raw",
            CubeKind::Detrended => "detrended",
            CubeKind::ImpulseResponse => "impulse_response",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(CubeKind::Raw),
            "detrended" => Ok(CubeKind::Detrended),
            "impulse_response" => Ok(CubeKind::ImpulseResponse),
            other => Err(Error::Format(format!("unknown cube kind '{other}'"))),
        }
    }
}

/// Flattened cube: frames are rows, pixels are columns (`j = x * Ny + y`).
pub type PixelMatrix = Array2<f64>;

/// Column index of pixel `(x, y)` in a pixel matrix with `ny` columns per
/// row of the image.
pub fn pixel_index(x: usize, y: usize, ny: usize) -> usize {
    x * ny + y
}

/// Inverse of [`pixel_index`].
pub fn pixel_coords(j: usize, ny: usize) -> (usize, usize) {
    (j / ny, j % ny)
}

/// A sequence of thermal frames with a fixed frame rate.
#[derive(Debug, Clone)]
pub struct ThermogramCube {
    /// Shape `(Q, Nx, Ny)`.
    pub data: Array3<f64>,
    pub fps: f64,
    pub kind: CubeKind,
}

impl ThermogramCube {
    pub fn new(data: Array3<f64>, fps: f64, kind: CubeKind) -> Result<Self> {
        let (q, nx, ny) = data.dim();
        if q == 0 || nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter(format!(
                "cube dimensions must all be nonzero, got {q}x{nx}x{ny}"
            )));
        }
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "frame rate must be positive and finite, got {fps}"
            )));
        }
        Ok(ThermogramCube { data, fps, kind })
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn nx(&self) -> usize {
        self.data.dim().1
    }

    pub fn ny(&self) -> usize {
        self.data.dim().2
    }

    pub fn num_pixels(&self) -> usize {
        self.nx() * self.ny()
    }

    /// Timestamp of frame `q` relative to the first frame.
    pub fn frame_time(&self, q: usize) -> f64 {
        q as f64 / self.fps
    }

    pub fn frame(&self, q: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), q)
    }

    /// Time series of one pixel across all frames.
    pub fn pixel_series(&self, x: usize, y: usize) -> Vec<f64> {
        self.data
            .slice(ndarray::s![.., x, y])
            .iter()
            .cloned()
            .collect()
    }

    /// Borrowed `Q x M` view of the cube; no data is copied.
    pub fn as_pixel_matrix(&self) -> ArrayView2<'_, f64> {
        let (q, nx, ny) = self.data.dim();
        self.data
            .view()
            .into_shape((q, nx * ny))
            .expect("cube storage is contiguous")
    }

    /// Owned `Q x M` copy of the cube.
    pub fn to_pixel_matrix(&self) -> PixelMatrix {
        self.as_pixel_matrix().to_owned()
    }

    /// Rebuilds a cube from a flattened pixel matrix.
    pub fn from_pixel_matrix(
        matrix: &PixelMatrix,
        nx: usize,
        ny: usize,
        fps: f64,
        kind: CubeKind,
    ) -> Result<Self> {
        let (q, m) = matrix.dim();
        if m != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "pixel matrix has {m} columns but {nx}x{ny} = {} pixels were requested",
                nx * ny
            )));
        }
        let data = matrix
            .clone()
            .into_shape((q, nx, ny))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        ThermogramCube::new(data, fps, kind)
    }

    /// Writes the cube as TCUBE v1. Samples are narrowed to `f32`;
    /// non-finite or `f32`-overflowing values are rejected.
    pub fn write_tcube(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(TCUBE_MAGIC)?;
        w.write_all(&TCUBE_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_frames() as u32).to_le_bytes())?;
        w.write_all(&(self.nx() as u32).to_le_bytes())?;
        w.write_all(&(self.ny() as u32).to_le_bytes())?;
        w.write_all(&(self.fps as f32).to_le_bytes())?;
        for &v in self.data.iter() {
            if !v.is_finite() || v.abs() > f32::MAX as f64 {
                return Err(Error::InvalidParameter(format!(
                    "sample {v} cannot be stored as f32"
                )));
            }
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a TCUBE v1 file, widening samples to `f64`.
    pub fn read_tcube(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TCUBE_MAGIC {
            return Err(Error::Format(format!(
                "{} is not a TCUBE file (bad magic {:?})",
                path.display(),
                magic
            )));
        }
        let version = read_u32(&mut r)?;
        if version != TCUBE_VERSION {
            return Err(Error::Format(format!(
                "unsupported TCUBE version {version}, expected {TCUBE_VERSION}"
            )));
        }
        let q = read_u32(&mut r)? as usize;
        let nx = read_u32(&mut r)? as usize;
        let ny = read_u32(&mut r)? as usize;
        let mut fps_bytes = [0u8; 4];
        r.read_exact(&mut fps_bytes)?;
        let fps = f32::from_le_bytes(fps_bytes) as f64;
        let count = q
            .checked_mul(nx)
            .and_then(|v| v.checked_mul(ny))
            .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
        let mut payload = vec![0u8; count * 4];
        r.read_exact(&mut payload).map_err(|_| {
            Error::Format(format!(
                "TCUBE payload truncated: expected {count} f32 samples"
            ))
        })?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format(
                "TCUBE file has trailing bytes after the payload".into(),
            ));
        }
        let mut data = Vec::with_capacity(count);
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            if !v.is_finite() {
                return Err(Error::Format("TCUBE payload contains non-finite samples".into()));
            }
            data.push(v);
        }
        let array = Array3::from_shape_vec((q, nx, ny), data)
            .map_err(|e| Error::Format(e.to_string()))?;
        ThermogramCube::new(array, fps, CubeKind::Raw)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes one frame as CSV, one image row per line, `y` across columns.
pub fn write_frame_csv(frame: ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for row in frame.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a rectangular CSV of finite numbers as one frame.
pub fn read_frame_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: '{}' is not a number",
                    path.display(),
                    lineno + 1,
                    field.trim()
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "{}:{}: non-finite sample",
                    path.display(),
                    lineno + 1
                )));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "{}:{}: ragged row ({} fields, expected {})",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    let nx = rows.len();
    let ny = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((nx, ny), flat).map_err(|e| Error::Format(e.to_string()))
}

/// A rectangular region of interest in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(
                "region of interest must have nonzero width and height".into(),
            ));
        }
        Ok(Roi {
            x0,
            y0,
            width,
            height,
        })
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Checks the region against image bounds.
    pub fn validate(&self, nx: usize, ny: usize) -> Result<()> {
        if self.x0 + self.width > nx || self.y0 + self.height > ny {
            return Err(Error::InvalidParameter(format!(
                "region x0={} y0={} w={} h={} does not fit a {}x{} image",
                self.x0, self.y0, self.width, self.height, nx, ny
            )));
        }
        Ok(())
    }

    /// The region shifted by whole pixels, bounds-checked against an image.
    pub fn translated(&self, dx: isize, dy: isize, nx: usize, ny: usize) -> Result<Roi> {
        let x0 = self.x0 as isize + dx;
        let y0 = self.y0 as isize + dy;
        if x0 < 0 || y0 < 0 {
            return Err(Error::InvalidParameter(format!(
                "translated region origin ({x0}, {y0}) leaves the image"
            )));
        }
        let out = Roi {
            x0: x0 as usize,
            y0: y0 as usize,
            width: self.width,
            height: self.height,
        };
        out.validate(nx, ny)?;
        Ok(out)
    }

    /// Flattened pixel-matrix column indices of the region, ascending.
    pub fn pixel_indices(&self, nx: usize, ny: usize) -> Result<Vec<usize>> {
        self.validate(nx, ny)?;
        let mut out = Vec::with_capacity(self.num_pixels());
        for x in self.x0..self.x0 + self.width {
            for y in self.y0..self.y0 + self.height {
                out.push(pixel_index(x, y, ny));
            }
        }
        Ok(out)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

/// Key=value sidecar next to a cube file (`<cube>.meta`), recording what
/// the samples are and how they were produced.
#[derive(Debug, Clone, Default)]
pub struct Sidecar {
    pub entries: BTreeMap<String, String>,
}

impl Sidecar {
    pub fn sidecar_path(cube_path: impl AsRef<Path>) -> std::path::PathBuf {
        let p = cube_path.as_ref();
        let mut os = p.as_os_str().to_owned();
        os.push(".meta");
        std::path::PathBuf::from(os)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn kind(&self) -> Result<Option<CubeKind>> {
        match self.get("kind") {
            None => Ok(None),
            Some(s) => CubeKind::parse(s).map(Some),
        }
    }

    /// Writes entries as sorted `key=value` lines.
    pub fn save_for(&self, cube_path: impl AsRef<Path>) -> Result<()> {
        let path = Self::sidecar_path(cube_path);
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads the sidecar next to a cube, or an empty one if none exists.
    pub fn load_for(cube_path: impl AsRef<Path>) -> Result<Sidecar> {
        let path = Self::sidecar_path(cube_path);
        if !path.exists() {
            return Ok(Sidecar::default());
        }
        let text = std::fs::read_to_string(&path)?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Sidecar { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn sample_cube() -> ThermogramCube {
        let data = Array3::from_shape_fn((4, 3, 5), |(q, x, y)| {
            q as f64 * 100.0 + x as f64 * 10.0 + y as f64 + 0.25
        });
        ThermogramCube::new(data, 25.0, CubeKind::Raw).unwrap()
    }

    #[test]
    fn pixel_matrix_flattening_uses_y_fastest() {
        let cube = sample_cube();
        let m = cube.to_pixel_matrix();
        assert_eq!(m.dim(), (4, 15));
        for x in 0..3 {
            for y in 0..5 {
                let j = pixel_index(x, y, 5);
                assert_eq!(pixel_coords(j, 5), (x, y));
                for q in 0..4 {
                    assert_eq!(m[[q, j]], cube.data[[q, x, y]]);
                }
            }
        }
        let back = ThermogramCube::from_pixel_matrix(&m, 3, 5, 25.0, CubeKind::Raw).unwrap();
        assert_eq!(back.data, cube.data);
    }

    #[test]
    fn tcube_round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.tcube");
        let cube = sample_cube();
        cube.write_tcube(&path).unwrap();
        let back = ThermogramCube::read_tcube(&path).unwrap();
        assert_eq!(back.num_frames(), 4);
        assert_eq!(back.nx(), 3);
        assert_eq!(back.ny(), 5);
        assert_eq!(back.fps, 25.0);
        for (a, b) in cube.data.iter().zip(back.data.iter()) {
            let quantised = *a as f32 as f64;
            assert_eq!(*b, quantised);
            assert!((a - b).abs() <= a.abs() * 1e-7);
        }
    }

    #[test]
    fn tcube_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.tcube");
        let cube = sample_cube();
        cube.write_tcube(&path).unwrap();

        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(ThermogramCube::read_tcube(&path).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        std::fs::write(&path, &bad_version).unwrap();
        assert!(ThermogramCube::read_tcube(&path).is_err());

        let truncated = &good[..good.len() - 3];
        std::fs::write(&path, truncated).unwrap();
        assert!(ThermogramCube::read_tcube(&path).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        std::fs::write(&path, &trailing).unwrap();
        assert!(ThermogramCube::read_tcube(&path).is_err());
    }

    #[test]
    fn non_finite_samples_cannot_be_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cube = sample_cube();
        cube.data[[0, 0, 0]] = f64::NAN;
        assert!(cube.write_tcube(dir.path().join("bad.tcube")).is_err());
    }

    #[test]
    fn roi_indices_and_translation() {
        let roi = Roi::new(1, 2, 2, 3).unwrap();
        let idx = roi.pixel_indices(4, 6).unwrap();
        assert_eq!(idx, vec![8, 9, 10, 14, 15, 16]);
        assert!(roi.pixel_indices(2, 6).is_err());
        let moved = roi.translated(1, -2, 4, 6).unwrap();
        assert_eq!(moved, Roi::new(2, 0, 2, 3).unwrap());
        assert!(roi.translated(-2, 0, 4, 6).is_err());
        assert!(roi.translated(2, 0, 4, 6).is_err());
    }

    #[test]
    fn csv_frame_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.csv");
        let cube = sample_cube();
        write_frame_csv(cube.frame(2), &path).unwrap();
        let frame = read_frame_csv(&path).unwrap();
        assert_eq!(frame.dim(), (3, 5));
        for x in 0..3 {
            for y in 0..5 {
                assert_eq!(frame[[x, y]], cube.data[[2, x, y]]);
            }
        }
    }

    #[test]
    fn csv_rejects_ragged_and_bad_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        assert!(read_frame_csv(&path).is_err());
        std::fs::write(&path, "1,2,x\n").unwrap();
        assert!(read_frame_csv(&path).is_err());
    }

    #[test]
    fn sidecar_round_trip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let cube_path = dir.path().join("a.tcube");
        let mut meta = Sidecar::default();
        meta.set("kind", "impulse_response");
        meta.set("code_order", 13);
        meta.set("t_h", 30.0);
        meta.save_for(&cube_path).unwrap();
        let text = std::fs::read_to_string(Sidecar::sidecar_path(&cube_path)).unwrap();
        assert_eq!(text, "code_order=13\nkind=impulse_response\nt_h=30\n");
        let back = Sidecar::load_for(&cube_path).unwrap();
        assert_eq!(back.kind().unwrap(), Some(CubeKind::ImpulseResponse));
        let none = Sidecar::load_for(dir.path().join("missing.tcube")).unwrap();
        assert!(none.entries.is_empty());
    }
}
