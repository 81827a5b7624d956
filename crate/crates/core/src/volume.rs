//! Scalar CT-like volumes: file format, trilinear sampling and analytic
//! phantoms.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const AIR_HU: i16 = -1000;
pub const TISSUE_HU: i16 = 40;
pub const DEFAULT_BACKGROUND: f64 = -1024.0;

/// 3-D scalar grid; voxel `(i, j, k)` has its center at
/// `origin + (i, j, k) * spacing`. Values are stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct CtVolume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub values: Vec<i16>,
    /// Scalar reported for points outside the voxel-center bounding box.
    pub background: f64,
}

impl CtVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], values: Vec<i16>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Param(format!("volume dims must be >= 2, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Param(format!("volume spacing must be positive, got {spacing:?}")));
        }
        let n = dims.iter().product::<usize>();
        if values.len() != n {
            return Err(Error::shape("voxel count", n, values.len()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            values,
            background: DEFAULT_BACKGROUND,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: i16) -> Result<Self> {
        Self::new(dims, spacing, [0.0; 3], vec![value; dims.iter().product()])
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> i16 {
        self.values[self.index(i, j, k)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// World-space bounds of the voxel-center lattice.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let hi = std::array::from_fn(|a| self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a]);
        (self.origin, hi)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    pub fn center(&self) -> [f64; 3] {
        let (lo, hi) = self.bounds();
        std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]))
    }

    /// Trilinear interpolation; the background value outside the bounds.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.spacing[a];
            let top = (self.dims[a] - 1) as f64;
            if !(u >= 0.0 && u <= top) {
                return self.background;
            }
            let i = (u.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let v = |di: usize, dj: usize, dk: usize| self.voxel(i + di, j + dj, k + dk) as f64;
        let c00 = v(0, 0, 0) * (1.0 - fx) + v(1, 0, 0) * fx;
        let c10 = v(0, 1, 0) * (1.0 - fx) + v(1, 1, 0) * fx;
        let c01 = v(0, 0, 1) * (1.0 - fx) + v(1, 0, 1) * fx;
        let c11 = v(0, 1, 1) * (1.0 - fx) + v(1, 1, 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Central-difference gradient with one-voxel steps along each axis.
    pub fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| {
            let h = self.spacing[a];
            let mut lo = p;
            let mut hi = p;
            lo[a] -= h;
            hi[a] += h;
            (self.sample(hi) - self.sample(lo)) / (2.0 * h)
        })
    }
}

fn parse_triple<T: std::str::FromStr>(key: &str, value: &str, path: &Path) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let bad = || Error::Load {
        path: path.to_path_buf(),
        reason: format!("malformed `{key}` entry: {value:?}"),
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| bad())?);
    }
    out.try_into().map_err(|_| bad())
}

/// Reads a text header plus its little-endian int16 raw payload.
pub fn load_volume(path: &Path) -> Result<CtVolume> {
    let load_err = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
    let (mut dims, mut spacing, mut origin, mut dtype, mut data) = (None, None, None, None, None);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| load_err(format!("line {}: expected `key = value`", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "dims" => dims = Some(parse_triple::<usize>(key, value, path)?),
            "spacing" => spacing = Some(parse_triple::<f64>(key, value, path)?),
            "origin" => origin = Some(parse_triple::<f64>(key, value, path)?),
            "dtype" => dtype = Some(value.to_string()),
            "data" => data = Some(value.to_string()),
            other => return Err(load_err(format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| load_err(format!("missing `{k}` entry"));
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let spacing = spacing.ok_or_else(|| missing("spacing"))?;
    let origin = origin.ok_or_else(|| missing("origin"))?;
    let dtype = dtype.ok_or_else(|| missing("dtype"))?;
    let data = data.ok_or_else(|| missing("data"))?;
    if dtype != "int16" {
        return Err(load_err(format!("unsupported dtype `{dtype}`")));
    }
    let raw_path = path.parent().unwrap_or(Path::new(".")).join(&data);
    let bytes = fs::read(&raw_path).map_err(|e| load_err(format!("{}: {e}", raw_path.display())))?;
    let n: usize = dims.iter().product();
    if bytes.len() != 2 * n {
        return Err(load_err(format!(
            "size mismatch: dims {dims:?} need {} bytes, payload has {}",
            2 * n,
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
    CtVolume::new(dims, spacing, origin, values).map_err(|e| load_err(e.to_string()))
}

/// Writes `path` (header) and `<stem>.raw` beside it; returns the raw path.
pub fn write_volume(vol: &CtVolume, path: &Path) -> Result<PathBuf> {
    let stem = path
        .file_stem()
        .ok_or_else(|| Error::Param(format!("volume path {} has no file name", path.display())))?
        .to_string_lossy();
    let raw_name = format!("{stem}.raw");
    let raw_path = path.parent().unwrap_or(Path::new(".")).join(&raw_name);
    let mut header = String::new();
    let [nx, ny, nz] = vol.dims;
    let [sx, sy, sz] = vol.spacing;
    let [ox, oy, oz] = vol.origin;
    writeln!(header, "dims = {nx} {ny} {nz}").unwrap();
    writeln!(header, "spacing = {sx} {sy} {sz}").unwrap();
    writeln!(header, "origin = {ox} {oy} {oz}").unwrap();
    writeln!(header, "dtype = int16").unwrap();
    writeln!(header, "data = {raw_name}").unwrap();
    let bytes: Vec<u8> = vol.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, header).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    fs::write(&raw_path, bytes).map_err(|e| Error::io(format!("writing {}", raw_path.display()), e))?;
    Ok(raw_path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    Sphere,
    Tube,
    Torus,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "tube" => Ok(Self::Tube),
            "torus" => Ok(Self::Torus),
            _ => Err(Error::Param(format!("unknown phantom kind {s:?}"))),
        }
    }
}

/// Shape parameters in voxel units unless noted.
///
/// * sphere: `radius` around the volume center.
/// * tube: `radius` around the axis parallel to z through the center, with
///   optional haustra-like constrictions of relative depth `fold_amplitude`
///   every `fold_period` voxels.
/// * torus: tube of `radius` around a ring of `major_radius` in the central
///   xy plane.
///
/// `hollow = true` puts air inside the shape and tissue outside (a lumen);
/// `hollow = false` is the solid counterpart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomParams {
    pub radius: f64,
    pub major_radius: f64,
    pub fold_amplitude: f64,
    pub fold_period: f64,
    pub hollow: bool,
    /// Isotropic voxel size in millimeters.
    pub spacing_mm: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            radius: 8.0,
            major_radius: 0.0,
            fold_amplitude: 0.0,
            fold_period: 16.0,
            hollow: true,
            spacing_mm: 1.0,
        }
    }
}

/// A rasterized phantom plus the analytic parameters it came from.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: CtVolume,
    pub kind: PhantomKind,
    pub params: PhantomParams,
    /// Shape center in voxel coordinates.
    pub center_voxel: [f64; 3],
}

impl Phantom {
    pub fn center_world(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.volume.origin[a] + self.center_voxel[a] * self.volume.spacing[a])
    }

    pub fn radius_mm(&self) -> f64 {
        self.params.radius * self.params.spacing_mm
    }

    /// Tube lumen radius at axial voxel coordinate `z`.
    pub fn tube_radius_at(&self, z: f64) -> f64 {
        tube_radius(&self.params, z)
    }
}

fn tube_radius(p: &PhantomParams, z: f64) -> f64 {
    if p.fold_amplitude == 0.0 {
        return p.radius;
    }
    let phase = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * z / p.fold_period).cos();
    p.radius * (1.0 - p.fold_amplitude * phase.powi(6))
}

pub fn make_phantom(kind: PhantomKind, dims: [usize; 3], params: PhantomParams) -> Result<Phantom> {
    if dims.iter().any(|&d| d < 8) {
        return Err(Error::Param(format!("phantom dims must be >= 8, got {dims:?}")));
    }
    if !(params.radius > 0.0) {
        return Err(Error::Param(format!("radius must be positive, got {}", params.radius)));
    }
    if !(params.spacing_mm > 0.0) {
        return Err(Error::Param(format!("spacing must be positive, got {}", params.spacing_mm)));
    }
    match kind {
        PhantomKind::Torus if params.major_radius <= params.radius => {
            return Err(Error::Param(format!(
                "torus major radius {} must exceed tube radius {}",
                params.major_radius, params.radius
            )))
        }
        PhantomKind::Tube if !(0.0..1.0).contains(&params.fold_amplitude) || !(params.fold_period > 0.0) => {
            return Err(Error::Param("fold amplitude must be in [0, 1) with a positive period".into()))
        }
        _ => {}
    }
    let center: [f64; 3] = std::array::from_fn(|a| (dims[a] - 1) as f64 / 2.0);
    let inside = |i: usize, j: usize, k: usize| -> bool {
        let d = [i as f64 - center[0], j as f64 - center[1], k as f64 - center[2]];
        match kind {
            PhantomKind::Sphere => (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() <= params.radius,
            PhantomKind::Tube => (d[0] * d[0] + d[1] * d[1]).sqrt() <= tube_radius(&params, k as f64),
            PhantomKind::Torus => {
                let ring = (d[0] * d[0] + d[1] * d[1]).sqrt() - params.major_radius;
                (ring * ring + d[2] * d[2]).sqrt() <= params.radius
            }
        }
    };
    let (in_val, out_val) = if params.hollow {
        (AIR_HU, TISSUE_HU)
    } else {
        (TISSUE_HU, AIR_HU)
    };
    let mut values = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                values.push(if inside(i, j, k) { in_val } else { out_val });
            }
        }
    }
    let volume = CtVolume::new(dims, [params.spacing_mm; 3], [0.0; 3], values)?;
    Ok(Phantom {
        volume,
        kind,
        params,
        center_voxel: center,
    })
}
