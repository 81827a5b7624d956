//! Perspective ray casting with front-to-back compositing and a headlight
//! co-located with the camera.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::volume::CtVolume;

pub type Vec3 = [f64; 3];

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 1e-12 && n.is_finite()).then(|| scale(a, 1.0 / n))
}

/// Piecewise-linear map from scalar value to RGBA, clamped at both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferFunction {
    points: Vec<(f64, [f64; 4])>,
}

impl TransferFunction {
    pub fn new(points: Vec<(f64, [f64; 4])>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Param("transfer function needs at least one control point".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Param("transfer function scalars must be strictly increasing".into()));
        }
        if points.iter().any(|(_, c)| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(Error::Param("transfer function RGBA must lie in [0, 1]".into()));
        }
        Ok(Self { points })
    }

    /// Air transparent, tissue opaque pale pink; opacity ramps over -500..0.
    pub fn colon() -> Self {
        let pink = [0.85, 0.60, 0.55];
        Self::new(vec![
            (-500.0, [pink[0], pink[1], pink[2], 0.0]),
            (0.0, [pink[0], pink[1], pink[2], 1.0]),
        ])
        .expect("static control points")
    }

    pub fn points(&self) -> &[(f64, [f64; 4])] {
        &self.points
    }

    pub fn eval(&self, s: f64) -> [f64; 4] {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if s <= first.0 {
            return first.1;
        }
        if s >= last.0 {
            return last.1;
        }
        let i = self.points.partition_point(|p| p.0 <= s);
        let (s0, c0) = self.points[i - 1];
        let (s1, c1) = self.points[i];
        let t = (s - s0) / (s1 - s0);
        std::array::from_fn(|k| c0[k] + (c1[k] - c0[k]) * t)
    }
}

impl Default for TransferFunction {
    fn default() -> Self {
        Self::colon()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderParams {
    /// Ray-marching step in millimeters.
    pub step_size: f64,
    /// Step length at which transfer-function opacities are specified.
    pub reference_step: f64,
    /// Accumulated opacity at which a ray stops.
    pub termination: f64,
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
    pub background: [f64; 3],
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            reference_step: 1.0,
            termination: 0.99,
            ambient: 0.1,
            diffuse: 0.7,
            specular: 0.2,
            shininess: 20.0,
            background: [0.0; 3],
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.reference_step > 0.0) {
            return Err(Error::Param("step sizes must be positive".into()));
        }
        if !(self.termination > 0.0 && self.termination <= 1.0) {
            return Err(Error::Param("termination must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Pinhole camera. `forward` and `up` are orthonormal.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub forward: Vec3,
    pub up: Vec3,
    pub vertical_fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub const DEFAULT_FOV: f64 = 70.0;
    pub const DEFAULT_SIZE: usize = 256;

    /// Orthonormalizes `up` against `forward` (Gram-Schmidt).
    pub fn new(position: Vec3, forward: Vec3, up: Vec3, vertical_fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let forward = normalize(forward).ok_or_else(|| Error::Param("camera forward vector is zero".into()))?;
        let up = normalize(sub(up, scale(forward, dot(up, forward))))
            .ok_or_else(|| Error::Param("camera up vector is parallel to forward".into()))?;
        if !(vertical_fov_deg > 0.0 && vertical_fov_deg < 180.0) {
            return Err(Error::Param(format!("field of view {vertical_fov_deg} outside (0, 180)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Param("image size must be positive".into()));
        }
        Ok(Self {
            position,
            forward,
            up,
            vertical_fov_deg,
            width,
            height,
        })
    }

    /// Camera at `position` aimed at `target`. Falls back to another up
    /// vector when `up_hint` is parallel to the view direction.
    pub fn look_at(position: Vec3, target: Vec3, up_hint: Vec3, vertical_fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let forward = sub(target, position);
        let f = normalize(forward).ok_or_else(|| Error::Param("camera target equals position".into()))?;
        let up = if norm(cross(f, up_hint)) < 1e-6 * norm(up_hint).max(1e-300) {
            if f[0].abs() < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            }
        } else {
            up_hint
        };
        Self::new(position, f, up, vertical_fov_deg, width, height)
    }

    pub fn right(&self) -> Vec3 {
        cross(self.forward, self.up)
    }

    /// Unit direction through the center of pixel (`row`, `col`).
    pub fn ray_direction(&self, row: usize, col: usize) -> Vec3 {
        let t = (self.vertical_fov_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = (2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0) * t * aspect;
        let y = (1.0 - 2.0 * (row as f64 + 0.5) / self.height as f64) * t;
        let d = add(self.forward, add(scale(self.right(), x), scale(self.up, y)));
        normalize(d).expect("forward dominates")
    }
}

/// Ray parameter interval inside the volume bounds, if any.
fn clip_ray(vol: &CtVolume, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
    let (lo, hi) = vol.bounds();
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Phong shading of one sample under a headlight at the camera.
///
/// The normal is the negated, normalized central-difference gradient; light
/// and view directions both point back along the ray. Lighting is two-sided.
/// Where the gradient vanishes the surface is treated as facing the light.
pub fn shade_sample(vol: &CtVolume, p: Vec3, ray_dir: Vec3, rgb: [f64; 3], rp: &RenderParams) -> [f64; 3] {
    let g = vol.gradient(p);
    let facing = match normalize(g) {
        Some(n) => dot(n, ray_dir).abs(),
        None => 1.0,
    };
    let spec = rp.specular * facing.powf(rp.shininess);
    let lit = rp.ambient + rp.diffuse * facing;
    std::array::from_fn(|k| (rgb[k] * lit + spec).clamp(0.0, 1.0))
}

/// Opacity of a sample after adjusting for the marching step length.
pub fn corrected_opacity(alpha: f64, rp: &RenderParams) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    1.0 - (1.0 - alpha).powf(rp.step_size / rp.reference_step)
}

/// Composites one ray; returns color (before background blend) and opacity.
pub fn cast_ray(vol: &CtVolume, origin: Vec3, dir: Vec3, tf: &TransferFunction, rp: &RenderParams) -> ([f64; 3], f64) {
    let mut color = [0.0; 3];
    let mut acc = 0.0f64;
    let Some((t0, t1)) = clip_ray(vol, origin, dir) else {
        return (color, acc);
    };
    let mut k = 0u64;
    loop {
        let t = t0 + k as f64 * rp.step_size;
        if t > t1 {
            break;
        }
        k += 1;
        let p = add(origin, scale(dir, t));
        let rgba = tf.eval(vol.sample(p));
        if rgba[3] <= 0.0 {
            continue;
        }
        let a = corrected_opacity(rgba[3], rp);
        let c = shade_sample(vol, p, dir, [rgba[0], rgba[1], rgba[2]], rp);
        let w = (1.0 - acc) * a;
        for i in 0..3 {
            color[i] += w * c[i];
        }
        acc += w;
        if acc >= rp.termination {
            break;
        }
    }
    (color, acc)
}

/// Renders RGB and the accumulated opacity per pixel.
pub fn render_view_with_alpha(vol: &CtVolume, cam: &Camera, tf: &TransferFunction, rp: &RenderParams) -> Result<(ImageTensor, Vec<f32>)> {
    rp.validate()?;
    let mut data = Vec::with_capacity(cam.width * cam.height * 3);
    let mut alpha = Vec::with_capacity(cam.width * cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let dir = cam.ray_direction(row, col);
            let (c, a) = cast_ray(vol, cam.position, dir, tf, rp);
            for k in 0..3 {
                data.push((c[k] + (1.0 - a) * rp.background[k]).clamp(0.0, 1.0) as f32);
            }
            alpha.push(a as f32);
        }
    }
    Ok((ImageTensor::new(cam.height, cam.width, 3, data)?, alpha))
}

/// Renders one virtual endoscopic frame with values in `[0, 1]`.
pub fn render_view(vol: &CtVolume, cam: &Camera, tf: &TransferFunction, rp: &RenderParams) -> Result<ImageTensor> {
    render_view_with_alpha(vol, cam, tf, rp).map(|(img, _)| img)
}
