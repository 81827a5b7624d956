//! Scripted fly-through camera paths.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::render::{add, render_view, scale, sub, Camera, RenderParams, TransferFunction, Vec3};
use crate::volume::CtVolume;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keyframe {
    pub position: Vec3,
    pub target: Vec3,
}

/// Catmull-Rom spline through keyframe positions with linearly interpolated
/// look targets. `(keyframes - 1) * samples_per_segment` samples are spread
/// uniformly over the whole parameter range, both ends included.
#[derive(Clone, Debug, PartialEq)]
pub struct FlyThroughPath {
    keyframes: Vec<Keyframe>,
    samples_per_segment: usize,
    pub up_hint: Vec3,
}

/// Camera intrinsics shared by every frame of a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub vertical_fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            vertical_fov_deg: Camera::DEFAULT_FOV,
            width: Camera::DEFAULT_SIZE,
            height: Camera::DEFAULT_SIZE,
        }
    }
}

impl FlyThroughPath {
    pub fn new(keyframes: Vec<Keyframe>, samples_per_segment: usize) -> Result<Self> {
        if keyframes.len() < 2 {
            return Err(Error::Param("a fly-through needs at least two keyframes".into()));
        }
        if samples_per_segment == 0 {
            return Err(Error::Param("samples_per_segment must be positive".into()));
        }
        if let Some(i) = keyframes.windows(2).position(|w| w[0].position == w[1].position) {
            return Err(Error::Param(format!("keyframes {i} and {} share a position", i + 1)));
        }
        Ok(Self {
            keyframes,
            samples_per_segment,
            up_hint: [0.0, 1.0, 0.0],
        })
    }

    pub fn with_up_hint(mut self, up: Vec3) -> Self {
        self.up_hint = up;
        self
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn reversed(&self) -> Self {
        let mut k = self.keyframes.clone();
        k.reverse();
        Self {
            keyframes: k,
            samples_per_segment: self.samples_per_segment,
            up_hint: self.up_hint,
        }
    }

    pub fn sample_count(&self) -> usize {
        (self.keyframes.len() - 1) * self.samples_per_segment
    }

    /// Path parameter of sample `i`, in `[0, keyframes - 1]`.
    fn parameter(&self, i: usize) -> f64 {
        let n = self.sample_count();
        let span = (self.keyframes.len() - 1) as f64;
        if n == 1 {
            return 0.0;
        }
        // evaluate from the nearer end so reversed paths hit mirrored parameters
        if 2 * i <= n - 1 {
            i as f64 * span / (n - 1) as f64
        } else {
            span - (n - 1 - i) as f64 * span / (n - 1) as f64
        }
    }

    /// Position and look target at path parameter `u`.
    pub fn eval(&self, u: f64) -> (Vec3, Vec3) {
        let k = &self.keyframes;
        let last = k.len() - 1;
        let seg = (u.floor().max(0.0) as usize).min(last - 1);
        let t = u - seg as f64;
        let p = |i: isize| k[i.clamp(0, last as isize) as usize].position;
        let s = seg as isize;
        let (p0, p1, p2, p3) = (p(s - 1), p(s), p(s + 1), p(s + 2));
        let t2 = t * t;
        let t3 = t2 * t;
        let pos = std::array::from_fn(|a| {
            0.5 * (2.0 * p1[a]
                + (p2[a] - p0[a]) * t
                + (2.0 * p0[a] - 5.0 * p1[a] + 4.0 * p2[a] - p3[a]) * t2
                + (3.0 * p1[a] - p0[a] - 3.0 * p2[a] + p3[a]) * t3)
        });
        let target = add(k[seg].target, scale(sub(k[seg + 1].target, k[seg].target), t));
        (pos, target)
    }

    /// `(position, target)` for every sample in order.
    pub fn samples(&self) -> Vec<(Vec3, Vec3)> {
        (0..self.sample_count()).map(|i| self.eval(self.parameter(i))).collect()
    }

    pub fn cameras(&self, intr: &Intrinsics) -> Result<Vec<Camera>> {
        self.samples()
            .into_iter()
            .map(|(p, t)| Camera::look_at(p, t, self.up_hint, intr.vertical_fov_deg, intr.width, intr.height))
            .collect()
    }
}

/// Renders one frame per path sample.
pub fn fly_through(
    vol: &CtVolume,
    path: &FlyThroughPath,
    intr: &Intrinsics,
    tf: &TransferFunction,
    rp: &RenderParams,
) -> Result<Vec<ImageTensor>> {
    let samples = path.samples();
    if let Some((index, (position, _))) = samples.iter().enumerate().find(|(_, (p, _))| !vol.contains(*p)) {
        return Err(Error::Path {
            index,
            position: *position,
        });
    }
    path.cameras(intr)?
        .iter()
        .map(|cam| render_view(vol, cam, tf, rp))
        .collect()
}
