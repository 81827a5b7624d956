#![allow(dead_code)]

use endosim::dataset::ExclusionLabel;
use endosim::image::ImageTensor;
use rand::Rng;

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Mucosa-like frame with mild per-pixel variation.
pub fn mucosa_frame<R: Rng>(rng: &mut R, side: usize) -> ImageTensor {
    let base_h = rng.gen_range(345.0..375.0) % 360.0;
    ImageTensor::from_fn(side, side, |_, _| {
        hsv(
            (base_h + rng.gen_range(-6.0..6.0) + 360.0) % 360.0,
            rng.gen_range(0.3..0.5),
            rng.gen_range(0.5..0.9),
        )
    })
}

/// A frame built to carry one known label (`None` means clean).
pub fn constructed_frame<R: Rng>(rng: &mut R, side: usize, label: Option<ExclusionLabel>) -> ImageTensor {
    match label {
        None => mucosa_frame(rng, side),
        Some(ExclusionLabel::NarrowBand) => {
            let h = rng.gen_range(95.0..155.0);
            ImageTensor::from_fn(side, side, |_, _| hsv(h + rng.gen_range(-5.0..5.0), rng.gen_range(0.45..0.9), rng.gen_range(0.3..0.9)))
        }
        Some(ExclusionLabel::SurgicalTool) => {
            let mut img = mucosa_frame(rng, side);
            let rows = side * rng.gen_range(15..40) / 100;
            let h = rng.gen_range(210.0..250.0);
            for y in side - rows..side {
                for x in 0..side {
                    let px = hsv(h, rng.gen_range(0.6..0.95), rng.gen_range(0.4..0.9));
                    let i = (y * side + x) * 3;
                    img.data[i..i + 3].copy_from_slice(&px);
                }
            }
            img
        }
        Some(other) => panic!("no constructed frame for {other}"),
    }
}

pub mod oracles {
    use endosim::render::{render_view, render_view_with_alpha, shade_sample, Camera, RenderParams, TransferFunction};
    use endosim::volume::{make_phantom, Phantom, PhantomKind, PhantomParams};

    pub fn solid_sphere() -> Phantom {
        make_phantom(
            PhantomKind::Sphere,
            [64; 3],
            PhantomParams {
                radius: 24.0,
                hollow: false,
                spacing_mm: 0.5,
                ..Default::default()
            },
        )
        .unwrap()
    }

    pub fn folded_tube() -> Phantom {
        make_phantom(
            PhantomKind::Tube,
            [32, 32, 96],
            PhantomParams {
                radius: 10.0,
                fold_amplitude: 0.3,
                fold_period: 14.0,
                ..Default::default()
            },
        )
        .unwrap()
    }

    /// Silhouette radius of a solid sphere seen from outside, in pixels:
    /// (area-equivalent radius, central-row half width, analytic projection).
    pub fn sphere_silhouette() -> (f64, f64, f64) {
        let ph = solid_sphere();
        let c = ph.center_world();
        let distance = 60.0;
        let (fov, size) = (30.0f64, 64usize);
        let cam = Camera::look_at([c[0], c[1], c[2] - distance], c, [0.0, 1.0, 0.0], fov, size, size).unwrap();
        let (_, alpha) = render_view_with_alpha(&ph.volume, &cam, &TransferFunction::colon(), &RenderParams::default()).unwrap();
        let r = ph.radius_mm();
        let analytic = (r / distance).asin().tan() / (fov.to_radians() / 2.0).tan() * size as f64 / 2.0;
        let covered = alpha.iter().filter(|&&a| a > 0.5).count() as f64;
        let row = size / 2;
        let across = (0..size).filter(|&x| alpha[row * size + x] > 0.5).count() as f64;
        ((covered / std::f64::consts::PI).sqrt(), across / 2.0, analytic)
    }

    /// Largest difference between rendered pixels and the shaded color of
    /// the first sample when every sample is fully opaque.
    pub fn opaque_first_sample_gap() -> f32 {
        let ph = solid_sphere();
        let c = ph.center_world();
        let rgb = [0.3, 0.5, 0.7];
        let tf = TransferFunction::new(vec![(-2000.0, [rgb[0], rgb[1], rgb[2], 1.0])]).unwrap();
        let rp = RenderParams::default();
        // the eye sits just inside the surface so the gradient is nonzero
        let eye = [c[0] + 11.6, c[1] + 0.3, c[2] - 0.2];
        let cam = Camera::look_at(eye, [eye[0] - 5.0, eye[1] + 1.0, eye[2] + 2.0], [0.0, 1.0, 0.0], 60.0, 9, 7).unwrap();
        let img = render_view(&ph.volume, &cam, &tf, &rp).unwrap();
        let mut gap = 0.0f32;
        for row in 0..cam.height {
            for col in 0..cam.width {
                let expected = shade_sample(&ph.volume, cam.position, cam.ray_direction(row, col), rgb, &rp);
                for (k, &e) in expected.iter().enumerate() {
                    gap = gap.max((img.pixel(row, col)[k] - e as f32).abs());
                }
            }
        }
        gap
    }

    /// Mean absolute pixel change inside a folded tube when the marching
    /// step is halved.
    pub fn step_halving_change() -> f64 {
        let ph = folded_tube();
        let c = ph.center_world();
        let cam = Camera::look_at([c[0] + 2.0, c[1], 10.0], [c[0], c[1], 40.0], [0.0, 1.0, 0.0], 70.0, 48, 48).unwrap();
        let tf = TransferFunction::colon();
        let coarse = render_view(&ph.volume, &cam, &tf, &RenderParams::default()).unwrap();
        let fine = render_view(&ph.volume, &cam, &tf, &RenderParams { step_size: 0.25, ..Default::default() }).unwrap();
        coarse.mean_abs_diff(&fine).unwrap()
    }
}
