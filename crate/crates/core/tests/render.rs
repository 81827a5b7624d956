mod common;

use common::oracles;
use endosim::path::{fly_through, FlyThroughPath, Intrinsics, Keyframe};
use endosim::render::{render_view, Camera, RenderParams, TransferFunction};
use endosim::volume::{make_phantom, Phantom, PhantomKind, PhantomParams};

fn open_tube() -> Phantom {
    make_phantom(PhantomKind::Tube, [32, 32, 96], PhantomParams { radius: 10.0, ..Default::default() }).unwrap()
}

#[test]
fn sphere_silhouette_matches_perspective_projection() {
    let (area, row, analytic) = oracles::sphere_silhouette();
    assert!((area - analytic).abs() < 1.0, "area radius {area} vs {analytic}");
    assert!((row - analytic).abs() < 1.0, "row half width {row} vs {analytic}");
}

#[test]
fn opaque_first_sample_is_the_pixel_color() {
    assert_eq!(oracles::opaque_first_sample_gap(), 0.0);
}

#[test]
fn halving_the_step_barely_changes_pixels() {
    let diff = oracles::step_halving_change();
    assert!(diff < 0.02, "mean change {diff}");
}

#[test]
fn tube_center_is_darker_than_the_wall() {
    let ph = open_tube();
    let c = ph.center_world();
    let cam = Camera::look_at([c[0], c[1], 5.0], [c[0], c[1], 50.0], [0.0, 1.0, 0.0], 70.0, 32, 32).unwrap();
    let img = render_view(&ph.volume, &cam, &TransferFunction::colon(), &RenderParams::default()).unwrap();
    let luma = |y: usize, x: usize| img.pixel(y, x).iter().sum::<f32>() / 3.0;
    let center = luma(16, 16);
    let border: f32 = (0..32).map(|i| luma(0, i) + luma(31, i) + luma(i, 0) + luma(i, 31)).sum::<f32>() / 128.0;
    assert!(center < border, "center {center} border {border}");
}

fn tube_path(ph: &Phantom) -> FlyThroughPath {
    let c = ph.center_world();
    let kf = |z: f64| Keyframe {
        position: [c[0], c[1], z],
        target: [c[0], c[1], z + 10.0],
    };
    FlyThroughPath::new(vec![kf(10.0), kf(20.0), kf(30.0)], 4).unwrap()
}

#[test]
fn fly_through_frames_are_coherent_and_deterministic() {
    let ph = oracles::folded_tube();
    let path = tube_path(&ph);
    let intr = Intrinsics { width: 24, height: 24, ..Default::default() };
    let (tf, rp) = (TransferFunction::colon(), RenderParams::default());
    let frames = fly_through(&ph.volume, &path, &intr, &tf, &rp).unwrap();
    assert_eq!(frames.len(), 8);

    let again = fly_through(&ph.volume, &path, &intr, &tf, &rp).unwrap();
    assert_eq!(frames, again);

    let neighbor: f64 = frames.windows(2).map(|w| w[0].mean_abs_diff(&w[1]).unwrap()).sum::<f64>() / 7.0;
    let ends = frames[0].mean_abs_diff(&frames[7]).unwrap();
    assert!(neighbor < ends, "neighbor {neighbor} ends {ends}");

    let reversed = fly_through(&ph.volume, &path.reversed(), &intr, &tf, &rp).unwrap();
    for (a, b) in frames.iter().zip(reversed.iter().rev()) {
        assert!(a.mean_abs_diff(b).unwrap() < 1e-4);
    }
}

#[test]
fn transparent_transfer_function_shows_background() {
    let ph = open_tube();
    let tf = TransferFunction::new(vec![(0.0, [1.0, 1.0, 1.0, 0.0])]).unwrap();
    let rp = RenderParams { background: [0.1, 0.2, 0.3], ..Default::default() };
    let c = ph.center_world();
    let cam = Camera::look_at([c[0], c[1], 5.0], [c[0] + 3.0, c[1], 30.0], [0.0, 1.0, 0.0], 70.0, 8, 8).unwrap();
    let img = render_view(&ph.volume, &cam, &tf, &rp).unwrap();
    assert!(img.pixels().all(|p| p == [0.1f32, 0.2, 0.3]));
}
