//! Inference with a trained translator and the evaluation metrics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::{save_image, ImageTensor};
use crate::nn::Network;
use crate::tensor::Tensor;

pub const WARMUP_RUNS: usize = 3;
pub const MIN_TIMED_RUNS: usize = 20;
pub const GRID_SEPARATOR: usize = 2;
pub const DEFAULT_BINS: usize = 32;
const MAD_FLOOR: f64 = 1e-6;

fn check_size(net: &Network<f32>, img: &ImageTensor) -> Result<()> {
    let [_, h, w] = net.desc().input_shape();
    img.require_rgb()?;
    if img.height != h {
        return Err(Error::shape("input height", h, img.height));
    }
    if img.width != w {
        return Err(Error::shape("input width", w, img.width));
    }
    Ok(())
}

/// Runs a translator on images in [0, 1] and maps the outputs back to [0, 1].
/// Outputs keep the input order.
pub fn translate(net: &Network<f32>, images: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
    images
        .iter()
        .map(|img| {
            check_size(net, img)?;
            let y = net.forward(&img.to_network::<f32>())?;
            Ok(ImageTensor::from_network(&y, 0))
        })
        .collect()
}

/// Mean over consecutive frame pairs of `MAD(out) / max(MAD(in), 1e-6)`.
pub fn temporal_smoothness(input: &[ImageTensor], output: &[ImageTensor]) -> Result<f64> {
    if input.len() != output.len() {
        return Err(Error::shape("sequence length", input.len(), output.len()));
    }
    if input.len() < 2 {
        return Err(Error::shape("sequence length (minimum)", 2, input.len()));
    }
    let mut sum = 0.0;
    for t in 0..input.len() - 1 {
        let din = input[t].mean_abs_diff(&input[t + 1])?;
        let dout = output[t].mean_abs_diff(&output[t + 1])?;
        sum += dout / din.max(MAD_FLOOR);
    }
    Ok(sum / (input.len() - 1) as f64)
}

/// Mean of the per-image normalized histograms, one row of `bins` per channel.
pub fn mean_histogram(images: &[ImageTensor], bins: usize) -> Result<Vec<Vec<f64>>> {
    if images.is_empty() {
        return Err(Error::Dataset("histogram of an empty image set".into()));
    }
    if bins < 8 {
        return Err(Error::Param(format!("at least 8 histogram bins required, got {bins}")));
    }
    let mut hist = vec![vec![0.0f64; bins]; 3];
    for img in images {
        img.require_rgb()?;
        let per_pixel = 1.0 / (img.height * img.width) as f64 / images.len() as f64;
        for px in img.pixels() {
            for (c, &v) in px.iter().enumerate() {
                let b = ((v.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1);
                hist[c][b] += per_pixel;
            }
        }
    }
    Ok(hist)
}

/// L1 distance between mean normalized per-channel histograms, averaged
/// over the three channels; lies in [0, 2].
pub fn color_histogram_distance(a: &[ImageTensor], b: &[ImageTensor], bins: usize) -> Result<f64> {
    let ha = mean_histogram(a, bins)?;
    let hb = mean_histogram(b, bins)?;
    let total: f64 = ha
        .iter()
        .zip(&hb)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum();
    Ok(total / 3.0)
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub median_seconds: f64,
    pub samples: Vec<f64>,
}

/// Median single-image forward time over `runs` timed runs after
/// [`WARMUP_RUNS`] untimed ones.
pub fn benchmark_inference(net: &Network<f32>, image: &ImageTensor, runs: usize) -> Result<BenchResult> {
    if runs < MIN_TIMED_RUNS {
        return Err(Error::Param(format!("benchmark needs at least {MIN_TIMED_RUNS} runs, got {runs}")));
    }
    check_size(net, image)?;
    let x = image.to_network::<f32>();
    for _ in 0..WARMUP_RUNS {
        std::hint::black_box(net.forward(&x)?);
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        std::hint::black_box(net.forward(&x)?);
        samples.push(t.elapsed().as_secs_f64());
    }
    Ok(BenchResult {
        median_seconds: median(&samples),
        samples,
    })
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Tiles rows of equally sized images with white 2-pixel separators.
pub fn tile_grid(rows: &[Vec<ImageTensor>]) -> Result<ImageTensor> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::Param("grid needs at least one image".into()))?;
    let cols = rows[0].len();
    let (th, tw) = (first.height, first.width);
    for row in rows {
        if row.len() != cols {
            return Err(Error::shape("grid row length", cols, row.len()));
        }
        for img in row {
            img.require_rgb()?;
            if img.height != th {
                return Err(Error::shape("tile height", th, img.height));
            }
            if img.width != tw {
                return Err(Error::shape("tile width", tw, img.width));
            }
        }
    }
    let s = GRID_SEPARATOR;
    let height = rows.len() * th + (rows.len() - 1) * s;
    let width = cols * tw + (cols - 1) * s;
    let mut out = ImageTensor::filled(height, width, [1.0; 3]);
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            let (y0, x0) = (ri * (th + s), ci * (tw + s));
            for y in 0..th {
                let dst = ((y0 + y) * width + x0) * 3;
                out.data[dst..dst + tw * 3].copy_from_slice(&img.data[y * tw * 3..(y + 1) * tw * 3]);
            }
        }
    }
    Ok(out)
}

pub fn export_grid(rows: &[Vec<ImageTensor>], path: &Path) -> Result<()> {
    save_image(&tile_grid(rows)?, path)
}

/// Evaluation summary written as `key = value` lines plus a per-image CSV.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub variant: String,
    pub translations: Vec<(String, PathBuf)>,
    pub temporal_smoothness: Option<f64>,
    pub color_histogram_distance: Option<f64>,
    /// Distance between the untranslated inputs and the reference set.
    pub baseline_histogram_distance: Option<f64>,
    pub seconds_per_image: Option<f64>,
    pub timed_runs: Option<usize>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("variant = {}\nimages = {}\n", self.variant, self.translations.len());
        let mut opt = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.push_str(&format!("{k} = {v}\n"));
            }
        };
        opt("temporal_smoothness", self.temporal_smoothness.map(|v| v.to_string()));
        opt("color_histogram_distance", self.color_histogram_distance.map(|v| v.to_string()));
        opt("baseline_histogram_distance", self.baseline_histogram_distance.map(|v| v.to_string()));
        opt("seconds_per_image", self.seconds_per_image.map(|v| v.to_string()));
        opt("timed_runs", self.timed_runs.map(|v| v.to_string()));
        s
    }

    pub fn per_image_csv(&self) -> String {
        let mut s = String::from("id,output\n");
        for (id, path) in &self.translations {
            s.push_str(&format!("{id},{}\n", path.display()));
        }
        s
    }
}

/// Stacks images in [0, 1] into one network batch.
pub fn images_to_batch(images: &[ImageTensor]) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = images.iter().map(|i| i.to_network()).collect();
    Tensor::stack(&items.iter().collect::<Vec<_>>())
}
