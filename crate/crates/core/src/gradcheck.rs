//! Finite-difference verification of the analytic gradients in double
//! precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::{ArchitectureSpec, DiscriminatorSpec, Network, ParamVec};
use crate::tensor::Tensor;
use crate::train::{cycle_pass, discriminator_gradients, discriminator_objective, generator_gradients, generator_objective, CycleGanModel};

/// Largest side accepted. The discriminators need at least 32.
pub const MAX_SIDE: usize = 32;
pub const MAX_BASE: usize = 8;
/// Relative-error denominators never drop below this.
const ERROR_FLOOR: f64 = 1e-7;
/// Entries far below a network's largest gradient are compared against this
/// fraction of it, so float roundoff in tiny derivatives does not count.
const SCALE_FLOOR: f64 = 1e-2;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub samples_per_network: usize,
    pub batch: usize,
    pub disc_base: usize,
    /// Doubles the largest sampled analytic entry of G to prove the check bites.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples_per_network: 50,
            batch: 2,
            disc_base: 4,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetworkCheck {
    pub network: &'static str,
    pub sampled: usize,
    pub max_rel_error: f64,
    pub max_abs_gradient: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub networks: Vec<NetworkCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.networks.iter().map(|n| n.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    scaled_error(analytic, numeric, 0.0)
}

fn scaled_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor).max(ERROR_FLOOR)
}

fn flat_len(p: &ParamVec<f64>) -> usize {
    p.iter().map(Vec::len).sum()
}

fn locate(p: &ParamVec<f64>, mut flat: usize) -> (usize, usize) {
    for (i, v) in p.iter().enumerate() {
        if flat < v.len() {
            return (i, flat);
        }
        flat -= v.len();
    }
    unreachable!("flat index in range")
}

/// Step sizes tried per parameter, as multiples of `1e-4 * max(|theta|, 1e-2)`.
/// ReLU and L1 kinks can sit inside the widest bracket; the estimate closest
/// to the analytic value is kept, which a wrong gradient cannot exploit.
const STEP_SCALES: [f64; 3] = [1.0, 0.25, 0.0625];

fn check_network(
    name: &'static str,
    model: &mut CycleGanModel<f64>,
    pick: fn(&mut CycleGanModel<f64>) -> &mut Network<f64>,
    analytic: &ParamVec<f64>,
    objective: &dyn Fn(&CycleGanModel<f64>) -> Result<f64>,
    samples: usize,
    corrupt: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NetworkCheck> {
    let total = flat_len(analytic);
    let floor = SCALE_FLOOR * analytic.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let chosen = sample(rng, total, samples.min(total)).into_vec();
    let value_at = |flat: usize| {
        let (i, j) = locate(analytic, flat);
        analytic[i][j]
    };
    let corrupt_at = corrupt.then(|| {
        *chosen
            .iter()
            .max_by(|&&a, &&b| value_at(a).abs().total_cmp(&value_at(b).abs()))
            .expect("at least one sample")
    });
    let mut worst = 0.0f64;
    let mut largest = 0.0f64;
    for &flat in &chosen {
        let (i, j) = locate(analytic, flat);
        let mut a = analytic[i][j];
        if corrupt_at == Some(flat) {
            a *= 2.0;
        }
        let theta = pick(model).params()[i][j];
        let mut best = f64::INFINITY;
        for scale in STEP_SCALES {
            let h = scale * 1e-4 * theta.abs().max(1e-2);
            pick(model).params_mut()[i][j] = theta + h;
            let up = objective(model);
            pick(model).params_mut()[i][j] = theta - h;
            let down = objective(model);
            pick(model).params_mut()[i][j] = theta;
            let num = (up? - down?) / (2.0 * h);
            best = best.min(scaled_error(a, num, floor));
        }
        largest = largest.max(a.abs());
        worst = worst.max(best);
    }
    Ok(NetworkCheck {
        network: name,
        sampled: chosen.len(),
        max_rel_error: worst,
        max_abs_gradient: largest,
    })
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
    let data = (0..n * 3 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec([n, 3, h, w], data).expect("sized buffer")
}

/// Checks G and F against the generator objective and D_R, D_V against the
/// discriminator objective.
pub fn gradient_check_report(spec: &ArchitectureSpec, w: &LossWeights, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if spec.height > MAX_SIDE || spec.width > MAX_SIDE || spec.base_channels > MAX_BASE {
        return Err(Error::Param(format!(
            "gradient check expects sides <= {MAX_SIDE} and base_channels <= {MAX_BASE}"
        )));
    }
    let disc = DiscriminatorSpec::new(spec.height, spec.width).with_base(opts.disc_base);
    let mut model: CycleGanModel<f64> = CycleGanModel::<f32>::new(*spec, disc, seed)?.cast();
    // Re-draw weights in f64 so no parameter sits on the f32 grid.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    for (_, net) in model.networks_mut() {
        for p in net.params_mut() {
            for x in p.iter_mut() {
                *x += rng.gen_range(-1e-3..1e-3);
            }
        }
    }
    let v = random_batch(&mut rng, opts.batch, spec.height, spec.width);
    let r = random_batch(&mut rng, opts.batch, spec.height, spec.width);
    let eps = w.epsilon_log;

    let pass = cycle_pass(&model, &v, &r)?;
    let gen = generator_gradients(&model, &pass, &v, &r, w)?;
    let fake_r = pass.fake_r.output().clone();
    let fake_v = pass.fake_v.output().clone();
    drop(pass);
    let (_, grads_dr) = discriminator_gradients(&model.d_r, &model.d_r.forward_tape(&r)?, &fake_r, eps)?;
    let (_, grads_dv) = discriminator_gradients(&model.d_v, &model.d_v.forward_tape(&v)?, &fake_v, eps)?;

    let gen_obj = |m: &CycleGanModel<f64>| generator_objective(m, &v, &r, w);
    let dr_obj = |m: &CycleGanModel<f64>| discriminator_objective(&m.d_r, &r, &fake_r, eps);
    let dv_obj = |m: &CycleGanModel<f64>| discriminator_objective(&m.d_v, &v, &fake_v, eps);
    let n = opts.samples_per_network;
    let networks = vec![
        check_network("G", &mut model, |m| &mut m.g, &gen.g, &gen_obj, n, opts.corrupt, &mut rng)?,
        check_network("F", &mut model, |m| &mut m.f, &gen.f, &gen_obj, n, false, &mut rng)?,
        check_network("D_R", &mut model, |m| &mut m.d_r, &grads_dr, &dr_obj, n, false, &mut rng)?,
        check_network("D_V", &mut model, |m| &mut m.d_v, &grads_dv, &dv_obj, n, false, &mut rng)?,
    ];
    Ok(GradCheckReport { networks })
}

/// Maximum relative error between analytic and central-difference
/// gradients over sampled parameters of all four networks.
pub fn numeric_gradient_check(spec: &ArchitectureSpec, w: &LossWeights, seed: u64) -> Result<f64> {
    Ok(gradient_check_report(spec, w, seed, &GradCheckOptions::default())?.max_rel_error())
}
