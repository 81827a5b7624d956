//! CycleGAN model, alternating min-max updates and the epoch loop.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{SamplerState, UnpairedSampler};
use crate::error::{Error, Result};
use crate::losses::{
    cycle_loss, gan_value, generator_adversarial, generator_adversarial_grad, l1_mean, l1_mean_grad, mean_log_grad,
    mean_log_one_minus_grad, total_loss, LossWeights,
};
use crate::nn::{build_discriminator, build_translator, init_parameters, ArchitectureSpec, DiscriminatorSpec, Network, ParamVec, Tape};
use crate::tensor::{Scalar, Tensor};

pub const LOSS_CSV_HEADER: &str = "step,epoch,L_gan_G,L_gan_F,L_cyc,L_total,acc_DR,acc_DV";

const ADAM_EPS: f64 = 1e-8;
const POOL_STREAM_TAG: u64 = 0x706f_6f6c;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// History of generated images shown to the discriminators; 0 disables it.
    pub fake_buffer_size: usize,
    /// Periodic checkpoint interval in epochs; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 20,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            fake_buffer_size: 50,
            checkpoint_every: 10,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Param(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Param(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// Losses of one step, evaluated before any parameter update.
///
/// `gan_g` and `gan_f` are adversarial values for the V→R and R→V
/// directions (judged by D_R and D_V respectively).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: u64,
    pub gan_g: f64,
    pub gan_f: f64,
    pub cyc: f64,
    pub total: f64,
    pub acc_dr: f64,
    pub acc_dv: f64,
}

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.epoch, self.gan_g, self.gan_f, self.cyc, self.total, self.acc_dr, self.acc_dv
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = || Error::Param(format!("malformed loss log row {line:?}"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            gan_g: num(2)?,
            gan_f: num(3)?,
            cyc: num(4)?,
            total: num(5)?,
            acc_dr: num(6)?,
            acc_dv: num(7)?,
        })
    }
}

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} epoch {}: gan_G {:.4} gan_F {:.4} cyc {:.4} total {:.4}",
            self.step, self.epoch, self.gan_g, self.gan_f, self.cyc, self.total
        )
    }
}

/// The two translators and two discriminators.
#[derive(Clone, Debug)]
pub struct CycleGanModel<T> {
    pub spec: ArchitectureSpec,
    pub disc_spec: DiscriminatorSpec,
    /// V → R.
    pub g: Network<T>,
    /// R → V.
    pub f: Network<T>,
    pub d_r: Network<T>,
    pub d_v: Network<T>,
}

impl<T: Scalar> CycleGanModel<T> {
    /// Builds all four networks and initializes them from one seeded stream,
    /// in the order G, F, D_R, D_V.
    pub fn new(spec: ArchitectureSpec, disc_spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        let gen = Arc::new(build_translator(&spec)?);
        let disc = Arc::new(build_discriminator(&disc_spec)?);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            spec,
            disc_spec,
            g: init_parameters(gen.clone(), &mut rng),
            f: init_parameters(gen, &mut rng),
            d_r: init_parameters(disc.clone(), &mut rng),
            d_v: init_parameters(disc, &mut rng),
        })
    }

    pub fn cast<U: Scalar>(&self) -> CycleGanModel<U> {
        CycleGanModel {
            spec: self.spec,
            disc_spec: self.disc_spec,
            g: self.g.cast(),
            f: self.f.cast(),
            d_r: self.d_r.cast(),
            d_v: self.d_v.cast(),
        }
    }

    pub fn networks(&self) -> [(&'static str, &Network<T>); 4] {
        [("G", &self.g), ("F", &self.f), ("D_R", &self.d_r), ("D_V", &self.d_v)]
    }

    pub fn networks_mut(&mut self) -> [(&'static str, &mut Network<T>); 4] {
        [("G", &mut self.g), ("F", &mut self.f), ("D_R", &mut self.d_r), ("D_V", &mut self.d_v)]
    }
}

/// Taped translations for both cycles: `v → G(v) → F(G(v))` and
/// `r → F(r) → G(F(r))`.
pub struct CyclePass<T> {
    pub fake_r: Tape<T>,
    pub rec_v: Tape<T>,
    pub fake_v: Tape<T>,
    pub rec_r: Tape<T>,
}

pub fn cycle_pass<T: Scalar>(model: &CycleGanModel<T>, v: &Tensor<T>, r: &Tensor<T>) -> Result<CyclePass<T>> {
    let fake_r = model.g.forward_tape(v)?;
    let rec_v = model.f.forward_tape(fake_r.output())?;
    let fake_v = model.f.forward_tape(r)?;
    let rec_r = model.g.forward_tape(fake_v.output())?;
    Ok(CyclePass {
        fake_r,
        rec_v,
        fake_v,
        rec_r,
    })
}

/// Generator objective: adversarial terms of both directions plus
/// `lambda * cycle_loss`.
pub fn generator_objective<T: Scalar>(model: &CycleGanModel<T>, v: &Tensor<T>, r: &Tensor<T>, w: &LossWeights) -> Result<f64> {
    let fake_r = model.g.forward(v)?;
    let rec_v = model.f.forward(&fake_r)?;
    let fake_v = model.f.forward(r)?;
    let rec_r = model.g.forward(&fake_v)?;
    let adv = generator_adversarial(model.d_r.forward(&fake_r)?.data(), w)
        + generator_adversarial(model.d_v.forward(&fake_v)?.data(), w);
    Ok(adv + w.lambda_cyc * cycle_loss(v, &rec_v, r, &rec_r)?)
}

pub struct GeneratorGrads<T> {
    pub value: f64,
    pub g: ParamVec<T>,
    pub f: ParamVec<T>,
}

/// Gradients of [`generator_objective`] for G and F given a taped pass.
pub fn generator_gradients<T: Scalar>(
    model: &CycleGanModel<T>,
    pass: &CyclePass<T>,
    v: &Tensor<T>,
    r: &Tensor<T>,
    w: &LossWeights,
) -> Result<GeneratorGrads<T>> {
    let mut gg = model.g.zero_grads();
    let mut gf = model.f.zero_grads();
    let lambda = w.lambda_cyc;

    // Each direction: adversarial gradient through its discriminator plus the
    // cycle gradient through the opposite generator, then into the producer.
    let direction = |producer: &Network<T>,
                         produced: &Tape<T>,
                         disc: &Network<T>,
                         other: &Network<T>,
                         rec: &Tape<T>,
                         source: &Tensor<T>,
                         producer_grads: &mut ParamVec<T>,
                         other_grads: &mut ParamVec<T>|
     -> Result<f64> {
        let d_tape = disc.forward_tape(produced.output())?;
        let adv = generator_adversarial(d_tape.output().data(), w);
        let mut scratch = disc.zero_grads();
        let mut d_fake = disc
            .backward(&d_tape, &generator_adversarial_grad(d_tape.output(), w), &mut scratch, true)?
            .expect("input gradient requested");
        let cyc = l1_mean(rec.output().data(), source.data())?;
        let dy = l1_mean_grad(rec.output(), source, lambda);
        let via_cycle = other.backward(rec, &dy, other_grads, true)?.expect("input gradient requested");
        d_fake.add_assign(&via_cycle);
        producer.backward(produced, &d_fake, producer_grads, false)?;
        Ok(adv + lambda * cyc)
    };

    let forward_dir = direction(&model.g, &pass.fake_r, &model.d_r, &model.f, &pass.rec_v, v, &mut gg, &mut gf)?;
    let backward_dir = direction(&model.f, &pass.fake_v, &model.d_v, &model.g, &pass.rec_r, r, &mut gf, &mut gg)?;
    Ok(GeneratorGrads {
        value: forward_dir + backward_dir,
        g: gg,
        f: gf,
    })
}

/// Discriminator loss `-gan_value(D(real), D(fake))` and its parameter
/// gradients, reusing an existing tape on the real batch.
pub fn discriminator_gradients<T: Scalar>(
    disc: &Network<T>,
    real: &Tape<T>,
    fake: &Tensor<T>,
    eps: f64,
) -> Result<(f64, ParamVec<T>)> {
    let mut grads = disc.zero_grads();
    let fake_tape = disc.forward_tape(fake)?;
    let value = gan_value(real.output().data(), fake_tape.output().data(), eps)?;
    disc.backward(real, &mean_log_grad(real.output(), eps, -1.0), &mut grads, false)?;
    disc.backward(&fake_tape, &mean_log_one_minus_grad(fake_tape.output(), eps, -1.0), &mut grads, false)?;
    Ok((-value, grads))
}

/// Discriminator objective on fresh forwards, for gradient checking.
pub fn discriminator_objective<T: Scalar>(disc: &Network<T>, real: &Tensor<T>, fake: &Tensor<T>, eps: f64) -> Result<f64> {
    Ok(-gan_value(disc.forward(real)?.data(), disc.forward(fake)?.data(), eps)?)
}

fn accuracy<T: Scalar>(real: &[T], fake: &[T]) -> f64 {
    let half = T::from_f64(0.5);
    let hits = real.iter().filter(|&&x| x > half).count() + fake.iter().filter(|&&x| x < half).count();
    hits as f64 / (real.len() + fake.len()) as f64
}

/// Adaptive-moment optimizer state for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: ParamVec<f32>,
    pub v: ParamVec<f32>,
    pub t: u64,
}

impl Adam {
    pub fn new(net: &Network<f32>) -> Self {
        Self {
            m: net.zero_grads(),
            v: net.zero_grads(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamVec<f32>, grads: &ParamVec<f32>, lr: f64, beta1: f64, beta2: f64) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        let step = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() / bc2_sqrt + ADAM_EPS as f32);
            }
        }
    }
}

/// History of generated images: once full, each incoming image is swapped
/// for a stored one with probability 1/2.
#[derive(Clone, Debug, PartialEq)]
pub struct FakePool {
    pub capacity: usize,
    pub items: Vec<Tensor<f32>>,
}

impl FakePool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::new(),
        }
    }

    pub fn query<R: Rng>(&mut self, batch: &Tensor<f32>, rng: &mut R) -> Result<Tensor<f32>> {
        if self.capacity == 0 {
            return Ok(batch.clone());
        }
        let mut out = Vec::with_capacity(batch.batch());
        for i in 0..batch.batch() {
            let item = batch.select(i);
            if self.items.len() < self.capacity {
                self.items.push(item.clone());
                out.push(item);
            } else if rng.gen::<f64>() < 0.5 {
                let j = rng.gen_range(0..self.capacity);
                out.push(std::mem::replace(&mut self.items[j], item));
            } else {
                out.push(item);
            }
        }
        Tensor::stack(&out.iter().collect::<Vec<_>>())
    }
}

/// Serializable position of the trainer's random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    /// 64-bit FNV-1a over seed, stream and position.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let bytes = self
            .seed
            .iter()
            .copied()
            .chain(self.stream.to_le_bytes())
            .chain(self.word_pos.to_le_bytes());
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: CycleGanModel<f32>,
    pub config: TrainingConfig,
    pub weights: LossWeights,
    /// Optimizer states in the order G, F, D_R, D_V.
    pub adam: [Adam; 4],
    pub pool_r: FakePool,
    pub pool_v: FakePool,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed steps over all epochs.
    pub step: u64,
}

fn check_finite(value: f64, term: &'static str, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term, step })
    }
}

impl Trainer {
    pub fn new(spec: ArchitectureSpec, disc_spec: DiscriminatorSpec, config: TrainingConfig, weights: LossWeights) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        let model = CycleGanModel::new(spec, disc_spec, config.seed)?;
        Ok(Self::from_parts(model, config, weights))
    }

    pub fn from_parts(model: CycleGanModel<f32>, config: TrainingConfig, weights: LossWeights) -> Self {
        let adam = [Adam::new(&model.g), Adam::new(&model.f), Adam::new(&model.d_r), Adam::new(&model.d_v)];
        Self {
            adam,
            pool_r: FakePool::new(config.fake_buffer_size),
            pool_v: FakePool::new(config.fake_buffer_size),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ POOL_STREAM_TAG),
            epoch: 0,
            step: 0,
            model,
            config,
            weights,
        }
    }

    fn apply(&mut self, which: usize, grads: &ParamVec<f32>) {
        let TrainingConfig {
            learning_rate,
            beta1,
            beta2,
            ..
        } = self.config;
        let net = match which {
            0 => &mut self.model.g,
            1 => &mut self.model.f,
            2 => &mut self.model.d_r,
            _ => &mut self.model.d_v,
        };
        self.adam[which].step(net.params_mut(), grads, learning_rate, beta1, beta2);
    }

    /// One alternating update on batches in [-1, 1]: discriminators first,
    /// then generators against the updated discriminators.
    pub fn train_step(&mut self, v: &Tensor<f32>, r: &Tensor<f32>) -> Result<LossRecord> {
        let w = self.weights;
        let eps = w.epsilon_log;
        let step = self.step;
        let m = &self.model;

        let pass = cycle_pass(m, v, r)?;
        let (fake_r, fake_v) = (pass.fake_r.output(), pass.fake_v.output());
        let dr_real = m.d_r.forward_tape(r)?;
        let dv_real = m.d_v.forward_tape(v)?;
        let dr_fake = m.d_r.forward(fake_r)?;
        let dv_fake = m.d_v.forward(fake_v)?;

        let gan_g = check_finite(gan_value(dr_real.output().data(), dr_fake.data(), eps)?, "L_gan_G", step)?;
        let gan_f = check_finite(gan_value(dv_real.output().data(), dv_fake.data(), eps)?, "L_gan_F", step)?;
        let cyc = check_finite(cycle_loss(v, pass.rec_v.output(), r, pass.rec_r.output())?, "L_cyc", step)?;
        let total = check_finite(total_loss(gan_g, gan_f, cyc, &w), "L_total", step)?;
        let record = LossRecord {
            step,
            epoch: self.epoch,
            gan_g,
            gan_f,
            cyc,
            total,
            acc_dr: accuracy(dr_real.output().data(), dr_fake.data()),
            acc_dv: accuracy(dv_real.output().data(), dv_fake.data()),
        };

        let shown_r = self.pool_r.query(fake_r, &mut self.rng)?;
        let shown_v = self.pool_v.query(fake_v, &mut self.rng)?;
        let (loss_dr, grads_dr) = discriminator_gradients(&m.d_r, &dr_real, &shown_r, eps)?;
        let (loss_dv, grads_dv) = discriminator_gradients(&m.d_v, &dv_real, &shown_v, eps)?;
        check_finite(loss_dr, "L_D_R", step)?;
        check_finite(loss_dv, "L_D_V", step)?;
        drop((dr_real, dv_real));
        self.apply(2, &grads_dr);
        self.apply(3, &grads_dv);

        let gen = generator_gradients(&self.model, &pass, v, r, &w)?;
        check_finite(gen.value, "L_generator", step)?;
        self.apply(0, &gen.g);
        self.apply(1, &gen.f);
        self.step += 1;
        Ok(record)
    }

    /// Runs the remaining epochs. `on_step` sees every record; `on_epoch`
    /// runs after each completed epoch (checkpointing lives there). An
    /// error from either stops training with the in-memory state intact.
    pub fn run(
        &mut self,
        virtual_images: &[Tensor<f32>],
        real_images: &[Tensor<f32>],
        mut on_step: impl FnMut(&LossRecord) -> Result<()>,
        mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        let sampler = UnpairedSampler::new(virtual_images.len(), real_images.len(), self.config.batch_size)?;
        while self.epoch < self.config.epochs {
            for s in 0..sampler.steps_per_epoch() {
                let state = SamplerState {
                    seed: self.config.seed,
                    epoch: self.epoch,
                    step: s,
                };
                let (vi, ri) = sampler.batch(&state);
                let v = Tensor::stack(&vi.iter().map(|&i| &virtual_images[i]).collect::<Vec<_>>())?;
                let r = Tensor::stack(&ri.iter().map(|&i| &real_images[i]).collect::<Vec<_>>())?;
                let rec = self.train_step(&v, &r)?;
                on_step(&rec)?;
            }
            self.epoch += 1;
            on_epoch(self)?;
        }
        Ok(())
    }
}
