//! Single-file checkpoints: a text metadata block plus named little-endian
//! float32 arrays with explicit shapes.
//!
//! Parameters are stored as `{G|F|D_R|D_V}/<layer path>/<role>`. Optimizer
//! moments live under `adam_m/` and `adam_v/`, and the fake histories under
//! `pool_R/` and `pool_V/`, so training can continue exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::losses::{GanForm, LossWeights};
use crate::nn::{build_discriminator, build_translator, ArchitectureSpec, DiscriminatorSpec, Network, NetworkDescription, Variant};
use crate::tensor::Tensor;
use crate::train::{Adam, CycleGanModel, FakePool, RngState, Trainer, TrainingConfig};

const METADATA_KEY: &str = "endosim";
const FORMAT_VERSION: &str = "1";

/// Decoded metadata block.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub spec: ArchitectureSpec,
    pub disc_spec: DiscriminatorSpec,
    pub epoch: u64,
    pub step: u64,
    pub weights: LossWeights,
    pub rng: RngState,
    pub adam_steps: [u64; 4],
}

impl CheckpointMeta {
    fn to_text(&self) -> String {
        let mut kv = BTreeMap::new();
        kv.insert("format_version", FORMAT_VERSION.to_string());
        kv.insert("variant", self.spec.variant.to_string());
        kv.insert("base_channels", self.spec.base_channels.to_string());
        kv.insert("input_size", format!("{}x{}x3", self.spec.height, self.spec.width));
        kv.insert("disc_base_channels", self.disc_spec.base_channels.to_string());
        kv.insert("epoch", self.epoch.to_string());
        kv.insert("step", self.step.to_string());
        kv.insert("lambda_cyc", self.weights.lambda_cyc.to_string());
        kv.insert("epsilon_log", self.weights.epsilon_log.to_string());
        kv.insert("gan_form", self.weights.gan_form.to_string());
        kv.insert("rng_state_digest", self.rng.digest());
        kv.insert("rng_seed", self.rng.seed.iter().map(|b| format!("{b:02x}")).collect());
        kv.insert("rng_stream", self.rng.stream.to_string());
        kv.insert("rng_word_pos", self.rng.word_pos.to_string());
        kv.insert(
            "adam_steps",
            self.adam_steps.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line {line:?}")))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Checkpoint(format!("metadata lacks {k}")));
        fn num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
            v.parse().map_err(|_| Error::Checkpoint(format!("bad metadata value {key} = {v}")))
        }
        let size = get("input_size")?;
        let dims: Vec<&str> = size.split('x').collect();
        if dims.len() != 3 || dims[2] != "3" {
            return Err(Error::Checkpoint(format!("bad input_size {size}")));
        }
        let (height, width): (usize, usize) = (num("input_size", dims[0])?, num("input_size", dims[1])?);
        let variant: Variant = get("variant")?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unknown variant {}", kv["variant"])))?;
        let seed_hex = get("rng_seed")?;
        if seed_hex.len() != 64 {
            return Err(Error::Checkpoint("rng_seed must be 32 hex bytes".into()));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Checkpoint("rng_seed is not hex".into()))?;
        }
        let steps: Vec<u64> = get("adam_steps")?
            .split(',')
            .map(|s| num("adam_steps", s))
            .collect::<Result<_>>()?;
        let adam_steps: [u64; 4] = steps
            .try_into()
            .map_err(|_| Error::Checkpoint("adam_steps needs four entries".into()))?;
        let rng = RngState {
            seed,
            stream: num("rng_stream", get("rng_stream")?)?,
            word_pos: num("rng_word_pos", get("rng_word_pos")?)?,
        };
        if rng.digest() != get("rng_state_digest")? {
            return Err(Error::Checkpoint("rng_state_digest does not match the stored state".into()));
        }
        let gan_form: GanForm = get("gan_form")?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unknown gan_form {}", kv["gan_form"])))?;
        Ok(Self {
            spec: ArchitectureSpec::new(variant, num("base_channels", get("base_channels")?)?, height, width),
            disc_spec: DiscriminatorSpec::new(height, width).with_base(num("disc_base_channels", get("disc_base_channels")?)?),
            epoch: num("epoch", get("epoch")?)?,
            step: num("step", get("step")?)?,
            weights: LossWeights {
                lambda_cyc: num("lambda_cyc", get("lambda_cyc")?)?,
                epsilon_log: num("epsilon_log", get("epsilon_log")?)?,
                gan_form,
            },
            rng,
            adam_steps,
        })
    }
}

struct Entry {
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

fn entry(shape: Vec<usize>, values: &[f32]) -> Entry {
    Entry {
        shape,
        bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
    }
}

fn param_entries(out: &mut BTreeMap<String, Entry>, prefix: &str, desc: &NetworkDescription, values: &[Vec<f32>]) {
    for (spec, vals) in desc.params.iter().zip(values) {
        out.insert(format!("{prefix}/{}", spec.name), entry(spec.shape.to_vec(), vals));
    }
}

/// Writes the full training state. The file is replaced atomically.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let m = &trainer.model;
    let meta = CheckpointMeta {
        spec: m.spec,
        disc_spec: m.disc_spec,
        epoch: trainer.epoch,
        step: trainer.step,
        weights: trainer.weights,
        rng: RngState::capture(&trainer.rng),
        adam_steps: [0, 1, 2, 3].map(|i| trainer.adam[i].t),
    };
    let mut entries = BTreeMap::new();
    for (i, (name, net)) in m.networks().into_iter().enumerate() {
        param_entries(&mut entries, name, net.desc(), net.params());
        param_entries(&mut entries, &format!("adam_m/{name}"), net.desc(), &trainer.adam[i].m);
        param_entries(&mut entries, &format!("adam_v/{name}"), net.desc(), &trainer.adam[i].v);
    }
    for (tag, pool) in [("pool_R", &trainer.pool_r), ("pool_V", &trainer.pool_v)] {
        for (i, item) in pool.items.iter().enumerate() {
            entries.insert(format!("{tag}/{i:04}"), entry(item.shape().to_vec(), item.data()));
        }
    }
    let views = entries
        .iter()
        .map(|(k, e)| {
            TensorView::new(Dtype::F32, e.shape.clone(), &e.bytes)
                .map(|v| (k.clone(), v))
                .map_err(|err| Error::Checkpoint(format!("{k}: {err:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let info = Some(std::collections::HashMap::from([(METADATA_KEY.to_string(), meta.to_text())]));
    let bytes = safetensors::serialize(views, &info).map_err(|e| Error::Checkpoint(format!("{e:?}")))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

/// A decoded checkpoint file.
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let load_err = |reason: String| Error::Load {
            path: path.to_path_buf(),
            reason,
        };
        let bytes = fs::read(path).map_err(|e| load_err(e.to_string()))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| load_err(format!("{e:?}")))?;
        let text = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(METADATA_KEY))
            .ok_or_else(|| load_err("missing metadata block".into()))?;
        let meta = CheckpointMeta::parse(text)?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| load_err(format!("{e:?}")))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::Checkpoint(format!("{name} is not float32")));
            }
            let values = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, (view.shape().to_vec(), values));
        }
        Ok(Self { meta, tensors })
    }

    /// Parameters for one description under `prefix`, validating every name
    /// and shape.
    pub fn params(&self, prefix: &str, desc: &NetworkDescription) -> Result<Vec<Vec<f32>>> {
        desc.params
            .iter()
            .map(|spec| {
                let name = format!("{prefix}/{}", spec.name);
                let (shape, values) = self
                    .tensors
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
                if shape[..] != spec.shape[..] {
                    return Err(Error::Checkpoint(format!(
                        "array {name} has shape {shape:?}, expected {:?}",
                        spec.shape
                    )));
                }
                Ok(values.clone())
            })
            .collect()
    }

    pub fn network(&self, prefix: &str, desc: Arc<NetworkDescription>) -> Result<Network<f32>> {
        let params = self.params(prefix, &desc)?;
        Network::from_params(desc, params)
    }

    pub fn model(&self) -> Result<CycleGanModel<f32>> {
        let gen = Arc::new(build_translator(&self.meta.spec)?);
        let disc = Arc::new(build_discriminator(&self.meta.disc_spec)?);
        Ok(CycleGanModel {
            spec: self.meta.spec,
            disc_spec: self.meta.disc_spec,
            g: self.network("G", gen.clone())?,
            f: self.network("F", gen)?,
            d_r: self.network("D_R", disc.clone())?,
            d_v: self.network("D_V", disc)?,
        })
    }

    fn pool(&self, tag: &str, capacity: usize) -> Result<FakePool> {
        let prefix = format!("{tag}/");
        let mut pool = FakePool::new(capacity);
        for (name, (shape, values)) in self.tensors.range(prefix.clone()..) {
            if !name.starts_with(&prefix) {
                break;
            }
            let shape: [usize; 4] = shape[..]
                .try_into()
                .map_err(|_| Error::Checkpoint(format!("{name} must be 4-dimensional")))?;
            pool.items.push(Tensor::from_vec(shape, values.clone())?);
        }
        if capacity > 0 && pool.items.len() > capacity {
            return Err(Error::Checkpoint(format!(
                "{tag} holds {} images but fake_buffer_size is {capacity}",
                pool.items.len()
            )));
        }
        Ok(pool)
    }

    /// Rebuilds a trainer positioned right after the stored epoch.
    pub fn trainer(&self, config: TrainingConfig, weights: LossWeights) -> Result<Trainer> {
        config.validate()?;
        weights.validate()?;
        let model = self.model()?;
        let mut t = Trainer::from_parts(model, config, weights);
        for (i, (name, net)) in t.model.networks().into_iter().enumerate() {
            t.adam[i] = Adam {
                m: self.params(&format!("adam_m/{name}"), net.desc())?,
                v: self.params(&format!("adam_v/{name}"), net.desc())?,
                t: self.meta.adam_steps[i],
            };
        }
        t.pool_r = self.pool("pool_R", t.config.fake_buffer_size)?;
        t.pool_v = self.pool("pool_V", t.config.fake_buffer_size)?;
        t.rng = self.meta.rng.restore();
        t.epoch = self.meta.epoch;
        t.step = self.meta.step;
        Ok(t)
    }
}

/// Loads one translator (`"G"` or `"F"`), checking the stored variant
/// against an expected one when given.
pub fn load_translator(path: &Path, which: &str, expected: Option<Variant>) -> Result<(ArchitectureSpec, Network<f32>)> {
    let ck = Checkpoint::read(path)?;
    if let Some(want) = expected {
        if want != ck.meta.spec.variant {
            return Err(Error::Checkpoint(format!(
                "checkpoint variant {} does not match requested variant {want}",
                ck.meta.spec.variant
            )));
        }
    }
    let desc = Arc::new(build_translator(&ck.meta.spec)?);
    Ok((ck.meta.spec, ck.network(which, desc)?))
}
