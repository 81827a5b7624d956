//! Unpaired image collections, manifests and the batch sampler.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, ImageTensor};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Virtual,
    Real,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Virtual => "virtual",
            Domain::Real => "real",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "virtual" => Ok(Domain::Virtual),
            "real" => Ok(Domain::Real),
            _ => Err(Error::Dataset(format!("unknown domain {s:?}"))),
        }
    }
}

/// Reasons a real frame is unsuitable for training. An empty label set means
/// `none`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExclusionLabel {
    EndoscopePart,
    SurgicalTool,
    Feces,
    Fluid,
    NarrowBand,
    Magnification,
}

impl ExclusionLabel {
    pub const ALL: [ExclusionLabel; 6] = [
        ExclusionLabel::EndoscopePart,
        ExclusionLabel::SurgicalTool,
        ExclusionLabel::Feces,
        ExclusionLabel::Fluid,
        ExclusionLabel::NarrowBand,
        ExclusionLabel::Magnification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionLabel::EndoscopePart => "endoscope_part",
            ExclusionLabel::SurgicalTool => "surgical_tool",
            ExclusionLabel::Feces => "feces",
            ExclusionLabel::Fluid => "fluid",
            ExclusionLabel::NarrowBand => "narrow_band",
            ExclusionLabel::Magnification => "magnification",
        }
    }
}

impl fmt::Display for ExclusionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExclusionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExclusionLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown exclusion label {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelSource {
    Manifest,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    domain: Domain,
    pub exclusion_labels: BTreeSet<ExclusionLabel>,
    pub source_flags: BTreeSet<LabelSource>,
    /// Free-form provenance (third manifest column).
    pub source: String,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>, domain: Domain) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            domain,
            exclusion_labels: BTreeSet::new(),
            source_flags: BTreeSet::new(),
            source: String::new(),
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_excluded(&self) -> bool {
        !self.exclusion_labels.is_empty()
    }

    pub fn labels_string(&self) -> String {
        if self.exclusion_labels.is_empty() {
            "none".into()
        } else {
            self.exclusion_labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(",")
        }
    }
}

/// Records of one domain that passed cleansing.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    domain: Domain,
    records: Vec<ImageRecord>,
}

impl DomainDataset {
    pub fn new(domain: Domain, records: Vec<ImageRecord>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.domain != domain) {
            return Err(Error::Dataset(format!("record {} is {} but dataset is {domain}", r.id, r.domain)));
        }
        if let Some(r) = records.iter().find(|r| r.is_excluded()) {
            return Err(Error::Dataset(format!("record {} carries exclusion labels {}", r.id, r.labels_string())));
        }
        Ok(Self { domain, records })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    /// `I` for the virtual domain, `J` for the real one.
    pub fn count(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load_images(&self, resize_to: Option<usize>) -> Result<Vec<ImageTensor>> {
        self.records.iter().map(|r| load_image(&r.path, resize_to)).collect()
    }
}

/// Writes `<path>\t<domain>\t<source>` lines. Images next to the manifest
/// are written by file name, others by their full path.
pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut text = String::new();
    for r in records {
        let name = match (r.path.parent(), r.path.file_name()) {
            (Some(p), Some(f)) if p == dir => f.to_string_lossy().into_owned(),
            _ => r.path.display().to_string(),
        };
        text.push_str(&format!("{name}\t{}\t{}\n", r.domain, r.source));
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a manifest; relative image paths resolve against the manifest
/// directory and record ids are the file names.
pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let (Some(name), Some(domain)) = (cols.next(), cols.next()) else {
            return Err(Error::Dataset(format!("{}:{}: expected <path>\\t<domain>\\t<source>", path.display(), i + 1)));
        };
        let image = dir.join(name);
        let id = image.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| name.to_string());
        let mut rec = ImageRecord::new(id, image, domain.parse()?);
        rec.source = cols.next().unwrap_or("").to_string();
        out.push(rec);
    }
    Ok(out)
}

/// Saves frames as 8-bit PNGs plus a manifest tagged `domain`; returns the
/// manifest path.
pub fn export_frames(frames: &[ImageTensor], out_dir: &Path, domain: Domain, source: &str) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut records = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let name = format!("frame_{i:05}.png");
        let path = out_dir.join(&name);
        save_image(frame, &path)?;
        let mut rec = ImageRecord::new(name, path, domain);
        rec.source = source.to_string();
        records.push(rec);
    }
    let manifest = out_dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

/// Exports rendered frames as the virtual domain.
pub fn export_dataset(frames: &[ImageTensor], out_dir: &Path, source: &str) -> Result<PathBuf> {
    export_frames(frames, out_dir, Domain::Virtual, source)
}

/// Replayable position in the sampling sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerState {
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
}

/// Draws unpaired batches: each domain is traversed through a fresh
/// permutation per epoch, and a smaller domain wraps around into further
/// permutations. Batches depend only on `(seed, epoch, step)`.
#[derive(Clone, Debug)]
pub struct UnpairedSampler {
    pub virtual_count: usize,
    pub real_count: usize,
    pub batch_size: usize,
}

fn permutation(n: usize, seed: u64, domain: Domain, epoch: u64, round: u64) -> Vec<usize> {
    let tag = match domain {
        Domain::Virtual => 0x5652_u64,
        Domain::Real => 0x5252_u64,
    };
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag)
        .rotate_left(17)
        ^ epoch.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ round.wrapping_mul(0x1656_67B1_9E37_79F9);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

impl UnpairedSampler {
    pub fn new(virtual_count: usize, real_count: usize, batch_size: usize) -> Result<Self> {
        if virtual_count == 0 || real_count == 0 {
            return Err(Error::Dataset("both domains need at least one image".into()));
        }
        if batch_size == 0 {
            return Err(Error::Dataset("batch size must be positive".into()));
        }
        Ok(Self {
            virtual_count,
            real_count,
            batch_size,
        })
    }

    /// `ceil(max(I, J) / batch_size)`.
    pub fn steps_per_epoch(&self) -> u64 {
        self.virtual_count.max(self.real_count).div_ceil(self.batch_size) as u64
    }

    fn indices(&self, n: usize, domain: Domain, st: &SamplerState) -> Vec<usize> {
        let start = st.step as usize * self.batch_size;
        let mut cache: Option<(u64, Vec<usize>)> = None;
        (start..start + self.batch_size)
            .map(|pos| {
                let round = (pos / n) as u64;
                if cache.as_ref().map(|c| c.0) != Some(round) {
                    cache = Some((round, permutation(n, st.seed, domain, st.epoch, round)));
                }
                cache.as_ref().unwrap().1[pos % n]
            })
            .collect()
    }

    /// Indices into the virtual and real collections for one step.
    pub fn batch(&self, st: &SamplerState) -> (Vec<usize>, Vec<usize>) {
        (
            self.indices(self.virtual_count, Domain::Virtual, st),
            self.indices(self.real_count, Domain::Real, st),
        )
    }
}

/// Records of one unpaired batch drawn from two cleansed datasets.
pub fn sample_unpaired_batch<'a>(
    v: &'a DomainDataset,
    r: &'a DomainDataset,
    batch_size: usize,
    state: &SamplerState,
) -> Result<(Vec<&'a ImageRecord>, Vec<&'a ImageRecord>)> {
    let sampler = UnpairedSampler::new(v.count(), r.count(), batch_size)?;
    let (vi, ri) = sampler.batch(state);
    Ok((
        vi.into_iter().map(|i| &v.records[i]).collect(),
        ri.into_iter().map(|i| &r.records[i]).collect(),
    ))
}
