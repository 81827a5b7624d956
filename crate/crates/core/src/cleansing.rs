//! Exclusion of real frames that show content never present in virtual
//! renderings (instruments, residue, special imaging modes).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{Domain, DomainDataset, ExclusionLabel, ImageRecord, LabelSource};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Human-authored `<id>\t<label>` exclusions; treated as ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExclusionManifest {
    pub entries: Vec<(String, ExclusionLabel)>,
}

impl ExclusionManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (id, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::Dataset(format!("exclusion manifest line {}: expected <id>\\t<label>", i + 1)))?;
            entries.push((id.to_string(), label.trim().parse()?));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(id, l)| format!("{id}\t{l}\n")).collect()
    }
}

/// Hue-band area rule: fires when at least `min_fraction` of pixels have a
/// hue in `[hue_lo, hue_hi]` degrees and saturation `>= min_saturation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HueRule {
    pub hue_lo: f64,
    pub hue_hi: f64,
    pub min_saturation: f64,
    pub min_fraction: f64,
}

impl HueRule {
    pub const NARROW_BAND: HueRule = HueRule {
        hue_lo: 80.0,
        hue_hi: 170.0,
        min_saturation: 0.25,
        min_fraction: 0.60,
    };
    pub const SURGICAL_TOOL: HueRule = HueRule {
        hue_lo: 200.0,
        hue_hi: 260.0,
        min_saturation: 0.5,
        min_fraction: 0.10,
    };

    pub fn matching_fraction(&self, img: &ImageTensor) -> f64 {
        let n = img.height * img.width;
        if n == 0 {
            return 0.0;
        }
        let hits = img
            .pixels()
            .filter(|px| {
                let (h, s, _) = rgb_to_hsv(px[0] as f64, px[1] as f64, px[2] as f64);
                s >= self.min_saturation && h >= self.hue_lo && h <= self.hue_hi
            })
            .count();
        hits as f64 / n as f64
    }

    pub fn fires(&self, img: &ImageTensor) -> bool {
        self.matching_fraction(img) >= self.min_fraction
    }
}

/// Advisory color pre-screening. Only `narrow_band` and `surgical_tool`
/// have heuristics; other labels come from the manifest alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeuristicRules {
    pub narrow_band: Option<HueRule>,
    pub surgical_tool: Option<HueRule>,
}

impl HeuristicRules {
    pub fn disabled() -> Self {
        Self {
            narrow_band: None,
            surgical_tool: None,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.narrow_band.is_some() || self.surgical_tool.is_some()
    }
}

impl Default for HeuristicRules {
    fn default() -> Self {
        Self {
            narrow_band: Some(HueRule::NARROW_BAND),
            surgical_tool: Some(HueRule::SURGICAL_TOOL),
        }
    }
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

/// Labels suggested by the enabled color rules; empty means `none`.
pub fn heuristic_flag(img: &ImageTensor, rules: &HeuristicRules) -> Result<BTreeSet<ExclusionLabel>> {
    img.require_rgb()?;
    let mut out = BTreeSet::new();
    if rules.narrow_band.is_some_and(|r| r.fires(img)) {
        out.insert(ExclusionLabel::NarrowBand);
    }
    if rules.surgical_tool.is_some_and(|r| r.fires(img)) {
        out.insert(ExclusionLabel::SurgicalTool);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CleansingReport {
    pub total: usize,
    pub kept: usize,
    pub removed: usize,
    pub per_label: BTreeMap<ExclusionLabel, usize>,
}

impl CleansingReport {
    /// `key = count` lines; every label is listed, zeros included.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "total = {}", self.total).unwrap();
        writeln!(s, "kept = {}", self.kept).unwrap();
        writeln!(s, "removed = {}", self.removed).unwrap();
        for l in ExclusionLabel::ALL {
            writeln!(s, "{l} = {}", self.per_label.get(&l).copied().unwrap_or(0)).unwrap();
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct CleansingOutcome {
    pub kept: DomainDataset,
    pub removed: Vec<ImageRecord>,
    pub report: CleansingReport,
}

/// Partitions `records` into kept and removed.
///
/// Manifest labels are applied first; when heuristics are enabled, `image_of`
/// supplies pixels and any heuristic labels are added. A record leaves the
/// training set if it carries any label from either source. Input order is
/// preserved within each part.
pub fn apply_cleansing<F>(
    records: Vec<ImageRecord>,
    manifest: &ExclusionManifest,
    rules: &HeuristicRules,
    mut image_of: F,
) -> Result<CleansingOutcome>
where
    F: FnMut(&ImageRecord) -> Result<ImageTensor>,
{
    let domain = records.first().map(|r| r.domain()).unwrap_or(Domain::Real);
    if let Some(r) = records.iter().find(|r| r.domain() != domain) {
        return Err(Error::Dataset(format!("record {} is not in the {domain} domain", r.id)));
    }
    let index: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut unknown: Vec<String> = manifest
        .entries
        .iter()
        .filter(|(id, _)| !index.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::UnknownRecords(unknown));
    }
    let mut labels: Vec<BTreeSet<ExclusionLabel>> = records.iter().map(|r| r.exclusion_labels.clone()).collect();
    let mut sources: Vec<BTreeSet<LabelSource>> = records.iter().map(|r| r.source_flags.clone()).collect();
    for (id, label) in &manifest.entries {
        let i = index[id.as_str()];
        labels[i].insert(*label);
        sources[i].insert(LabelSource::Manifest);
    }
    if rules.is_enabled() {
        for (i, rec) in records.iter().enumerate() {
            let flagged = heuristic_flag(&image_of(rec)?, rules)?;
            if !flagged.is_empty() {
                labels[i].extend(flagged);
                sources[i].insert(LabelSource::Heuristic);
            }
        }
    }
    let total = records.len();
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    let mut per_label = BTreeMap::new();
    for ((mut rec, l), s) in records.into_iter().zip(labels).zip(sources) {
        rec.exclusion_labels = l;
        rec.source_flags = s;
        if rec.is_excluded() {
            for &label in &rec.exclusion_labels {
                *per_label.entry(label).or_insert(0) += 1;
            }
            removed.push(rec);
        } else {
            kept.push(rec);
        }
    }
    let report = CleansingReport {
        total,
        kept: kept.len(),
        removed: removed.len(),
        per_label,
    };
    Ok(CleansingOutcome {
        kept: DomainDataset::new(domain, kept)?,
        removed,
        report,
    })
}
