//! Ingestion of the seven public corpora plus a synthetic bearing-signal
//! generator for dataset-free testing.
//!
//! Corpora are described by plain-text manifests shipped with the crate
//! (`<relative-path>\t<class-label>\t<channel-selector>`, `#` comments).
//! The data itself is never bundled: point `DIAG_DATA_ROOT` (or the CLI
//! flag) at a directory with one subdirectory per dataset and run
//! `verify-data` to check presence.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

pub mod mat;

/// One continuous raw vibration channel with its acquisition metadata.
#[derive(Clone, Debug)]
pub struct SignalRecord {
    pub samples: Vec<f64>,
    pub sampling_rate_hz: f64,
    pub dataset_id: String,
    pub file_path: String,
    pub channel_name: String,
    /// Free-form condition metadata (working condition, speed, load, ...).
    pub condition: BTreeMap<String, String>,
    pub class_id: usize,
}

/// The supported corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetId {
    Cwru,
    Mfpt,
    Pu,
    /// PU artificial-damage codes used by the paired binary studies.
    PuArtificial,
    Uoc,
    XjtuSy,
    Seu,
    Jnu,
}

impl DatasetId {
    pub fn parse(s: &str) -> Result<DatasetId> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "cwru" => DatasetId::Cwru,
            "mfpt" => DatasetId::Mfpt,
            "pu" => DatasetId::Pu,
            "pu_art" | "pu-art" | "pu_artificial" => DatasetId::PuArtificial,
            "uoc" => DatasetId::Uoc,
            "xjtu" | "xjtu-sy" | "xjtu_sy" => DatasetId::XjtuSy,
            "seu" => DatasetId::Seu,
            "jnu" => DatasetId::Jnu,
            other => {
                return Err(Error::UnknownDataset {
                    id: other.to_string(),
                })
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetId::Cwru => "cwru",
            DatasetId::Mfpt => "mfpt",
            DatasetId::Pu => "pu",
            DatasetId::PuArtificial => "pu_art",
            DatasetId::Uoc => "uoc",
            DatasetId::XjtuSy => "xjtu",
            DatasetId::Seu => "seu",
            DatasetId::Jnu => "jnu",
        }
    }

    /// Subdirectory of the data root holding this corpus.
    pub fn subdir(&self) -> &'static str {
        match self {
            DatasetId::Cwru => "CWRU",
            DatasetId::Mfpt => "MFPT",
            DatasetId::Pu | DatasetId::PuArtificial => "PU",
            DatasetId::Uoc => "UoC",
            DatasetId::XjtuSy => "XJTU-SY",
            DatasetId::Seu => "SEU",
            DatasetId::Jnu => "JNU",
        }
    }

    fn manifest_text(&self) -> &'static str {
        match self {
            DatasetId::Cwru => include_str!("manifests/cwru.tsv"),
            DatasetId::Mfpt => include_str!("manifests/mfpt.tsv"),
            DatasetId::Pu => include_str!("manifests/pu.tsv"),
            DatasetId::PuArtificial => include_str!("manifests/pu_art.tsv"),
            DatasetId::Uoc => include_str!("manifests/uoc.tsv"),
            DatasetId::XjtuSy => include_str!("manifests/xjtu.tsv"),
            DatasetId::Seu => include_str!("manifests/seu.tsv"),
            DatasetId::Jnu => include_str!("manifests/jnu.tsv"),
        }
    }

    /// Class count per the published task definitions.
    pub fn expected_classes(&self) -> usize {
        match self {
            DatasetId::Cwru => 10,
            DatasetId::Mfpt => 15,
            DatasetId::Pu => 13,
            DatasetId::PuArtificial => 6,
            DatasetId::Uoc => 9,
            DatasetId::XjtuSy => 15,
            DatasetId::Seu => 20,
            DatasetId::Jnu => 12,
        }
    }
}

/// Which variable to pick from a container file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VarMatch {
    /// Exact variable name (MAT files).
    Named(String),
    /// First variable whose name contains the fragment.
    Contains(String),
    /// First numeric variable in the file.
    Any,
}

/// Which slice of the selected table to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceSel {
    /// Everything, flattened.
    All,
    /// One row of the table.
    Row(usize),
    /// One column of the table.
    Col(usize),
    /// Columns `a..=b` concatenated in order.
    Cols(usize, usize),
}

/// Parsed third manifest column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSelector {
    pub var: VarMatch,
    pub slice: SliceSel,
}

impl ChannelSelector {
    pub fn parse(s: &str) -> Result<ChannelSelector> {
        let mut var = VarMatch::Any;
        let mut slice = SliceSel::All;
        for part in s.split(';') {
            let part = part.trim();
            if part.is_empty() || part == "mono" {
                continue;
            }
            let (key, val) = part.split_once(':').ok_or_else(|| Error::Config {
                what: format!("malformed channel selector component `{part}`"),
            })?;
            let bad = || Error::Config {
                what: format!("malformed channel selector component `{part}`"),
            };
            match key {
                "var" => var = VarMatch::Named(val.to_string()),
                "contains" => var = VarMatch::Contains(val.to_string()),
                "row" => slice = SliceSel::Row(val.parse().map_err(|_| bad())?),
                "col" => slice = SliceSel::Col(val.parse().map_err(|_| bad())?),
                "cols" => {
                    let (a, b) = val.split_once('-').ok_or_else(bad)?;
                    slice = SliceSel::Cols(
                        a.parse().map_err(|_| bad())?,
                        b.parse().map_err(|_| bad())?,
                    );
                }
                _ => return Err(bad()),
            }
        }
        Ok(ChannelSelector { var, slice })
    }

    /// Human-readable channel name for records.
    fn describe(&self) -> String {
        let v = match &self.var {
            VarMatch::Named(n) => n.clone(),
            VarMatch::Contains(f) => format!("*{f}*"),
            VarMatch::Any => "signal".to_string(),
        };
        match self.slice {
            SliceSel::All => v,
            SliceSel::Row(r) => format!("{v}[row {r}]"),
            SliceSel::Col(c) => format!("{v}[col {c}]"),
            SliceSel::Cols(a, b) => format!("{v}[cols {a}-{b}]"),
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub rel_path: PathBuf,
    pub class_label: String,
    pub selector: ChannelSelector,
    /// Working condition parsed from the file name, when recognizable.
    pub condition: Option<String>,
}

/// A dataset's class table and file manifest. Class ids are dense and
/// assigned in order of first appearance in the manifest, which is fixed,
/// so ids are stable across runs.
#[derive(Clone, Debug)]
pub struct DatasetRegistry {
    pub id: DatasetId,
    pub labels: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetRegistry {
    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// The PU working-condition prefix of a file name, when present.
fn condition_of(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    for cond in ["N15_M07_F10", "N09_M07_F10", "N15_M01_F10", "N15_M07_F04"] {
        if name.starts_with(cond) {
            return Some(cond.to_string());
        }
    }
    None
}

/// Build the registry for `id` from its embedded manifest.
pub fn registry(id: DatasetId) -> Result<DatasetRegistry> {
    let mut labels: Vec<String> = Vec::new();
    let mut entries = Vec::new();
    for (lineno, line) in id.manifest_text().lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (path, label, sel) = match (cols.next(), cols.next(), cols.next()) {
            (Some(p), Some(l), Some(s)) => (p, l, s),
            _ => {
                return Err(Error::Config {
                    what: format!("{} manifest line {} is not 3 columns", id.name(), lineno + 1),
                })
            }
        };
        if !labels.iter().any(|l| l == label) {
            labels.push(label.to_string());
        }
        let rel_path = PathBuf::from(path);
        entries.push(ManifestEntry {
            condition: condition_of(&rel_path),
            rel_path,
            class_label: label.to_string(),
            selector: ChannelSelector::parse(sel)?,
        });
    }
    Ok(DatasetRegistry { id, labels, entries })
}

/// Sampling rate in Hz for one manifest entry, per the dataset docs.
fn sampling_rate(id: DatasetId, entry: &ManifestEntry) -> f64 {
    match id {
        DatasetId::Cwru => 12_000.0,
        DatasetId::Mfpt => {
            if entry.rel_path.to_string_lossy().contains("Baseline") {
                97_656.0
            } else {
                48_828.0
            }
        }
        DatasetId::Pu | DatasetId::PuArtificial => 64_000.0,
        DatasetId::Uoc => 20_000.0,
        DatasetId::XjtuSy => 2_560.0,
        DatasetId::Seu => 5_120.0,
        DatasetId::Jnu => 50_000.0,
    }
}

/// Numeric text table: fully-numeric lines split on commas, tabs,
/// semicolons, or whitespace. Header and other non-numeric lines are
/// skipped; numeric lines must agree on column count.
fn load_text_grid(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut grid: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c == '\t' || c == ';' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let row: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        let Some(row) = row else { continue };
        if let Some(first) = grid.first() {
            if row.len() != first.len() {
                return Err(Error::Data {
                    what: format!(
                        "{}: inconsistent column count ({} vs {})",
                        path.display(),
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        grid.push(row);
    }
    if grid.is_empty() {
        return Err(Error::Data {
            what: format!("{}: no numeric rows", path.display()),
        });
    }
    Ok(grid)
}

fn slice_text_grid(grid: &[Vec<f64>], slice: SliceSel, path: &Path) -> Result<Vec<f64>> {
    let rows = grid.len();
    let cols = grid[0].len();
    let out_of_range = |what: String| Error::Data {
        what: format!("{}: {what}", path.display()),
    };
    match slice {
        SliceSel::All => Ok(grid.iter().flatten().copied().collect()),
        SliceSel::Row(r) => grid
            .get(r)
            .cloned()
            .ok_or_else(|| out_of_range(format!("row {r} out of {rows}"))),
        SliceSel::Col(c) => {
            if c >= cols {
                return Err(out_of_range(format!("column {c} out of {cols}")));
            }
            Ok(grid.iter().map(|row| row[c]).collect())
        }
        SliceSel::Cols(a, b) => {
            if a > b || b >= cols {
                return Err(out_of_range(format!("columns {a}-{b} out of {cols}")));
            }
            let mut out = Vec::with_capacity(rows * (b - a + 1));
            for c in a..=b {
                out.extend(grid.iter().map(|row| row[c]));
            }
            Ok(out)
        }
    }
}

fn slice_mat(
    vars: &BTreeMap<String, mat::NumericArray>,
    sel: &ChannelSelector,
    path: &Path,
) -> Result<(String, Vec<f64>)> {
    let not_found = |what: String| Error::Data {
        what: format!("{}: {what}", path.display()),
    };
    let (name, arr) = match &sel.var {
        VarMatch::Named(n) => vars
            .get_key_value(n.as_str())
            .ok_or_else(|| not_found(format!("variable {n} not found")))?,
        VarMatch::Contains(f) => vars
            .iter()
            .find(|(k, _)| k.contains(f.as_str()))
            .ok_or_else(|| not_found(format!("no variable name contains {f}")))?,
        VarMatch::Any => vars
            .iter()
            .next()
            .ok_or_else(|| not_found("file holds no numeric variables".into()))?,
    };
    let data = match sel.slice {
        SliceSel::All => arr.data.clone(),
        SliceSel::Row(r) => arr
            .row(r)
            .ok_or_else(|| not_found(format!("row {r} out of {}", arr.rows())))?,
        SliceSel::Col(c) => arr
            .col(c)
            .ok_or_else(|| not_found(format!("column {c} out of {}", arr.cols())))?,
        SliceSel::Cols(a, b) => {
            let mut out = Vec::new();
            for c in a..=b {
                out.extend(
                    arr.col(c)
                        .ok_or_else(|| not_found(format!("column {c} out of {}", arr.cols())))?,
                );
            }
            out
        }
    };
    Ok((name.clone(), data))
}

/// Optional filtering applied before loading.
#[derive(Clone, Debug, Default)]
pub struct LoadFilter {
    /// Keep only entries whose parsed working condition matches.
    pub condition: Option<String>,
    /// Keep only entries with these class labels.
    pub class_labels: Option<Vec<String>>,
}

impl LoadFilter {
    fn keeps(&self, e: &ManifestEntry) -> bool {
        if let Some(cond) = &self.condition {
            if e.condition.as_deref() != Some(cond.as_str()) {
                return false;
            }
        }
        if let Some(labels) = &self.class_labels {
            if !labels.iter().any(|l| l == &e.class_label) {
                return false;
            }
        }
        true
    }
}

/// Load every manifest entry of `id` under `root`, after applying the
/// filter. The PU 13-class default is condition `N15_M07_F10`; other
/// conditions are reachable through an explicit filter.
pub fn load_dataset_filtered(
    id: DatasetId,
    root: &Path,
    filter: &LoadFilter,
) -> Result<Vec<SignalRecord>> {
    let reg = registry(id)?;
    let dir = root.join(id.subdir());
    let entries: Vec<&ManifestEntry> = reg.entries.iter().filter(|e| filter.keeps(e)).collect();
    if entries.is_empty() {
        return Err(Error::Preset {
            what: format!("filter selects no {} manifest entries", id.name()),
        });
    }

    let missing: Vec<PathBuf> = entries
        .iter()
        .map(|e| dir.join(&e.rel_path))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingData {
            dataset: id.name().to_string(),
            paths: missing,
        });
    }

    let mut records = Vec::with_capacity(entries.len());
    for entry in entries {
        let path = dir.join(&entry.rel_path);
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let (channel_name, samples) = if ext == "mat" {
            let vars = mat::load_mat_v5(&path)?;
            slice_mat(&vars, &entry.selector, &path)?
        } else {
            let grid = load_text_grid(&path)?;
            (
                entry.selector.describe(),
                slice_text_grid(&grid, entry.selector.slice, &path)?,
            )
        };
        if samples.is_empty() {
            return Err(Error::EmptyDataset {
                record: path.display().to_string(),
                detail: "selected channel holds no samples".into(),
            });
        }
        let mut condition = BTreeMap::new();
        if let Some(c) = &entry.condition {
            condition.insert("condition".to_string(), c.clone());
        }
        condition.insert("label".to_string(), entry.class_label.clone());
        records.push(SignalRecord {
            samples,
            sampling_rate_hz: sampling_rate(id, entry),
            dataset_id: id.name().to_string(),
            file_path: entry.rel_path.display().to_string(),
            channel_name,
            condition,
            class_id: reg.class_id(&entry.class_label).unwrap(),
        });
    }
    Ok(records)
}

/// Load a dataset with its default filter.
pub fn load_dataset(id: DatasetId, root: &Path) -> Result<Vec<SignalRecord>> {
    let filter = match id {
        DatasetId::Pu => LoadFilter {
            condition: Some("N15_M07_F10".to_string()),
            ..Default::default()
        },
        _ => LoadFilter::default(),
    };
    load_dataset_filtered(id, root, &filter)
}

/// Presence report for a dataset under a root directory.
#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub dataset: String,
    pub present: usize,
    pub missing: Vec<PathBuf>,
}

/// Check which manifest files exist under `root` without loading them.
pub fn verify_dataset(id: DatasetId, root: &Path) -> Result<VerifyReport> {
    let reg = registry(id)?;
    let dir = root.join(id.subdir());
    let mut present = 0;
    let mut missing = Vec::new();
    for e in &reg.entries {
        let p = dir.join(&e.rel_path);
        if p.is_file() {
            present += 1;
        } else {
            missing.push(p);
        }
    }
    Ok(VerifyReport {
        dataset: id.name().to_string(),
        present,
        missing,
    })
}

/// Recipe for the synthetic corpus: per class, exponentially decaying
/// resonant bursts at a class-specific impulse rate, plus an optional
/// per-sample DC drift and white noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub class_count: usize,
    pub records_per_class: usize,
    pub record_len: usize,
    pub sampling_rate_hz: f64,
    /// Impulse repetition frequency per class, Hz.
    pub impulse_freqs_hz: Vec<f64>,
    /// Burst carrier frequency per class, Hz.
    pub resonance_freqs_hz: Vec<f64>,
    /// Envelope decay constant, 1/s.
    pub decay_per_sec: f64,
    pub noise_std: f64,
    /// Additive trend per sample; nonzero values make window statistics
    /// depend on their position in the record.
    pub drift_slope: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// A separable default layout: distinct impulse and resonance
    /// frequencies per class.
    pub fn with_classes(class_count: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            class_count,
            records_per_class: 1,
            record_len: 128 * 1024,
            sampling_rate_hz: 12_000.0,
            impulse_freqs_hz: (0..class_count).map(|k| 21.0 + 6.5 * k as f64).collect(),
            resonance_freqs_hz: (0..class_count).map(|k| 900.0 + 330.0 * k as f64).collect(),
            decay_per_sec: 450.0,
            noise_std: 0.0,
            drift_slope: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.class_count == 0
            || self.impulse_freqs_hz.len() != self.class_count
            || self.resonance_freqs_hz.len() != self.class_count
        {
            return Err(Error::Config {
                what: "synthetic spec needs one (impulse, resonance) pair per class".into(),
            });
        }
        for a in 0..self.class_count {
            for b in a + 1..self.class_count {
                if self.impulse_freqs_hz[a] == self.impulse_freqs_hz[b]
                    && self.resonance_freqs_hz[a] == self.resonance_freqs_hz[b]
                {
                    return Err(Error::Config {
                        what: format!("classes {a} and {b} share the same frequency pair"),
                    });
                }
            }
        }
        if self.record_len == 0 || self.records_per_class == 0 || self.sampling_rate_hz <= 0.0 {
            return Err(Error::Config {
                what: "synthetic spec extents must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Deterministically synthesize `class_count * records_per_class` records.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<SignalRecord>> {
    spec.validate()?;
    let sr = spec.sampling_rate_hz;
    // ignore envelope tails below 1e-12
    let tail_samples = (27.7 / spec.decay_per_sec * sr).ceil() as usize;

    let mut records = Vec::with_capacity(spec.class_count * spec.records_per_class);
    for class in 0..spec.class_count {
        let period = sr / spec.impulse_freqs_hz[class];
        let f_res = spec.resonance_freqs_hz[class];
        for rec in 0..spec.records_per_class {
            let mut rng = rng::stream(spec.seed, &format!("synth/{class}/{rec}"));
            let mut x = vec![0.0; spec.record_len];
            let mut impulse = 0usize;
            loop {
                let t0 = impulse as f64 * period;
                let start = t0.ceil() as usize;
                if start >= spec.record_len {
                    break;
                }
                let end = (start + tail_samples).min(spec.record_len);
                for (n, v) in x.iter_mut().enumerate().take(end).skip(start) {
                    let dt = (n as f64 - t0) / sr;
                    *v += (-spec.decay_per_sec * dt).exp() * (2.0 * PI * f_res * dt).sin();
                }
                impulse += 1;
            }
            if spec.drift_slope != 0.0 {
                for (n, v) in x.iter_mut().enumerate() {
                    *v += spec.drift_slope * n as f64;
                }
            }
            if spec.noise_std > 0.0 {
                let normal = Normal::new(0.0, spec.noise_std).unwrap();
                for v in x.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            } else {
                // keep the stream position identical either way
                let _ = rng.gen::<u64>();
            }
            let mut condition = BTreeMap::new();
            condition.insert("label".to_string(), format!("class{class}"));
            records.push(SignalRecord {
                samples: x,
                sampling_rate_hz: sr,
                dataset_id: "synthetic".to_string(),
                file_path: format!("synthetic/class{class}/record{rec}"),
                channel_name: "synth".to_string(),
                condition,
                class_id: class,
            });
        }
    }
    Ok(records)
}
