//! Output directory layout, the run manifest and cached dataset splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ogae_core::data::{read_npy, write_npy_f64, Experiment1Splits, LabeledImageSet, Origin};
use ogae_core::hash::fingerprint_bytes;
use ogae_core::pipeline::{ArtifactRef, ExperimentManifest, SplitFingerprints};

use crate::config::CliConfig;
use crate::MissingInput;

pub const RUN_FORMAT: &str = "ogae-run/1";
pub const SPLITS: [&str; 4] = ["train", "earlystop", "validation", "test"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub command: String,
    pub wall_clock_seconds: f64,
}

/// `manifest.json` at the root of the output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config: CliConfig,
    pub fingerprints: Option<SplitFingerprints>,
    /// Keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, ArtifactRef>,
    pub methods: BTreeMap<String, ExperimentManifest>,
    pub steps: Vec<StepRecord>,
}

pub struct Workspace {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(fingerprint_bytes(&bytes))
}

impl Workspace {
    /// Opens `root`, creating a fresh manifest when `fresh` or none exists.
    pub fn open(root: &Path, config: &CliConfig, fresh: bool) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let path = root.join("manifest.json");
        let manifest = if !fresh && path.exists() {
            let text = fs::read_to_string(&path)?;
            let mut m: RunManifest = serde_json::from_str(&text).context("parsing manifest.json")?;
            if m.format != RUN_FORMAT {
                bail!(MissingInput(format!("unknown run manifest format {:?}", m.format)));
            }
            m.config = config.clone();
            m
        } else {
            RunManifest {
                format: RUN_FORMAT.to_string(),
                config: config.clone(),
                fingerprints: None,
                artifacts: BTreeMap::new(),
                methods: BTreeMap::new(),
                steps: Vec::new(),
            }
        };
        Ok(Workspace {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Hashes `rel` and records it in the manifest.
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let sha256 = sha256_file(&self.path(rel))?;
        self.manifest.artifacts.insert(
            rel.to_string(),
            ArtifactRef {
                path: rel.to_string(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, serde_json::to_string_pretty(value)?)?;
        self.register(rel)
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.register(rel)
    }

    /// Fails unless `rel` exists and still has the recorded hash.
    pub fn verify(&self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        let Some(entry) = self.manifest.artifacts.get(rel) else {
            bail!(MissingInput(format!(
                "{rel} is not recorded in the manifest; run the producing command first"
            )));
        };
        if !path.exists() {
            bail!(MissingInput(format!("{} is missing", path.display())));
        }
        let now = sha256_file(&path)?;
        if now != entry.sha256 {
            bail!(MissingInput(format!(
                "{rel} changed since it was written (sha256 {now}, manifest {})",
                entry.sha256
            )));
        }
        Ok(path)
    }

    pub fn verify_all(&self) -> Result<()> {
        for rel in self.manifest.artifacts.keys() {
            self.verify(rel)?;
        }
        Ok(())
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        let path = self.verify(rel)?;
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {rel}"))
    }

    pub fn record_step(&mut self, command: &str, seconds: f64) {
        self.manifest.steps.push(StepRecord {
            command: command.to_string(),
            wall_clock_seconds: seconds,
        });
    }

    pub fn save(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Per-image provenance of one cached split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitIndex {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub fingerprint: String,
    pub origins: Vec<Origin>,
    pub source_index: Vec<usize>,
    pub corruptions: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitsFile {
    pub splits: BTreeMap<String, SplitIndex>,
}

fn split_of<'a>(s: &'a Experiment1Splits, name: &str) -> &'a LabeledImageSet {
    match name {
        "train" => &s.train,
        "earlystop" => &s.earlystop,
        "validation" => &s.val,
        _ => &s.test,
    }
}

pub fn write_splits(ws: &mut Workspace, splits: &Experiment1Splits) -> Result<()> {
    let mut index = BTreeMap::new();
    for name in SPLITS {
        let set = split_of(splits, name);
        let images = format!("data/{name}.npy");
        let labels = format!("data/{name}.labels.npy");
        fs::create_dir_all(ws.path("data"))?;
        write_npy_f64(&ws.path(&images), &[set.len(), set.height, set.width], &set.images)?;
        let lab: Vec<f64> = set.labels.iter().map(|&l| l as f64).collect();
        write_npy_f64(&ws.path(&labels), &[set.len()], &lab)?;
        ws.register(&images)?;
        ws.register(&labels)?;
        index.insert(
            name.to_string(),
            SplitIndex {
                count: set.len(),
                height: set.height,
                width: set.width,
                fingerprint: set.fingerprint(),
                origins: set.origins.clone(),
                source_index: set.source_index.clone(),
                corruptions: set.corruptions.clone(),
            },
        );
    }
    ws.write_json("data/splits.json", &SplitsFile { splits: index })?;
    ws.manifest.fingerprints = Some(SplitFingerprints::of(splits));
    Ok(())
}

pub fn read_splits(ws: &Workspace) -> Result<Experiment1Splits> {
    let file: SplitsFile = ws.read_json("data/splits.json")?;
    let mut sets = Vec::new();
    for name in SPLITS {
        let idx = file
            .splits
            .get(name)
            .ok_or_else(|| MissingInput(format!("split {name} missing from data/splits.json")))?;
        let images = read_npy(&ws.verify(&format!("data/{name}.npy"))?)?;
        let labels = read_npy(&ws.verify(&format!("data/{name}.labels.npy"))?)?;
        if images.shape != [idx.count, idx.height, idx.width] || labels.data.len() != idx.count {
            bail!(MissingInput(format!("cached split {name} does not match its index")));
        }
        let set = LabeledImageSet {
            height: idx.height,
            width: idx.width,
            images: images.data,
            labels: labels.data.iter().map(|&v| v as u8).collect(),
            corruptions: idx.corruptions.clone(),
            origins: idx.origins.clone(),
            source_index: idx.source_index.clone(),
        };
        set.check()?;
        if set.fingerprint() != idx.fingerprint {
            bail!(MissingInput(format!("cached split {name} does not match its fingerprint")));
        }
        sets.push(set);
    }
    let test = sets.pop().expect("four splits");
    let val = sets.pop().expect("four splits");
    let earlystop = sets.pop().expect("four splits");
    let train = sets.pop().expect("four splits");
    Ok(Experiment1Splits {
        train,
        earlystop,
        val,
        test,
    })
}
