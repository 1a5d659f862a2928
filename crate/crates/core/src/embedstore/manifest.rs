//! JSON manifests tying embedding tables to coarse pairings or fine-grained
//! vocabularies.
//!
//! A manifest names one image table and one text table (paths relative to
//! the manifest file) and carries either `pairs` or `vocab_items`, inline or
//! as the path of a separate JSON file holding the array.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fgeb::{read_table, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Trivial,
    Easy,
    Medium,
    Hard,
    Color,
    Material,
    Pattern,
    Transparency,
    Custom,
}

impl Benchmark {
    pub const NAMED: [Benchmark; 8] = [
        Benchmark::Trivial,
        Benchmark::Easy,
        Benchmark::Medium,
        Benchmark::Hard,
        Benchmark::Color,
        Benchmark::Material,
        Benchmark::Pattern,
        Benchmark::Transparency,
    ];

    /// Vocabulary negatives fixed by the published benchmark suite; `None` for custom sets.
    pub fn expected_negatives(self) -> Option<usize> {
        match self {
            Benchmark::Pattern => Some(7),
            Benchmark::Transparency => Some(2),
            Benchmark::Custom => None,
            _ => Some(10),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Trivial => "trivial",
            Benchmark::Easy => "easy",
            Benchmark::Medium => "medium",
            Benchmark::Hard => "hard",
            Benchmark::Color => "color",
            Benchmark::Material => "material",
            Benchmark::Pattern => "pattern",
            Benchmark::Transparency => "transparency",
            Benchmark::Custom => "custom",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::NAMED
            .into_iter()
            .chain([Benchmark::Custom])
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown benchmark {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseItem {
    pub image_id: String,
    pub caption_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarsePairs {
    pub split: Split,
    pub items: Vec<CoarseItem>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabItem {
    pub crop_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabDataset {
    pub benchmark: Benchmark,
    pub n_negatives: usize,
    pub items: Vec<VocabItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inline<T> {
    Items(Vec<T>),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dim: usize,
    pub image_table: PathBuf,
    pub text_table: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Inline<CoarseItem>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<Benchmark>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_negatives: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_items: Option<Inline<VocabItem>>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Coarse image/caption pairs with their resolved tables.
#[derive(Clone, Debug)]
pub struct CoarseSet {
    pub pairs: CoarsePairs,
    pub images: EmbeddingTable,
    pub texts: EmbeddingTable,
}

/// A fine-grained vocabulary dataset with its resolved tables.
#[derive(Clone, Debug)]
pub struct VocabSet {
    pub dataset: VocabDataset,
    pub images: EmbeddingTable,
    pub texts: EmbeddingTable,
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_tables(manifest: &Manifest, dir: &Path) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let images = read_table(dir.join(&manifest.image_table))?;
    let texts = read_table(dir.join(&manifest.text_table))?;
    for (what, t) in [("image", &images), ("text", &texts)] {
        if t.dim() != manifest.dim {
            return Err(Error::dataset(format!(
                "{what} table has dim {}, manifest says {}",
                t.dim(),
                manifest.dim
            )));
        }
    }
    Ok((images, texts))
}

fn resolve_inline<T: for<'de> Deserialize<'de>>(inline: Inline<T>, dir: &Path) -> Result<Vec<T>> {
    match inline {
        Inline::Items(items) => Ok(items),
        Inline::File(p) => {
            let text = fs::read_to_string(dir.join(p))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn require(table: &EmbeddingTable, id: &str, what: &str) -> Result<()> {
    if table.contains(id) {
        Ok(())
    } else {
        Err(Error::dataset(format!("{what} id {id:?} not found in table")))
    }
}

pub fn load_coarse(manifest_path: impl AsRef<Path>) -> Result<CoarseSet> {
    let path = manifest_path.as_ref();
    let manifest = Manifest::read(path)?;
    let dir = base_dir(path);
    let pairs = manifest
        .pairs
        .clone()
        .ok_or_else(|| Error::dataset(format!("{} has no \"pairs\"", path.display())))?;
    let items = resolve_inline(pairs, &dir)?;
    let (images, texts) = load_tables(&manifest, &dir)?;
    CoarseSet::new(
        CoarsePairs {
            split: manifest.split.unwrap_or(Split::Test),
            items,
        },
        images,
        texts,
    )
}

pub fn load_vocab(manifest_path: impl AsRef<Path>) -> Result<VocabSet> {
    let path = manifest_path.as_ref();
    let manifest = Manifest::read(path)?;
    let dir = base_dir(path);
    let vocab = manifest
        .vocab_items
        .clone()
        .ok_or_else(|| Error::dataset(format!("{} has no \"vocab_items\"", path.display())))?;
    let items = resolve_inline(vocab, &dir)?;
    let benchmark = manifest.benchmark.unwrap_or(Benchmark::Custom);
    let n_negatives = match (manifest.n_negatives, items.first()) {
        (Some(n), _) => n,
        (None, Some(first)) => first.negative_ids.len(),
        (None, None) => benchmark.expected_negatives().unwrap_or(1),
    };
    let (images, texts) = load_tables(&manifest, &dir)?;
    VocabSet::new(
        VocabDataset {
            benchmark,
            n_negatives,
            items,
        },
        images,
        texts,
    )
}

impl CoarseSet {
    pub fn new(pairs: CoarsePairs, images: EmbeddingTable, texts: EmbeddingTable) -> Result<Self> {
        Error::check_dim(images.dim(), texts.dim())?;
        let mut seen = HashSet::new();
        for item in &pairs.items {
            if !seen.insert(item.image_id.as_str()) {
                return Err(Error::dataset(format!("duplicate image id {:?}", item.image_id)));
            }
            if item.caption_ids.is_empty() {
                return Err(Error::dataset(format!("image {:?} has no captions", item.image_id)));
            }
            require(&images, &item.image_id, "image")?;
            for c in &item.caption_ids {
                require(&texts, c, "caption")?;
            }
        }
        Ok(Self {
            pairs,
            images,
            texts,
        })
    }

    pub fn dim(&self) -> usize {
        self.images.dim()
    }

    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            pairs: self.pairs.clone(),
            images: self.images.l2_normalized()?,
            texts: self.texts.l2_normalized()?,
        })
    }

    /// Content digest over the pairing and both tables.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"coarse");
        for item in &self.pairs.items {
            h.update(item.image_id.as_bytes());
            h.update([0]);
            for c in &item.caption_ids {
                h.update(c.as_bytes());
                h.update([1]);
            }
        }
        h.update(self.images.digest());
        h.update(self.texts.digest());
        hex::encode(h.finalize())
    }
}

impl VocabSet {
    pub fn new(dataset: VocabDataset, images: EmbeddingTable, texts: EmbeddingTable) -> Result<Self> {
        Error::check_dim(images.dim(), texts.dim())?;
        let n = dataset.n_negatives;
        if n == 0 {
            return Err(Error::dataset("vocabularies need at least one negative"));
        }
        if let Some(expected) = dataset.benchmark.expected_negatives() {
            if n != expected {
                return Err(Error::dataset(format!(
                    "benchmark {} uses {expected} negatives, dataset declares {n}",
                    dataset.benchmark
                )));
            }
        }
        for item in &dataset.items {
            if item.negative_ids.len() != n {
                return Err(Error::dataset(format!(
                    "item {:?} has {} negatives, dataset uses {n}",
                    item.crop_id,
                    item.negative_ids.len()
                )));
            }
            if item.negative_ids.contains(&item.positive_id) {
                return Err(Error::dataset(format!(
                    "item {:?}: positive {:?} also listed as negative",
                    item.crop_id, item.positive_id
                )));
            }
            let distinct: HashSet<_> = item.negative_ids.iter().collect();
            if distinct.len() != n {
                return Err(Error::dataset(format!(
                    "item {:?} repeats a negative",
                    item.crop_id
                )));
            }
            require(&images, &item.crop_id, "crop")?;
            require(&texts, &item.positive_id, "caption")?;
            for c in &item.negative_ids {
                require(&texts, c, "caption")?;
            }
        }
        Ok(Self {
            dataset,
            images,
            texts,
        })
    }

    pub fn dim(&self) -> usize {
        self.images.dim()
    }

    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            dataset: self.dataset.clone(),
            images: self.images.l2_normalized()?,
            texts: self.texts.l2_normalized()?,
        })
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"vocab");
        h.update(self.dataset.benchmark.name());
        for item in &self.dataset.items {
            for id in std::iter::once(&item.crop_id)
                .chain([&item.positive_id])
                .chain(&item.negative_ids)
            {
                h.update(id.as_bytes());
                h.update([0]);
            }
        }
        h.update(self.images.digest());
        h.update(self.texts.digest());
        hex::encode(h.finalize())
    }
}
