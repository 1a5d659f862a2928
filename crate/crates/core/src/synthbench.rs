//! Seeded synthetic embedding spaces with a dominant coarse component and a
//! small linearly coded fine-grained attribute.
//!
//! Every vector is built as
//!
//! ```text
//! category code + category jitter + epsilon * attribute code + noise
//! ```
//!
//! where the category and attribute codes are orthonormal, the jitter is a
//! Gaussian perturbation restricted to the span of the category codes and
//! the noise is isotropic. A vocabulary item pairs a crop with a positive
//! caption of the same category and attribute and with negatives that share
//! the category but carry other attributes. Coarse captions share their
//! image's category and attribute with fresh jitter and noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedstore::{
    write_table, Benchmark, CoarseItem, CoarsePairs, CoarseSet, EmbeddingTable, Inline, Manifest, Split,
    VocabDataset, VocabItem, VocabSet,
};
use crate::error::{Error, Result};
use crate::numcore::Vector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_categories: usize,
    pub n_attributes: usize,
    /// Scale of the attribute code relative to the unit category code.
    pub epsilon: f64,
    /// Standard deviation of the isotropic noise per coordinate.
    pub noise: f64,
    /// Standard deviation of the jitter along each category direction.
    pub category_jitter: f64,
    pub n_negatives: usize,
    pub n_coarse_train: usize,
    pub n_coarse_test: usize,
    pub captions_per_image: usize,
    pub n_train_items: usize,
    pub n_eval_items: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_categories: 52,
            n_attributes: 12,
            epsilon: 0.05,
            noise: 0.01,
            category_jitter: 0.05,
            n_negatives: 10,
            n_coarse_train: 2000,
            n_coarse_test: 1000,
            captions_per_image: 5,
            n_train_items: 20_000,
            n_eval_items: 1000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::usage(msg));
        if self.n_negatives == 0 {
            return fail("at least one negative is required".into());
        }
        if self.n_attributes < self.n_negatives + 1 {
            return fail(format!(
                "{} attributes cannot give {} distinct negatives plus the positive",
                self.n_attributes, self.n_negatives
            ));
        }
        if self.n_categories == 0 {
            return fail("at least one category is required".into());
        }
        if self.n_categories + self.n_attributes > self.dim {
            return fail(format!(
                "{} category + {} attribute codes do not fit orthogonally in dimension {}",
                self.n_categories, self.n_attributes, self.dim
            ));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return fail(format!("epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        for (name, v) in [("noise", self.noise), ("category jitter", self.category_jitter)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.captions_per_image == 0 {
            return fail("images need at least one caption".into());
        }
        if self.n_eval_items == 0 {
            return fail("at least one evaluation item is required".into());
        }
        Ok(())
    }
}

/// Orthonormal codes the data was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Codes {
    pub categories: Vec<Vec<f64>>,
    pub attributes: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub config: SynthConfig,
    pub codes: Codes,
    pub coarse_train: CoarseSet,
    pub coarse_test: CoarseSet,
    pub vocab_train: VocabSet,
    pub vocab_eval: VocabSet,
}

/// Gram-Schmidt on Gaussian draws (two passes for numerical stability).
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

struct Builder<'a> {
    config: &'a SynthConfig,
    codes: &'a Codes,
}

impl Builder<'_> {
    fn vector(&self, rng: &mut ChaCha8Rng, category: usize, attribute: usize) -> Result<Vector> {
        let c = self.config;
        let mut v = self.codes.categories[category].clone();
        for code in &self.codes.categories {
            let z: f64 = rng.sample::<f64, _>(StandardNormal) * c.category_jitter;
            v.iter_mut().zip(code).for_each(|(x, y)| *x += z * y);
        }
        let attr = &self.codes.attributes[attribute];
        let noise = rand_distr::Normal::new(0.0, c.noise).expect("validated noise");
        for (x, a) in v.iter_mut().zip(attr) {
            *x += c.epsilon * a + noise.sample(rng);
        }
        Vector::from_f64(&v)
    }

    fn coarse(&self, rng: &mut ChaCha8Rng, prefix: &str, n: usize, split: Split) -> Result<CoarseSet> {
        let c = self.config;
        let mut images = EmbeddingTable::new(c.dim)?;
        let mut texts = EmbeddingTable::new(c.dim)?;
        let mut items = Vec::with_capacity(n);
        for i in 0..n {
            let category = rng.random_range(0..c.n_categories);
            let attribute = rng.random_range(0..c.n_attributes);
            let image_id = format!("{prefix}-img-{i}");
            images.insert(image_id.clone(), self.vector(rng, category, attribute)?)?;
            let mut caption_ids = Vec::with_capacity(c.captions_per_image);
            for k in 0..c.captions_per_image {
                let id = format!("{prefix}-cap-{i}-{k}");
                texts.insert(id.clone(), self.vector(rng, category, attribute)?)?;
                caption_ids.push(id);
            }
            items.push(CoarseItem { image_id, caption_ids });
        }
        CoarseSet::new(CoarsePairs { split, items }, images, texts)
    }

    fn vocab(&self, rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> Result<VocabSet> {
        let c = self.config;
        let mut images = EmbeddingTable::new(c.dim)?;
        let mut texts = EmbeddingTable::new(c.dim)?;
        let mut items = Vec::with_capacity(n);
        for i in 0..n {
            let category = rng.random_range(0..c.n_categories);
            let attribute = rng.random_range(0..c.n_attributes);
            let crop_id = format!("{prefix}-crop-{i}");
            images.insert(crop_id.clone(), self.vector(rng, category, attribute)?)?;
            let positive_id = format!("{prefix}-pos-{i}");
            texts.insert(positive_id.clone(), self.vector(rng, category, attribute)?)?;
            let others = sample(rng, c.n_attributes - 1, c.n_negatives);
            let mut negative_ids = Vec::with_capacity(c.n_negatives);
            for (j, other) in others.into_iter().enumerate() {
                let other = if other >= attribute { other + 1 } else { other };
                let id = format!("{prefix}-neg-{i}-{j}");
                texts.insert(id.clone(), self.vector(rng, category, other)?)?;
                negative_ids.push(id);
            }
            items.push(VocabItem {
                crop_id,
                positive_id,
                negative_ids,
            });
        }
        let dataset = VocabDataset {
            benchmark: Benchmark::Custom,
            n_negatives: c.n_negatives,
            items,
        };
        VocabSet::new(dataset, images, texts)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Builds every split. Each split draws from its own stream, so changing
/// one split's size leaves the others untouched.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = stream(config.seed, 0);
    let mut all = orthonormal(&mut rng, config.n_categories + config.n_attributes, config.dim);
    let attributes = all.split_off(config.n_categories);
    let codes = Codes {
        categories: all,
        attributes,
    };
    let b = Builder {
        config,
        codes: &codes,
    };
    Ok(SynthData {
        coarse_train: b.coarse(&mut stream(config.seed, 1), "ctr", config.n_coarse_train, Split::Train)?,
        coarse_test: b.coarse(&mut stream(config.seed, 2), "cte", config.n_coarse_test, Split::Test)?,
        vocab_train: b.vocab(&mut stream(config.seed, 3), "vtr", config.n_train_items)?,
        vocab_eval: b.vocab(&mut stream(config.seed, 4), "vev", config.n_eval_items)?,
        config: config.clone(),
        codes,
    })
}

/// File names written by [`SynthData::write`].
pub const MANIFESTS: [&str; 4] = ["coarse_train.json", "coarse_test.json", "vocab_train.json", "vocab_eval.json"];

impl SynthData {
    /// Writes one image table, one text table and one manifest per split,
    /// plus `synth_config.json`. Returns the written paths.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut tables = |stem: &str, images: &EmbeddingTable, texts: &EmbeddingTable| -> Result<(PathBuf, PathBuf)> {
            let names = (
                PathBuf::from(format!("{stem}_images.fgeb")),
                PathBuf::from(format!("{stem}_texts.fgeb")),
            );
            write_table(images, dir.join(&names.0))?;
            write_table(texts, dir.join(&names.1))?;
            written.push(dir.join(&names.0));
            written.push(dir.join(&names.1));
            Ok(names)
        };
        let dim = self.config.dim;
        let mut manifests = Vec::new();
        for (stem, set) in [("coarse_train", &self.coarse_train), ("coarse_test", &self.coarse_test)] {
            let (image_table, text_table) = tables(stem, &set.images, &set.texts)?;
            manifests.push(Manifest {
                dim,
                image_table,
                text_table,
                split: Some(set.pairs.split),
                pairs: Some(Inline::Items(set.pairs.items.clone())),
                benchmark: None,
                n_negatives: None,
                vocab_items: None,
            });
        }
        for (stem, set) in [("vocab_train", &self.vocab_train), ("vocab_eval", &self.vocab_eval)] {
            let (image_table, text_table) = tables(stem, &set.images, &set.texts)?;
            manifests.push(Manifest {
                dim,
                image_table,
                text_table,
                split: None,
                pairs: None,
                benchmark: Some(set.dataset.benchmark),
                n_negatives: Some(set.dataset.n_negatives),
                vocab_items: Some(Inline::Items(set.dataset.items.clone())),
            });
        }
        for (name, manifest) in MANIFESTS.iter().zip(&manifests) {
            manifest.write(dir.join(name))?;
            written.push(dir.join(name));
        }
        let config_path = dir.join("synth_config.json");
        let mut text = serde_json::to_string_pretty(&self.config)?;
        text.push('\n');
        fs::write(&config_path, text)?;
        written.push(config_path);
        Ok(written)
    }
}
