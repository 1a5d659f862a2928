//! Fine-grained Mean Rank and coarse-grained Recall@k.
//!
//! Scoring runs on a rayon pool whose size can be capped with the
//! `FGMATCH_THREADS` environment variable. Each item or query is scored
//! independently and results are collected in input order, so the output
//! does not depend on the thread count.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{CoarseSet, EmbeddingTable, VocabSet};
use crate::error::{Error, Result};
use crate::heads::HeadParams;
use crate::numcore::Vector;

pub use report::{config_digest, evaluate, BenchmarkScore, Deltas, EvalInputs, EvalReport};

/// Environment variable limiting evaluator parallelism.
pub const THREADS_ENV: &str = "FGMATCH_THREADS";

/// Cut-offs reported for retrieval.
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

const ITEMS_PER_TASK: usize = 64;

/// Position of the positive among itself and the negatives, 1-based.
/// A negative scoring exactly as high as the positive is ranked ahead of it.
pub fn rank_positive(pos: f64, negatives: &[f64]) -> Result<usize> {
    if negatives.is_empty() {
        return Err(Error::usage("ranking needs at least one negative"));
    }
    if !pos.is_finite() || negatives.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("ranking scores".into()));
    }
    Ok(1 + negatives.iter().filter(|&&s| s >= pos).count())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub ranks: Vec<usize>,
    pub mean_rank: f64,
    /// Vocabulary size: the positive plus its negatives.
    pub k: usize,
}

impl RankResult {
    /// Builds the result from per-item `(positive, negatives)` scores.
    pub fn from_scores(items: &[(f64, Vec<f64>)]) -> Result<Self> {
        let Some((_, first)) = items.first() else {
            return Err(Error::usage("cannot rank an empty dataset"));
        };
        let k = first.len() + 1;
        let ranks = items
            .iter()
            .map(|(pos, negs)| {
                Error::check_dim(k - 1, negs.len())?;
                rank_positive(*pos, negs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_ranks(ranks, k))
    }

    fn from_ranks(ranks: Vec<usize>, k: usize) -> Self {
        let mean_rank = ranks.iter().map(|&r| r as f64).sum::<f64>() / ranks.len() as f64;
        Self { ranks, mean_rank, k }
    }
}

/// Runs `f` on the evaluator's thread pool.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::usage(format!("cannot start evaluator threads: {e}")))?;
    Ok(pool.install(f))
}

fn lookup<'a>(table: &'a EmbeddingTable, id: &str) -> Result<&'a Vector> {
    table
        .get(id)
        .ok_or_else(|| Error::dataset(format!("id {id:?} not found in table")))
}

fn vocab_scores(head: &HeadParams, vocab: &VocabSet, items: &[usize]) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = vocab.dataset.n_negatives;
    let mut visuals: Vec<&Vector> = Vec::with_capacity(items.len());
    let mut texts: Vec<&Vector> = Vec::with_capacity(items.len() * (n + 1));
    for &i in items {
        let item = &vocab.dataset.items[i];
        visuals.push(lookup(&vocab.images, &item.crop_id)?);
        texts.push(lookup(&vocab.texts, &item.positive_id)?);
        for id in &item.negative_ids {
            texts.push(lookup(&vocab.texts, id)?);
        }
    }
    let enc = head.encode(&visuals, &texts)?;
    (0..items.len())
        .map(|i| {
            let base = i * (n + 1);
            let pos = enc.score(i, base)?;
            let negs = (1..=n).map(|k| enc.score(i, base + k)).collect::<Result<Vec<_>>>()?;
            Ok((pos, negs))
        })
        .collect()
}

/// Mean Rank of the positive label over a vocabulary dataset.
pub fn mean_rank(head: &HeadParams, vocab: &VocabSet) -> Result<RankResult> {
    if vocab.dataset.items.is_empty() {
        return Err(Error::usage(format!("benchmark {} has no items", vocab.dataset.benchmark)));
    }
    Error::check_dim(head.dim(), vocab.dim())?;
    let indices: Vec<usize> = (0..vocab.dataset.items.len()).collect();
    let chunks: Vec<Vec<(f64, Vec<f64>)>> = with_pool(|| {
        indices
            .par_chunks(ITEMS_PER_TASK)
            .map(|chunk| vocab_scores(head, vocab, chunk))
            .collect::<Result<Vec<_>>>()
    })??;
    RankResult::from_scores(&chunks.concat())
}

/// Recall percentages at 1, 5 and 10.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl Recall {
    fn from_positions(positions: &[usize]) -> Self {
        let at = |k| recall_at(positions, k);
        Self {
            r1: at(1),
            r5: at(5),
            r10: at(10),
        }
    }

    pub fn values(&self) -> [f64; 3] {
        [self.r1, self.r5, self.r10]
    }

    pub(crate) fn map2(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            r1: f(self.r1, other.r1),
            r5: f(self.r5, other.r5),
            r10: f(self.r10, other.r10),
        }
    }
}

/// Percentage of queries whose first relevant result sits at position `k` or better.
pub fn recall_at(positions: &[usize], k: usize) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    100.0 * positions.iter().filter(|&&p| p <= k).count() as f64 / positions.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub i2t: Recall,
    pub t2i: Recall,
}

/// First-hit positions for both retrieval directions.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalPositions {
    /// Per image: best position of any of its captions among all captions.
    pub i2t: Vec<usize>,
    /// Per caption: position of its image among all images.
    pub t2i: Vec<usize>,
}

impl RetrievalPositions {
    pub fn recall(&self) -> Retrieval {
        Retrieval {
            i2t: Recall::from_positions(&self.i2t),
            t2i: Recall::from_positions(&self.t2i),
        }
    }
}

/// `true` when candidate `a` is listed before candidate `b`: higher score
/// first, equal scores by ascending id.
fn ahead(sa: f64, ida: &str, sb: f64, idb: &str) -> bool {
    sa > sb || (sa == sb && ida < idb)
}

/// Retrieval positions from a full `images x captions` score matrix.
/// `owner[c]` is the image index of caption `c`.
pub fn retrieval_positions(
    scores: &[Vec<f64>],
    image_ids: &[&str],
    caption_ids: &[&str],
    owner: &[usize],
) -> Result<RetrievalPositions> {
    if scores.is_empty() || caption_ids.is_empty() {
        return Err(Error::usage("retrieval needs at least one image and one caption"));
    }
    Error::check_dim(image_ids.len(), scores.len())?;
    Error::check_dim(caption_ids.len(), owner.len())?;
    for row in scores {
        Error::check_dim(caption_ids.len(), row.len())?;
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("retrieval scores".into()));
        }
    }
    if let Some(&bad) = owner.iter().find(|&&i| i >= image_ids.len()) {
        return Err(Error::dataset(format!("caption owner {bad} out of range")));
    }

    let i2t = (0..image_ids.len())
        .into_par_iter()
        .map(|i| {
            let row = &scores[i];
            let best = (0..caption_ids.len())
                .filter(|&c| owner[c] == i)
                .reduce(|a, b| if ahead(row[b], caption_ids[b], row[a], caption_ids[a]) { b } else { a });
            match best {
                Some(b) => {
                    1 + (0..caption_ids.len())
                        .filter(|&c| ahead(row[c], caption_ids[c], row[b], caption_ids[b]))
                        .count()
                }
                None => usize::MAX,
            }
        })
        .collect();
    let t2i = (0..caption_ids.len())
        .into_par_iter()
        .map(|c| {
            let i = owner[c];
            let s = scores[i][c];
            1 + (0..image_ids.len())
                .filter(|&j| ahead(scores[j][c], image_ids[j], s, image_ids[i]))
                .count()
        })
        .collect();
    Ok(RetrievalPositions { i2t, t2i })
}

/// Image-to-text and text-to-image Recall@{1,5,10} over a coarse split.
pub fn recall_at_k(head: &HeadParams, coarse: &CoarseSet) -> Result<Retrieval> {
    Ok(coarse_positions(head, coarse)?.recall())
}

pub fn coarse_positions(head: &HeadParams, coarse: &CoarseSet) -> Result<RetrievalPositions> {
    if coarse.pairs.items.is_empty() {
        return Err(Error::usage("retrieval split has no images"));
    }
    Error::check_dim(head.dim(), coarse.dim())?;
    let image_ids: Vec<&str> = coarse.pairs.items.iter().map(|it| it.image_id.as_str()).collect();
    let mut caption_ids = Vec::new();
    let mut owner = Vec::new();
    for (i, item) in coarse.pairs.items.iter().enumerate() {
        for id in &item.caption_ids {
            caption_ids.push(id.as_str());
            owner.push(i);
        }
    }
    let visuals = image_ids.iter().map(|id| lookup(&coarse.images, id)).collect::<Result<Vec<_>>>()?;
    let texts = caption_ids.iter().map(|id| lookup(&coarse.texts, id)).collect::<Result<Vec<_>>>()?;
    with_pool(|| {
        let enc = head.encode(&visuals, &texts)?;
        let scores: Vec<Vec<f64>> = (0..visuals.len()).into_par_iter().map(|i| enc.score_row(i)).collect();
        retrieval_positions(&scores, &image_ids, &caption_ids, &owner)
    })?
}
