#![allow(dead_code)]

use fgmatch::heads::{init_head, HeadKind, HeadParams, HeadShape};
use fgmatch::losses::{coarse_triplet_loss_grad, finegrained_triplet_loss_grad};
use fgmatch::numcore::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TRAINABLE: [HeadKind; 5] = [
    HeadKind::LinearBoth,
    HeadKind::LinearTextOnly,
    HeadKind::LinearVisualOnly,
    HeadKind::Mlp,
    HeadKind::Mha,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    let data: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Vector::new(data).unwrap()
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    gaussian(rng, dim).normalized().unwrap()
}

/// Small head shape used by the gradient checks: d = 8, 4 attention heads.
pub fn small_shape(kind: HeadKind) -> HeadShape {
    HeadShape {
        kind,
        dim: 8,
        hidden: 12,
        heads: 4,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// In-batch loss on a B x B score matrix.
    Coarse,
    /// Vocabulary loss with N negatives per item.
    Fine,
}

pub struct Batch {
    pub objective: Objective,
    pub visuals: Vec<Vector>,
    pub texts: Vec<Vector>,
    pub negatives: usize,
    pub margin: f64,
}

impl Batch {
    pub fn random(objective: Objective, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let b = rng.random_range(2..=5);
        match objective {
            Objective::Coarse => Batch {
                objective,
                visuals: (0..b).map(|_| unit(rng, dim)).collect(),
                texts: (0..b).map(|_| unit(rng, dim)).collect(),
                negatives: 0,
                margin: 0.2,
            },
            Objective::Fine => {
                let n = rng.random_range(1..=6);
                Batch {
                    objective,
                    visuals: (0..b).map(|_| unit(rng, dim)).collect(),
                    texts: (0..b * (n + 1)).map(|_| unit(rng, dim)).collect(),
                    negatives: n,
                    margin: 0.05,
                }
            }
        }
    }

    /// Loss, per-pair score gradients and the smallest hinge argument magnitude.
    pub fn evaluate(&self, head: &HeadParams) -> (f64, Vec<(usize, usize, f64)>, f64) {
        let enc = head.encode(&self.visuals, &self.texts).unwrap();
        match self.objective {
            Objective::Coarse => {
                let b = self.visuals.len();
                let s: Vec<f64> = enc.score_matrix().concat();
                let (loss, g) = coarse_triplet_loss_grad(&s, b, self.margin).unwrap();
                let mut closest = f64::INFINITY;
                for i in 0..b {
                    for j in (0..b).filter(|&j| j != i) {
                        for x in [s[i * b + j], s[j * b + i]] {
                            closest = closest.min((self.margin + x - s[i * b + i]).abs());
                        }
                    }
                }
                let pairs = g.iter().enumerate().map(|(k, &g)| (k / b, k % b, g)).collect();
                (loss, pairs, closest)
            }
            Objective::Fine => {
                let n = self.negatives;
                let b = self.visuals.len();
                let mut pos = Vec::new();
                let mut negs = Vec::new();
                let mut closest = f64::INFINITY;
                for i in 0..b {
                    let base = i * (n + 1);
                    let p = enc.score(i, base).unwrap();
                    let row: Vec<f64> = (1..=n).map(|k| enc.score(i, base + k).unwrap()).collect();
                    for x in &row {
                        closest = closest.min((self.margin + x - p).abs());
                    }
                    pos.push(p);
                    negs.push(row);
                }
                let (loss, gp, gn) = finegrained_triplet_loss_grad(&pos, &negs, self.margin).unwrap();
                let mut pairs = Vec::new();
                for i in 0..b {
                    let base = i * (n + 1);
                    pairs.push((i, base, gp[i]));
                    for (k, &g) in gn[i].iter().enumerate() {
                        pairs.push((i, base + 1 + k, g));
                    }
                }
                (loss, pairs, closest)
            }
        }
    }
}

pub const FD_STEP: f32 = 1e-4;
/// Minimum distance of every hinge argument from its kink at a test point.
pub const KINK_CLEARANCE: f64 = 1e-2;

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over
/// every parameter, using central differences on the stored parameters.
/// Draws batches until one has active terms and no hinge near its kink.
pub fn max_relative_error(kind: HeadKind, objective: Objective, seed: u64, floor: f64) -> f64 {
    let mut r = rng(seed);
    let mut head = init_head(small_shape(kind), seed).unwrap();
    let batch = loop {
        let batch = Batch::random(objective, 8, &mut r);
        let (loss, _, closest) = batch.evaluate(&head);
        if loss > 0.0 && closest > KINK_CLEARANCE {
            break batch;
        }
    };
    let (_, pairs, _) = batch.evaluate(&head);
    let enc_grads = {
        let enc = head.encode(&batch.visuals, &batch.texts).unwrap();
        enc.backward(&pairs).unwrap()
    };
    let loss_at = |head: &HeadParams| batch.evaluate(head).0;

    let mut worst: f64 = 0.0;
    let n_blocks = head.blocks().len();
    for b in 0..n_blocks {
        let len = head.blocks()[b].data.len();
        for k in 0..len {
            let orig = head.blocks()[b].data[k];
            let plus = orig + FD_STEP;
            let minus = orig - FD_STEP;
            head.blocks_mut()[b][k] = plus;
            let lp = loss_at(&head);
            head.blocks_mut()[b][k] = minus;
            let lm = loss_at(&head);
            head.blocks_mut()[b][k] = orig;
            let numeric = (lp - lm) / (plus as f64 - minus as f64);
            let analytic = enc_grads.blocks[b][k];
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

/// Recall@k by sorting every candidate list and scanning the top k.
/// Returns `(image-to-text, text-to-image)` percentages.
pub fn naive_recall(
    scores: &[Vec<f64>],
    image_ids: &[&str],
    caption_ids: &[&str],
    owner: &[usize],
    k: usize,
) -> (f64, f64) {
    let mut i2t_hits = 0;
    for (i, row) in scores.iter().enumerate() {
        let mut order: Vec<usize> = (0..caption_ids.len()).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(caption_ids[a].cmp(caption_ids[b])));
        if order.iter().take(k).any(|&c| owner[c] == i) {
            i2t_hits += 1;
        }
    }
    let mut t2i_hits = 0;
    for c in 0..caption_ids.len() {
        let mut order: Vec<usize> = (0..image_ids.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b][c].partial_cmp(&scores[a][c]).unwrap().then(image_ids[a].cmp(image_ids[b]))
        });
        if order.iter().take(k).any(|&i| i == owner[c]) {
            t2i_hits += 1;
        }
    }
    (
        100.0 * i2t_hits as f64 / scores.len() as f64,
        100.0 * t2i_hits as f64 / caption_ids.len() as f64,
    )
}
