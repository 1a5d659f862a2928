use super::Affine;
use crate::numcore::{sigmoid, softmax64, Vector};

/// Single multi-head self-attention layer over the sequence `[cls, v, t]`.
///
/// Only coordinate 0 of the CLS output row feeds the score, so rows `1..d` of
/// the output projection never receive gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub output: Affine,
    pub cls: Vector,
    pub n_heads: usize,
}

/// Projections of one sequence element.
#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub input: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    /// Per head: `output.weight[0, head] · value[head]`.
    pub mixed: Vec<f64>,
}

/// Accumulated gradient for one token's key and `mixed` projections.
#[derive(Clone, Debug)]
pub(crate) struct TokenGrad {
    pub key: Vec<f64>,
    pub mixed: Vec<f64>,
}

impl TokenGrad {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            key: vec![0.0; dim],
            mixed: vec![0.0; heads],
        }
    }
}

impl Attention {
    pub fn dim(&self) -> usize {
        self.cls.dim()
    }

    pub fn head_width(&self) -> usize {
        self.dim() / self.n_heads
    }

    pub(crate) fn token(&self, input: Vec<f64>) -> Token {
        let key = self.key.apply(&input);
        let value = self.value.apply(&input);
        let w = self.head_width();
        let out_row = self.output.weight.row(0);
        let mixed = (0..self.n_heads)
            .map(|h| {
                (h * w..(h + 1) * w)
                    .map(|c| out_row[c] as f64 * value[c])
                    .sum()
            })
            .collect();
        Token {
            input,
            key,
            value,
            mixed,
        }
    }

    pub(crate) fn cls_query(&self) -> Vec<f64> {
        self.query.apply(&self.cls.to_f64())
    }

    /// Attention weights of the CLS query over `[cls, v, t]` for head `h`.
    fn weights(&self, query: &[f64], tokens: [&Token; 3], h: usize) -> [f64; 3] {
        let w = self.head_width();
        let scale = 1.0 / (w as f64).sqrt();
        let logits: Vec<f64> = tokens
            .iter()
            .map(|t| {
                (h * w..(h + 1) * w)
                    .map(|c| query[c] * t.key[c])
                    .sum::<f64>()
                    * scale
            })
            .collect();
        let p = softmax64(&logits);
        [p[0], p[1], p[2]]
    }

    /// Pre-sigmoid CLS output coordinate 0.
    pub(crate) fn logit(&self, query: &[f64], tokens: [&Token; 3]) -> f64 {
        let mut y = self.output.bias.as_slice()[0] as f64;
        for h in 0..self.n_heads {
            let p = self.weights(query, tokens, h);
            for (pj, t) in p.iter().zip(tokens) {
                y += pj * t.mixed[h];
            }
        }
        y
    }

    pub(crate) fn score(&self, query: &[f64], tokens: [&Token; 3]) -> f64 {
        sigmoid(self.logit(query, tokens))
    }

    /// Backpropagates `d loss / d score` for one pair into the query gradient,
    /// the three token gradients and the output bias. Returns the bias term.
    pub(crate) fn pair_backward(
        &self,
        query: &[f64],
        tokens: [&Token; 3],
        grad_score: f64,
        grad_query: &mut [f64],
        grads: [&mut TokenGrad; 3],
    ) -> f64 {
        let s = self.score(query, tokens);
        let gy = grad_score * s * (1.0 - s);
        let w = self.head_width();
        let scale = 1.0 / (w as f64).sqrt();
        for h in 0..self.n_heads {
            let p = self.weights(query, tokens, h);
            let dp: Vec<f64> = tokens.iter().map(|t| gy * t.mixed[h]).collect();
            let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..3 {
                grads[j].mixed[h] += gy * p[j];
                let da = p[j] * (dp[j] - inner) * scale;
                if da == 0.0 {
                    continue;
                }
                for c in h * w..(h + 1) * w {
                    grad_query[c] += da * tokens[j].key[c];
                    grads[j].key[c] += da * query[c];
                }
            }
        }
        gy
    }
}
