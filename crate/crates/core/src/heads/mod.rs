//! Similarity heads `S(v, t)` over frozen image and text embeddings.
//!
//! | kind            | score                                    |
//! |-----------------|------------------------------------------|
//! | `cosine`        | `cos(v, t)`                              |
//! | `linear-both`   | `cos(Wv v + bv, Wt t + bt)`              |
//! | `linear-text`   | `cos(v, Wt t + bt)`                      |
//! | `linear-visual` | `cos(Wv v + bv, t)`                      |
//! | `mlp`           | `cos(MLPv(v), MLPt(t))`                  |
//! | `mha`           | `sigmoid(MHA([cls, v, t])[0][0])`        |
//!
//! Scoring goes through [`BatchEncoding`], which transforms each input vector
//! once and then combines pairs; [`BatchEncoding::backward`] turns per-pair
//! score gradients into parameter gradients.

mod attention;
mod encoding;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Vector};

pub use attention::Attention;
pub use encoding::BatchEncoding;

/// Width of the MLP hidden layer when none is given.
pub const DEFAULT_HIDDEN: usize = 512;
/// Attention head count when none is given.
pub const DEFAULT_HEADS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    #[serde(rename = "cosine")]
    CosineBaseline,
    LinearBoth,
    #[serde(rename = "linear-text")]
    LinearTextOnly,
    #[serde(rename = "linear-visual")]
    LinearVisualOnly,
    Mlp,
    Mha,
}

impl HeadKind {
    pub const ALL: [HeadKind; 6] = [
        HeadKind::CosineBaseline,
        HeadKind::LinearBoth,
        HeadKind::LinearTextOnly,
        HeadKind::LinearVisualOnly,
        HeadKind::Mlp,
        HeadKind::Mha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::CosineBaseline => "cosine",
            HeadKind::LinearBoth => "linear-both",
            HeadKind::LinearTextOnly => "linear-text",
            HeadKind::LinearVisualOnly => "linear-visual",
            HeadKind::Mlp => "mlp",
            HeadKind::Mha => "mha",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn is_trainable(self) -> bool {
        self != HeadKind::CosineBaseline
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::usage(format!("unknown head {s:?}; valid kinds: {}", valid.join(", ")))
        })
    }
}

/// `W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Affine {
    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Matrix::identity(dim),
            bias: Vector::zeros(dim),
        }
    }

    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Vector::zeros(out_dim),
        }
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.mul_f64(x);
        for (yi, &b) in y.iter_mut().zip(self.bias.as_slice()) {
            *yi += b as f64;
        }
        y
    }
}

/// Two-layer perceptron: `W2 tanh(W1 x + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Perceptron {
    pub hidden: Affine,
    pub output: Affine,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadParams {
    CosineBaseline { dim: usize },
    LinearBoth { visual: Affine, text: Affine },
    LinearTextOnly { text: Affine },
    LinearVisualOnly { visual: Affine },
    Mlp { visual: Perceptron, text: Perceptron },
    Mha(Attention),
}

/// Read-only view of one parameter block.
#[derive(Clone, Copy, Debug)]
pub struct ParamBlock<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f32],
}

/// Parameter gradients, one buffer per block in [`HeadParams::blocks`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(head: &HeadParams) -> Self {
        Self {
            blocks: head.blocks().iter().map(|b| vec![0.0; b.data.len()]).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.blocks.iter_mut().flatten() {
            *g *= k;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Hyperparameters shaping a head; stored alongside it in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub kind: HeadKind,
    pub dim: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl HeadShape {
    pub fn new(kind: HeadKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            hidden: DEFAULT_HIDDEN,
            heads: DEFAULT_HEADS,
        }
    }

    pub fn with_hidden(self, hidden: usize) -> Self {
        Self { hidden, ..self }
    }

    pub fn with_heads(self, heads: usize) -> Self {
        Self { heads, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::usage("head dimension must be positive"));
        }
        match self.kind {
            HeadKind::Mlp if self.hidden == 0 => Err(Error::usage("MLP hidden width must be positive")),
            HeadKind::Mha if self.heads == 0 || !self.dim.is_multiple_of(self.heads) => Err(Error::usage(format!(
                "attention dim {} is not divisible by {} heads",
                self.dim, self.heads
            ))),
            _ => Ok(()),
        }
    }
}

fn uniform_affine(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Affine {
    let limit = 1.0 / (in_dim as f32).sqrt();
    let data = (0..out_dim * in_dim)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Affine {
        weight: Matrix::new(out_dim, in_dim, data).expect("finite init"),
        bias: Vector::zeros(out_dim),
    }
}

fn near_identity(rng: &mut ChaCha8Rng, dim: usize) -> Affine {
    let noise = Normal::new(0.0f32, 0.01).unwrap();
    let mut a = Affine::identity(dim);
    for w in a.weight.as_mut_slice() {
        *w += noise.sample(rng);
    }
    a
}

/// Deterministic initialization for a given seed.
///
/// Linear heads start at identity plus `N(0, 0.01²)` noise with zero bias;
/// MLP and attention weights are uniform in `±1/sqrt(fan_in)` with zero bias,
/// and the attention CLS vector is drawn from the same range.
pub fn init_head(shape: HeadShape, seed: u64) -> Result<HeadParams> {
    shape.validate()?;
    let d = shape.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match shape.kind {
        HeadKind::CosineBaseline => HeadParams::CosineBaseline { dim: d },
        HeadKind::LinearBoth => {
            let visual = near_identity(&mut rng, d);
            let text = near_identity(&mut rng, d);
            HeadParams::LinearBoth { visual, text }
        }
        HeadKind::LinearTextOnly => HeadParams::LinearTextOnly {
            text: near_identity(&mut rng, d),
        },
        HeadKind::LinearVisualOnly => HeadParams::LinearVisualOnly {
            visual: near_identity(&mut rng, d),
        },
        HeadKind::Mlp => {
            let mut side = || Perceptron {
                hidden: uniform_affine(&mut rng, shape.hidden, d),
                output: uniform_affine(&mut rng, d, shape.hidden),
            };
            let visual = side();
            let text = side();
            HeadParams::Mlp { visual, text }
        }
        HeadKind::Mha => {
            let query = uniform_affine(&mut rng, d, d);
            let key = uniform_affine(&mut rng, d, d);
            let value = uniform_affine(&mut rng, d, d);
            let output = uniform_affine(&mut rng, d, d);
            let limit = 1.0 / (d as f32).sqrt();
            let cls = (0..d).map(|_| rng.random_range(-limit..limit)).collect();
            HeadParams::Mha(Attention {
                query,
                key,
                value,
                output,
                cls: Vector::new(cls).expect("finite init"),
                n_heads: shape.heads,
            })
        }
    })
}

impl HeadParams {
    /// All-zero parameters of the given shape (cosine baseline has none).
    pub fn zeroed(shape: HeadShape) -> Result<Self> {
        shape.validate()?;
        let d = shape.dim;
        let zero_mlp = || Perceptron {
            hidden: Affine::zeros(shape.hidden, d),
            output: Affine::zeros(d, shape.hidden),
        };
        Ok(match shape.kind {
            HeadKind::CosineBaseline => HeadParams::CosineBaseline { dim: d },
            HeadKind::LinearBoth => HeadParams::LinearBoth {
                visual: Affine::zeros(d, d),
                text: Affine::zeros(d, d),
            },
            HeadKind::LinearTextOnly => HeadParams::LinearTextOnly {
                text: Affine::zeros(d, d),
            },
            HeadKind::LinearVisualOnly => HeadParams::LinearVisualOnly {
                visual: Affine::zeros(d, d),
            },
            HeadKind::Mlp => HeadParams::Mlp {
                visual: zero_mlp(),
                text: zero_mlp(),
            },
            HeadKind::Mha => HeadParams::Mha(Attention {
                query: Affine::zeros(d, d),
                key: Affine::zeros(d, d),
                value: Affine::zeros(d, d),
                output: Affine::zeros(d, d),
                cls: Vector::zeros(d),
                n_heads: shape.heads,
            }),
        })
    }

    /// Linear variants with identity weights and zero bias.
    pub fn identity(kind: HeadKind, dim: usize) -> Result<Self> {
        let a = || Affine::identity(dim);
        Ok(match kind {
            HeadKind::CosineBaseline => HeadParams::CosineBaseline { dim },
            HeadKind::LinearBoth => HeadParams::LinearBoth {
                visual: a(),
                text: a(),
            },
            HeadKind::LinearTextOnly => HeadParams::LinearTextOnly { text: a() },
            HeadKind::LinearVisualOnly => HeadParams::LinearVisualOnly { visual: a() },
            _ => return Err(Error::usage(format!("{kind} has no identity form"))),
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            HeadParams::CosineBaseline { .. } => HeadKind::CosineBaseline,
            HeadParams::LinearBoth { .. } => HeadKind::LinearBoth,
            HeadParams::LinearTextOnly { .. } => HeadKind::LinearTextOnly,
            HeadParams::LinearVisualOnly { .. } => HeadKind::LinearVisualOnly,
            HeadParams::Mlp { .. } => HeadKind::Mlp,
            HeadParams::Mha(_) => HeadKind::Mha,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HeadParams::CosineBaseline { dim } => *dim,
            HeadParams::LinearBoth { text, .. } | HeadParams::LinearTextOnly { text } => text.weight.cols(),
            HeadParams::LinearVisualOnly { visual } => visual.weight.cols(),
            HeadParams::Mlp { visual, .. } => visual.hidden.weight.cols(),
            HeadParams::Mha(a) => a.cls.dim(),
        }
    }

    pub fn shape(&self) -> HeadShape {
        let mut shape = HeadShape::new(self.kind(), self.dim());
        match self {
            HeadParams::Mlp { visual, .. } => shape.hidden = visual.hidden.weight.rows(),
            HeadParams::Mha(a) => shape.heads = a.n_heads,
            _ => {}
        }
        shape
    }

    pub fn blocks(&self) -> Vec<ParamBlock<'_>> {
        fn mat<'a>(name: &'static str, m: &'a Matrix) -> ParamBlock<'a> {
            ParamBlock {
                name,
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice(),
            }
        }
        fn vec<'a>(name: &'static str, v: &'a Vector) -> ParamBlock<'a> {
            ParamBlock {
                name,
                rows: v.dim(),
                cols: 1,
                data: v.as_slice(),
            }
        }
        match self {
            HeadParams::CosineBaseline { .. } => vec![],
            HeadParams::LinearBoth { visual, text } => vec![
                mat("visual.weight", &visual.weight),
                vec("visual.bias", &visual.bias),
                mat("text.weight", &text.weight),
                vec("text.bias", &text.bias),
            ],
            HeadParams::LinearTextOnly { text } => {
                vec![mat("text.weight", &text.weight), vec("text.bias", &text.bias)]
            }
            HeadParams::LinearVisualOnly { visual } => vec![
                mat("visual.weight", &visual.weight),
                vec("visual.bias", &visual.bias),
            ],
            HeadParams::Mlp { visual, text } => vec![
                mat("visual.hidden.weight", &visual.hidden.weight),
                vec("visual.hidden.bias", &visual.hidden.bias),
                mat("visual.output.weight", &visual.output.weight),
                vec("visual.output.bias", &visual.output.bias),
                mat("text.hidden.weight", &text.hidden.weight),
                vec("text.hidden.bias", &text.hidden.bias),
                mat("text.output.weight", &text.output.weight),
                vec("text.output.bias", &text.output.bias),
            ],
            HeadParams::Mha(a) => vec![
                mat("query.weight", &a.query.weight),
                vec("query.bias", &a.query.bias),
                mat("key.weight", &a.key.weight),
                vec("key.bias", &a.key.bias),
                mat("value.weight", &a.value.weight),
                vec("value.bias", &a.value.bias),
                mat("output.weight", &a.output.weight),
                vec("output.bias", &a.output.bias),
                vec("cls", &a.cls),
            ],
        }
    }

    /// Mutable parameter buffers, same order as [`blocks`](Self::blocks).
    pub fn blocks_mut(&mut self) -> Vec<&mut [f32]> {
        fn aff(a: &mut Affine) -> [&mut [f32]; 2] {
            [a.weight.as_mut_slice(), a.bias.as_mut_slice()]
        }
        match self {
            HeadParams::CosineBaseline { .. } => vec![],
            HeadParams::LinearBoth { visual, text } => aff(visual).into_iter().chain(aff(text)).collect(),
            HeadParams::LinearTextOnly { text: a } | HeadParams::LinearVisualOnly { visual: a } => {
                aff(a).into_iter().collect()
            }
            HeadParams::Mlp { visual, text } => aff(&mut visual.hidden)
                .into_iter()
                .chain(aff(&mut visual.output))
                .chain(aff(&mut text.hidden))
                .chain(aff(&mut text.output))
                .collect(),
            HeadParams::Mha(a) => aff(&mut a.query)
                .into_iter()
                .chain(aff(&mut a.key))
                .chain(aff(&mut a.value))
                .chain(aff(&mut a.output))
                .chain([a.cls.as_mut_slice()])
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    /// Transforms the given visual and text inputs once for pairwise scoring.
    pub fn encode<'h, V, T>(&'h self, visuals: &[V], texts: &[T]) -> Result<BatchEncoding<'h>>
    where
        V: AsRef<[f32]>,
        T: AsRef<[f32]>,
    {
        BatchEncoding::new(self, visuals, texts)
    }

    /// Similarity of one image embedding and one text embedding.
    pub fn score(&self, v: &Vector, t: &Vector) -> Result<f64> {
        self.encode(&[v], &[t])?.score(0, 0)
    }

    /// `S[i][j] = score(V[i], T[j])`.
    pub fn score_batch(&self, visuals: &[Vector], texts: &[Vector]) -> Result<Matrix> {
        if visuals.is_empty() || texts.is_empty() {
            return Err(Error::usage("score_batch needs at least one vector per side"));
        }
        let enc = self.encode(visuals, texts)?;
        let mut data = Vec::with_capacity(visuals.len() * texts.len());
        for i in 0..visuals.len() {
            for j in 0..texts.len() {
                data.push(enc.score(i, j)? as f32);
            }
        }
        Matrix::new(visuals.len(), texts.len(), data)
    }
}
