use super::attention::{Token, TokenGrad};
use super::{Affine, Gradients, HeadParams, Perceptron};
use crate::error::{Error, Result};
use crate::numcore::{dot64, norm64, widen};

/// Per-side transform of the cosine-family heads.
#[derive(Clone, Copy)]
enum Transform<'a> {
    Identity,
    Affine(&'a Affine),
    Mlp(&'a Perceptron),
}

#[derive(Clone, Debug)]
struct Projected {
    input: Vec<f64>,
    hidden: Option<Vec<f64>>,
    out: Vec<f64>,
    norm: f64,
}

#[derive(Clone, Debug)]
enum Side {
    Projected(Projected),
    Token(Token),
}

/// Inputs of one batch after their per-side transforms, ready to be scored
/// pairwise and differentiated.
#[derive(Clone, Debug)]
pub struct BatchEncoding<'h> {
    head: &'h HeadParams,
    visual: Vec<Side>,
    text: Vec<Side>,
    cls: Option<(Vec<f64>, Token)>,
}

impl Transform<'_> {
    fn project(self, input: Vec<f64>) -> Result<Projected> {
        let (hidden, out) = match self {
            Transform::Identity => (None, input.clone()),
            Transform::Affine(a) => (None, a.apply(&input)),
            Transform::Mlp(m) => {
                let mut h = m.hidden.apply(&input);
                h.iter_mut().for_each(|x| *x = x.tanh());
                let out = m.output.apply(&h);
                (Some(h), out)
            }
        };
        let norm = norm64(&out);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm("transformed embedding"));
        }
        Ok(Projected {
            input,
            hidden,
            out,
            norm,
        })
    }

    /// Adds this side's parameter gradients, given `d loss / d out`, into
    /// `grads.blocks[offset..]`.
    fn backward(self, cache: &Projected, grad_out: &[f64], grads: &mut Gradients, offset: usize) {
        match self {
            Transform::Identity => {}
            Transform::Affine(_) => affine_backward(&cache.input, grad_out, grads, offset),
            Transform::Mlp(m) => {
                let hidden = cache.hidden.as_ref().expect("mlp cache");
                affine_backward(hidden, grad_out, grads, offset + 2);
                let grad_hidden = m.output.weight.mul_transpose_f64(grad_out);
                let grad_pre: Vec<f64> = grad_hidden
                    .iter()
                    .zip(hidden)
                    .map(|(g, h)| g * (1.0 - h * h))
                    .collect();
                affine_backward(&cache.input, &grad_pre, grads, offset);
            }
        }
    }
}

fn affine_backward(input: &[f64], grad_out: &[f64], grads: &mut Gradients, offset: usize) {
    let cols = input.len();
    let weight = &mut grads.blocks[offset];
    for (r, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (w, &x) in weight[r * cols..(r + 1) * cols].iter_mut().zip(input) {
            *w += g * x;
        }
    }
    for (b, &g) in grads.blocks[offset + 1].iter_mut().zip(grad_out) {
        *b += g;
    }
}

fn add_into(acc: &mut [f64], k: f64, x: &[f64]) {
    for (a, &xi) in acc.iter_mut().zip(x) {
        *a += k * xi;
    }
}

impl<'h> BatchEncoding<'h> {
    pub(super) fn new<V, T>(head: &'h HeadParams, visuals: &[V], texts: &[T]) -> Result<Self>
    where
        V: AsRef<[f32]>,
        T: AsRef<[f32]>,
    {
        let d = head.dim();
        let widen_checked = |x: &[f32]| -> Result<Vec<f64>> {
            Error::check_dim(d, x.len())?;
            Ok(widen(x))
        };
        let (visual, text, cls) = match head {
            HeadParams::Mha(attn) => {
                let tokens = |xs: &[&[f32]]| -> Result<Vec<Side>> {
                    xs.iter()
                        .map(|x| Ok(Side::Token(attn.token(widen_checked(x)?))))
                        .collect()
                };
                let vs: Vec<&[f32]> = visuals.iter().map(AsRef::as_ref).collect();
                let ts: Vec<&[f32]> = texts.iter().map(AsRef::as_ref).collect();
                let cls = (attn.cls_query(), attn.token(attn.cls.to_f64()));
                (tokens(&vs)?, tokens(&ts)?, Some(cls))
            }
            _ => {
                let (vt, tt) = head.transforms();
                let side = |t: Transform<'_>, x: &[f32]| -> Result<Side> {
                    Ok(Side::Projected(t.project(widen_checked(x)?)?))
                };
                let visual = visuals
                    .iter()
                    .map(|x| side(vt, x.as_ref()))
                    .collect::<Result<_>>()?;
                let text = texts
                    .iter()
                    .map(|x| side(tt, x.as_ref()))
                    .collect::<Result<_>>()?;
                (visual, text, None)
            }
        };
        Ok(Self {
            head,
            visual,
            text,
            cls,
        })
    }

    pub fn n_visual(&self) -> usize {
        self.visual.len()
    }

    pub fn n_text(&self) -> usize {
        self.text.len()
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.visual.len() || j >= self.text.len() {
            return Err(Error::usage(format!(
                "pair ({i}, {j}) outside a {}x{} batch",
                self.visual.len(),
                self.text.len()
            )));
        }
        Ok(())
    }

    /// Score of visual input `i` against text input `j`.
    pub fn score(&self, i: usize, j: usize) -> Result<f64> {
        self.check_pair(i, j)?;
        Ok(self.score_unchecked(i, j))
    }

    fn score_unchecked(&self, i: usize, j: usize) -> f64 {
        match (&self.visual[i], &self.text[j], &self.cls) {
            (Side::Projected(a), Side::Projected(b), _) => {
                (dot64(&a.out, &b.out) / (a.norm * b.norm)).clamp(-1.0, 1.0)
            }
            (Side::Token(v), Side::Token(t), Some((query, cls))) => {
                let HeadParams::Mha(attn) = self.head else { unreachable!() };
                attn.score(query, [cls, v, t])
            }
            _ => unreachable!("sides always match the head"),
        }
    }

    /// Every pairwise score, row `i` for visual input `i`.
    pub fn score_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.visual.len())
            .map(|i| self.score_row(i))
            .collect()
    }

    pub fn score_row(&self, i: usize) -> Vec<f64> {
        (0..self.text.len()).map(|j| self.score_unchecked(i, j)).collect()
    }

    /// Parameter gradients given `(visual index, text index, d loss / d score)` triples.
    pub fn backward(&self, pair_grads: &[(usize, usize, f64)]) -> Result<Gradients> {
        for &(i, j, g) in pair_grads {
            self.check_pair(i, j)?;
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("score gradient for pair ({i}, {j})")));
            }
        }
        let mut grads = Gradients::zeros_like(self.head);
        match self.head {
            HeadParams::CosineBaseline { .. } => {}
            HeadParams::Mha(_) => self.attention_backward(pair_grads, &mut grads),
            _ => self.projected_backward(pair_grads, &mut grads),
        }
        Ok(grads)
    }

    fn projected_backward(&self, pair_grads: &[(usize, usize, f64)], grads: &mut Gradients) {
        let d = self.head.dim();
        let mut gv: Vec<Option<Vec<f64>>> = vec![None; self.visual.len()];
        let mut gt: Vec<Option<Vec<f64>>> = vec![None; self.text.len()];
        for &(i, j, g) in pair_grads {
            if g == 0.0 {
                continue;
            }
            let (Side::Projected(a), Side::Projected(b)) = (&self.visual[i], &self.text[j]) else {
                unreachable!()
            };
            let ab = a.norm * b.norm;
            let s = dot64(&a.out, &b.out) / ab;
            let acc_v = gv[i].get_or_insert_with(|| vec![0.0; d]);
            add_into(acc_v, g / ab, &b.out);
            add_into(acc_v, -g * s / (a.norm * a.norm), &a.out);
            let acc_t = gt[j].get_or_insert_with(|| vec![0.0; d]);
            add_into(acc_t, g / ab, &a.out);
            add_into(acc_t, -g * s / (b.norm * b.norm), &b.out);
        }
        let (vt, tt) = self.head.transforms();
        let (v_off, t_off) = self.head.side_offsets();
        for (side, acc, transform, offset) in [
            (&self.visual, gv, vt, v_off),
            (&self.text, gt, tt, t_off),
        ] {
            for (cache, grad) in side.iter().zip(acc) {
                if let (Side::Projected(cache), Some(grad)) = (cache, grad) {
                    transform.backward(cache, &grad, grads, offset);
                }
            }
        }
    }

    fn attention_backward(&self, pair_grads: &[(usize, usize, f64)], grads: &mut Gradients) {
        let HeadParams::Mha(attn) = self.head else { unreachable!() };
        let (query, cls) = self.cls.as_ref().expect("attention cache");
        let (d, heads, width) = (attn.dim(), attn.n_heads, attn.head_width());
        let mut grad_query = vec![0.0; d];
        let mut grad_cls = TokenGrad::zeros(d, heads);
        let mut gv: Vec<Option<TokenGrad>> = vec![None; self.visual.len()];
        let mut gt: Vec<Option<TokenGrad>> = vec![None; self.text.len()];
        let mut grad_out_bias = 0.0;
        for &(i, j, g) in pair_grads {
            if g == 0.0 {
                continue;
            }
            let (Side::Token(v), Side::Token(t)) = (&self.visual[i], &self.text[j]) else {
                unreachable!()
            };
            let accv = gv[i].get_or_insert_with(|| TokenGrad::zeros(d, heads));
            let acct = gt[j].get_or_insert_with(|| TokenGrad::zeros(d, heads));
            grad_out_bias += attn.pair_backward(
                query,
                [cls, v, t],
                g,
                &mut grad_query,
                [&mut grad_cls, accv, acct],
            );
        }

        // Token-level gradients into key/value/output parameters.
        let out_row = attn.output.weight.row(0);
        let mut grad_cls_input = vec![0.0; d];
        let visual = self.visual.iter().zip(&gv);
        let text = self.text.iter().zip(&gt);
        let tokens = visual
            .chain(text)
            .filter_map(|(side, g)| match (side, g) {
                (Side::Token(tok), Some(g)) => Some((tok, g, false)),
                _ => None,
            })
            .chain(std::iter::once((cls, &grad_cls, true)));
        for (tok, g, is_cls) in tokens {
            let grad_value: Vec<f64> = (0..d)
                .map(|c| g.mixed[c / width] * out_row[c] as f64)
                .collect();
            for c in 0..d {
                grads.blocks[6][c] += g.mixed[c / width] * tok.value[c];
            }
            affine_backward(&tok.input, &g.key, grads, 2);
            affine_backward(&tok.input, &grad_value, grads, 4);
            if is_cls {
                add_into(&mut grad_cls_input, 1.0, &attn.key.weight.mul_transpose_f64(&g.key));
                add_into(&mut grad_cls_input, 1.0, &attn.value.weight.mul_transpose_f64(&grad_value));
            }
        }
        grads.blocks[7][0] += grad_out_bias;
        affine_backward(&cls.input, &grad_query, grads, 0);
        add_into(&mut grad_cls_input, 1.0, &attn.query.weight.mul_transpose_f64(&grad_query));
        for (a, g) in grads.blocks[8].iter_mut().zip(&grad_cls_input) {
            *a += g;
        }
    }
}

impl HeadParams {
    fn transforms(&self) -> (Transform<'_>, Transform<'_>) {
        use Transform::*;
        match self {
            HeadParams::CosineBaseline { .. } => (Identity, Identity),
            HeadParams::LinearBoth { visual, text } => (Affine(visual), Affine(text)),
            HeadParams::LinearTextOnly { text } => (Identity, Affine(text)),
            HeadParams::LinearVisualOnly { visual } => (Affine(visual), Identity),
            HeadParams::Mlp { visual, text } => (Mlp(visual), Mlp(text)),
            HeadParams::Mha(_) => unreachable!("attention has no per-side transform"),
        }
    }

    /// First block index of the visual and text transforms.
    fn side_offsets(&self) -> (usize, usize) {
        match self {
            HeadParams::LinearBoth { .. } => (0, 2),
            HeadParams::Mlp { .. } => (0, 4),
            _ => (0, 0),
        }
    }
}
