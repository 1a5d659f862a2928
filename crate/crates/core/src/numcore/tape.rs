//! Reverse-mode differentiation over the kernel primitives.
//!
//! A [`Tape`] records every operation in creation order; `backward` walks the
//! record once in reverse. Values are kept in double precision. Vectors are
//! `n x 1`, scalars `1 x 1`.

use super::{sigmoid, softmax64, Matrix, Vector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Vector(&'a Vector),
    Matrix(&'a Matrix),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { param: Option<usize> },
    MatVec(Var, Var),
    Add(Var, Var),
    Dot(Var, Var),
    Cosine(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Scale(Var, f64),
    Hinge(Var),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn vector_len(&self, v: Var, what: &str) -> Result<usize> {
        let n = self.node(v);
        if n.cols != 1 {
            return Err(Error::usage(format!("{what} expects a vector operand")));
        }
        Ok(n.rows)
    }

    fn scalar(&self, v: Var, what: &str) -> Result<f64> {
        let n = self.node(v);
        if n.rows != 1 || n.cols != 1 {
            return Err(Error::usage(format!("{what} expects a scalar operand")));
        }
        Ok(n.value[0])
    }

    fn leaf(&mut self, operand: Operand<'_>, trainable: bool) -> Var {
        let param = trainable.then_some(self.params.len());
        let (rows, cols, value) = match operand {
            Operand::Vector(v) => (v.dim(), 1, v.to_f64()),
            Operand::Matrix(m) => (m.rows(), m.cols(), super::widen(m.as_slice())),
        };
        let var = self.push(rows, cols, value, Op::Leaf { param });
        if trainable {
            self.params.push(var);
        }
        var
    }

    /// Records a differentiable leaf; gradients are returned in registration order.
    pub fn param(&mut self, operand: Operand<'_>) -> Var {
        self.leaf(operand, true)
    }

    pub fn constant(&mut self, operand: Operand<'_>) -> Var {
        self.leaf(operand, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let n = self.vector_len(x, "matvec")?;
        let (rows, cols) = (self.node(w).rows, self.node(w).cols);
        Error::check_dim(cols, n)?;
        let (wv, xv) = (&self.node(w).value, &self.node(x).value);
        let out = (0..rows)
            .map(|r| super::dot64(&wv[r * cols..(r + 1) * cols], xv))
            .collect();
        Ok(self.push(rows, 1, out, Op::MatVec(w, x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        if (na.rows, na.cols) != (nb.rows, nb.cols) {
            return Err(Error::DimensionMismatch {
                expected: na.value.len(),
                actual: nb.value.len(),
            });
        }
        let out = na.value.iter().zip(&nb.value).map(|(x, y)| x + y).collect();
        let (rows, cols) = (na.rows, na.cols);
        Ok(self.push(rows, cols, out, Op::Add(a, b)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.vector_len(a, "dot")?;
        Error::check_dim(n, self.vector_len(b, "dot")?)?;
        let out = super::dot64(&self.node(a).value, &self.node(b).value);
        Ok(self.push(1, 1, vec![out], Op::Dot(a, b)))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.vector_len(a, "cosine")?;
        Error::check_dim(n, self.vector_len(b, "cosine")?)?;
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        let (na, nb) = (super::norm64(av), super::norm64(bv));
        if na == 0.0 || nb == 0.0 {
            return Err(Error::ZeroNorm("cosine"));
        }
        let out = super::dot64(av, bv) / (na * nb);
        Ok(self.push(1, 1, vec![out], Op::Cosine(a, b)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let out = n.value.iter().map(|v| v.tanh()).collect();
        let (rows, cols) = (n.rows, n.cols);
        self.push(rows, cols, out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let s = sigmoid(self.scalar(x, "sigmoid")?);
        Ok(self.push(1, 1, vec![s], Op::Sigmoid(x)))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.vector_len(x, "softmax")?;
        let out = softmax64(&self.node(x).value);
        Ok(self.push(n, 1, out, Op::Softmax(x)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let n = self.node(x);
        let out = n.value.iter().map(|v| v * k).collect();
        let (rows, cols) = (n.rows, n.cols);
        self.push(rows, cols, out, Op::Scale(x, k))
    }

    /// `max(x, 0)` on a scalar; the derivative at the kink is taken as 0.
    pub fn hinge(&mut self, x: Var) -> Result<Var> {
        let v = self.scalar(x, "hinge")?;
        Ok(self.push(1, 1, vec![v.max(0.0)], Op::Hinge(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.node(x).value.iter().sum();
        self.push(1, 1, vec![total], Op::Sum(x))
    }

    /// Gradient of the scalar `out` with respect to every registered parameter.
    pub fn backward(&self, out: Var) -> Result<Vec<Vec<f64>>> {
        self.scalar(out, "backward")?;
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[out.0][0] = 1.0;
        for idx in (0..=out.0).rev() {
            let g = std::mem::take(&mut adj[idx]);
            if g.iter().all(|&x| x == 0.0) {
                adj[idx] = g;
                continue;
            }
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf { .. } => {}
                Op::MatVec(w, x) => {
                    let cols = self.node(w).cols;
                    let (wv, xv) = (&self.node(w).value, &self.node(x).value);
                    for (r, &gr) in g.iter().enumerate() {
                        for c in 0..cols {
                            adj[w.0][r * cols + c] += gr * xv[c];
                            adj[x.0][c] += gr * wv[r * cols + c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (i, &gi) in g.iter().enumerate() {
                        adj[a.0][i] += gi;
                        adj[b.0][i] += gi;
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.node(a).value, &self.node(b).value);
                    for i in 0..av.len() {
                        adj[a.0][i] += g[0] * bv[i];
                        adj[b.0][i] += g[0] * av[i];
                    }
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (&self.node(a).value, &self.node(b).value);
                    let (na, nb) = (super::norm64(av), super::norm64(bv));
                    let s = node.value[0];
                    for i in 0..av.len() {
                        adj[a.0][i] += g[0] * (bv[i] / (na * nb) - s * av[i] / (na * na));
                        adj[b.0][i] += g[0] * (av[i] / (na * nb) - s * bv[i] / (nb * nb));
                    }
                }
                Op::Tanh(x) => {
                    for (i, &y) in node.value.iter().enumerate() {
                        adj[x.0][i] += g[i] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value[0];
                    adj[x.0][0] += g[0] * y * (1.0 - y);
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let inner: f64 = p.iter().zip(&g).map(|(pi, gi)| pi * gi).sum();
                    for i in 0..p.len() {
                        adj[x.0][i] += p[i] * (g[i] - inner);
                    }
                }
                Op::Scale(x, k) => {
                    for (i, &gi) in g.iter().enumerate() {
                        adj[x.0][i] += gi * k;
                    }
                }
                Op::Hinge(x) => {
                    if self.node(x).value[0] > 0.0 {
                        adj[x.0][0] += g[0];
                    }
                }
                Op::Sum(x) => {
                    for a in adj[x.0].iter_mut() {
                        *a += g[0];
                    }
                }
            }
            adj[idx] = g;
        }
        Ok(self
            .params
            .iter()
            .map(|p| {
                debug_assert!(matches!(self.node(*p).op, Op::Leaf { param: Some(_) }));
                std::mem::take(&mut adj[p.0])
            })
            .collect())
    }
}

/// Evaluates `f` on a fresh tape with `params` registered as trainable
/// leaves and returns `(value, gradients)`.
pub fn grad_of<F>(params: &[Operand<'_>], f: F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|&p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.scalar(out, "grad_of")?;
    let grads = tape.backward(out)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f32]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn linear_gradient_is_input() {
        let w = v(&[0.5, -1.0, 2.0]);
        let x = v(&[3.0, 4.0, -5.0]);
        let (value, grads) = grad_of(&[Operand::Vector(&w)], |t, p| {
            let xc = t.constant(Operand::Vector(&x));
            t.dot(p[0], xc)
        })
        .unwrap();
        assert_eq!(value, 1.5 - 4.0 - 10.0);
        assert_eq!(grads[0], vec![3.0, 4.0, -5.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let w = Matrix::identity(3);
        let c = v(&[1.0, 2.0]);
        let (_, grads) = grad_of(&[Operand::Matrix(&w)], |t, _| {
            let cv = t.constant(Operand::Vector(&c));
            Ok(t.sum(cv))
        })
        .unwrap();
        assert_eq!(grads[0], vec![0.0; 9]);
    }

    #[test]
    fn cosine_of_projection_matches_finite_differences() {
        let w = Matrix::identity(3);
        let x = v(&[0.2, -0.7, 0.4]);
        let target = v(&[0.9, 0.1, -0.3]);
        let f = |w: &Matrix| -> f64 {
            let wx = w.mul_f64(&x.to_f64());
            let t = target.to_f64();
            super::super::dot64(&wx, &t) / (super::super::norm64(&wx) * super::super::norm64(&t))
        };
        let (_, grads) = grad_of(&[Operand::Matrix(&w)], |t, p| {
            let xc = t.constant(Operand::Vector(&x));
            let tc = t.constant(Operand::Vector(&target));
            let wx = t.matvec(p[0], xc)?;
            t.cosine(wx, tc)
        })
        .unwrap();
        let h = 1e-3f32;
        for i in 0..9 {
            let mut plus = w.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = w.clone();
            minus.as_mut_slice()[i] -= h;
            let step = (plus.as_slice()[i] - minus.as_slice()[i]) as f64;
            let fd = (f(&plus) - f(&minus)) / step;
            let a = grads[0][i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(rel <= 1e-4, "entry {i}: analytic {a}, fd {fd}");
        }
    }

    #[test]
    fn composite_ops_match_finite_differences() {
        // sigmoid(sum(softmax(tanh(W x)) * 2)) + hinge(dot(b, x))
        let w = Matrix::new(2, 3, vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6]).unwrap();
        let b = v(&[0.7, 0.2, -0.1]);
        let x = v(&[1.0, -0.5, 0.25]);
        let build = |t: &mut Tape, w: Var, b: Var| -> Result<Var> {
            let xc = t.constant(Operand::Vector(&x));
            let z = t.matvec(w, xc)?;
            let h = t.tanh(z);
            let p = t.softmax(h)?;
            let s = t.scale(p, 2.0);
            let first = t.sum(s);
            let first = t.sigmoid(first)?;
            let d = t.dot(b, xc)?;
            let second = t.hinge(d)?;
            t.add(first, second)
        };
        let (_, grads) =
            grad_of(&[Operand::Matrix(&w), Operand::Vector(&b)], |t, p| build(t, p[0], p[1])).unwrap();
        let eval = |w: &Matrix, b: &Vector| -> f64 {
            let mut t = Tape::new();
            let wv = t.constant(Operand::Matrix(w));
            let bv = t.constant(Operand::Vector(b));
            let out = build(&mut t, wv, bv).unwrap();
            t.value(out)[0]
        };
        let h = 1e-3f32;
        for i in 0..6 {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.as_mut_slice()[i] += h;
            m.as_mut_slice()[i] -= h;
            let fd = (eval(&p, &b) - eval(&m, &b)) / (p.as_slice()[i] - m.as_slice()[i]) as f64;
            assert!((grads[0][i] - fd).abs() <= 1e-4 * grads[0][i].abs().max(1e-3));
        }
        for i in 0..3 {
            let (mut p, mut m) = (b.clone(), b.clone());
            p.as_mut_slice()[i] += h;
            m.as_mut_slice()[i] -= h;
            let fd = (eval(&w, &p) - eval(&w, &m)) / (p.as_slice()[i] - m.as_slice()[i]) as f64;
            assert!((grads[1][i] - fd).abs() <= 1e-4 * grads[1][i].abs().max(1e-3));
        }
    }

    #[test]
    fn usage_errors() {
        let m = Matrix::identity(2);
        let r = grad_of(&[Operand::Matrix(&m)], |t, p| t.sigmoid(p[0]));
        assert!(matches!(r, Err(Error::Usage(_))));
        let r = grad_of(&[Operand::Matrix(&m)], |_, p| Ok(p[0]));
        assert!(matches!(r, Err(Error::Usage(_))));
    }
}
