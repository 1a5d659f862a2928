//! Differentiate a small scoring function with the reverse-mode tape and
//! check the result against central finite differences.
//!
//! ```text
//! cargo run --example gradient_tape
//! ```

use fgmatch::numcore::{grad_of, Matrix, Operand, Tape, Var, Vector};

fn hinge_of_scores(tape: &mut Tape, w: Var, v: Var, pos: Var, neg: Var) -> fgmatch::Result<Var> {
    let margin = Vector::new(vec![0.2])?;
    let wv = tape.matvec(w, v)?;
    let s_pos = tape.cosine(wv, pos)?;
    let s_neg = tape.cosine(wv, neg)?;
    let diff = tape.scale(s_pos, -1.0);
    let gap = tape.add(s_neg, diff)?;
    let margin = tape.constant(Operand::Vector(&margin));
    let shifted = tape.add(gap, margin)?;
    tape.hinge(shifted)
}

fn loss(w: &Matrix, v: &Vector, pos: &Vector, neg: &Vector) -> fgmatch::Result<f64> {
    Ok(grad_of(&[Operand::Matrix(w)], |tape, p| {
        let (v, pos, neg) = (
            tape.constant(Operand::Vector(v)),
            tape.constant(Operand::Vector(pos)),
            tape.constant(Operand::Vector(neg)),
        );
        hinge_of_scores(tape, p[0], v, pos, neg)
    })?
    .0)
}

fn main() -> fgmatch::Result<()> {
    let w = Matrix::new(3, 3, vec![1.0, 0.1, 0.0, 0.0, 0.9, 0.2, 0.1, 0.0, 1.1])?;
    let v = Vector::new(vec![0.5, -0.2, 0.8])?;
    let pos = Vector::new(vec![0.4, 0.1, 0.7])?;
    let neg = Vector::new(vec![0.6, -0.3, 0.6])?;

    let (value, grads) = grad_of(&[Operand::Matrix(&w)], |tape, p| {
        let (cv, cp, cn) = (
            tape.constant(Operand::Vector(&v)),
            tape.constant(Operand::Vector(&pos)),
            tape.constant(Operand::Vector(&neg)),
        );
        hinge_of_scores(tape, p[0], cv, cp, cn)
    })?;
    println!("loss {value:.6}");

    let h = 1e-3f32;
    let mut worst: f64 = 0.0;
    for (k, analytic) in grads[0].iter().enumerate() {
        let mut plus = w.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[k] += h;
        minus[k] -= h;
        let step = (plus[k] - minus[k]) as f64;
        let numeric = (loss(&Matrix::new(3, 3, plus)?, &v, &pos, &neg)?
            - loss(&Matrix::new(3, 3, minus)?, &v, &pos, &neg)?)
            / step;
        println!("  dL/dW[{}][{}] tape {analytic:+.6}   finite difference {numeric:+.6}", k / 3, k % 3);
        worst = worst.max((analytic - numeric).abs());
    }
    println!("max absolute difference {worst:.1e}");
    Ok(())
}
