mod common;

use common::{max_relative_error, rng, Batch, Objective, TRAINABLE};
use fgmatch::heads::{init_head, HeadKind, HeadParams, Perceptron};
use fgmatch::numcore::{grad_of, Operand, Tape, Var, Vector};

const FLOOR: f64 = 1e-6;

#[test]
fn analytic_gradients_match_central_differences() {
    for kind in TRAINABLE {
        for objective in [Objective::Coarse, Objective::Fine] {
            for seed in 100..103 {
                let err = max_relative_error(kind, objective, seed, FLOOR);
                assert!(err < 1e-4, "{kind} {objective:?} seed {seed}: {err:e}");
            }
        }
    }
}

fn perceptron_on_tape(tape: &mut Tape, p: &[Var], x: &Vector) -> fgmatch::Result<Var> {
    let x = tape.constant(Operand::Vector(x));
    let h = tape.matvec(p[0], x)?;
    let h = tape.add(h, p[1])?;
    let h = tape.tanh(h);
    let y = tape.matvec(p[2], h)?;
    tape.add(y, p[3])
}

fn operands(m: &Perceptron) -> [Operand<'_>; 4] {
    [
        Operand::Matrix(&m.hidden.weight),
        Operand::Vector(&m.hidden.bias),
        Operand::Matrix(&m.output.weight),
        Operand::Vector(&m.output.bias),
    ]
}

#[test]
fn tape_and_analytic_mlp_gradients_agree() {
    for seed in 0..5 {
        let head = init_head(common::small_shape(HeadKind::Mlp), seed).unwrap();
        let HeadParams::Mlp { visual, text } = &head else { unreachable!() };
        let mut r = rng(seed);
        let mut batch = Batch::random(Objective::Fine, 8, &mut r);
        batch.margin = 0.0625;
        let (loss, pairs, _) = batch.evaluate(&head);
        let analytic = head.encode(&batch.visuals, &batch.texts).unwrap().backward(&pairs).unwrap();

        let margin = Vector::new(vec![0.0625]).unwrap();
        let params: Vec<Operand> = operands(visual).into_iter().chain(operands(text)).collect();
        let n = batch.negatives;
        let (tape_loss, tape_grads) = grad_of(&params, |tape, p| {
            let m = tape.constant(Operand::Vector(&margin));
            let mut terms = Vec::new();
            for (i, v) in batch.visuals.iter().enumerate() {
                let ev = perceptron_on_tape(tape, &p[..4], v)?;
                let base = i * (n + 1);
                let et = perceptron_on_tape(tape, &p[4..], &batch.texts[base])?;
                let pos = tape.cosine(ev, et)?;
                let neg_pos = tape.scale(pos, -1.0);
                for k in 1..=n {
                    let en = perceptron_on_tape(tape, &p[4..], &batch.texts[base + k])?;
                    let neg = tape.cosine(ev, en)?;
                    let x = tape.add(m, neg)?;
                    let x = tape.add(x, neg_pos)?;
                    terms.push(tape.hinge(x)?);
                }
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = tape.add(total, t)?;
            }
            Ok(total)
        })
        .unwrap();

        assert!((tape_loss - loss).abs() < 1e-12, "{tape_loss} {loss}");
        for (a, t) in analytic.blocks.iter().zip(&tape_grads) {
            for (x, y) in a.iter().zip(t) {
                assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "{x} {y}");
            }
        }
    }
}

#[test]
fn cosine_head_has_no_gradients() {
    let head = HeadParams::CosineBaseline { dim: 8 };
    let mut r = rng(1);
    let batch = Batch::random(Objective::Coarse, 8, &mut r);
    let (_, pairs, _) = batch.evaluate(&head);
    let g = head.encode(&batch.visuals, &batch.texts).unwrap().backward(&pairs).unwrap();
    assert!(g.blocks.is_empty());
}
