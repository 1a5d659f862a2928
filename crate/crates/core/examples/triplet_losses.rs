//! The two hinge triplet losses and their score gradients on tiny inputs.
//!
//! ```text
//! cargo run --example triplet_losses
//! ```

use fgmatch::losses::{coarse_triplet_loss_grad, finegrained_triplet_loss_grad};

fn main() -> fgmatch::Result<()> {
    // rows are images, columns are captions, the diagonal holds matching pairs
    let scores = [
        0.80, 0.70, 0.10, //
        0.20, 0.60, 0.50, //
        0.30, 0.65, 0.90,
    ];
    let (loss, grad) = coarse_triplet_loss_grad(&scores, 3, 0.2)?;
    println!("in-batch loss at margin 0.2: {loss:.3}");
    for row in grad.chunks(3) {
        println!("  dL/dS {row:?}");
    }

    let positives = [0.55, 0.40];
    let negatives = vec![vec![0.50, 0.20, 0.58], vec![0.10, 0.30, 0.34]];
    let (loss, grad_pos, grad_neg) = finegrained_triplet_loss_grad(&positives, &negatives, 0.05)?;
    println!("vocabulary loss at margin 0.05: {loss:.3}");
    println!("  dL/dpos {grad_pos:?}");
    println!("  dL/dneg {grad_neg:?}");
    Ok(())
}
