//! Cosine versus a learned linear head on the default synthetic benchmark:
//! warm-up on coarse pairs, fine-tune on vocabularies, then compare Mean Rank
//! and coarse Recall@1 at each stage.
//!
//! ```text
//! cargo run --release --example synthetic_recovery
//! ```

use std::time::Instant;

use fgmatch::evaluator::{mean_rank, recall_at_k};
use fgmatch::heads::{init_head, HeadKind, HeadParams, HeadShape};
use fgmatch::synthbench::{generate, SynthConfig};
use fgmatch::trainer::{finetune, warmup, TrainConfig};

fn main() -> fgmatch::Result<()> {
    let started = Instant::now();
    let data = generate(&SynthConfig::default())?;
    let vocab = data.vocab_eval.normalized()?;
    let coarse = data.coarse_test.normalized()?;
    let report = |label: &str, head: &HeadParams| -> fgmatch::Result<()> {
        let rank = mean_rank(head, &vocab)?;
        let recall = recall_at_k(head, &coarse)?;
        println!(
            "{label:<22} mean rank {:.3}   I2T R@1 {:5.1}   T2I R@1 {:5.1}",
            rank.mean_rank, recall.i2t.r1, recall.t2i.r1
        );
        Ok(())
    };

    let dim = data.config.dim;
    report("cosine", &HeadParams::CosineBaseline { dim })?;

    let head = init_head(HeadShape::new(HeadKind::LinearBoth, dim), 0)?;
    let (head, history) = warmup(&TrainConfig::warmup(), &data.coarse_train, head)?;
    report("linear-both warm-up", &head)?;

    let config = TrainConfig {
        lr: 1e-3,
        ..TrainConfig::finetune()
    };
    let (head, ft_history) = finetune(&config, &data.vocab_train, head)?;
    report("linear-both fine-tune", &head)?;

    for e in history.epochs.iter().chain(&ft_history.epochs) {
        println!("{:>8} epoch {:>2}  mean loss {:.5}", e.stage.name(), e.epoch, e.mean_loss);
    }
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
