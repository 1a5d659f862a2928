//! Drive the two training stages epoch by epoch, checkpoint in between, and
//! resume from the checkpoint.
//!
//! ```text
//! cargo run --release --example training_stages
//! ```

use fgmatch::evaluator::mean_rank;
use fgmatch::heads::{init_head, HeadKind, HeadShape};
use fgmatch::synthbench::{generate, SynthConfig};
use fgmatch::trainer::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, Trainer};

fn main() -> fgmatch::Result<()> {
    let data = generate(&SynthConfig {
        n_coarse_train: 500,
        n_coarse_test: 100,
        n_train_items: 5000,
        n_eval_items: 500,
        ..SynthConfig::default()
    })?;
    let coarse = data.coarse_train.normalized()?;
    let vocab_train = data.vocab_train.normalized()?;
    let vocab_eval = data.vocab_eval.normalized()?;

    let head = init_head(HeadShape::new(HeadKind::Mlp, data.config.dim).with_hidden(64), 0)?;
    let mut trainer = Trainer::new(TrainConfig { epochs: 3, ..TrainConfig::warmup() }, head)?;
    while !trainer.is_finished() {
        let record = trainer.warmup_epoch(&coarse)?;
        println!("warm-up epoch {}  mean loss {:.4}", record.epoch, record.mean_loss);
    }
    let (head, adam, _) = trainer.into_parts();

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("warmup.ckpt");
    save_checkpoint(&Checkpoint { adam: Some(adam), ..Checkpoint::new(head) }, &path)?;
    let restored = load_checkpoint(&path)?;
    println!("checkpoint: {} parameters", restored.head.n_params());

    let config = TrainConfig { lr: 1e-3, epochs: 4, ..TrainConfig::finetune() };
    let mut trainer = Trainer::new(config.clone(), restored.head)?;
    for _ in 0..2 {
        let record = trainer.finetune_epoch(&vocab_train)?;
        println!("fine-tune epoch {}  mean loss {:.4}", record.epoch, record.mean_loss);
    }
    let (head, adam, _) = trainer.into_parts();
    let mut trainer = Trainer::resume(config, head, adam, 2)?;
    while !trainer.is_finished() {
        let record = trainer.finetune_epoch(&vocab_train)?;
        println!("fine-tune epoch {}  mean loss {:.4}  (resumed)", record.epoch, record.mean_loss);
    }
    println!("mean rank after fine-tuning {:.3}", mean_rank(trainer.head(), &vocab_eval)?.mean_rank);
    Ok(())
}
