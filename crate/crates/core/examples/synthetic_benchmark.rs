//! Generate the seeded synthetic benchmark, write it to disk, and show how
//! the attribute scale controls how hard the vocabulary task is for cosine.
//!
//! ```text
//! cargo run --release --example synthetic_benchmark
//! ```

use fgmatch::embedstore::load_vocab;
use fgmatch::evaluator::mean_rank;
use fgmatch::heads::HeadParams;
use fgmatch::synthbench::{generate, SynthConfig};

fn main() -> fgmatch::Result<()> {
    let small = SynthConfig {
        n_coarse_train: 200,
        n_coarse_test: 100,
        n_train_items: 500,
        n_eval_items: 500,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir()?;
    let files = generate(&small)?.write(dir.path())?;
    for f in &files {
        println!("wrote {}", f.file_name().unwrap_or_default().to_string_lossy());
    }
    let vocab = load_vocab(dir.path().join("vocab_eval.json"))?;
    println!("vocab_eval: {} items, digest {}", vocab.dataset.items.len(), &vocab.digest()[..16]);

    println!();
    let cosine = HeadParams::CosineBaseline { dim: small.dim };
    for epsilon in [0.0, 0.05, 0.2, 0.5] {
        let data = generate(&SynthConfig { epsilon, ..small.clone() })?;
        let rank = mean_rank(&cosine, &data.vocab_eval.normalized()?)?;
        println!("epsilon {epsilon:<4}  cosine mean rank {:.3} of {}", rank.mean_rank, rank.k);
    }
    Ok(())
}
