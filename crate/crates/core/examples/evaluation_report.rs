//! Build a JSON evaluation report for a trained head, with deltas against the
//! cosine baseline, and render it as a table.
//!
//! ```text
//! cargo run --release --example evaluation_report
//! ```

use fgmatch::evaluator::{evaluate, EvalInputs};
use fgmatch::heads::{init_head, HeadKind, HeadParams, HeadShape};
use fgmatch::synthbench::{generate, SynthConfig};
use fgmatch::trainer::{finetune, TrainConfig};

fn main() -> fgmatch::Result<()> {
    let data = generate(&SynthConfig {
        n_coarse_train: 100,
        n_coarse_test: 200,
        n_train_items: 20_000,
        n_eval_items: 500,
        ..SynthConfig::default()
    })?;
    let dim = data.config.dim;
    let vocabs = [data.vocab_eval.clone()];
    let inputs = |head: &str| EvalInputs {
        vocabs: &vocabs,
        coarse: Some(&data.coarse_test),
        normalize_inputs: true,
        config: serde_json::json!({ "head": head }),
    };

    let baseline = evaluate(&HeadParams::CosineBaseline { dim }, &inputs("cosine"))?;
    let config = TrainConfig { lr: 1e-3, epochs: 10, ..TrainConfig::finetune() };
    let (head, _) = finetune(&config, &data.vocab_train, init_head(HeadShape::new(HeadKind::LinearBoth, dim), 0)?)?;
    let report = evaluate(&head, &inputs("linear-both"))?.with_baseline(&baseline)?;

    println!("{}", report.render());
    println!("config digest {}", report.config_digest);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
