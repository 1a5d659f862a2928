//! Write an FGEB embedding table, read it back, and load a vocabulary
//! manifest that points at it.
//!
//! ```text
//! cargo run --example embedding_tables
//! ```

use std::fs;

use fgmatch::embedstore::{load_vocab, read_table, write_table, EmbeddingTable};
use fgmatch::numcore::Vector;

fn main() -> fgmatch::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut images = EmbeddingTable::new(3)?;
    images.insert("crop-0", Vector::new(vec![1.0, 0.0, 0.0])?)?;
    images.insert("crop-1", Vector::new(vec![0.0, 1.0, 0.0])?)?;
    let mut texts = EmbeddingTable::new(3)?;
    for (id, v) in [
        ("a red car", [0.9, 0.1, 0.0]),
        ("a blue car", [0.1, 0.9, 0.0]),
        ("a green car", [0.0, 0.2, 0.9]),
    ] {
        texts.insert(id, Vector::new(v.to_vec())?)?;
    }

    let image_path = dir.path().join("images.fgeb");
    write_table(&images, &image_path)?;
    write_table(&texts, dir.path().join("texts.fgeb"))?;
    let back = read_table(&image_path)?;
    println!(
        "images.fgeb: {} bytes, {} rows of dim {}, digest {}",
        fs::metadata(&image_path)?.len(),
        back.len(),
        back.dim(),
        &back.digest()[..16]
    );

    let manifest = serde_json::json!({
        "dim": 3,
        "image_table": "images.fgeb",
        "text_table": "texts.fgeb",
        "benchmark": "custom",
        "n_negatives": 2,
        "vocab_items": [
            {"crop_id": "crop-0", "positive_id": "a red car", "negative_ids": ["a blue car", "a green car"]},
            {"crop_id": "crop-1", "positive_id": "a blue car", "negative_ids": ["a red car", "a green car"]}
        ]
    });
    let manifest_path = dir.path().join("vocab.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    let vocab = load_vocab(&manifest_path)?;
    println!(
        "vocab.json: {} items, N = {}, digest {}",
        vocab.dataset.items.len(),
        vocab.dataset.n_negatives,
        &vocab.digest()[..16]
    );

    fs::write(&manifest_path, manifest.to_string().replacen("a green car", "a grey car", 1))?;
    match load_vocab(&manifest_path) {
        Ok(_) => println!("unexpectedly accepted a dangling id"),
        Err(e) => println!("dangling id rejected: {e}"),
    }
    Ok(())
}
