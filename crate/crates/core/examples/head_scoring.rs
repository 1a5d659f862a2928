//! Score image/text pairs with every similarity head and show that the
//! linear heads reduce to cosine at the identity.
//!
//! ```text
//! cargo run --example head_scoring
//! ```

use fgmatch::heads::{init_head, HeadKind, HeadParams, HeadShape};
use fgmatch::numcore::{cosine, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> fgmatch::Result<Vector> {
    Vector::new((0..dim).map(|_| StandardNormal.sample(rng)).collect())
}

fn main() -> fgmatch::Result<()> {
    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let visuals: Vec<Vector> = (0..3).map(|_| random_vector(&mut rng, dim)).collect::<Result<_, _>>()?;
    let texts: Vec<Vector> = (0..4).map(|_| random_vector(&mut rng, dim)).collect::<Result<_, _>>()?;

    for kind in HeadKind::ALL {
        let shape = HeadShape::new(kind, dim).with_hidden(32).with_heads(4);
        let head = init_head(shape, 7)?;
        let scores = head.score_batch(&visuals, &texts)?;
        println!("{:<14} {:>6} params   first row {:?}", kind.name(), head.n_params(), scores.row(0));
    }

    println!();
    for kind in [HeadKind::LinearBoth, HeadKind::LinearTextOnly, HeadKind::LinearVisualOnly] {
        let head = HeadParams::identity(kind, dim)?;
        let gap = (head.score(&visuals[0], &texts[0])? - cosine(&visuals[0], &texts[0])?).abs();
        println!("{:<14} at identity: |score - cosine| = {gap:.1e}", kind.name());
    }
    Ok(())
}
