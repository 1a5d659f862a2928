mod common;

use common::{naive_recall, rng, unit};
use fgmatch::embedstore::{
    Benchmark, CoarseItem, CoarsePairs, CoarseSet, EmbeddingTable, Split, VocabDataset, VocabItem, VocabSet,
};
use fgmatch::evaluator::{
    evaluate, mean_rank, recall_at_k, retrieval_positions, EvalInputs, RankResult,
};
use fgmatch::heads::{init_head, HeadKind, HeadParams, HeadShape};
use fgmatch::numcore::Vector;
use rand::Rng;

fn basis(dim: usize, k: usize) -> Vector {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    Vector::new(v).unwrap()
}

#[test]
fn paired_orthonormal_embeddings_retrieve_perfectly() {
    let n = 12;
    let mut images = EmbeddingTable::new(n).unwrap();
    let mut texts = EmbeddingTable::new(n).unwrap();
    let mut items = Vec::new();
    for i in 0..n {
        images.insert(format!("img{i:02}"), basis(n, i)).unwrap();
        texts.insert(format!("cap{i:02}"), basis(n, i)).unwrap();
        items.push(CoarseItem {
            image_id: format!("img{i:02}"),
            caption_ids: vec![format!("cap{i:02}")],
        });
    }
    let set = CoarseSet::new(CoarsePairs { split: Split::Test, items }, images, texts).unwrap();
    let r = recall_at_k(&HeadParams::CosineBaseline { dim: n }, &set).unwrap();
    assert_eq!(r.i2t.values(), [100.0; 3]);
    assert_eq!(r.t2i.values(), [100.0; 3]);
}

#[test]
fn quantized_scores_with_ties_match_sorting_oracle() {
    let mut r = rng(8);
    let (n_img, per) = (20, 3);
    let image_names: Vec<String> = (0..n_img).map(|i| format!("im{:03}", r.random_range(0..1000) * 100 + i)).collect();
    let caption_names: Vec<String> = (0..n_img * per).map(|c| format!("c{c:04}")).collect();
    let image_ids: Vec<&str> = image_names.iter().map(String::as_str).collect();
    let caption_ids: Vec<&str> = caption_names.iter().map(String::as_str).collect();
    let owner: Vec<usize> = (0..n_img * per).map(|c| c / per).collect();
    let scores: Vec<Vec<f64>> = (0..n_img)
        .map(|_| (0..n_img * per).map(|_| r.random_range(0..4) as f64 / 4.0).collect())
        .collect();
    let rec = retrieval_positions(&scores, &image_ids, &caption_ids, &owner).unwrap().recall();
    for (k, (i2t, t2i)) in [1, 5, 10].into_iter().zip(rec.i2t.values().into_iter().zip(rec.t2i.values())) {
        assert_eq!(naive_recall(&scores, &image_ids, &caption_ids, &owner, k), (i2t, t2i), "k={k}");
    }
}

fn random_vocab(n_items: usize, n: usize, dim: usize, seed: u64) -> VocabSet {
    let mut r = rng(seed);
    let mut images = EmbeddingTable::new(dim).unwrap();
    let mut texts = EmbeddingTable::new(dim).unwrap();
    let mut items = Vec::new();
    for i in 0..n_items {
        images.insert(format!("crop{i}"), unit(&mut r, dim)).unwrap();
        texts.insert(format!("pos{i}"), unit(&mut r, dim)).unwrap();
        let negative_ids: Vec<String> = (0..n).map(|j| format!("neg{i}-{j}")).collect();
        for id in &negative_ids {
            texts.insert(id.clone(), unit(&mut r, dim)).unwrap();
        }
        items.push(VocabItem {
            crop_id: format!("crop{i}"),
            positive_id: format!("pos{i}"),
            negative_ids,
        });
    }
    let dataset = VocabDataset {
        benchmark: Benchmark::Hard,
        n_negatives: n,
        items,
    };
    VocabSet::new(dataset, images, texts).unwrap()
}

#[test]
fn random_embeddings_rank_at_chance() {
    let set = random_vocab(2000, 10, 16, 4);
    let r = mean_rank(&HeadParams::CosineBaseline { dim: 16 }, &set).unwrap();
    assert_eq!(r.k, 11);
    assert!((r.mean_rank - 6.0).abs() <= 0.3, "{}", r.mean_rank);
    assert!(r.ranks.iter().all(|&x| (1..=11).contains(&x)));
}

#[test]
fn uniform_scores_average_to_middle_rank() {
    let mut r = rng(21);
    let items: Vec<(f64, Vec<f64>)> = (0..1000)
        .map(|_| (r.random::<f64>(), (0..10).map(|_| r.random::<f64>()).collect()))
        .collect();
    let res = RankResult::from_scores(&items).unwrap();
    assert!((res.mean_rank - 6.0).abs() <= 0.3, "{}", res.mean_rank);
}

#[test]
fn repeated_evaluation_is_bit_identical() {
    let vocab = random_vocab(100, 10, 16, 5);
    let head = init_head(HeadShape::new(HeadKind::Mha, 16).with_heads(4), 1).unwrap();
    let vocabs = [vocab];
    let inputs = EvalInputs {
        vocabs: &vocabs,
        coarse: None,
        normalize_inputs: true,
        config: serde_json::json!({"run": 1}),
    };
    let a = serde_json::to_string(&evaluate(&head, &inputs).unwrap()).unwrap();
    let b = serde_json::to_string(&evaluate(&head, &inputs).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_inputs_are_rejected() {
    let mut set = random_vocab(3, 10, 4, 0);
    set.dataset.items.clear();
    assert!(mean_rank(&HeadParams::CosineBaseline { dim: 4 }, &set).is_err());
    let inputs = EvalInputs {
        vocabs: &[],
        coarse: None,
        normalize_inputs: true,
        config: serde_json::Value::Null,
    };
    assert!(evaluate(&HeadParams::CosineBaseline { dim: 4 }, &inputs).is_err());
}

#[test]
fn benchmark_rows_and_overall_mean() {
    let mut hard = random_vocab(50, 10, 8, 1);
    let mut color = random_vocab(50, 10, 8, 2);
    hard.dataset.benchmark = Benchmark::Hard;
    color.dataset.benchmark = Benchmark::Color;
    let vocabs = [hard, color];
    let head = HeadParams::CosineBaseline { dim: 8 };
    let report = evaluate(
        &head,
        &EvalInputs {
            vocabs: &vocabs,
            coarse: None,
            normalize_inputs: true,
            config: serde_json::json!({}),
        },
    )
    .unwrap();
    let (h, c) = (report.benchmarks["hard"].mean_rank, report.benchmarks["color"].mean_rank);
    assert_eq!(report.mean_rank, Some((h + c) / 2.0));
    let table = report.render();
    assert!(table.contains("hard") && table.contains("color"), "{table}");
}
