// Random-forest training with the depth / max-features grid search: the
// most accurate configuration whose train–test accuracy gap stays below
// 5 % wins. Three of the eight features carry the signal; the impurity
// importances should find them.

use std::error::Error;

use morpholcz::forest::{ranked_importance, top_k, tune, Dataset, ForestConfig, ForestModel, MaxFeatures, TuningGrid, Weighting};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (n, d) = (600, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<u8> = (0..n)
        .map(|r| {
            let row = &x[r * d..(r + 1) * d];
            let noisy = rng.random_bool(0.05);
            match (row[1] + 0.5 * row[4] > 0.8, row[6] > 0.6, noisy) {
                (_, _, true) => 9,
                (true, _, _) => 2,
                (false, true, _) => 6,
                _ => 14,
            }
        })
        .collect();
    let data = Dataset::new(n, d, x, y)?;
    let train: Vec<usize> = (0..n).filter(|i| i % 4 != 0).collect();
    let test: Vec<usize> = (0..n).filter(|i| i % 4 == 0).collect();

    let base = ForestConfig { n_trees: 30, weighting: Weighting::InverseFrequency, seed: 11, ..Default::default() };
    let grid = TuningGrid {
        depths: vec![Some(3), Some(6), Some(10), None],
        features: vec![MaxFeatures::Sqrt, MaxFeatures::Fraction(0.5)],
        max_gap: 0.05,
    };
    let (model, report) = tune(&data, &train, &test, &base, &grid)?;
    println!("{:>6} {:>9} {:>7} {:>7} {:>6}", "depth", "features", "train", "test", "gap");
    for (i, p) in report.grid.iter().enumerate() {
        let mark = if i == report.chosen { "  ←" } else { "" };
        let depth = p.max_depth.map_or("full".to_string(), |v| v.to_string());
        println!("{depth:>6} {:>9} {:>7.3} {:>7.3} {:>6.3}{mark}", p.n_features, p.train_oa, p.test_oa, p.gap);
    }
    println!("selected by {:?}", report.rule);

    let ranked = ranked_importance(&model.importances());
    println!("top features: {:?}", top_k(&ranked, 3));
    for (f, w) in ranked.iter().take(4) {
        println!("  feature {f}: {w:.3}");
    }

    let restored = ForestModel::from_json(&model.to_json())?;
    assert_eq!(restored.predict(&data), model.predict(&data));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
