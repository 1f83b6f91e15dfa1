// Per-fold embedding tables for the synthetic city, as an external image
// model would hand them over: one CSV per fold with a checksummed JSON
// sidecar, keyed by the patch index of the default patch layout.
//
// The vectors are band means and spreads of each patch window plus a little
// fold-seeded noise, which is enough to exercise scheme S4 without a trained
// network. `cargo run --example embedding_tables -- DIR` writes the five
// tables into DIR; the checked-in test fixture was produced that way.

use std::error::Error;
use std::path::{Path, PathBuf};

use morpholcz::fusion::{make_patches, patch_stats, EmbeddingRow, EmbeddingTable, PatchSpec};
use morpholcz::synth::{synth_city, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FOLDS: u32 = 5;

/// Writes `fold_<k>.csv` (+ `.csv.json`) for every fold into `dir`.
pub fn write_fixture_tables(dir: &Path, seed: u64) -> Result<Vec<PathBuf>, Box<dyn Error>> {
    let city = synth_city(&SynthSpec::default(), seed)?;
    let index = make_patches(&city.imagery.grid, &PatchSpec::default(), None)?;
    let stats = patch_stats(&city.imagery, &index);
    let keep: Vec<usize> = stats
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.ends_with("_mean") || c.ends_with("_std"))
        .map(|(i, _)| i)
        .collect();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for fold in 0..FOLDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xE3B0 + fold as u64));
        let rows = (0..stats.n_rows())
            .map(|r| EmbeddingRow {
                patch_id: stats.row_ids[r],
                fold,
                label: None,
                values: keep
                    .iter()
                    .map(|&c| ((stats.get(r, c) + rng.random_range(-0.01..0.01)) * 1e6).round() / 1e6)
                    .collect(),
            })
            .collect();
        let table = EmbeddingTable { dim: keep.len(), producer: "band-statistics fixture".into(), fold, rows };
        let path = dir.join(format!("fold_{fold}.csv"));
        table.write(&path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let paths = write_fixture_tables(dir.path(), 42)?;
    let tables = EmbeddingTable::read_dir(dir.path())?;
    assert_eq!(tables.len(), paths.len());
    for (fold, t) in &tables {
        println!("fold {fold}: {} patches × {} values from `{}`", t.rows.len(), t.dim, t.producer);
    }
    // A modified table no longer matches its sidecar checksum.
    let text = std::fs::read_to_string(&paths[0])?.replacen("fold", "fold ", 1);
    std::fs::write(&paths[0], text)?;
    match EmbeddingTable::read(&paths[0]) {
        Err(e) => println!("tampered table rejected: {e}"),
        Ok(_) => return Err("tampered table was accepted".into()),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    match std::env::args().nth(1) {
        Some(dir) => {
            for p in write_fixture_tables(Path::new(&dir), 42)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        None => run_example(),
    }
}
