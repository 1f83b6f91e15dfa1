// Contextual attributes: every value is replaced by the 25th, 50th and 75th
// percentiles over the cells within three contiguity steps. On a 7 × 7 grid
// of square cells with a gradient field, the corner sees a narrow window and
// the centre the whole range; a missing value is skipped, not propagated.

use std::error::Error;

use geo::{Coord, MultiPolygon, Rect};
use morpholcz::context::{build_contiguity, contextualize, ContextConfig};
use morpholcz::io::table::FeatureTable;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let n = 7;
    let cells: Vec<MultiPolygon> = (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64 * 10.0, (i % n) as f64 * 10.0);
            MultiPolygon(vec![Rect::new(Coord { x: c, y: r }, Coord { x: c + 10.0, y: r + 10.0 }).to_polygon()])
        })
        .collect();
    let graph = build_contiguity(&cells);
    println!("{} cells, {} queen contiguity edges", graph.len(), graph.n_edges());

    let mut primary = FeatureTable::new("cell_id", vec!["gradient".into(), "patchy".into()]);
    for i in 0..n * n {
        let patchy = if i == 24 { f64::NAN } else { (i % 3) as f64 };
        primary.push_row(i as u64, &[(i % n + i / n) as f64, patchy]);
    }
    let ctx = contextualize(&primary, &graph, &ContextConfig::default())?;
    println!("columns: {}", ctx.columns.join(", "));
    for (label, i) in [("corner", 0), ("edge", 3), ("centre", 24)] {
        let row = ctx.row(i);
        println!(
            "{label:<7} gradient {:>4.1} → ({:.2}, {:.2}, {:.2})   patchy {:>3} → ({:.2}, {:.2}, {:.2})",
            primary.get(i, 0),
            row[0],
            row[1],
            row[2],
            primary.get(i, 1),
            row[3],
            row[4],
            row[5]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
