// From streets to enclosed tessellation cells: two crossing pairs of streets
// cut a study area into nine enclosures, buildings are scattered into them,
// and each enclosure is partitioned into one cell per building.

use std::error::Error;

use geo::{Area, Coord, LineString, Polygon, Rect};
use morpholcz::ingest::{Building, StreetNetwork};
use morpholcz::tessellation::{build_enclosures, link_elements, tessellate, TessellationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Rect::new(Coord { x: x0, y: y0 }, Coord { x: x1, y: y1 }).to_polygon()
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let study_area = rect(0.0, 0.0, 300.0, 300.0);
    let lines: Vec<(LineString, bool)> = [100.0, 200.0]
        .iter()
        .flat_map(|&v| {
            [
                LineString::from(vec![(v, -20.0), (v, 320.0)]),
                LineString::from(vec![(-20.0, v), (320.0, v)]),
            ]
        })
        .map(|l| (l, false))
        .collect();
    let network = StreetNetwork::from_lines(lines, 0.1);
    let enclosures = build_enclosures(&network, &[], &[], &study_area)?;
    println!("{} enclosures", enclosures.len());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut buildings = Vec::new();
    for e in &enclosures {
        let r = geo::BoundingRect::bounding_rect(&e.polygon).ok_or("empty enclosure")?;
        for _ in 0..rng.random_range(2..6) {
            let (w, h) = (rng.random_range(8.0..14.0), rng.random_range(8.0..14.0));
            let x = rng.random_range(r.min().x + 10.0..r.max().x - 10.0 - w);
            let y = rng.random_range(r.min().y + 10.0..r.max().y - 10.0 - h);
            let footprint = rect(x, y, x + w, y + h);
            let clear = buildings.iter().all(|b: &Building| {
                let o = geo::BooleanOps::intersection(&b.footprint, &footprint).unsigned_area();
                o == 0.0 && geo::Distance::distance(&geo::Euclidean, &b.footprint, &footprint) > 2.0
            });
            if clear {
                buildings.push(Building { id: buildings.len(), footprint });
            }
        }
    }

    let (mut cells, report) = tessellate(&buildings, &enclosures, &TessellationConfig::default())?;
    link_elements(&mut cells, &buildings, &network, 0.1);
    let covered: f64 = cells.iter().map(|c| c.area()).sum();
    let built: f64 = enclosures
        .iter()
        .filter(|e| cells.iter().any(|c| c.enclosure_id == e.id))
        .map(|e| e.polygon.unsigned_area())
        .sum();
    println!("{} buildings → {} cells covering {covered:.1} of {built:.1} m²", buildings.len(), cells.len());
    println!("centroid fallbacks: {:?}", report.centroid_fallbacks);
    for c in cells.iter().take(5) {
        println!(
            "cell {:>2}: building {:>2}, enclosure {}, {:>7.1} m², nearest street {:?}",
            c.id,
            c.building_id,
            c.enclosure_id,
            c.area(),
            c.nearest_street_id
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
