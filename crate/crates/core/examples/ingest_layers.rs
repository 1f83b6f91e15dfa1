// Loading and cleaning the vector inputs of a site: a building layer with an
// overlapping pair, a shed leaning on a larger house, a multipolygon and a
// house straddling a street, and a street layer with a service lane, a long
// tunnel, a duplicated segment and roads split into pieces.

use std::error::Error;
use std::path::Path;

use morpholcz::ingest::{consistency_check, load_layer, preprocess_buildings, preprocess_streets, IngestConfig, LayerKind};

fn ring(x: f64, y: f64, w: f64, h: f64) -> String {
    format!("[[{x},{y}],[{},{y}],[{},{}],[{x},{}],[{x},{y}]]", x + w, x + w, y + h, y + h)
}

fn feature(geometry: String, properties: &str) -> String {
    format!(r#"{{"type": "Feature", "properties": {{{properties}}}, "geometry": {geometry}}}"#)
}

fn polygon(x: f64, y: f64, w: f64, h: f64) -> String {
    format!(r#"{{"type": "Polygon", "coordinates": [{}]}}"#, ring(x, y, w, h))
}

fn line(points: &[(f64, f64)]) -> String {
    let coords: Vec<String> = points.iter().map(|(x, y)| format!("[{x},{y}]")).collect();
    format!(r#"{{"type": "LineString", "coordinates": [{}]}}"#, coords.join(","))
}

fn write_layer(path: &Path, crs: &str, features: &[String]) -> std::io::Result<()> {
    let text = format!(
        r#"{{"type": "FeatureCollection", "crs": {{"type": "name", "properties": {{"name": "{crs}"}}}}, "features": [{}]}}"#,
        features.join(",")
    );
    std::fs::write(path, text)
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let (bpath, spath) = (dir.path().join("buildings.geojson"), dir.path().join("streets.geojson"));
    write_layer(
        &bpath,
        "EPSG:32633",
        &[
            feature(polygon(10.0, 10.0, 12.0, 12.0), ""),
            feature(polygon(14.0, 12.0, 12.0, 12.0), ""),
            feature(polygon(40.0, 10.0, 15.0, 15.0), ""),
            feature(polygon(55.0, 12.0, 4.0, 4.0), ""),
            feature(format!(r#"{{"type": "MultiPolygon", "coordinates": [[{}], [{}]]}}"#, ring(10.0, 40.0, 10.0, 10.0), ring(40.0, 40.0, 10.0, 10.0)), ""),
            feature(polygon(70.0, 95.0, 10.0, 10.0), ""),
        ],
    )?;
    write_layer(
        &spath,
        "EPSG:32633",
        &[
            feature(line(&[(-50.0, 0.0), (20.0, 0.0)]), r#""class": "residential""#),
            feature(line(&[(20.0, 0.0), (90.0, 0.0)]), r#""class": "residential""#),
            feature(line(&[(90.0, 0.0), (150.0, 0.0)]), r#""class": "residential""#),
            feature(line(&[(-50.0, 100.0), (90.0, 100.0)]), r#""class": "residential""#),
            feature(line(&[(90.0, 100.0), (150.0, 100.0)]), r#""class": "residential""#),
            feature(line(&[(90.0, 0.0), (90.0, 100.0)]), r#""class": "residential""#),
            feature(line(&[(90.0, 0.0), (90.0, 100.0)]), r#""class": "residential""#),
            feature(line(&[(-50.0, 0.0), (-50.0, 100.0)]), r#""class": "primary""#),
            feature(line(&[(150.0, 0.0), (150.0, 100.0)]), r#""class": "primary""#),
            feature(line(&[(30.0, 0.0), (30.0, 30.0)]), r#""class": "service""#),
            feature(line(&[(-50.0, 50.0), (150.0, 50.0)]), r#""class": "primary", "is_tunnel": true"#),
        ],
    )?;

    let cfg = IngestConfig::default();
    let raw_buildings = load_layer(&bpath, LayerKind::Buildings)?;
    let (buildings, breport) = preprocess_buildings(&raw_buildings, &cfg);
    println!("buildings: {} features in, {} footprints out", raw_buildings.len(), buildings.len());
    for (rule, n) in &breport.counters {
        println!("  {rule}: {n}");
    }
    let raw_streets = load_layer(&spath, LayerKind::Streets)?;
    println!("streets: {} features kept, {} dropped by type or class", raw_streets.len(), raw_streets.dropped);
    let (network, sreport) = preprocess_streets(&raw_streets, &cfg)?;
    println!("network: {} segments between {} nodes", network.segments.len(), network.nodes.len());
    for (rule, n) in &sreport.counters {
        println!("  {rule}: {n}");
    }
    let (kept, _, consistency) = consistency_check(&buildings, &network, &[], &[]);
    println!("{} footprints kept after removing {} crossing a street", kept.len(), consistency.buildings_on_streets);

    // Geographic coordinates are rejected: every metric is in metres.
    let geographic = dir.path().join("lonlat.geojson");
    write_layer(&geographic, "EPSG:4326", &[feature(polygon(13.4, 52.5, 0.001, 0.001), "")])?;
    match load_layer(&geographic, LayerKind::Buildings) {
        Err(e) => println!("lon/lat layer rejected: {e}"),
        Ok(_) => return Err("a geographic layer was accepted".into()),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
