// The primary morphometric attributes of two small synthetic districts,
// compact and open low-rise: the full catalog per cell, summarized by
// family and compared between the districts on a few telling columns.

use std::collections::BTreeMap;
use std::error::Error;

use geo::MultiPolygon;
use morpholcz::context::build_contiguity;
use morpholcz::ingest::{Building, StreetNetwork};
use morpholcz::morphometrics::catalog::catalog;
use morpholcz::morphometrics::{primary_matrix, MorphometricsConfig};
use morpholcz::synth::{synth_city, DistrictSpec, SynthSpec, Template};
use morpholcz::tessellation::{build_enclosures, link_elements, tessellate, TessellationConfig};

fn two_districts() -> SynthSpec {
    let district = |name: &str, template, extent| DistrictSpec {
        name: name.into(),
        template,
        extent,
        pitch: (100.0, 100.0),
        reference_chunks: (1, 1),
    };
    SynthSpec {
        districts: vec![
            district("compact", Template::CompactLowrise, [0.0, 0.0, 300.0, 200.0]),
            district("open", Template::OpenLowrise, [300.0, 0.0, 600.0, 200.0]),
        ],
        ..SynthSpec::default()
    }
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let spec = two_districts();
    let city = synth_city(&spec, 1)?;
    let buildings: Vec<Building> =
        city.buildings.iter().enumerate().map(|(id, p)| Building { id, footprint: p.clone() }).collect();
    let network = StreetNetwork::from_lines(city.streets.iter().map(|l| (l.clone(), false)).collect(), 0.1);
    let enclosures = build_enclosures(&network, &[], &[], &city.study_area)?;
    let (mut cells, _) = tessellate(&buildings, &enclosures, &TessellationConfig::default())?;
    link_elements(&mut cells, &buildings, &network, 0.1);
    let polys: Vec<MultiPolygon> = cells.iter().map(|c| c.polygon.clone()).collect();
    let graph = build_contiguity(&polys);
    let table = primary_matrix(&buildings, &cells, &network, &graph, &MorphometricsConfig::default())?;
    println!("{} cells × {} primary attributes", table.n_rows(), table.n_cols());

    let mut per_family: BTreeMap<String, usize> = BTreeMap::new();
    for m in catalog() {
        *per_family.entry(format!("{:?}/{:?}", m.element, m.family)).or_default() += 1;
    }
    for (k, n) in &per_family {
        println!("  {k:<24} {n}");
    }

    println!("{:<28} {:>10} {:>10}", "median per district", "compact", "open");
    for name in ["bld_area", "etc_area", "bld_shared_walls", "bld_interbuilding_distance", "str_openness", "etc_car"] {
        let col = table.column_index(name).ok_or("unknown column")?;
        let median = |district: usize| {
            let mut v: Vec<f64> = (0..table.n_rows())
                .filter(|&r| city.building_district[cells[r].building_id] == district)
                .map(|r| table.get(r, col))
                .filter(|v| !v.is_nan())
                .collect();
            v.sort_by(f64::total_cmp);
            v.get(v.len() / 2).copied().unwrap_or(f64::NAN)
        };
        println!("{name:<28} {:>10.2} {:>10.2}", median(0), median(1));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
