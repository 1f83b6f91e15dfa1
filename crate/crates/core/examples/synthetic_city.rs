// The whole pipeline on the synthetic city: four districts (compact, open
// and sparse low-rise side by side, a large low-rise belt above), every
// stage from ingest to maps, then the cross-validated scores per scheme.

use std::error::Error;

use morpholcz::pipeline::{write_synthetic_site, Site};
use morpholcz::synth::{synth_city, SynthSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let spec = SynthSpec::default();
    for (district, n) in synth_city(&spec, 42)?.counts(&spec) {
        println!("{district:<8} {n:>5} buildings");
    }
    let config = write_synthetic_site(dir.path(), &spec, 42)?;
    let site = Site::load(&config)?;
    for (stage, status) in site.run_all(false)? {
        println!("{:<11} {status:?}", stage.name());
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(site.out().join("evaluate/summary.json"))?)?;
    for scheme in ["s1", "s3", "s4", "s1_grid"] {
        let s = &summary[scheme];
        if s.is_null() {
            println!("{scheme:<8} not run");
        } else if s["oa"].is_number() {
            println!("{scheme:<8} OA {:.3}  F1 {:.3}  ({} grid cells)", s["oa"].as_f64().unwrap_or(f64::NAN), s["f1"].as_f64().unwrap_or(f64::NAN), s["cells"]);
        } else {
            println!("{scheme:<8} OA {:.3}  F1 {:.3}  F1 urban {:.3}", s["oa"]["mean"].as_f64().unwrap_or(f64::NAN), s["f1"]["mean"].as_f64().unwrap_or(f64::NAN), s["f1_urban"]["mean"].as_f64().unwrap_or(f64::NAN));
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
