// Raster fusion on a small scene: per-cell morphometric values burned onto
// a 10 m grid, zonal mean / max / min per 100 m cell, and 320 m sliding
// windows stepped by 100 m with five statistics per band, each window keyed
// to the 100 m cell under its centre.

use std::error::Error;

use geo::{Coord, MultiPolygon, Rect};
use morpholcz::fusion::{make_patches, patch_stats, patches_per_axis, rasterize_attributes, zonal_stats, CoarseGrid, PatchSpec};
use morpholcz::io::raster::{GridGeometry, Raster};
use morpholcz::io::table::FeatureTable;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    // 60 × 40 pixels of 10 m: a 600 × 400 m scene.
    let grid = GridGeometry { origin_x: 0.0, origin_y: 400.0, pixel_size: 10.0, width: 60, height: 40, crs: None };

    // Twenty-four 100 m square "cells" with two attributes each.
    let cells: Vec<MultiPolygon> = (0..24)
        .map(|i| {
            let (x, y) = ((i % 6) as f64 * 100.0, (i / 6) as f64 * 100.0);
            MultiPolygon(vec![Rect::new(Coord { x, y }, Coord { x: x + 100.0, y: y + 100.0 }).to_polygon()])
        })
        .collect();
    let mut attrs = FeatureTable::new("cell_id", vec!["density".into(), "height".into()]);
    for i in 0..24 {
        attrs.push_row(i as u64, &[i as f64 / 24.0, 3.0 + (i % 5) as f64]);
    }
    let morpho = rasterize_attributes(&cells, None, &attrs, &attrs.columns, &grid)?;
    println!("burned {} attribute layers onto {}×{} pixels", morpho.bands.len(), grid.width, grid.height);

    let mut stack = Raster::new(grid.clone());
    for b in 0..3 {
        let band: Vec<f64> = (0..grid.len()).map(|p| ((p % grid.width) as f64 * 0.01 + b as f64).sin()).collect();
        stack.push_band(format!("s{b}"), band);
    }
    for (name, band) in morpho.band_names.iter().zip(&morpho.bands) {
        stack.push_band(format!("m_{name}"), band.clone());
    }
    let coarse = CoarseGrid::over(&grid, 100.0)?;
    let zonal = zonal_stats(&stack, &coarse);
    println!("zonal table: {} cells × {} columns ({})", zonal.n_rows(), zonal.n_cols(), zonal.columns[..3].join(", "));

    let spec = PatchSpec::default();
    let index = make_patches(&morpho.grid, &spec, None)?;
    println!(
        "patches: {} × {} windows (formula {} × {})",
        index.per_axis.0,
        index.per_axis.1,
        patches_per_axis(grid.extent_x(), &spec),
        patches_per_axis(grid.extent_y(), &spec)
    );
    let stats = patch_stats(&morpho, &index);
    for (i, p) in index.patches.iter().enumerate().take(3) {
        println!("  window at pixel ({}, {}) → cell {}: density mean {:.3}", p.row0, p.col0, p.id, stats.get(i, 0));
    }
    println!("patch table: {} × {}", stats.n_rows(), stats.n_cols());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
