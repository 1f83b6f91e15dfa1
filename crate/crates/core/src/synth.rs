//! Deterministic synthetic city: rectangular districts built from a few
//! housing templates on a street grid, labeled reference polygons and a
//! multi-band pseudo-image.

use std::collections::BTreeMap;
use std::path::Path;

use geo::{Coord, LineString, MultiPolygon, Polygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{reference_to_layer, LczClass, ReferencePolygon};
use crate::geom;
use crate::io::raster::{write_geotiff_f32, GridGeometry, Raster};
use crate::io::vector::{write_geojson, VectorFeature, VectorLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    CompactLowrise,
    OpenLowrise,
    LargeLowrise,
    Sparse,
}

/// Building layout of a template inside one street block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Footprint width range along x (m).
    pub width: (f64, f64),
    /// Footprint depth range along y (m).
    pub depth: (f64, f64),
    /// Slot size per building (m); the footprint is placed inside its slot.
    pub slot: (f64, f64),
    /// Fraction of the free slot space used for random placement.
    pub jitter: f64,
    /// Probability that a slot is built.
    pub keep: f64,
    /// Probability that a street block is built at all.
    pub block_keep: f64,
    /// Distance from the street centerline to the buildable area (m).
    pub setback: f64,
}

impl Template {
    pub fn lcz(self) -> LczClass {
        let code = match self {
            Template::CompactLowrise => 3,
            Template::OpenLowrise => 6,
            Template::LargeLowrise => 8,
            Template::Sparse => 9,
        };
        LczClass::new(code).expect("valid code")
    }

    pub fn layout(self) -> Layout {
        match self {
            Template::CompactLowrise => Layout {
                width: (12.0, 12.0),
                depth: (12.0, 14.0),
                slot: (12.0, 18.0),
                jitter: 0.0,
                keep: 1.0,
                block_keep: 1.0,
                setback: 6.0,
            },
            Template::OpenLowrise => Layout {
                width: (9.0, 12.0),
                depth: (10.0, 13.0),
                slot: (22.0, 26.0),
                jitter: 0.5,
                keep: 1.0,
                block_keep: 1.0,
                setback: 7.0,
            },
            Template::LargeLowrise => Layout {
                width: (30.0, 40.0),
                depth: (35.0, 50.0),
                slot: (55.0, 70.0),
                jitter: 0.4,
                keep: 1.0,
                block_keep: 1.0,
                setback: 10.0,
            },
            // Scattered clusters of open-style houses with empty blocks between.
            Template::Sparse => Layout {
                width: (9.0, 12.0),
                depth: (10.0, 13.0),
                slot: (22.0, 26.0),
                jitter: 0.5,
                keep: 1.0,
                block_keep: 0.5,
                setback: 7.0,
            },
        }
    }

    /// Mean pseudo-reflectance per band.
    fn spectral(self) -> [f64; 10] {
        match self {
            Template::CompactLowrise => [0.11, 0.10, 0.12, 0.14, 0.16, 0.18, 0.19, 0.20, 0.24, 0.22],
            Template::OpenLowrise => [0.07, 0.08, 0.07, 0.12, 0.22, 0.28, 0.31, 0.33, 0.22, 0.15],
            Template::LargeLowrise => [0.15, 0.16, 0.17, 0.19, 0.20, 0.21, 0.22, 0.23, 0.28, 0.26],
            Template::Sparse => [0.06, 0.08, 0.06, 0.12, 0.24, 0.31, 0.34, 0.36, 0.21, 0.13],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictSpec {
    pub name: String,
    pub template: Template,
    /// Local extent `[x0, y0, x1, y1]` (m from the city origin).
    pub extent: [f64; 4],
    /// Street spacing along x and y (m).
    pub pitch: (f64, f64),
    /// Reference polygons per axis.
    pub reference_chunks: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Projected coordinates of the city's lower-left corner.
    pub origin: (f64, f64),
    pub crs: String,
    pub pixel_size: f64,
    /// Amplitude of the uniform pixel noise.
    pub noise: f64,
    pub districts: Vec<DistrictSpec>,
}

impl Default for SynthSpec {
    /// Four districts on a 2.0 × 1.0 km site: compact, open and sparse
    /// low-rise side by side (sparse next to open) below a large low-rise belt.
    fn default() -> Self {
        let d = |name: &str, template, extent, pitch, chunks| DistrictSpec {
            name: name.into(),
            template,
            extent,
            pitch,
            reference_chunks: chunks,
        };
        SynthSpec {
            origin: (500_000.0, 5_000_000.0),
            crs: "EPSG:32633".into(),
            pixel_size: 10.0,
            noise: 0.02,
            districts: vec![
                d("compact", Template::CompactLowrise, [0.0, 0.0, 500.0, 600.0], (100.0, 100.0), (2, 3)),
                d("open", Template::OpenLowrise, [500.0, 0.0, 1500.0, 600.0], (100.0, 100.0), (4, 3)),
                d("sparse", Template::Sparse, [1500.0, 0.0, 2000.0, 600.0], (100.0, 100.0), (2, 3)),
                d("large", Template::LargeLowrise, [0.0, 600.0, 2000.0, 1000.0], (200.0, 200.0), (5, 2)),
            ],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub crs: String,
    pub buildings: Vec<Polygon>,
    /// District index per building.
    pub building_district: Vec<usize>,
    pub streets: Vec<LineString>,
    pub study_area: Polygon,
    pub reference: Vec<ReferencePolygon>,
    pub imagery: Raster,
}

fn overlaps(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a[0] < b[2] - 1e-9 && b[0] < a[2] - 1e-9 && a[1] < b[3] - 1e-9 && b[1] < a[3] - 1e-9
}

fn grid_lines(extent: [f64; 4], pitch: f64, lo: usize) -> Vec<f64> {
    let (a, b) = (extent[lo], extent[lo + 2]);
    let n = ((b - a) / pitch).round().max(1.0) as usize;
    (0..=n).map(|k| if k == n { b } else { a + k as f64 * (b - a) / n as f64 }).collect()
}

fn key(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

/// Merges collinear intervals per coordinate.
fn merge_intervals(mut segs: Vec<(f64, f64, f64)>) -> Vec<(f64, f64, f64)> {
    segs.sort_by(|a, b| key(a.0).cmp(&key(b.0)).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for s in segs {
        match out.last_mut() {
            Some(last) if key(last.0) == key(s.0) && s.1 <= last.2 + 1e-9 => last.2 = last.2.max(s.2),
            _ => out.push(s),
        }
    }
    out
}

/// Street centerlines of every district grid, noded at all crossings.
fn street_network(spec: &SynthSpec) -> Vec<LineString> {
    let mut horiz = Vec::new();
    let mut vert = Vec::new();
    for d in &spec.districts {
        let e = d.extent;
        for y in grid_lines(e, d.pitch.1, 1) {
            horiz.push((y, e[0], e[2]));
        }
        for x in grid_lines(e, d.pitch.0, 0) {
            vert.push((x, e[1], e[3]));
        }
    }
    let horiz = merge_intervals(horiz);
    let vert = merge_intervals(vert);
    let (ox, oy) = spec.origin;
    let mut out = Vec::new();
    let mut emit = |pts: Vec<f64>, fixed: f64, horizontal: bool| {
        for w in pts.windows(2) {
            if w[1] - w[0] > 1e-6 {
                let (a, b) = if horizontal {
                    ((ox + w[0], oy + fixed), (ox + w[1], oy + fixed))
                } else {
                    ((ox + fixed, oy + w[0]), (ox + fixed, oy + w[1]))
                };
                out.push(LineString::from(vec![a, b]));
            }
        }
    };
    for &(y, x0, x1) in &horiz {
        let mut cuts: Vec<f64> = vec![x0, x1];
        cuts.extend(vert.iter().filter(|v| v.0 > x0 - 1e-9 && v.0 < x1 + 1e-9 && y > v.1 - 1e-9 && y < v.2 + 1e-9).map(|v| v.0));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        emit(cuts, y, true);
    }
    for &(x, y0, y1) in &vert {
        let mut cuts: Vec<f64> = vec![y0, y1];
        cuts.extend(horiz.iter().filter(|h| h.0 > y0 - 1e-9 && h.0 < y1 + 1e-9 && x > h.1 - 1e-9 && x < h.2 + 1e-9).map(|h| h.0));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        emit(cuts, x, false);
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

/// Footprints of one street block `[x0, y0, x1, y1]` (local coordinates).
fn block_buildings(block: [f64; 4], layout: &Layout, rng: &mut ChaCha8Rng) -> Vec<[f64; 4]> {
    let (bx0, by0) = (block[0] + layout.setback, block[1] + layout.setback);
    let (w, h) = (block[2] - block[0] - 2.0 * layout.setback, block[3] - block[1] - 2.0 * layout.setback);
    if w <= 0.0 || h <= 0.0 {
        return Vec::new();
    }
    let nx = ((w + 1e-9) / layout.slot.0).floor() as usize;
    let ny = ((h + 1e-9) / layout.slot.1).floor() as usize;
    // center the slot arrangement in the block
    let x_start = bx0 + 0.5 * (w - nx as f64 * layout.slot.0);
    let y_start = by0 + 0.5 * (h - ny as f64 * layout.slot.1);
    let mut out = Vec::new();
    if !rng.random_bool(layout.block_keep) {
        return out;
    }
    for r in 0..ny {
        for c in 0..nx {
            let bw = uniform(rng, layout.width);
            let bd = uniform(rng, layout.depth);
            let free_x = (layout.slot.0 - bw).max(0.0);
            let free_y = (layout.slot.1 - bd).max(0.0);
            let jx = 0.5 * free_x + layout.jitter * 0.5 * free_x * rng.random_range(-1.0..1.0);
            let jy = 0.5 * free_y + layout.jitter * 0.5 * free_y * rng.random_range(-1.0..1.0);
            let built = rng.random_bool(layout.keep);
            if !built {
                continue;
            }
            let x0 = x_start + c as f64 * layout.slot.0 + jx;
            let y0 = y_start + r as f64 * layout.slot.1 + jy;
            out.push([x0, y0, x0 + bw, y0 + bd]);
        }
    }
    out
}

/// Builds the city. The same spec and seed always give the same city.
pub fn synth_city(spec: &SynthSpec, seed: u64) -> Result<SynthCity> {
    if spec.districts.is_empty() {
        return Err(Error::Config("at least one district is required".into()));
    }
    for (i, a) in spec.districts.iter().enumerate() {
        if !(a.extent[2] > a.extent[0] && a.extent[3] > a.extent[1]) {
            return Err(Error::Config(format!("district `{}` has an empty extent", a.name)));
        }
        if a.reference_chunks.0 == 0 || a.reference_chunks.1 == 0 {
            return Err(Error::Config(format!("district `{}` needs at least one reference polygon", a.name)));
        }
        for b in &spec.districts[i + 1..] {
            if overlaps(&a.extent, &b.extent) {
                return Err(Error::Config(format!("districts `{}` and `{}` overlap", a.name, b.name)));
            }
        }
    }
    let (ox, oy) = spec.origin;
    let bounds = spec.districts.iter().fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |acc, d| {
        [acc[0].min(d.extent[0]), acc[1].min(d.extent[1]), acc[2].max(d.extent[2]), acc[3].max(d.extent[3])]
    });
    let to_world = |x0: f64, y0: f64, x1: f64, y1: f64| geom::rect_polygon(Coord { x: ox + x0, y: oy + y0 }, Coord { x: ox + x1, y: oy + y1 });

    let mut buildings = Vec::new();
    let mut building_district = Vec::new();
    let mut reference = Vec::new();
    for (di, d) in spec.districts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(di as u64 * 0x1000_0001));
        let layout = d.template.layout();
        let xs = grid_lines(d.extent, d.pitch.0, 0);
        let ys = grid_lines(d.extent, d.pitch.1, 1);
        for yw in ys.windows(2) {
            for xw in xs.windows(2) {
                for b in block_buildings([xw[0], yw[0], xw[1], yw[1]], &layout, &mut rng) {
                    buildings.push(to_world(b[0], b[1], b[2], b[3]));
                    building_district.push(di);
                }
            }
        }
        let (cx, cy) = d.reference_chunks;
        let xs = grid_lines(d.extent, (d.extent[2] - d.extent[0]) / cx as f64, 0);
        let ys = grid_lines(d.extent, (d.extent[3] - d.extent[1]) / cy as f64, 1);
        for yw in ys.windows(2) {
            for xw in xs.windows(2) {
                let id = reference.len() as u64;
                reference.push(ReferencePolygon::new(id, MultiPolygon(vec![to_world(xw[0], yw[0], xw[1], yw[1])]), d.template.lcz()));
            }
        }
    }

    let px = spec.pixel_size;
    let width = ((bounds[2] - bounds[0]) / px).round() as usize;
    let height = ((bounds[3] - bounds[1]) / px).round() as usize;
    let grid = GridGeometry {
        origin_x: ox + bounds[0],
        origin_y: oy + bounds[3],
        pixel_size: px,
        width,
        height,
        crs: Some(spec.crs.clone()),
    };
    let district_of = |p: Coord| {
        spec.districts.iter().position(|d| {
            let (x, y) = (p.x - ox, p.y - oy);
            x >= d.extent[0] && x < d.extent[2] && y >= d.extent[1] && y < d.extent[3]
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1A6E);
    let owners: Vec<Option<usize>> = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).map(|(r, c)| district_of(grid.pixel_center(r, c))).collect();
    let mut imagery = Raster::new(grid);
    for b in 0..10 {
        let band = owners
            .iter()
            .map(|o| {
                let base = o.map_or(0.05, |d| spec.districts[d].template.spectral()[b]);
                base + spec.noise * rng.random_range(-1.0..1.0)
            })
            .collect();
        imagery.push_band(format!("b{}", b + 1), band);
    }

    Ok(SynthCity {
        crs: spec.crs.clone(),
        buildings,
        building_district,
        streets: street_network(spec),
        study_area: to_world(bounds[0], bounds[1], bounds[2], bounds[3]),
        reference,
        imagery,
    })
}

impl SynthCity {
    /// Building counts per district name.
    pub fn counts(&self, spec: &SynthSpec) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for d in &self.building_district {
            *m.entry(spec.districts[*d].name.clone()).or_default() += 1;
        }
        m
    }

    /// Writes the site layers (`buildings`, `streets`, `study_area`,
    /// `reference` as GeoJSON and `imagery.tif`) into `dir`.
    pub fn write(&self, dir: &Path, provenance: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let extra: serde_json::Map<String, serde_json::Value> = [("provenance".to_string(), provenance.clone())].into_iter().collect();
        let crs = Some(self.crs.clone());
        let polys = VectorLayer {
            crs: crs.clone(),
            features: self
                .buildings
                .iter()
                .enumerate()
                .map(|(i, p)| VectorFeature { id: i as u64, geometry: geo::Geometry::Polygon(p.clone()), properties: Default::default() })
                .collect(),
        };
        write_geojson(&dir.join("buildings.geojson"), &polys, Some(&extra))?;
        let streets = VectorLayer {
            crs: crs.clone(),
            features: self
                .streets
                .iter()
                .enumerate()
                .map(|(i, l)| VectorFeature {
                    id: i as u64,
                    geometry: geo::Geometry::LineString(l.clone()),
                    properties: [("class".to_string(), serde_json::Value::String("residential".into()))].into_iter().collect(),
                })
                .collect(),
        };
        write_geojson(&dir.join("streets.geojson"), &streets, Some(&extra))?;
        let area = VectorLayer {
            crs: crs.clone(),
            features: vec![VectorFeature { id: 0, geometry: geo::Geometry::Polygon(self.study_area.clone()), properties: Default::default() }],
        };
        write_geojson(&dir.join("study_area.geojson"), &area, Some(&extra))?;
        write_geojson(&dir.join("reference.geojson"), &reference_to_layer(&self.reference, crs), Some(&extra))?;
        write_geotiff_f32(&dir.join("imagery.tif"), &self.imagery, Some(provenance))
    }
}
