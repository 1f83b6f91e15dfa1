//! Raster fusion: rasterized morphometrics on the imagery grid, 100 m zonal
//! statistics, sliding-window patches and the embedding interchange table.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use geo::{Coord, MultiPolygon};
use rayon::prelude::*;
use rstar::{RTree, RTreeObject, AABB};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom;
use crate::io::raster::{GridGeometry, Raster};
use crate::io::table::{fmt_value, parse_value, FeatureTable};

/// Distance under which a pixel center counts as lying on a cell boundary.
pub const EDGE_TOL: f64 = 1e-9;

/// Coarse grid anchored at the imagery origin whose cells are whole pixel blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    /// Pixels per coarse cell along each axis.
    pub block: usize,
    pub nx: usize,
    pub ny: usize,
}

impl CoarseGrid {
    /// Grid of `cell_size` cells over `grid`; partial cells at the far edges are dropped.
    pub fn over(grid: &GridGeometry, cell_size: f64) -> Result<CoarseGrid> {
        let ratio = cell_size / grid.pixel_size;
        let block = ratio.round() as usize;
        if block == 0 || (ratio - block as f64).abs() > 1e-9 {
            return Err(Error::Config(format!("cell size {cell_size} is not a multiple of pixel size {}", grid.pixel_size)));
        }
        Ok(CoarseGrid {
            origin_x: grid.origin_x,
            origin_y: grid.origin_y,
            cell_size,
            block,
            nx: grid.width / block,
            ny: grid.height / block,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, row: usize, col: usize) -> u64 {
        (row * self.nx + col) as u64
    }

    pub fn row_col(&self, id: u64) -> (usize, usize) {
        (id as usize / self.nx, id as usize % self.nx)
    }

    pub fn center(&self, id: u64) -> Coord {
        let (r, c) = self.row_col(id);
        Coord {
            x: self.origin_x + (c as f64 + 0.5) * self.cell_size,
            y: self.origin_y - (r as f64 + 0.5) * self.cell_size,
        }
    }

    /// Axis-aligned square of a coarse cell.
    pub fn square(&self, id: u64) -> geo::Rect {
        let (r, c) = self.row_col(id);
        let x0 = self.origin_x + c as f64 * self.cell_size;
        let y1 = self.origin_y - r as f64 * self.cell_size;
        geo::Rect::new(Coord { x: x0, y: y1 - self.cell_size }, Coord { x: x0 + self.cell_size, y: y1 })
    }

    /// Geometry of this grid as a raster (one pixel per coarse cell).
    pub fn as_raster_grid(&self, crs: Option<String>) -> GridGeometry {
        GridGeometry {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            pixel_size: self.cell_size,
            width: self.nx,
            height: self.ny,
            crs,
        }
    }
}

struct CellBox {
    id: usize,
    env: AABB<[f64; 2]>,
}

impl RTreeObject for CellBox {
    type Envelope = AABB<[f64; 2]>;
    fn envelope(&self) -> Self::Envelope {
        self.env
    }
}

/// Spatial index answering "which polygon contains this point"; points on a
/// shared edge go to the lowest index.
pub struct PolygonLocator<'a> {
    polys: &'a [MultiPolygon],
    tree: RTree<CellBox>,
}

impl<'a> PolygonLocator<'a> {
    pub fn new(polys: &'a [MultiPolygon]) -> Self {
        let items = polys
            .iter()
            .enumerate()
            .filter_map(|(id, p)| {
                geom::bbox(p).map(|b| CellBox {
                    id,
                    env: AABB::from_corners(
                        [b.min().x - EDGE_TOL, b.min().y - EDGE_TOL],
                        [b.max().x + EDGE_TOL, b.max().y + EDGE_TOL],
                    ),
                })
            })
            .collect();
        PolygonLocator { polys, tree: RTree::bulk_load(items) }
    }

    pub fn locate(&self, p: Coord) -> Option<usize> {
        self.tree
            .locate_in_envelope_intersecting(&AABB::from_point([p.x, p.y]))
            .map(|c| c.id)
            .filter(|&id| {
                geom::point_in_multipolygon(p, &self.polys[id]) || geom::multipolygon_point_distance(&self.polys[id], p) <= EDGE_TOL
            })
            .min()
    }
}

/// One band per selected column: each pixel takes the value of the cell
/// containing its center, NaN where no cell does.
pub fn rasterize_attributes(
    cells: &[MultiPolygon],
    cells_crs: Option<&str>,
    table: &FeatureTable,
    columns: &[String],
    grid: &GridGeometry,
) -> Result<Raster> {
    if let (Some(a), Some(b)) = (cells_crs, grid.crs.as_deref()) {
        if a != b {
            return Err(Error::CrsMismatch(a.to_string(), b.to_string()));
        }
    }
    if table.n_rows() != cells.len() {
        return Err(Error::Data(format!("{} table rows for {} cells", table.n_rows(), cells.len())));
    }
    let sel = table.select(columns)?;
    let owner = pixel_owners(cells, grid);
    let mut raster = Raster::new(grid.clone());
    for (b, name) in columns.iter().enumerate() {
        let band = owner.iter().map(|o| o.map_or(f64::NAN, |c| sel.get(c, b))).collect();
        raster.push_band(name.clone(), band);
    }
    Ok(raster)
}

/// Index of the cell containing each pixel center (row-major).
pub fn pixel_owners(cells: &[MultiPolygon], grid: &GridGeometry) -> Vec<Option<usize>> {
    let loc = PolygonLocator::new(cells);
    (0..grid.height)
        .into_par_iter()
        .flat_map_iter(|r| (0..grid.width).map(move |c| (r, c)).collect::<Vec<_>>())
        .map(|(r, c)| loc.locate(grid.pixel_center(r, c)))
        .collect()
}

/// Non-missing pixel values of `band` inside a pixel window.
fn window_values(raster: &Raster, band: usize, row0: usize, col0: usize, h: usize, w: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(h * w);
    for r in row0..row0 + h {
        for c in col0..col0 + w {
            let x = raster.get(band, r, c);
            if !x.is_nan() {
                v.push(x);
            }
        }
    }
    v
}

/// Summary statistics of a value set; all NaN when empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
}

pub fn stats(values: &[f64]) -> Stats {
    if values.is_empty() {
        return Stats { mean: f64::NAN, min: f64::NAN, max: f64::NAN, std: f64::NAN, median: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    let median = if m % 2 == 1 { s[m / 2] } else { 0.5 * (s[m / 2 - 1] + s[m / 2]) };
    Stats { mean, min: s[0], max: s[m - 1], std: var.sqrt(), median }
}

/// Mean, max and min of every band over each coarse cell's pixel block,
/// ignoring nodata. Columns are `<band>_mean`, `<band>_max`, `<band>_min`.
pub fn zonal_stats(stack: &Raster, coarse: &CoarseGrid) -> FeatureTable {
    let mut columns = Vec::new();
    for b in &stack.band_names {
        for s in ["mean", "max", "min"] {
            columns.push(format!("{b}_{s}"));
        }
    }
    let rows: Vec<Vec<f64>> = (0..coarse.len() as u64)
        .into_par_iter()
        .map(|id| {
            let (r, c) = coarse.row_col(id);
            let mut row = Vec::with_capacity(3 * stack.bands.len());
            for b in 0..stack.bands.len() {
                let s = stats(&window_values(stack, b, r * coarse.block, c * coarse.block, coarse.block, coarse.block));
                row.extend([s.mean, s.max, s.min]);
            }
            row
        })
        .collect();
    let mut t = FeatureTable::new("grid_id", columns);
    for (id, row) in rows.iter().enumerate() {
        t.push_row(id as u64, row);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size_m: f64,
    pub step_m: f64,
    pub center_m: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec { size_m: 320.0, step_m: 100.0, center_m: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    /// Id of the coarse cell containing the patch center.
    pub id: u64,
    pub row0: usize,
    pub col0: usize,
    pub size_px: usize,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchIndex {
    pub spec: PatchSpec,
    pub coarse: CoarseGrid,
    pub per_axis: (usize, usize),
    pub patches: Vec<Patch>,
}

/// Number of window positions along one axis of extent `extent_m`.
pub fn patches_per_axis(extent_m: f64, spec: &PatchSpec) -> usize {
    if extent_m + 1e-9 < spec.size_m {
        0
    } else {
        ((extent_m - spec.size_m) / spec.step_m + 1e-9).floor() as usize + 1
    }
}

/// Sliding windows of `size_m` stepped by `step_m` from the raster origin.
/// Each patch is keyed by the coarse cell containing its center; with
/// `labels`, a patch takes the label of its key cell.
pub fn make_patches(grid: &GridGeometry, spec: &PatchSpec, labels: Option<&[Option<u8>]>) -> Result<PatchIndex> {
    let coarse = CoarseGrid::over(grid, spec.center_m)?;
    let size_px = (spec.size_m / grid.pixel_size).round() as usize;
    let step_px = (spec.step_m / grid.pixel_size).round() as usize;
    if size_px == 0 || step_px == 0 {
        return Err(Error::Config("patch size and step must cover at least one pixel".into()));
    }
    let nx = patches_per_axis(grid.extent_x(), spec);
    let ny = patches_per_axis(grid.extent_y(), spec);
    if nx == 0 || ny == 0 {
        return Err(Error::Data(format!(
            "raster extent {}×{} m is smaller than the {} m patch",
            grid.extent_x(),
            grid.extent_y(),
            spec.size_m
        )));
    }
    let mut patches = Vec::with_capacity(nx * ny);
    for pr in 0..ny {
        for pc in 0..nx {
            let (row0, col0) = (pr * step_px, pc * step_px);
            let center_row = (row0 * 2 + size_px) / 2 / coarse.block;
            let center_col = (col0 * 2 + size_px) / 2 / coarse.block;
            let id = coarse.id(center_row, center_col);
            let label = labels.and_then(|l| l.get(id as usize).copied().flatten());
            patches.push(Patch { id, row0, col0, size_px, label });
        }
    }
    Ok(PatchIndex { spec: spec.clone(), coarse, per_axis: (nx, ny), patches })
}

/// Mean, min, max, population std and median of every band over each patch
/// window, ignoring nodata.
pub fn patch_stats(bands: &Raster, index: &PatchIndex) -> FeatureTable {
    let mut columns = Vec::new();
    for b in &bands.band_names {
        for s in ["mean", "min", "max", "std", "median"] {
            columns.push(format!("{b}_{s}"));
        }
    }
    let rows: Vec<Vec<f64>> = index
        .patches
        .par_iter()
        .map(|p| {
            let mut row = Vec::with_capacity(5 * bands.bands.len());
            for b in 0..bands.bands.len() {
                let s = stats(&window_values(bands, b, p.row0, p.col0, p.size_px, p.size_px));
                row.extend([s.mean, s.min, s.max, s.std, s.median]);
            }
            row
        })
        .collect();
    let mut t = FeatureTable::new("patch_id", columns);
    for (p, row) in index.patches.iter().zip(&rows) {
        t.push_row(p.id, row);
    }
    t
}

/// Metadata stored next to an embedding table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub dim: usize,
    pub producer: String,
    pub fold: u32,
    /// Hex SHA-256 of the table file bytes.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub patch_id: u64,
    pub fold: u32,
    pub label: Option<u8>,
    pub values: Vec<f64>,
}

/// Per-patch feature vectors produced by an external model for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub producer: String,
    pub fold: u32,
    pub rows: Vec<EmbeddingRow>,
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    patch_id: u64,
    fold: u32,
    #[serde(default)]
    label: Option<u8>,
    embedding: Vec<f64>,
}

/// Sidecar path for a table file: `<file>.json` next to it.
pub fn sidecar_path(table: &Path) -> PathBuf {
    let mut s = table.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl") | Some("ndjson"))
}

impl EmbeddingTable {
    fn encode(&self, jsonl: bool) -> Vec<u8> {
        let mut buf = Vec::new();
        if jsonl {
            for r in &self.rows {
                let jr = JsonRow { patch_id: r.patch_id, fold: r.fold, label: r.label, embedding: r.values.clone() };
                serde_json::to_writer(&mut buf, &jr).expect("row serializes");
                buf.push(b'\n');
            }
            return buf;
        }
        let mut header = vec!["patch_id".to_string(), "fold".into(), "label".into()];
        header.extend((0..self.dim).map(|i| format!("e{i}")));
        writeln!(buf, "{}", header.join(",")).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.patch_id.to_string(), r.fold.to_string(), r.label.map_or(String::new(), |l| l.to_string())];
            rec.extend(r.values.iter().map(|v| fmt_value(*v)));
            writeln!(buf, "{}", rec.join(",")).expect("in-memory write");
        }
        buf
    }

    /// Writes the table (CSV, or JSON lines for `.jsonl`) and its sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(r) = self.rows.iter().find(|r| r.values.len() != self.dim) {
            return Err(Error::Data(format!("patch {} has {} values, expected {}", r.patch_id, r.values.len(), self.dim)));
        }
        let bytes = self.encode(is_jsonl(path));
        let side = EmbeddingSidecar { dim: self.dim, producer: self.producer.clone(), fold: self.fold, checksum: sha256_hex(&bytes) };
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        let sp = sidecar_path(path);
        std::fs::write(&sp, serde_json::to_vec_pretty(&side).expect("sidecar serializes")).map_err(|e| Error::io(&sp, e))
    }

    /// Reads a table and validates it against its sidecar.
    pub fn read(path: &Path) -> Result<EmbeddingTable> {
        let sp = sidecar_path(path);
        let side: EmbeddingSidecar = serde_json::from_slice(&std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?)
            .map_err(|e| Error::parse(&sp, e))?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if sha256_hex(&bytes) != side.checksum {
            return Err(Error::parse(path, "checksum does not match sidecar"));
        }
        let rows = if is_jsonl(path) { parse_jsonl(path, &bytes)? } else { parse_csv(path, &bytes, side.dim)? };
        for r in &rows {
            if r.values.len() != side.dim {
                return Err(Error::parse(path, format!("patch {} has {} values, sidecar declares {}", r.patch_id, r.values.len(), side.dim)));
            }
            if r.fold != side.fold {
                return Err(Error::parse(path, format!("patch {} belongs to fold {}, sidecar declares {}", r.patch_id, r.fold, side.fold)));
            }
        }
        Ok(EmbeddingTable { dim: side.dim, producer: side.producer, fold: side.fold, rows })
    }

    /// Reads every table in `dir` (one file per fold), keyed by fold.
    pub fn read_dir(dir: &Path) -> Result<BTreeMap<u32, EmbeddingTable>> {
        let mut out = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv") | Some("jsonl") | Some("ndjson")))
            .collect();
        entries.sort();
        for p in entries {
            let t = EmbeddingTable::read(&p)?;
            if out.insert(t.fold, t).is_some() {
                return Err(Error::Data(format!("more than one embedding table for a fold in {}", dir.display())));
            }
        }
        Ok(out)
    }
}

fn parse_csv(path: &Path, bytes: &[u8], dim: usize) -> Result<Vec<EmbeddingRow>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(bytes);
    let header: Vec<String> = rdr.headers().map_err(|e| Error::parse(path, e))?.iter().map(|s| s.trim().to_string()).collect();
    let has_label = header.get(2).is_some_and(|h| h == "label");
    let first = if has_label { 3 } else { 2 };
    let expected: Vec<String> = (0..dim).map(|i| format!("e{i}")).collect();
    if header.len() < 2 || header[0] != "patch_id" || header[1] != "fold" || header[first..] != expected[..] {
        return Err(Error::parse(path, "header must be `patch_id, fold, [label,] e0..e{dim-1}`"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let pe = |e: &dyn std::fmt::Display| Error::parse(path, e.to_string());
        let patch_id = rec[0].trim().parse().map_err(|e| pe(&e))?;
        let fold = rec[1].trim().parse().map_err(|e| pe(&e))?;
        let label = if has_label && !rec[2].trim().is_empty() { Some(rec[2].trim().parse().map_err(|e| pe(&e))?) } else { None };
        let values = rec.iter().skip(first).map(|s| parse_value(s).map_err(|e| pe(&e))).collect::<Result<_>>()?;
        rows.push(EmbeddingRow { patch_id, fold, label, values });
    }
    Ok(rows)
}

fn parse_jsonl(path: &Path, bytes: &[u8]) -> Result<Vec<EmbeddingRow>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let r: JsonRow = serde_json::from_str(l).map_err(|e| Error::parse(path, e))?;
            Ok(EmbeddingRow { patch_id: r.patch_id, fold: r.fold, label: r.label, values: r.embedding })
        })
        .collect()
}

/// Embedding columns followed by patch statistics, one row per patch in the
/// order of `stats`. The key sets must match exactly.
pub fn assemble_embeddings(emb: &EmbeddingTable, stats: &FeatureTable) -> Result<FeatureTable> {
    let by_id: BTreeMap<u64, &EmbeddingRow> = emb.rows.iter().map(|r| (r.patch_id, r)).collect();
    let stat_ids: BTreeSet<u64> = stats.row_ids.iter().copied().collect();
    let missing: Vec<u64> = stat_ids.iter().filter(|id| !by_id.contains_key(id)).copied().collect();
    let extra: Vec<u64> = by_id.keys().filter(|id| !stat_ids.contains(id)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Data(format!(
            "embedding keys do not match the patch index: missing patches {missing:?}, unknown patches {extra:?}"
        )));
    }
    let mut columns: Vec<String> = (0..emb.dim).map(|i| format!("e{i}")).collect();
    columns.extend(stats.columns.iter().cloned());
    let mut t = FeatureTable::new(stats.id_column.clone(), columns);
    for (i, id) in stats.row_ids.iter().enumerate() {
        let mut row = by_id[id].values.clone();
        row.extend_from_slice(stats.row(i));
        t.push_row(*id, &row);
    }
    Ok(t)
}
