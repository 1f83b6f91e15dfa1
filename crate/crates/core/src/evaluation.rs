//! Reference preparation, fold assignment, cell labeling, scoring, grid
//! aggregation of cell predictions and map output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use geo::{BooleanOps, Centroid, Coord, MultiPolygon, Polygon};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{CoarseGrid, PolygonLocator};
use crate::geom;
use crate::io::raster::{write_geotiff_u8, GridGeometry};
use crate::io::vector::{VectorFeature, VectorLayer};

/// Local Climate Zone type. Codes 1–10 are the built types, 11–17 the land
/// cover types A–G.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct LczClass(u8);

pub const LCZ_CODES: std::ops::RangeInclusive<u8> = 1..=17;

/// Standard LCZ color table, indexed by code − 1.
pub const PALETTE: [[u8; 3]; 17] = [
    [0x8c, 0x00, 0x00],
    [0xd1, 0x00, 0x00],
    [0xff, 0x00, 0x00],
    [0xbf, 0x4d, 0x00],
    [0xff, 0x66, 0x00],
    [0xff, 0x99, 0x55],
    [0xfa, 0xee, 0x05],
    [0xbc, 0xbc, 0xbc],
    [0xff, 0xcc, 0xaa],
    [0x55, 0x55, 0x55],
    [0x00, 0x6a, 0x00],
    [0x00, 0xaa, 0x00],
    [0x64, 0x85, 0x25],
    [0xb9, 0xdb, 0x79],
    [0x00, 0x00, 0x00],
    [0xfb, 0xf7, 0xae],
    [0x6a, 0x6a, 0xff],
];

const NAMES: [&str; 17] = [
    "compact high-rise",
    "compact mid-rise",
    "compact low-rise",
    "open high-rise",
    "open mid-rise",
    "open low-rise",
    "lightweight low-rise",
    "large low-rise",
    "sparsely built",
    "heavy industry",
    "dense trees",
    "scattered trees",
    "bush, scrub",
    "low plants",
    "bare rock or paved",
    "bare soil or sand",
    "water",
];

impl LczClass {
    pub fn new(code: u8) -> Result<LczClass> {
        if LCZ_CODES.contains(&code) {
            Ok(LczClass(code))
        } else {
            Err(Error::Data(format!("LCZ code {code} outside 1..=17")))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn is_urban(self) -> bool {
        self.0 <= 10
    }

    pub fn color(self) -> [u8; 3] {
        PALETTE[self.0 as usize - 1]
    }

    pub fn description(self) -> &'static str {
        NAMES[self.0 as usize - 1]
    }

    pub fn all() -> impl Iterator<Item = LczClass> {
        LCZ_CODES.map(LczClass)
    }
}

impl fmt::Display for LczClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_urban() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{}", (b'A' + self.0 - 11) as char)
        }
    }
}

impl FromStr for LczClass {
    type Err = Error;
    /// Accepts `6`, `LCZ6`, `LCZ 6`, `A`, `LCZ-A` and the codes `11`–`17`.
    fn from_str(s: &str) -> Result<LczClass> {
        let t = s.trim().to_ascii_uppercase();
        let t = t.trim_start_matches("LCZ").trim_start_matches([' ', '-', '_']);
        if let Ok(n) = t.parse::<u8>() {
            return LczClass::new(n);
        }
        match t.as_bytes() {
            [c @ b'A'..=b'G'] => Ok(LczClass(c - b'A' + 11)),
            _ => Err(Error::Data(format!("unrecognized LCZ label `{s}`"))),
        }
    }
}

impl From<LczClass> for String {
    fn from(c: LczClass) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for LczClass {
    type Error = Error;
    fn try_from(s: String) -> Result<LczClass> {
        s.parse()
    }
}

pub fn is_urban(code: u8) -> bool {
    (1..=10).contains(&code)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolygon {
    pub id: u64,
    pub polygon: MultiPolygon,
    pub lcz: LczClass,
    /// Number of tessellation cells labeled by this polygon.
    pub weight_etc: f64,
    /// Area in hectares.
    pub weight_area: f64,
}

impl ReferencePolygon {
    pub fn new(id: u64, polygon: MultiPolygon, lcz: LczClass) -> Self {
        let weight_area = geom::area(&polygon) / 10_000.0;
        ReferencePolygon { id, polygon, lcz, weight_etc: 0.0, weight_area }
    }
}

/// Reads reference polygons from a layer with an `lcz` property.
pub fn reference_from_layer(layer: &VectorLayer) -> Result<Vec<ReferencePolygon>> {
    let mut out = Vec::new();
    for f in &layer.features {
        let lcz = match f.properties.get("lcz") {
            Some(serde_json::Value::String(s)) => s.parse()?,
            Some(serde_json::Value::Number(n)) => LczClass::new(n.as_u64().unwrap_or(0) as u8)?,
            _ => return Err(Error::Data(format!("reference feature {} has no `lcz` property", f.id))),
        };
        let mp = match &f.geometry {
            geo::Geometry::Polygon(p) => MultiPolygon(vec![p.clone()]),
            geo::Geometry::MultiPolygon(m) => m.clone(),
            _ => return Err(Error::Data(format!("reference feature {} is not a polygon", f.id))),
        };
        out.push(ReferencePolygon::new(f.id, mp, lcz));
    }
    Ok(out)
}

pub fn reference_to_layer(refs: &[ReferencePolygon], crs: Option<String>) -> VectorLayer {
    VectorLayer {
        crs,
        features: refs
            .iter()
            .map(|r| VectorFeature {
                id: r.id,
                geometry: geo::Geometry::MultiPolygon(r.polygon.clone()),
                properties: [("lcz".to_string(), serde_json::Value::String(r.lcz.to_string()))].into_iter().collect(),
            })
            .collect(),
    }
}

/// Part of `mp` on the side `(p − origin)·u ≤ t`.
fn halfplane_part(mp: &MultiPolygon, origin: Coord, u: Coord, t: f64, reach: f64) -> MultiPolygon {
    let v = Coord { x: -u.y, y: u.x };
    let at = |a: f64, b: f64| Coord { x: origin.x + u.x * a + v.x * b, y: origin.y + u.y * a + v.y * b };
    let hp = Polygon::new(
        geo::LineString(vec![at(t, -reach), at(t, reach), at(-reach, reach), at(-reach, -reach), at(t, -reach)]),
        vec![],
    );
    mp.intersection(&MultiPolygon(vec![hp]))
}

/// Splits a polygon into two equal-area parts with a cut perpendicular to `u`.
fn bisect(mp: &MultiPolygon, u: Coord) -> Option<(MultiPolygon, MultiPolygon)> {
    let total = geom::area(mp);
    let c = mp.centroid()?.0;
    let b = geom::bbox(mp)?;
    let reach = 4.0 * geom::dist(b.min(), b.max()) + 1.0;
    let (mut lo, mut hi) = (-reach / 4.0, reach / 4.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if geom::area(&halfplane_part(mp, c, u, mid, reach)) < 0.5 * total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let a = halfplane_part(mp, c, u, t, reach);
    let rest = mp.difference(&a);
    let ok = |p: &MultiPolygon| geom::area(p) > 1e-6 * total;
    (ok(&a) && ok(&rest)).then_some((a, rest))
}

/// Splits every class represented by exactly one polygon into two
/// equal-area parts, cutting perpendicular to the long axis of its minimum
/// rotated rectangle (short axis as a fallback). New parts get fresh ids.
pub fn split_singletons(refs: &[ReferencePolygon]) -> Result<Vec<ReferencePolygon>> {
    let mut counts: BTreeMap<LczClass, usize> = BTreeMap::new();
    for r in refs {
        *counts.entry(r.lcz).or_default() += 1;
    }
    let mut next_id = refs.iter().map(|r| r.id).max().map_or(0, |m| m + 1);
    let mut out = Vec::with_capacity(refs.len() + 4);
    for r in refs {
        if counts[&r.lcz] != 1 {
            out.push(r.clone());
            continue;
        }
        let rr = geom::min_rotated_rect(&r.polygon)
            .ok_or_else(|| Error::Geometry(format!("reference polygon {} is degenerate", r.id)))?;
        let az = rr.azimuth.to_radians();
        let long = Coord { x: az.sin(), y: az.cos() };
        let short = Coord { x: -long.y, y: long.x };
        let (a, b) = bisect(&r.polygon, long)
            .or_else(|| bisect(&r.polygon, short))
            .ok_or_else(|| Error::Geometry(format!("cannot split reference polygon {}", r.id)))?;
        out.push(ReferencePolygon::new(r.id, a, r.lcz));
        out.push(ReferencePolygon::new(next_id, b, r.lcz));
        next_id += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldWeight {
    EtcCount,
    Area,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub kind: FoldWeight,
    pub k: usize,
    /// Reference polygon id → fold.
    pub folds: BTreeMap<u64, usize>,
}

/// Greedy longest-processing-time assignment per class: polygons in
/// descending weight (equal weights in seed-shuffled order) go to the
/// currently lightest fold, lowest fold index on ties.
pub fn stratified_folds(refs: &[ReferencePolygon], kind: FoldWeight, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    let mut by_class: BTreeMap<LczClass, Vec<&ReferencePolygon>> = BTreeMap::new();
    for r in refs {
        by_class.entry(r.lcz).or_default().push(r);
    }
    let mut folds = BTreeMap::new();
    for (class, mut members) in by_class {
        members.sort_by_key(|r| r.id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class.code() as u64) << 32));
        members.shuffle(&mut rng);
        let weight = |r: &ReferencePolygon| match kind {
            FoldWeight::EtcCount => r.weight_etc,
            FoldWeight::Area => r.weight_area,
        };
        members.sort_by(|a, b| weight(b).total_cmp(&weight(a)));
        let mut load = vec![0.0f64; k];
        for r in members {
            let f = (0..k).min_by(|&a, &b| load[a].total_cmp(&load[b]).then(a.cmp(&b))).expect("k > 0");
            load[f] += weight(r);
            folds.insert(r.id, f);
        }
    }
    Ok(FoldAssignment { kind, k, folds })
}

/// Index of the reference polygon containing each point (lowest id on overlap).
pub fn locate_points(points: &[Coord], refs: &[ReferencePolygon]) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..refs.len()).collect();
    order.sort_by_key(|&i| refs[i].id);
    let polys: Vec<MultiPolygon> = order.iter().map(|&i| refs[i].polygon.clone()).collect();
    let loc = PolygonLocator::new(&polys);
    points.iter().map(|p| loc.locate(*p).map(|j| order[j])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellLabel {
    pub class: LczClass,
    pub fold: usize,
    pub polygon: u64,
}

/// Labels each point (a cell's building centroid, or a grid-cell center)
/// with the class and fold of the containing reference polygon.
pub fn label_points(points: &[Coord], refs: &[ReferencePolygon], folds: &FoldAssignment) -> Vec<Option<CellLabel>> {
    locate_points(points, refs)
        .into_iter()
        .map(|hit| {
            hit.and_then(|i| {
                let r = &refs[i];
                folds.folds.get(&r.id).map(|&fold| CellLabel { class: r.lcz, fold, polygon: r.id })
            })
        })
        .collect()
}

/// Sets each polygon's cell-count weight from the points it contains.
pub fn count_cells(refs: &mut [ReferencePolygon], points: &[Coord]) {
    let hits = locate_points(points, refs);
    for r in refs.iter_mut() {
        r.weight_etc = 0.0;
    }
    for i in hits.into_iter().flatten() {
        refs[i].weight_etc += 1.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<LczClass>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<LczClass>) -> Self {
        let n = classes.len();
        ConfusionMatrix { classes, counts: vec![vec![0; n]; n] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Element-wise sum over a shared class list (the union of both).
    pub fn add(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let mut classes = self.classes.clone();
        classes.extend(other.classes.iter().copied());
        classes.sort();
        classes.dedup();
        let mut out = ConfusionMatrix::new(classes);
        for m in [self, other] {
            for (i, a) in m.classes.iter().enumerate() {
                for (j, b) in m.classes.iter().enumerate() {
                    let (ii, jj) = (out.index(*a).unwrap(), out.index(*b).unwrap());
                    out.counts[ii][jj] += m.counts[i][j];
                }
            }
        }
        out
    }

    pub fn index(&self, c: LczClass) -> Option<usize> {
        self.classes.binary_search(&c).ok()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.classes {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (i, c) in self.classes.iter().enumerate() {
            s.push_str(&c.to_string());
            for v in &self.counts[i] {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub oa: f64,
    pub f1: f64,
    /// Undefined when no urban sample is present.
    pub f1_urban: Option<f64>,
    /// Undefined when no natural sample is present.
    pub f1_natural: Option<f64>,
    pub per_class: BTreeMap<LczClass, ClassScore>,
    pub confusion: ConfusionMatrix,
}

impl Scores {
    /// Combined score used to choose between model variants.
    pub fn selection_score(&self) -> f64 {
        self.f1 + self.f1_urban.unwrap_or(0.0)
    }
}

fn support_weighted(per_class: &BTreeMap<LczClass, ClassScore>, keep: impl Fn(LczClass) -> bool) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (c, s) in per_class {
        if keep(*c) {
            num += s.support as f64 * s.f1;
            den += s.support as f64;
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn scores(y_true: &[LczClass], y_pred: &[LczClass]) -> Result<Scores> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Data(format!("cannot score {} labels against {} predictions", y_true.len(), y_pred.len())));
    }
    let mut classes: Vec<LczClass> = y_true.iter().chain(y_pred).copied().collect();
    classes.sort();
    classes.dedup();
    let mut cm = ConfusionMatrix::new(classes);
    for (t, p) in y_true.iter().zip(y_pred) {
        let (i, j) = (cm.index(*t).unwrap(), cm.index(*p).unwrap());
        cm.counts[i][j] += 1;
    }
    let n = cm.classes.len();
    let mut per_class = BTreeMap::new();
    for (i, c) in cm.classes.iter().enumerate() {
        let tp = cm.counts[i][i] as f64;
        let support: u64 = cm.counts[i].iter().sum();
        let predicted: u64 = (0..n).map(|r| cm.counts[r][i]).sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        per_class.insert(*c, ClassScore { precision, recall, f1, support });
    }
    Ok(Scores {
        oa: cm.trace() as f64 / cm.total() as f64,
        f1: support_weighted(&per_class, |_| true).unwrap_or(0.0),
        f1_urban: support_weighted(&per_class, LczClass::is_urban),
        f1_natural: support_weighted(&per_class, |c| !c.is_urban()),
        per_class,
        confusion: cm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Best minus worst fold.
    pub spread: f64,
}

fn summarize(values: impl Iterator<Item = f64>) -> Option<Summary> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(Summary { mean, min, max, spread: max - min })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub folds: Vec<Scores>,
    pub oa: Summary,
    pub f1: Summary,
    pub f1_urban: Option<Summary>,
    pub f1_natural: Option<Summary>,
    /// Mean F1 per class over the folds where the class has support.
    pub per_class_f1: BTreeMap<LczClass, f64>,
    pub confusion: ConfusionMatrix,
}

impl EvaluationReport {
    pub fn selection_score(&self) -> f64 {
        self.f1.mean + self.f1_urban.map_or(0.0, |s| s.mean)
    }
}

/// Fold means, best/worst spread and the cumulative confusion matrix.
pub fn aggregate_report(folds: Vec<Scores>) -> Result<EvaluationReport> {
    if folds.is_empty() {
        return Err(Error::Data("no fold scores to aggregate".into()));
    }
    let mut confusion = folds[0].confusion.clone();
    for s in &folds[1..] {
        confusion = confusion.add(&s.confusion);
    }
    let mut per: BTreeMap<LczClass, Vec<f64>> = BTreeMap::new();
    for s in &folds {
        for (c, cs) in &s.per_class {
            if cs.support > 0 {
                per.entry(*c).or_default().push(cs.f1);
            }
        }
    }
    Ok(EvaluationReport {
        oa: summarize(folds.iter().map(|s| s.oa)).expect("non-empty"),
        f1: summarize(folds.iter().map(|s| s.f1)).expect("non-empty"),
        f1_urban: summarize(folds.iter().filter_map(|s| s.f1_urban)),
        f1_natural: summarize(folds.iter().filter_map(|s| s.f1_natural)),
        per_class_f1: per.into_iter().map(|(c, v)| (c, v.iter().sum::<f64>() / v.len() as f64)).collect(),
        confusion,
        folds,
    })
}

/// Area of a polygon ring clipped to an axis-aligned rectangle.
fn clipped_ring_area(ring: &[Coord], r: &geo::Rect) -> f64 {
    let mut pts: Vec<Coord> = ring.to_vec();
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    let edges: [(fn(Coord, f64) -> f64, f64); 4] = [
        (|p, v| p.x - v, r.min().x),
        (|p, v| v - p.x, r.max().x),
        (|p, v| p.y - v, r.min().y),
        (|p, v| v - p.y, r.max().y),
    ];
    for (side, v) in edges {
        if pts.is_empty() {
            return 0.0;
        }
        let mut out = Vec::with_capacity(pts.len() + 4);
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            let (da, db) = (side(a, v), side(b, v));
            if da >= 0.0 {
                out.push(a);
            }
            if (da >= 0.0) != (db >= 0.0) {
                let t = da / (da - db);
                out.push(Coord { x: a.x + t * (b.x - a.x), y: a.y + t * (b.y - a.y) });
            }
        }
        pts = out;
    }
    geom::signed_ring_area(&pts).abs()
}

/// Area of a multipolygon inside an axis-aligned rectangle.
pub fn clipped_area(mp: &MultiPolygon, r: &geo::Rect) -> f64 {
    mp.iter()
        .map(|p| clipped_ring_area(&p.exterior().0, r) - p.interiors().iter().map(|h| clipped_ring_area(&h.0, r)).sum::<f64>())
        .sum()
}

/// Each coarse cell takes the class with the largest intersected area of
/// labeled cells; empty cells stay unlabeled; ties go to the lower class.
pub fn cells_to_grid(cells: &[MultiPolygon], labels: &[Option<LczClass>], coarse: &CoarseGrid) -> Vec<Option<LczClass>> {
    let mut acc: Vec<BTreeMap<LczClass, f64>> = vec![BTreeMap::new(); coarse.len()];
    for (poly, label) in cells.iter().zip(labels) {
        let (Some(class), Some(b)) = (label, geom::bbox(poly)) else { continue };
        let s = coarse.cell_size;
        let c0 = ((b.min().x - coarse.origin_x) / s).floor().max(0.0) as usize;
        let c1 = (((b.max().x - coarse.origin_x) / s).ceil().max(0.0) as usize).min(coarse.nx);
        let r0 = ((coarse.origin_y - b.max().y) / s).floor().max(0.0) as usize;
        let r1 = (((coarse.origin_y - b.min().y) / s).ceil().max(0.0) as usize).min(coarse.ny);
        for r in r0..r1 {
            for c in c0..c1 {
                let id = coarse.id(r, c);
                let a = clipped_area(poly, &coarse.square(id));
                if a > 0.0 {
                    *acc[id as usize].entry(*class).or_default() += a;
                }
            }
        }
    }
    acc.into_iter()
        .map(|m| {
            let mut best: Option<(LczClass, f64)> = None;
            for (c, a) in m {
                if best.is_none_or(|(_, b)| a > b) {
                    best = Some((c, a));
                }
            }
            best.map(|b| b.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub code: u8,
    pub label: String,
    pub description: String,
    pub color: String,
}

/// Legend listing only the classes present.
pub fn legend(labels: &[Option<LczClass>]) -> Vec<LegendEntry> {
    let mut present: Vec<LczClass> = labels.iter().flatten().copied().collect();
    present.sort();
    present.dedup();
    present
        .into_iter()
        .map(|c| {
            let [r, g, b] = c.color();
            LegendEntry {
                code: c.code(),
                label: format!("LCZ {c}"),
                description: c.description().to_string(),
                color: format!("#{r:02x}{g:02x}{b:02x}"),
            }
        })
        .collect()
}

fn write_png(path: &Path, width: usize, height: usize, labels: &[Option<LczClass>]) -> Result<()> {
    let mut img = image::RgbaImage::new(width as u32, height as u32);
    for (i, l) in labels.iter().enumerate() {
        let px = match l {
            Some(c) => {
                let [r, g, b] = c.color();
                image::Rgba([r, g, b, 255])
            }
            None => image::Rgba([255, 255, 255, 0]),
        };
        img.put_pixel((i % width) as u32, (i / width) as u32, px);
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_legend(path: &Path, labels: &[Option<LczClass>]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(&legend(labels)).expect("legend serializes")).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.tif` (class codes, 0 = nodata), `<stem>.png` and
/// `<stem>_legend.json` for a grid of labels.
pub fn emit_grid_map(
    dir: &Path,
    stem: &str,
    grid: &GridGeometry,
    labels: &[Option<LczClass>],
    provenance: Option<&serde_json::Value>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let codes: Vec<u8> = labels.iter().map(|l| l.map_or(0, LczClass::code)).collect();
    write_geotiff_u8(&dir.join(format!("{stem}.tif")), grid, &codes, "lcz", provenance)?;
    write_png(&dir.join(format!("{stem}.png")), grid.width, grid.height, labels)?;
    write_legend(&dir.join(format!("{stem}_legend.json")), labels)
}

/// Writes `<stem>.geojson` with one feature per cell, a PNG rendering on
/// `render_grid` and `<stem>_legend.json`.
pub fn emit_cell_map(
    dir: &Path,
    stem: &str,
    cells: &[MultiPolygon],
    labels: &[Option<LczClass>],
    crs: Option<String>,
    render_grid: &GridGeometry,
    provenance: Option<&serde_json::Value>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layer = VectorLayer {
        crs,
        features: cells
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (p, l))| VectorFeature {
                id: i as u64,
                geometry: geo::Geometry::MultiPolygon(p.clone()),
                properties: [(
                    "lcz".to_string(),
                    l.map_or(serde_json::Value::Null, |c| serde_json::Value::String(c.to_string())),
                )]
                .into_iter()
                .collect(),
            })
            .collect(),
    };
    let extra = provenance.map(|p| [("provenance".to_string(), p.clone())].into_iter().collect());
    crate::io::vector::write_geojson(&dir.join(format!("{stem}.geojson")), &layer, extra.as_ref())?;
    let owners = crate::fusion::pixel_owners(cells, render_grid);
    let pixels: Vec<Option<LczClass>> = owners.iter().map(|o| o.and_then(|i| labels[i])).collect();
    write_png(&dir.join(format!("{stem}.png")), render_grid.width, render_grid.height, &pixels)?;
    write_legend(&dir.join(format!("{stem}_legend.json")), labels)
}
