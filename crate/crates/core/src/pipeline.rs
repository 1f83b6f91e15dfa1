//! Site configuration and the staged, cached pipeline: ingest → tessellate →
//! metrics → context → folds → S1 → rasterize → S3 → S4 → evaluate → map.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use geo::{Centroid, Coord, LineString, MultiPolygon, Polygon};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::context::{build_contiguity, contextualize_primary, ContextConfig, ContiguityGraph};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_report, cells_to_grid, count_cells, emit_cell_map, emit_grid_map, label_points, reference_from_layer, reference_to_layer,
    scores, split_singletons, stratified_folds, CellLabel, EvaluationReport, FoldAssignment, FoldWeight, LczClass,
};
use crate::forest::{ranked_importance, top_k, tune, Dataset, ForestConfig, ForestModel, MaxFeatures, TuningGrid, TuningReport, Weighting};
use crate::fusion::{assemble_embeddings, make_patches, patch_stats, rasterize_attributes, zonal_stats, CoarseGrid, EmbeddingTable, PatchSpec};
use crate::ingest::{
    consistency_check, lines_of, load_layer, polygons_of, preprocess_buildings, preprocess_streets, Building, IngestConfig, LayerKind,
    StreetNetwork,
};
use crate::io::raster::{read_geotiff, write_geotiff_f32, GridGeometry, Raster};
use crate::io::table::FeatureTable;
use crate::io::vector::{read_vector, write_geojson, VectorFeature, VectorLayer};
use crate::morphometrics::{primary_matrix, MorphometricsConfig};
use crate::tessellation::{build_enclosures, link_elements, tessellate, EtcCell, TessellationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub buildings: PathBuf,
    pub streets: PathBuf,
    #[serde(default)]
    pub waterlines: Option<PathBuf>,
    #[serde(default)]
    pub waterbodies: Option<PathBuf>,
    /// Polygon layer bounding the site; defaults to the street extent.
    #[serde(default)]
    pub study_area: Option<PathBuf>,
    pub reference: PathBuf,
    #[serde(default)]
    pub imagery: Option<PathBuf>,
    /// Directory of per-fold embedding tables.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldsConfig {
    pub k: usize,
    pub split_singletons: bool,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        FoldsConfig { k: 5, split_singletons: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Depth grid; 0 means unbounded.
    pub max_depth_grid: Vec<usize>,
    pub max_features_grid: Vec<MaxFeatures>,
    /// Largest accepted train − test accuracy gap.
    pub max_gap: f64,
    pub weightings: Vec<Weighting>,
    /// Number of most important attributes kept for fusion.
    pub top_k: usize,
}

impl Default for ForestSettings {
    fn default() -> Self {
        let g = TuningGrid::default();
        ForestSettings {
            n_trees: 100,
            bootstrap: true,
            max_depth_grid: g.depths.iter().map(|d| d.unwrap_or(0)).collect(),
            max_features_grid: g.features,
            max_gap: g.max_gap,
            weightings: vec![Weighting::Uniform, Weighting::InverseFrequency],
            top_k: 20,
        }
    }
}

impl ForestSettings {
    pub fn grid(&self) -> TuningGrid {
        TuningGrid {
            depths: self.max_depth_grid.iter().map(|&d| (d > 0).then_some(d)).collect(),
            features: self.max_features_grid.clone(),
            max_gap: self.max_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    /// Coarse grid cell size (m).
    pub grid_m: f64,
    pub patch: PatchSpec,
    /// Pixel size of the rendered cell map when no imagery is configured.
    pub render_pixel_m: f64,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings { grid_m: 100.0, patch: PatchSpec::default(), render_pixel_m: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeToggles {
    pub s1: bool,
    pub s3: bool,
    pub s4: bool,
}

impl Default for SchemeToggles {
    fn default() -> Self {
        SchemeToggles { s1: true, s3: true, s4: true }
    }
}

/// Everything a site run needs. Relative paths are resolved against the
/// directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub tessellation: TessellationConfig,
    #[serde(default)]
    pub morphometrics: MorphometricsConfig,
    #[serde(default)]
    pub context: ContextConfig,
    #[serde(default)]
    pub folds: FoldsConfig,
    #[serde(default)]
    pub forest: ForestSettings,
    #[serde(default)]
    pub fusion: FusionSettings,
    #[serde(default)]
    pub schemes: SchemeToggles,
    /// Hash of the configuration as written, before path resolution, so the
    /// provenance does not depend on where the site directory lives.
    #[serde(skip)]
    pub source_hash: Option<String>,
}

impl SiteConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<SiteConfig> {
        let mut cfg: SiteConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.source_hash = Some(cfg.hash());
        let p = &mut cfg.paths;
        for path in [&mut p.buildings, &mut p.streets, &mut p.reference, &mut p.output] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        for path in [&mut p.waterlines, &mut p.waterbodies, &mut p.study_area, &mut p.imagery, &mut p.embeddings].into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SiteConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        SiteConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        let mut required = vec![&p.buildings, &p.streets, &p.reference];
        required.extend([&p.waterlines, &p.waterbodies, &p.study_area, &p.imagery].into_iter().flatten());
        for path in required {
            if !path.exists() {
                return Err(Error::Config(format!("input {} does not exist", path.display())));
            }
        }
        if self.folds.k < 2 {
            return Err(Error::Config("folds.k must be at least 2".into()));
        }
        if self.forest.max_depth_grid.is_empty() || self.forest.max_features_grid.is_empty() || self.forest.weightings.is_empty() {
            return Err(Error::Config("forest grids and weightings must not be empty".into()));
        }
        if self.forest.n_trees == 0 || self.forest.top_k == 0 {
            return Err(Error::Config("forest.n_trees and forest.top_k must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Tessellate,
    Metrics,
    Context,
    Folds,
    TrainS1,
    Rasterize,
    TrainS3,
    TrainS4,
    Evaluate,
    Map,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Ingest,
        Stage::Tessellate,
        Stage::Metrics,
        Stage::Context,
        Stage::Folds,
        Stage::TrainS1,
        Stage::Rasterize,
        Stage::TrainS3,
        Stage::TrainS4,
        Stage::Evaluate,
        Stage::Map,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Tessellate => "tessellate",
            Stage::Metrics => "metrics",
            Stage::Context => "context",
            Stage::Folds => "folds",
            Stage::TrainS1 => "train-s1",
            Stage::Rasterize => "rasterize",
            Stage::TrainS3 => "train-s3",
            Stage::TrainS4 => "train-s4",
            Stage::Evaluate => "evaluate",
            Stage::Map => "map",
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Stage::TrainS1 => "s1",
            Stage::TrainS3 => "s3",
            Stage::TrainS4 => "s4",
            Stage::Map => "maps",
            other => other.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Cached,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    key: String,
    outputs: Vec<String>,
}

/// A configured site with its output directory.
pub struct Site {
    pub cfg: SiteConfig,
    pub config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct IngestBundle {
    crs: Option<String>,
    buildings: Vec<Building>,
    network: StreetNetwork,
    waterlines: Vec<LineString>,
    waterbodies: Vec<Polygon>,
    study_area: Polygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub weighting: Weighting,
    pub report: EvaluationReport,
    pub tuning: Vec<Option<TuningReport>>,
    /// Test fold of the best fold model by combined F1 + urban F1.
    pub best_fold: usize,
    /// Out-of-fold predictions: (row id, true class, predicted class, fold).
    pub predictions: Vec<(u64, LczClass, LczClass, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: String,
    pub provenance: Value,
    pub chosen: Weighting,
    pub outcomes: Vec<CvOutcome>,
    pub n_features: usize,
    pub n_samples: usize,
}

impl SchemeReport {
    pub fn chosen_outcome(&self) -> &CvOutcome {
        self.outcomes.iter().find(|o| o.weighting == self.chosen).expect("chosen weighting present")
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v).expect("serializable")).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e))
}

fn stage_err(stage: Stage) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage { stage: stage.name(), source: Box::new(other) },
    }
}

/// Building centroid of each cell.
fn cell_points(cells: &[EtcCell], buildings: &[Building]) -> Vec<Coord> {
    let by_id: BTreeMap<usize, &Building> = buildings.iter().map(|b| (b.id, b)).collect();
    cells
        .iter()
        .map(|c| by_id[&c.building_id].footprint.centroid().map(|p| p.0).unwrap_or(Coord { x: f64::NAN, y: f64::NAN }))
        .collect()
}

fn labels_table(labels: &[Option<CellLabel>], ids: &[u64], id_column: &str) -> FeatureTable {
    let mut t = FeatureTable::new(id_column, vec!["lcz".into(), "fold".into(), "polygon".into()]);
    for (id, l) in ids.iter().zip(labels) {
        let row = match l {
            Some(l) => [l.class.code() as f64, l.fold as f64, l.polygon as f64],
            None => [f64::NAN; 3],
        };
        t.push_row(*id, &row);
    }
    t
}

fn labels_from_table(t: &FeatureTable) -> Result<Vec<Option<CellLabel>>> {
    (0..t.n_rows())
        .map(|r| {
            let v = t.row(r);
            if v[0].is_nan() {
                Ok(None)
            } else {
                Ok(Some(CellLabel { class: LczClass::new(v[0] as u8)?, fold: v[1] as usize, polygon: v[2] as u64 }))
            }
        })
        .collect()
}

/// Cross-validates one weighting: per test fold, tune on the other folds.
/// `features(f)` returns the feature matrix used by the model of fold `f`.
pub fn cross_validate(
    ids: &[u64],
    labels: &[Option<CellLabel>],
    k: usize,
    features: &dyn Fn(usize) -> Result<Dataset>,
    settings: &ForestSettings,
    weighting: Weighting,
    seed: u64,
) -> Result<(CvOutcome, Vec<Option<ForestModel>>)> {
    let grid = settings.grid();
    let base = ForestConfig {
        n_trees: settings.n_trees,
        bootstrap: settings.bootstrap,
        weighting,
        seed,
        ..Default::default()
    };
    let mut fold_scores = Vec::new();
    let mut tuning = Vec::new();
    let mut models = Vec::new();
    let mut predictions = Vec::new();
    let mut fold_of_score = Vec::new();
    for f in 0..k {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some_and(|l| l.fold != f)).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some_and(|l| l.fold == f)).collect();
        if test.is_empty() || train.is_empty() {
            log::warn!("fold {f} has no test or training samples; skipped");
            tuning.push(None);
            models.push(None);
            continue;
        }
        let mut ds = features(f)?;
        ds.y = labels.iter().map(|l| l.map_or(0, |l| l.class.code())).collect();
        let (model, report) = tune(&ds, &train, &test, &ForestConfig { seed: seed.wrapping_add(f as u64), ..base.clone() }, &grid)?;
        let test_ds = ds.subset(&test);
        let pred = model.predict(&test_ds);
        let y_true: Vec<LczClass> = test.iter().map(|&i| labels[i].expect("labeled").class).collect();
        let y_pred: Vec<LczClass> = pred.iter().map(|&c| LczClass::new(c)).collect::<Result<_>>()?;
        for ((&i, t), p) in test.iter().zip(&y_true).zip(&y_pred) {
            predictions.push((ids[i], *t, *p, f));
        }
        fold_scores.push(scores(&y_true, &y_pred)?);
        fold_of_score.push(f);
        tuning.push(Some(report));
        models.push(Some(model));
    }
    if fold_scores.is_empty() {
        return Err(Error::Data("no fold had both training and test samples".into()));
    }
    let best = (0..fold_scores.len())
        .max_by(|&a, &b| fold_scores[a].selection_score().total_cmp(&fold_scores[b].selection_score()).then(b.cmp(&a)))
        .expect("non-empty");
    let best_fold = fold_of_score[best];
    predictions.sort_by_key(|p| p.0);
    let report = aggregate_report(fold_scores)?;
    Ok((CvOutcome { weighting, report, tuning, best_fold, predictions }, models))
}

/// Runs every configured weighting and keeps the one with the highest mean
/// F1 + urban F1; returns the report and the chosen best fold model.
fn run_scheme(
    site: &Site,
    scheme: &str,
    ids: &[u64],
    labels: &[Option<CellLabel>],
    features: &dyn Fn(usize) -> Result<Dataset>,
    n_features: usize,
) -> Result<(SchemeReport, ForestModel)> {
    let cfg = &site.cfg;
    let mut outcomes = Vec::new();
    let mut best_models = Vec::new();
    for &w in &cfg.forest.weightings {
        let (o, mut models) = cross_validate(ids, labels, cfg.folds.k, features, &cfg.forest, w, cfg.seed)?;
        best_models.push(models[o.best_fold].take().expect("best fold trained"));
        outcomes.push(o);
    }
    let chosen_idx = (0..outcomes.len())
        .max_by(|&a, &b| outcomes[a].report.selection_score().total_cmp(&outcomes[b].report.selection_score()).then(b.cmp(&a)))
        .expect("at least one weighting");
    let chosen = outcomes[chosen_idx].weighting;
    let model = best_models.swap_remove(chosen_idx);
    let report = SchemeReport {
        scheme: scheme.into(),
        provenance: site.provenance(),
        chosen,
        outcomes,
        n_features,
        n_samples: labels.iter().filter(|l| l.is_some()).count(),
    };
    Ok((report, model))
}

fn write_scheme(dir: &Path, report: &SchemeReport, model: &ForestModel) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    let cm = &report.chosen_outcome().report.confusion;
    std::fs::write(dir.join("confusion.csv"), cm.to_csv()).map_err(|e| Error::io(dir, e))?;
    std::fs::write(dir.join("model_best.json"), model.to_json()).map_err(|e| Error::io(dir, e))
}

fn dataset_from(table: &FeatureTable) -> Dataset {
    Dataset { n: table.n_rows(), d: table.n_cols(), x: table.values.clone(), y: vec![0; table.n_rows()] }
}

impl Site {
    pub fn new(cfg: SiteConfig) -> Site {
        let config_hash = cfg.source_hash.clone().unwrap_or_else(|| cfg.hash());
        Site { cfg, config_hash }
    }

    pub fn load(path: &Path) -> Result<Site> {
        Ok(Site::new(SiteConfig::load(path)?))
    }

    pub fn out(&self) -> &Path {
        &self.cfg.paths.output
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out().join(stage.dir())
    }

    pub fn provenance(&self) -> Value {
        json!({"config_hash": self.config_hash, "seed": self.cfg.seed})
    }

    fn comment(&self) -> String {
        format!("config_hash={}\nseed={}", self.config_hash, self.cfg.seed)
    }

    fn extra(&self) -> serde_json::Map<String, Value> {
        [("provenance".to_string(), self.provenance())].into_iter().collect()
    }

    /// Files a stage reads, for its cache key.
    fn inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let p = &self.cfg.paths;
        let d = |s: Stage, f: &str| self.stage_dir(s).join(f);
        match stage {
            Stage::Ingest => {
                let mut v = vec![p.buildings.clone(), p.streets.clone()];
                v.extend([&p.waterlines, &p.waterbodies, &p.study_area].into_iter().flatten().cloned());
                v
            }
            Stage::Tessellate => vec![d(Stage::Ingest, "data.json")],
            Stage::Metrics => vec![d(Stage::Ingest, "data.json"), d(Stage::Tessellate, "cells.json")],
            Stage::Context => vec![d(Stage::Metrics, "primary.csv"), d(Stage::Metrics, "contiguity.json")],
            Stage::Folds => vec![p.reference.clone(), d(Stage::Ingest, "data.json"), d(Stage::Tessellate, "cells.json")],
            Stage::TrainS1 => vec![d(Stage::Context, "context.csv"), d(Stage::Folds, "cell_labels.csv")],
            Stage::Rasterize => {
                let mut v = vec![d(Stage::Tessellate, "cells.json"), d(Stage::Context, "context.csv"), d(Stage::TrainS1, "top_features.json")];
                v.extend(p.imagery.iter().cloned());
                v
            }
            Stage::TrainS3 => vec![d(Stage::Rasterize, "morpho.tif"), d(Stage::Folds, "reference.geojson"), d(Stage::Folds, "folds_area.json")]
                .into_iter()
                .chain(p.imagery.iter().cloned())
                .collect(),
            Stage::TrainS4 => {
                let mut v = vec![d(Stage::Rasterize, "morpho.tif"), d(Stage::TrainS3, "grid_labels.csv")];
                if let Some(dir) = &p.embeddings {
                    if let Ok(rd) = std::fs::read_dir(dir) {
                        let mut files: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
                        files.sort();
                        v.extend(files);
                    }
                }
                v
            }
            Stage::Evaluate => vec![d(Stage::TrainS1, "report.json"), d(Stage::TrainS3, "report.json"), d(Stage::TrainS4, "report.json")],
            Stage::Map => vec![d(Stage::TrainS1, "model_best.json"), d(Stage::TrainS3, "model_best.json"), d(Stage::Context, "context.csv")],
        }
    }

    /// Cache key: stage name, full configuration, and the content of every input.
    fn stage_key(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(self.config_hash.as_bytes());
        for f in self.inputs(stage) {
            h.update(f.to_string_lossy().as_bytes());
            match std::fs::read(&f) {
                Ok(bytes) => h.update(Sha256::digest(&bytes)),
                Err(_) => h.update(b"<missing>"),
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Runs a stage unless its inputs and configuration are unchanged since
    /// the last successful run.
    pub fn run_stage(&self, stage: Stage, force: bool) -> Result<StageStatus> {
        let dir = self.stage_dir(stage);
        let record_path = dir.join("stage.json");
        let key = self.stage_key(stage);
        if !force {
            if let Ok(rec) = read_json::<StageRecord>(&record_path) {
                if rec.key == key && rec.outputs.iter().all(|o| dir.join(o).exists()) {
                    log::info!("{}: unchanged, using cached outputs", stage.name());
                    return Ok(StageStatus::Cached);
                }
            }
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let _ = std::fs::remove_file(&record_path);
        log::info!("{}: running", stage.name());
        let status = self.execute(stage, &dir).map_err(stage_err(stage))?;
        let mut outputs: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != "stage.json")
            .collect();
        outputs.sort();
        write_json(&record_path, &StageRecord { key, outputs })?;
        Ok(status)
    }

    /// Runs every stage in order.
    pub fn run_all(&self, force: bool) -> Result<Vec<(Stage, StageStatus)>> {
        Stage::ALL.iter().map(|&s| self.run_stage(s, force).map(|st| (s, st))).collect()
    }

    fn execute(&self, stage: Stage, dir: &Path) -> Result<StageStatus> {
        match stage {
            Stage::Ingest => self.ingest(dir),
            Stage::Tessellate => self.tessellate(dir),
            Stage::Metrics => self.metrics(dir),
            Stage::Context => self.context(dir),
            Stage::Folds => self.folds(dir),
            Stage::TrainS1 => self.train_s1(dir),
            Stage::Rasterize => self.rasterize(dir),
            Stage::TrainS3 => self.train_s3(dir),
            Stage::TrainS4 => self.train_s4(dir),
            Stage::Evaluate => self.evaluate(dir),
            Stage::Map => self.map(dir),
        }
    }

    fn bundle(&self) -> Result<IngestBundle> {
        read_json(&self.stage_dir(Stage::Ingest).join("data.json"))
    }

    fn cells(&self) -> Result<Vec<EtcCell>> {
        read_json(&self.stage_dir(Stage::Tessellate).join("cells.json"))
    }

    fn ingest(&self, dir: &Path) -> Result<StageStatus> {
        let p = &self.cfg.paths;
        let raw_b = load_layer(&p.buildings, LayerKind::Buildings)?;
        let raw_s = load_layer(&p.streets, LayerKind::Streets)?;
        let crs = raw_b.layer.crs.clone();
        let check_crs = |other: &Option<String>| -> Result<()> {
            match (&crs, other) {
                (Some(a), Some(b)) if a != b => Err(Error::CrsMismatch(a.clone(), b.clone())),
                _ => Ok(()),
            }
        };
        check_crs(&raw_s.layer.crs)?;
        let (buildings, b_report) = preprocess_buildings(&raw_b, &self.cfg.ingest);
        let (network, s_report) = preprocess_streets(&raw_s, &self.cfg.ingest)?;
        let waterlines = match &p.waterlines {
            Some(path) => {
                let fc = load_layer(path, LayerKind::Waterlines)?;
                check_crs(&fc.layer.crs)?;
                lines_of(&fc)
            }
            None => Vec::new(),
        };
        let waterbodies = match &p.waterbodies {
            Some(path) => {
                let fc = load_layer(path, LayerKind::Waterbodies)?;
                check_crs(&fc.layer.crs)?;
                polygons_of(&fc)
            }
            None => Vec::new(),
        };
        let study_area = match &p.study_area {
            Some(path) => {
                let layer = read_vector(path)?;
                check_crs(&layer.crs)?;
                polygons_of(&crate::ingest::from_layer(layer, LayerKind::Waterbodies, path)?)
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Data("study area layer holds no polygon".into()))?
            }
            None => {
                let coords: Vec<Coord> = network.segments.iter().flat_map(|s| s.line.0.iter().copied()).collect();
                let (mut lo, mut hi) = (coords[0], coords[0]);
                for c in &coords {
                    lo = Coord { x: lo.x.min(c.x), y: lo.y.min(c.y) };
                    hi = Coord { x: hi.x.max(c.x), y: hi.y.max(c.y) };
                }
                crate::geom::rect_polygon(lo, hi)
            }
        };
        let (buildings, waterlines, c_report) = consistency_check(&buildings, &network, &waterlines, &waterbodies);
        if buildings.is_empty() {
            return Err(Error::Data("no buildings left after preprocessing".into()));
        }
        write_json(
            &dir.join("report.json"),
            &json!({"provenance": self.provenance(), "buildings": b_report, "streets": s_report, "consistency": c_report}),
        )?;
        let layer = VectorLayer {
            crs: crs.clone(),
            features: buildings
                .iter()
                .map(|b| VectorFeature { id: b.id as u64, geometry: geo::Geometry::Polygon(b.footprint.clone()), properties: Default::default() })
                .collect(),
        };
        write_geojson(&dir.join("buildings.geojson"), &layer, Some(&self.extra()))?;
        let layer = VectorLayer {
            crs: crs.clone(),
            features: network
                .segments
                .iter()
                .map(|s| VectorFeature {
                    id: s.id as u64,
                    geometry: geo::Geometry::LineString(s.line.clone()),
                    properties: [("start_node".to_string(), json!(s.start_node)), ("end_node".to_string(), json!(s.end_node))]
                        .into_iter()
                        .collect(),
                })
                .collect(),
        };
        write_geojson(&dir.join("streets.geojson"), &layer, Some(&self.extra()))?;
        write_json(&dir.join("data.json"), &IngestBundle { crs, buildings, network, waterlines, waterbodies, study_area })?;
        Ok(StageStatus::Ran)
    }

    fn tessellate(&self, dir: &Path) -> Result<StageStatus> {
        let b = self.bundle()?;
        let enclosures = build_enclosures(&b.network, &b.waterlines, &b.waterbodies, &b.study_area)?;
        let (mut cells, report) = tessellate(&b.buildings, &enclosures, &self.cfg.tessellation)?;
        link_elements(&mut cells, &b.buildings, &b.network, self.cfg.ingest.snap_tol);
        let layer = VectorLayer {
            crs: b.crs.clone(),
            features: enclosures
                .iter()
                .map(|e| VectorFeature { id: e.id as u64, geometry: geo::Geometry::Polygon(e.polygon.clone()), properties: Default::default() })
                .collect(),
        };
        write_geojson(&dir.join("enclosures.geojson"), &layer, Some(&self.extra()))?;
        let opt = |v: Option<usize>| v.map_or(Value::Null, |v| json!(v));
        let layer = VectorLayer {
            crs: b.crs.clone(),
            features: cells
                .iter()
                .map(|c| VectorFeature {
                    id: c.id as u64,
                    geometry: geo::Geometry::MultiPolygon(c.polygon.clone()),
                    properties: [
                        ("building_id".to_string(), json!(c.building_id)),
                        ("enclosure_id".to_string(), json!(c.enclosure_id)),
                        ("nearest_street".to_string(), opt(c.nearest_street_id)),
                        ("nearest_node".to_string(), opt(c.nearest_node_id)),
                    ]
                    .into_iter()
                    .collect(),
                })
                .collect(),
        };
        write_geojson(&dir.join("cells.geojson"), &layer, Some(&self.extra()))?;
        write_json(&dir.join("report.json"), &json!({"provenance": self.provenance(), "enclosures": enclosures.len(), "cells": cells.len(), "report": report}))?;
        write_json(&dir.join("cells.json"), &cells)?;
        Ok(StageStatus::Ran)
    }

    fn metrics(&self, dir: &Path) -> Result<StageStatus> {
        let b = self.bundle()?;
        let cells = self.cells()?;
        let polys: Vec<MultiPolygon> = cells.iter().map(|c| c.polygon.clone()).collect();
        let graph = build_contiguity(&polys);
        let table = primary_matrix(&b.buildings, &cells, &b.network, &graph, &self.cfg.morphometrics)?;
        write_json(&dir.join("contiguity.json"), &graph.adjacency)?;
        table.write_csv(&dir.join("primary.csv"), Some(&self.comment()))?;
        Ok(StageStatus::Ran)
    }

    fn context(&self, dir: &Path) -> Result<StageStatus> {
        let m = self.stage_dir(Stage::Metrics);
        let primary = FeatureTable::read_csv(&m.join("primary.csv"))?;
        let adjacency: Vec<Vec<usize>> = read_json(&m.join("contiguity.json"))?;
        let graph = ContiguityGraph { adjacency };
        let t = contextualize_primary(&primary, &graph, &self.cfg.context)?;
        t.write_csv(&dir.join("context.csv"), Some(&self.comment()))?;
        Ok(StageStatus::Ran)
    }

    fn folds(&self, dir: &Path) -> Result<StageStatus> {
        let b = self.bundle()?;
        let cells = self.cells()?;
        let layer = read_vector(&self.cfg.paths.reference)?;
        if let (Some(a), Some(r)) = (&b.crs, &layer.crs) {
            if a != r {
                return Err(Error::CrsMismatch(a.clone(), r.clone()));
            }
        }
        let mut refs = reference_from_layer(&layer)?;
        if self.cfg.folds.split_singletons {
            refs = split_singletons(&refs)?;
        }
        let points = cell_points(&cells, &b.buildings);
        count_cells(&mut refs, &points);
        let k = self.cfg.folds.k;
        let etc = stratified_folds(&refs, FoldWeight::EtcCount, k, self.cfg.seed)?;
        let area = stratified_folds(&refs, FoldWeight::Area, k, self.cfg.seed)?;
        let labels = label_points(&points, &refs, &etc);
        let ids: Vec<u64> = cells.iter().map(|c| c.id as u64).collect();
        labels_table(&labels, &ids, "cell_id").write_csv(&dir.join("cell_labels.csv"), Some(&self.comment()))?;
        write_geojson(&dir.join("reference.geojson"), &reference_to_layer(&refs, b.crs.clone()), Some(&self.extra()))?;
        write_json(&dir.join("folds_etc.json"), &etc)?;
        write_json(&dir.join("folds_area.json"), &area)?;
        Ok(StageStatus::Ran)
    }

    fn train_s1(&self, dir: &Path) -> Result<StageStatus> {
        if !self.cfg.schemes.s1 {
            return Err(Error::Config("scheme s1 is disabled but later stages depend on it".into()));
        }
        let context = FeatureTable::read_csv(&self.stage_dir(Stage::Context).join("context.csv"))?;
        let labels = labels_from_table(&FeatureTable::read_csv(&self.stage_dir(Stage::Folds).join("cell_labels.csv"))?)?;
        let ds = dataset_from(&context);
        let (report, model) = run_scheme(self, "s1", &context.row_ids, &labels, &|_| Ok(ds.clone()), context.n_cols())?;
        let mut model = model;
        model.feature_names = context.columns.clone();
        let ranked = ranked_importance(&model.importances());
        let top: Vec<String> = top_k(&ranked, self.cfg.forest.top_k).into_iter().map(|i| context.columns[i].clone()).collect();
        let mut imp = FeatureTable::new("rank", vec!["feature_index".into(), "importance".into()]);
        for (r, (i, s)) in ranked.iter().enumerate() {
            imp.push_row(r as u64, &[*i as f64, *s]);
        }
        imp.write_csv(&dir.join("importance.csv"), Some(&self.comment()))?;
        write_json(&dir.join("top_features.json"), &json!({"provenance": self.provenance(), "features": top}))?;
        let mut pred = FeatureTable::new("cell_id", vec!["lcz_true".into(), "lcz_pred".into(), "fold".into()]);
        for (id, t, p, f) in &report.chosen_outcome().predictions {
            pred.push_row(*id, &[t.code() as f64, p.code() as f64, *f as f64]);
        }
        pred.write_csv(&dir.join("predictions.csv"), Some(&self.comment()))?;
        write_scheme(dir, &report, &model)?;
        Ok(StageStatus::Ran)
    }

    fn imagery(&self) -> Result<Raster> {
        let path = self.cfg.paths.imagery.as_ref().ok_or_else(|| Error::Config("paths.imagery is required for raster fusion".into()))?;
        read_geotiff(path)
    }

    fn top_features(&self) -> Result<Vec<String>> {
        let v: Value = read_json(&self.stage_dir(Stage::TrainS1).join("top_features.json"))?;
        serde_json::from_value(v["features"].clone()).map_err(|e| Error::Data(e.to_string()))
    }

    fn rasterize(&self, dir: &Path) -> Result<StageStatus> {
        if self.cfg.paths.imagery.is_none() {
            write_json(&dir.join("skipped.json"), &json!({"reason": "no imagery configured"}))?;
            return Ok(StageStatus::Skipped);
        }
        let img = self.imagery()?;
        let b = self.bundle()?;
        let cells = self.cells()?;
        let context = FeatureTable::read_csv(&self.stage_dir(Stage::Context).join("context.csv"))?;
        let polys: Vec<MultiPolygon> = cells.iter().map(|c| c.polygon.clone()).collect();
        let raster = rasterize_attributes(&polys, b.crs.as_deref(), &context, &self.top_features()?, &img.grid)?;
        write_geotiff_f32(&dir.join("morpho.tif"), &raster, Some(&self.provenance()))?;
        Ok(StageStatus::Ran)
    }

    fn coarse_labels(&self, grid: &GridGeometry) -> Result<(CoarseGrid, Vec<Option<CellLabel>>)> {
        let coarse = CoarseGrid::over(grid, self.cfg.fusion.grid_m)?;
        let f = self.stage_dir(Stage::Folds);
        let refs = reference_from_layer(&read_vector(&f.join("reference.geojson"))?)?;
        let area: FoldAssignment = read_json(&f.join("folds_area.json"))?;
        let centers: Vec<Coord> = (0..coarse.len() as u64).map(|id| coarse.center(id)).collect();
        Ok((coarse, label_points(&centers, &refs, &area)))
    }

    fn train_s3(&self, dir: &Path) -> Result<StageStatus> {
        if !self.cfg.schemes.s3 || self.cfg.paths.imagery.is_none() {
            write_json(&dir.join("skipped.json"), &json!({"reason": "scheme s3 disabled or no imagery"}))?;
            return Ok(StageStatus::Skipped);
        }
        let img = self.imagery()?;
        let morpho = read_geotiff(&self.stage_dir(Stage::Rasterize).join("morpho.tif"))?;
        if img.grid.width != morpho.grid.width || img.grid.height != morpho.grid.height {
            return Err(Error::Data("morphometric raster does not match the imagery grid".into()));
        }
        let mut stack = img.clone();
        for (n, b) in morpho.band_names.iter().zip(&morpho.bands) {
            stack.push_band(format!("m_{n}"), b.clone());
        }
        let (coarse, labels) = self.coarse_labels(&img.grid)?;
        let table = zonal_stats(&stack, &coarse);
        table.write_csv(&dir.join("features.csv"), Some(&self.comment()))?;
        labels_table(&labels, &table.row_ids, "grid_id").write_csv(&dir.join("grid_labels.csv"), Some(&self.comment()))?;
        let ds = dataset_from(&table);
        let (report, mut model) = run_scheme(self, "s3", &table.row_ids, &labels, &|_| Ok(ds.clone()), table.n_cols())?;
        model.feature_names = table.columns.clone();
        write_scheme(dir, &report, &model)?;
        Ok(StageStatus::Ran)
    }

    fn train_s4(&self, dir: &Path) -> Result<StageStatus> {
        let emb_dir = match &self.cfg.paths.embeddings {
            Some(d) if self.cfg.schemes.s4 && d.is_dir() && self.cfg.paths.imagery.is_some() => d.clone(),
            _ => {
                log::warn!("no embedding tables configured; scheme s4 skipped");
                write_json(&dir.join("skipped.json"), &json!({"reason": "no embedding tables"}))?;
                return Ok(StageStatus::Skipped);
            }
        };
        let morpho = read_geotiff(&self.stage_dir(Stage::Rasterize).join("morpho.tif"))?;
        let (_, grid_labels) = self.coarse_labels(&morpho.grid)?;
        let index = make_patches(&morpho.grid, &self.cfg.fusion.patch, None)?;
        let stats = patch_stats(&morpho, &index);
        stats.write_csv(&dir.join("patch_stats.csv"), Some(&self.comment()))?;
        let labels: Vec<Option<CellLabel>> = index.patches.iter().map(|p| grid_labels[p.id as usize]).collect();
        let tables = EmbeddingTable::read_dir(&emb_dir)?;
        let features = |f: usize| -> Result<Dataset> {
            let t = tables.get(&(f as u32)).ok_or_else(|| Error::Data(format!("no embedding table for fold {f}")))?;
            Ok(dataset_from(&assemble_embeddings(t, &stats)?))
        };
        let n_features = tables.values().next().map_or(0, |t| t.dim) + stats.n_cols();
        let (report, model) = run_scheme(self, "s4", &stats.row_ids, &labels, &features, n_features)?;
        write_scheme(dir, &report, &model)?;
        Ok(StageStatus::Ran)
    }

    fn evaluate(&self, dir: &Path) -> Result<StageStatus> {
        let mut summary = serde_json::Map::new();
        summary.insert("provenance".into(), self.provenance());
        for (scheme, stage) in [("s1", Stage::TrainS1), ("s3", Stage::TrainS3), ("s4", Stage::TrainS4)] {
            let path = self.stage_dir(stage).join("report.json");
            if !path.exists() {
                summary.insert(scheme.into(), Value::Null);
                continue;
            }
            let r: SchemeReport = read_json(&path)?;
            let o = r.chosen_outcome();
            summary.insert(
                scheme.into(),
                json!({
                    "weighting": r.chosen,
                    "oa": o.report.oa,
                    "f1": o.report.f1,
                    "f1_urban": o.report.f1_urban,
                    "f1_natural": o.report.f1_natural,
                    "per_class_f1": o.report.per_class_f1,
                    "best_fold": o.best_fold,
                }),
            );
            std::fs::write(dir.join(format!("{scheme}_confusion.csv")), o.report.confusion.to_csv()).map_err(|e| Error::io(dir, e))?;
        }
        // S1 out-of-fold predictions aggregated to the coarse grid, scored
        // against the grid reference labels.
        if let (Some(_), true) = (&self.cfg.paths.imagery, self.stage_dir(Stage::TrainS1).join("predictions.csv").exists()) {
            let img = self.imagery()?;
            let (coarse, grid_labels) = self.coarse_labels(&img.grid)?;
            let cells = self.cells()?;
            let pred = FeatureTable::read_csv(&self.stage_dir(Stage::TrainS1).join("predictions.csv"))?;
            let mut per_cell = vec![None; cells.len()];
            for r in 0..pred.n_rows() {
                per_cell[pred.row_ids[r] as usize] = Some(LczClass::new(pred.get(r, 1) as u8)?);
            }
            let polys: Vec<MultiPolygon> = cells.iter().map(|c| c.polygon.clone()).collect();
            let grid = cells_to_grid(&polys, &per_cell, &coarse);
            let (t, p): (Vec<LczClass>, Vec<LczClass>) =
                grid.iter().zip(&grid_labels).filter_map(|(p, l)| Some((l.as_ref()?.class, (*p)?))).unzip();
            if !t.is_empty() {
                let s = scores(&t, &p)?;
                summary.insert("s1_grid".into(), json!({"oa": s.oa, "f1": s.f1, "f1_urban": s.f1_urban, "f1_natural": s.f1_natural, "cells": t.len()}));
            }
        }
        write_json(&dir.join("summary.json"), &Value::Object(summary))?;
        Ok(StageStatus::Ran)
    }

    fn map(&self, dir: &Path) -> Result<StageStatus> {
        let b = self.bundle()?;
        let cells = self.cells()?;
        let context = FeatureTable::read_csv(&self.stage_dir(Stage::Context).join("context.csv"))?;
        let model = ForestModel::from_json(
            &std::fs::read_to_string(self.stage_dir(Stage::TrainS1).join("model_best.json")).map_err(|e| Error::io(dir, e))?,
        )?;
        let pred: Vec<Option<LczClass>> =
            model.predict(&dataset_from(&context)).into_iter().map(|c| LczClass::new(c).ok()).collect();
        let polys: Vec<MultiPolygon> = cells.iter().map(|c| c.polygon.clone()).collect();
        let render = match &self.cfg.paths.imagery {
            Some(_) => self.imagery()?.grid,
            None => {
                let px = self.cfg.fusion.render_pixel_m;
                let r = crate::geom::bbox(&MultiPolygon(polys.iter().flat_map(|p| p.0.clone()).collect()))
                    .ok_or_else(|| Error::Data("no cells to map".into()))?;
                GridGeometry {
                    origin_x: r.min().x,
                    origin_y: r.max().y,
                    pixel_size: px,
                    width: (r.width() / px).ceil() as usize,
                    height: (r.height() / px).ceil() as usize,
                    crs: b.crs.clone(),
                }
            }
        };
        let prov = self.provenance();
        emit_cell_map(dir, "s1_cells", &polys, &pred, b.crs.clone(), &render, Some(&prov))?;
        if self.cfg.paths.imagery.is_some() {
            let coarse = CoarseGrid::over(&render, self.cfg.fusion.grid_m)?;
            let grid = cells_to_grid(&polys, &pred, &coarse);
            emit_grid_map(dir, "s1_grid", &coarse.as_raster_grid(b.crs.clone()), &grid, Some(&prov))?;
            let s3_model = self.stage_dir(Stage::TrainS3).join("model_best.json");
            if s3_model.exists() {
                let m = ForestModel::from_json(&std::fs::read_to_string(&s3_model).map_err(|e| Error::io(&s3_model, e))?)?;
                let table = FeatureTable::read_csv(&self.stage_dir(Stage::TrainS3).join("features.csv"))?;
                let labels: Vec<Option<LczClass>> = m.predict(&dataset_from(&table)).into_iter().map(|c| LczClass::new(c).ok()).collect();
                emit_grid_map(dir, "s3_grid", &coarse.as_raster_grid(b.crs.clone()), &labels, Some(&prov))?;
            }
        }
        Ok(StageStatus::Ran)
    }
}

/// Forest settings sized for the synthetic city: smaller ensembles and grids
/// keep a full run within a few minutes on one core.
pub fn synthetic_forest_settings() -> ForestSettings {
    ForestSettings {
        n_trees: 40,
        max_depth_grid: vec![8, 12, 0],
        max_features_grid: vec![MaxFeatures::Sqrt, MaxFeatures::Log2],
        ..ForestSettings::default()
    }
}

/// Writes a synthetic site (layers, imagery and `site.toml`) into `dir` and
/// returns the configuration path.
pub fn write_synthetic_site(dir: &Path, spec: &crate::synth::SynthSpec, seed: u64) -> Result<PathBuf> {
    let city = crate::synth::synth_city(spec, seed)?;
    city.write(dir, &json!({"generator": "synthetic-city", "seed": seed}))?;
    let cfg = SiteConfig {
        seed,
        paths: PathsConfig {
            buildings: "buildings.geojson".into(),
            streets: "streets.geojson".into(),
            waterlines: None,
            waterbodies: None,
            study_area: Some("study_area.geojson".into()),
            reference: "reference.geojson".into(),
            imagery: Some("imagery.tif".into()),
            embeddings: None,
            output: "out".into(),
        },
        ingest: IngestConfig::default(),
        tessellation: TessellationConfig::default(),
        morphometrics: MorphometricsConfig::default(),
        context: ContextConfig::default(),
        folds: FoldsConfig::default(),
        forest: synthetic_forest_settings(),
        fusion: FusionSettings::default(),
        schemes: SchemeToggles::default(),
        source_hash: None,
    };
    let path = dir.join("site.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
