//! Vector layer I/O: GeoJSON (read/write) and GeoPackage (read/write of a
//! single geometry table).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use geo::{Coord, Geometry, LineString, MultiLineString, MultiPoint, MultiPolygon, Point, Polygon};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub type Properties = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorFeature {
    pub id: u64,
    pub geometry: Geometry,
    pub properties: Properties,
}

/// A decoded vector layer with its declared CRS (e.g. `EPSG:32633`).
#[derive(Debug, Clone, Default)]
pub struct VectorLayer {
    pub crs: Option<String>,
    pub features: Vec<VectorFeature>,
}

const GEOGRAPHIC_CODES: &[u32] = &[4326, 4258, 4269, 4267, 4979, 4617, 4283, 4674, 4490, 4019];

/// Parses `EPSG:xxxx`, `urn:ogc:def:crs:EPSG::xxxx` and similar spellings.
pub fn epsg_code(crs: &str) -> Option<u32> {
    let up = crs.to_ascii_uppercase();
    if !up.contains("EPSG") {
        return None;
    }
    up.rsplit([':', '/']).find(|s| !s.is_empty())?.parse().ok()
}

pub fn is_geographic(crs: &str) -> bool {
    let up = crs.to_ascii_uppercase();
    if up.contains("CRS84") || up.starts_with("GEOGCS") || up.starts_with("GEOGCRS") {
        return true;
    }
    matches!(epsg_code(crs), Some(c) if GEOGRAPHIC_CODES.contains(&c))
}

fn looks_like_degrees(layer: &VectorLayer) -> bool {
    use geo::CoordsIter;
    let mut any = false;
    for f in &layer.features {
        for c in f.geometry.coords_iter() {
            any = true;
            if c.x.abs() > 180.0 || c.y.abs() > 90.0 {
                return false;
            }
        }
    }
    any
}

/// Rejects geographic layers. An undeclared CRS is accepted only when the
/// coordinates cannot be longitude/latitude.
pub fn require_projected(layer: &VectorLayer, path: &Path) -> Result<()> {
    match &layer.crs {
        Some(crs) if is_geographic(crs) => Err(Error::GeographicCrs(format!(
            "{} is in {crs}",
            path.display()
        ))),
        Some(_) => Ok(()),
        None if looks_like_degrees(layer) => Err(Error::GeographicCrs(format!(
            "{} declares no CRS and its coordinates look like degrees",
            path.display()
        ))),
        None => Ok(()),
    }
}

pub fn read_vector(path: &Path) -> Result<VectorLayer> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(e) if e == "gpkg" => read_gpkg(path),
        _ => read_geojson(path),
    }
}

pub fn read_geojson(path: &Path) -> Result<VectorLayer> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_geojson(&text).map_err(|reason| Error::parse(path, reason))
}

pub fn parse_geojson(text: &str) -> std::result::Result<VectorLayer, String> {
    let gj: geojson::GeoJson = text.parse().map_err(|e: geojson::Error| e.to_string())?;
    let mut layer = VectorLayer::default();
    let fc = match gj {
        geojson::GeoJson::FeatureCollection(fc) => fc,
        geojson::GeoJson::Feature(f) => geojson::FeatureCollection {
            bbox: None,
            features: vec![f],
            foreign_members: None,
        },
        geojson::GeoJson::Geometry(g) => geojson::FeatureCollection {
            bbox: None,
            features: vec![geojson::Feature {
                bbox: None,
                geometry: Some(g),
                id: None,
                properties: None,
                foreign_members: None,
            }],
            foreign_members: None,
        },
    };
    if let Some(fm) = &fc.foreign_members {
        layer.crs = fm
            .get("crs")
            .and_then(|c| c.get("properties"))
            .and_then(|p| p.get("name"))
            .and_then(|n| n.as_str())
            .map(str::to_string);
    }
    for (i, f) in fc.features.into_iter().enumerate() {
        let Some(g) = f.geometry else { continue };
        let geometry = Geometry::<f64>::try_from(&g.value).map_err(|e| e.to_string())?;
        let id = match &f.id {
            Some(geojson::feature::Id::Number(n)) => n.as_u64().unwrap_or(i as u64),
            _ => i as u64,
        };
        let properties = f.properties.map(|p| p.into_iter().collect()).unwrap_or_default();
        layer.features.push(VectorFeature { id, geometry, properties });
    }
    Ok(layer)
}

/// Serializes a layer as GeoJSON with a named-CRS member and optional extra
/// top-level members (used to embed provenance).
pub fn geojson_string(layer: &VectorLayer, extra: Option<&Map<String, Value>>) -> String {
    let features = layer
        .features
        .iter()
        .map(|f| geojson::Feature {
            bbox: None,
            geometry: Some(geojson::Geometry::new(geojson::GeometryValue::from(&f.geometry))),
            id: Some(geojson::feature::Id::Number(f.id.into())),
            properties: Some(f.properties.clone().into_iter().collect()),
            foreign_members: None,
        })
        .collect();
    let mut fm = Map::new();
    if let Some(crs) = &layer.crs {
        fm.insert(
            "crs".into(),
            serde_json::json!({"type": "name", "properties": {"name": crs}}),
        );
    }
    if let Some(extra) = extra {
        for (k, v) in extra {
            fm.insert(k.clone(), v.clone());
        }
    }
    let fc = geojson::FeatureCollection {
        bbox: None,
        features,
        foreign_members: if fm.is_empty() { None } else { Some(fm) },
    };
    fc.to_string()
}

pub fn write_geojson(path: &Path, layer: &VectorLayer, extra: Option<&Map<String, Value>>) -> Result<()> {
    fs::write(path, geojson_string(layer, extra)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- GeoPackage

fn sql_err(path: &Path) -> impl Fn(rusqlite::Error) -> Error + '_ {
    move |e| Error::parse(path, e)
}

pub fn read_gpkg(path: &Path) -> Result<VectorLayer> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let conn = rusqlite::Connection::open_with_flags(path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)
        .map_err(sql_err(path))?;
    let (table, column, srs_id): (String, String, i64) = conn
        .query_row(
            "SELECT table_name, column_name, srs_id FROM gpkg_geometry_columns ORDER BY table_name LIMIT 1",
            [],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
        )
        .map_err(sql_err(path))?;
    let srs: Option<(String, i64, String)> = conn
        .query_row(
            "SELECT organization, organization_coordsys_id, definition FROM gpkg_spatial_ref_sys WHERE srs_id = ?1",
            [srs_id],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
        )
        .ok();
    let crs = srs.map(|(org, code, def)| {
        if def.trim_start().to_ascii_uppercase().starts_with("GEOG") {
            def
        } else {
            format!("{}:{}", org.to_ascii_uppercase(), code)
        }
    });

    let mut stmt = conn
        .prepare(&format!("SELECT * FROM \"{table}\""))
        .map_err(sql_err(path))?;
    let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let mut rows = stmt.query([]).map_err(sql_err(path))?;
    let mut features = Vec::new();
    let mut next_id = 0u64;
    while let Some(row) = rows.next().map_err(sql_err(path))? {
        let mut geometry = None;
        let mut id = None;
        let mut properties = Properties::new();
        for (i, name) in names.iter().enumerate() {
            let v = row.get_ref(i).map_err(sql_err(path))?;
            if name == &column {
                if let rusqlite::types::ValueRef::Blob(b) = v {
                    geometry = decode_gpkg_blob(b).map_err(|r| Error::parse(path, r))?;
                }
                continue;
            }
            use rusqlite::types::ValueRef::*;
            let value = match v {
                Null => Value::Null,
                Integer(n) => Value::from(n),
                Real(x) => Value::from(x),
                Text(t) => Value::from(String::from_utf8_lossy(t).into_owned()),
                Blob(_) => continue,
            };
            if name == "fid" {
                id = value.as_u64();
            } else {
                properties.insert(name.clone(), value);
            }
        }
        let id = id.unwrap_or(next_id);
        next_id = id + 1;
        if let Some(geometry) = geometry {
            features.push(VectorFeature { id, geometry, properties });
        }
    }
    Ok(VectorLayer { crs, features })
}

/// Decodes a GeoPackage geometry blob (header + WKB). Empty geometries decode to `None`.
pub fn decode_gpkg_blob(b: &[u8]) -> std::result::Result<Option<Geometry>, String> {
    if b.len() < 8 || &b[0..2] != b"GP" {
        return Err("not a GeoPackage geometry blob".into());
    }
    let flags = b[3];
    if flags & 0b1_0000 != 0 {
        return Ok(None);
    }
    let env_len = match (flags >> 1) & 0b111 {
        0 => 0,
        1 => 32,
        2 | 3 => 48,
        4 => 64,
        e => return Err(format!("invalid envelope indicator {e}")),
    };
    let start = 8 + env_len;
    if b.len() < start {
        return Err("truncated blob".into());
    }
    let mut rd = WkbReader { buf: &b[start..], pos: 0 };
    rd.geometry().map(Some)
}

struct WkbReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl WkbReader<'_> {
    fn take<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        let s = self.buf.get(self.pos..self.pos + N).ok_or("truncated WKB")?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }

    fn u32(&mut self, le: bool) -> std::result::Result<u32, String> {
        let b = self.take::<4>()?;
        Ok(if le { u32::from_le_bytes(b) } else { u32::from_be_bytes(b) })
    }

    fn f64(&mut self, le: bool) -> std::result::Result<f64, String> {
        let b = self.take::<8>()?;
        Ok(if le { f64::from_le_bytes(b) } else { f64::from_be_bytes(b) })
    }

    fn coords(&mut self, le: bool, dims: usize) -> std::result::Result<Vec<Coord>, String> {
        let n = self.u32(le)? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.f64(le)?;
            let y = self.f64(le)?;
            for _ in 2..dims {
                self.f64(le)?;
            }
            out.push(Coord { x, y });
        }
        Ok(out)
    }

    fn polygon(&mut self, le: bool, dims: usize) -> std::result::Result<Polygon, String> {
        let nrings = self.u32(le)? as usize;
        let mut rings = Vec::with_capacity(nrings);
        for _ in 0..nrings {
            rings.push(LineString::from(self.coords(le, dims)?));
        }
        if rings.is_empty() {
            return Ok(Polygon::new(LineString::new(vec![]), vec![]));
        }
        let ext = rings.remove(0);
        Ok(Polygon::new(ext, rings))
    }

    fn geometry(&mut self) -> std::result::Result<Geometry, String> {
        let le = self.take::<1>()?[0] == 1;
        let raw = self.u32(le)?;
        // EWKB flags in the high bits, ISO dimension in the thousands
        let ewkb_z = raw & 0x8000_0000 != 0;
        let ewkb_m = raw & 0x4000_0000 != 0;
        let code = raw & 0x0FFF_FFFF;
        let (base, iso_dim) = (code % 1000, code / 1000);
        let dims = match iso_dim {
            1 | 2 => 3,
            3 => 4,
            _ => 2 + ewkb_z as usize + ewkb_m as usize,
        };
        Ok(match base {
            1 => {
                let x = self.f64(le)?;
                let y = self.f64(le)?;
                for _ in 2..dims {
                    self.f64(le)?;
                }
                Geometry::Point(Point::new(x, y))
            }
            2 => Geometry::LineString(LineString::from(self.coords(le, dims)?)),
            3 => Geometry::Polygon(self.polygon(le, dims)?),
            4..=7 => {
                let n = self.u32(le)? as usize;
                let mut parts = Vec::with_capacity(n);
                for _ in 0..n {
                    parts.push(self.geometry()?);
                }
                match base {
                    4 => Geometry::MultiPoint(MultiPoint(
                        parts.into_iter().filter_map(|g| Point::try_from(g).ok()).collect(),
                    )),
                    5 => Geometry::MultiLineString(MultiLineString(
                        parts.into_iter().filter_map(|g| LineString::try_from(g).ok()).collect(),
                    )),
                    6 => Geometry::MultiPolygon(MultiPolygon(
                        parts.into_iter().filter_map(|g| Polygon::try_from(g).ok()).collect(),
                    )),
                    _ => Geometry::GeometryCollection(geo::GeometryCollection(parts)),
                }
            }
            t => return Err(format!("unsupported WKB geometry type {t}")),
        })
    }
}

fn wkb_geometry(g: &Geometry, out: &mut Vec<u8>) {
    fn coords(cs: &[Coord], out: &mut Vec<u8>) {
        out.extend((cs.len() as u32).to_le_bytes());
        for c in cs {
            out.extend(c.x.to_le_bytes());
            out.extend(c.y.to_le_bytes());
        }
    }
    fn poly(p: &Polygon, out: &mut Vec<u8>) {
        out.extend((1 + p.interiors().len() as u32).to_le_bytes());
        coords(&p.exterior().0, out);
        for r in p.interiors() {
            coords(&r.0, out);
        }
    }
    out.push(1);
    match g {
        Geometry::Point(p) => {
            out.extend(1u32.to_le_bytes());
            out.extend(p.x().to_le_bytes());
            out.extend(p.y().to_le_bytes());
        }
        Geometry::LineString(l) => {
            out.extend(2u32.to_le_bytes());
            coords(&l.0, out);
        }
        Geometry::Polygon(p) => {
            out.extend(3u32.to_le_bytes());
            poly(p, out);
        }
        Geometry::MultiPoint(m) => {
            out.extend(4u32.to_le_bytes());
            out.extend((m.0.len() as u32).to_le_bytes());
            for p in m {
                wkb_geometry(&Geometry::Point(*p), out);
            }
        }
        Geometry::MultiLineString(m) => {
            out.extend(5u32.to_le_bytes());
            out.extend((m.0.len() as u32).to_le_bytes());
            for l in m {
                wkb_geometry(&Geometry::LineString(l.clone()), out);
            }
        }
        Geometry::MultiPolygon(m) => {
            out.extend(6u32.to_le_bytes());
            out.extend((m.0.len() as u32).to_le_bytes());
            for p in m {
                wkb_geometry(&Geometry::Polygon(p.clone()), out);
            }
        }
        other => {
            let gc: Vec<Geometry> = match other {
                Geometry::GeometryCollection(gc) => gc.0.clone(),
                Geometry::Line(l) => vec![Geometry::LineString(LineString::from(vec![l.start, l.end]))],
                Geometry::Rect(r) => vec![Geometry::Polygon(r.to_polygon())],
                Geometry::Triangle(t) => vec![Geometry::Polygon(t.to_polygon())],
                _ => vec![],
            };
            out.extend(7u32.to_le_bytes());
            out.extend((gc.len() as u32).to_le_bytes());
            for g in &gc {
                wkb_geometry(g, out);
            }
        }
    }
}

pub fn encode_gpkg_blob(g: &Geometry, srs_id: i32) -> Vec<u8> {
    let mut out = vec![b'G', b'P', 0, 0b0000_0001];
    out.extend(srs_id.to_le_bytes());
    wkb_geometry(g, &mut out);
    out
}

/// Writes a single-table GeoPackage. Property columns are typed from the first
/// non-null value (INTEGER, REAL or TEXT).
pub fn write_gpkg(path: &Path, layer_name: &str, layer: &VectorLayer) -> Result<()> {
    if path.exists() {
        fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    let conn = rusqlite::Connection::open(path).map_err(sql_err(path))?;
    let code = layer.crs.as_deref().and_then(epsg_code).unwrap_or(0) as i64;
    let srs_id = if code == 0 { -1 } else { code };
    let def = "undefined";
    let cols: Vec<(String, &str)> = {
        let mut seen: BTreeMap<String, &str> = BTreeMap::new();
        for f in &layer.features {
            for (k, v) in &f.properties {
                let ty = match v {
                    Value::Number(n) if n.is_i64() || n.is_u64() => "INTEGER",
                    Value::Number(_) => "REAL",
                    Value::Bool(_) => "INTEGER",
                    Value::Null => continue,
                    _ => "TEXT",
                };
                seen.entry(k.clone()).or_insert(ty);
            }
        }
        seen.into_iter().collect()
    };
    let col_sql: String = cols.iter().map(|(k, t)| format!(", \"{k}\" {t}")).collect();
    conn.execute_batch(&format!(
        "PRAGMA application_id = 1196444487;
         PRAGMA user_version = 10200;
         CREATE TABLE gpkg_spatial_ref_sys (srs_name TEXT NOT NULL, srs_id INTEGER PRIMARY KEY,
           organization TEXT NOT NULL, organization_coordsys_id INTEGER NOT NULL,
           definition TEXT NOT NULL, description TEXT);
         CREATE TABLE gpkg_contents (table_name TEXT NOT NULL PRIMARY KEY, data_type TEXT NOT NULL,
           identifier TEXT, description TEXT DEFAULT '', last_change DATETIME,
           min_x DOUBLE, min_y DOUBLE, max_x DOUBLE, max_y DOUBLE, srs_id INTEGER);
         CREATE TABLE gpkg_geometry_columns (table_name TEXT NOT NULL, column_name TEXT NOT NULL,
           geometry_type_name TEXT NOT NULL, srs_id INTEGER NOT NULL, z TINYINT NOT NULL, m TINYINT NOT NULL);
         CREATE TABLE \"{layer_name}\" (fid INTEGER PRIMARY KEY, geom BLOB{col_sql});"
    ))
    .map_err(sql_err(path))?;
    conn.execute(
        "INSERT INTO gpkg_spatial_ref_sys VALUES (?1, ?2, ?3, ?4, ?5, NULL)",
        rusqlite::params![
            layer.crs.clone().unwrap_or_else(|| "Undefined cartesian SRS".into()),
            srs_id,
            if code == 0 { "NONE" } else { "EPSG" },
            if code == 0 { -1 } else { code },
            def
        ],
    )
    .map_err(sql_err(path))?;
    conn.execute(
        "INSERT INTO gpkg_contents (table_name, data_type, identifier, srs_id) VALUES (?1, 'features', ?1, ?2)",
        rusqlite::params![layer_name, srs_id],
    )
    .map_err(sql_err(path))?;
    conn.execute(
        "INSERT INTO gpkg_geometry_columns VALUES (?1, 'geom', 'GEOMETRY', ?2, 0, 0)",
        rusqlite::params![layer_name, srs_id],
    )
    .map_err(sql_err(path))?;
    let placeholders: String = (0..cols.len()).map(|i| format!(", ?{}", i + 3)).collect();
    let names: String = cols.iter().map(|(k, _)| format!(", \"{k}\"")).collect();
    let sql = format!("INSERT INTO \"{layer_name}\" (fid, geom{names}) VALUES (?1, ?2{placeholders})");
    let tx = conn.unchecked_transaction().map_err(sql_err(path))?;
    {
        let mut stmt = tx.prepare(&sql).map_err(sql_err(path))?;
        for f in &layer.features {
            let mut params: Vec<rusqlite::types::Value> = vec![
                rusqlite::types::Value::Integer(f.id as i64),
                rusqlite::types::Value::Blob(encode_gpkg_blob(&f.geometry, srs_id as i32)),
            ];
            for (k, _) in &cols {
                params.push(match f.properties.get(k) {
                    Some(Value::Number(n)) if n.is_i64() || n.is_u64() => {
                        rusqlite::types::Value::Integer(n.as_i64().unwrap_or(i64::MAX))
                    }
                    Some(Value::Number(n)) => rusqlite::types::Value::Real(n.as_f64().unwrap()),
                    Some(Value::Bool(b)) => rusqlite::types::Value::Integer(*b as i64),
                    Some(Value::String(s)) => rusqlite::types::Value::Text(s.clone()),
                    Some(Value::Null) | None => rusqlite::types::Value::Null,
                    Some(other) => rusqlite::types::Value::Text(other.to_string()),
                });
            }
            stmt.execute(rusqlite::params_from_iter(params)).map_err(sql_err(path))?;
        }
    }
    tx.commit().map_err(sql_err(path))?;
    Ok(())
}
