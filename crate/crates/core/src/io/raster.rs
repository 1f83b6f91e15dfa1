//! Minimal GeoTIFF support: uncompressed, single strip, pixel-interleaved
//! float32 (any band count) or uint8 (single band). Reading goes through the
//! `tiff` decoder; writing is done here.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::io::vector::epsg_code;

/// North-up raster grid geometry. `origin` is the upper-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub width: usize,
    pub height: usize,
    pub crs: Option<String>,
}

impl GridGeometry {
    /// Center of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> geo::Coord {
        geo::Coord {
            x: self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            y: self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent_x(&self) -> f64 {
        self.width as f64 * self.pixel_size
    }

    pub fn extent_y(&self) -> f64 {
        self.height as f64 * self.pixel_size
    }
}

/// Band-major raster; `f64::NAN` marks nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub grid: GridGeometry,
    pub band_names: Vec<String>,
    pub bands: Vec<Vec<f64>>,
}

impl Raster {
    pub fn new(grid: GridGeometry) -> Self {
        Raster { grid, band_names: Vec::new(), bands: Vec::new() }
    }

    pub fn push_band(&mut self, name: impl Into<String>, data: Vec<f64>) {
        assert_eq!(data.len(), self.grid.len(), "band size must match grid");
        self.band_names.push(name.into());
        self.bands.push(data);
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.bands[band][row * self.grid.width + col]
    }
}

#[derive(Serialize, Deserialize, Default)]
struct Description {
    bands: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

enum Samples<'a> {
    F32(&'a Raster),
    U8(&'a [u8]),
}

struct Entry {
    tag: u16,
    ty: u16,
    count: u32,
    data: Vec<u8>,
}

fn short(tag: u16, vals: &[u16]) -> Entry {
    Entry { tag, ty: 3, count: vals.len() as u32, data: vals.iter().flat_map(|v| v.to_le_bytes()).collect() }
}

fn long(tag: u16, v: u32) -> Entry {
    Entry { tag, ty: 4, count: 1, data: v.to_le_bytes().to_vec() }
}

fn double(tag: u16, vals: &[f64]) -> Entry {
    Entry { tag, ty: 12, count: vals.len() as u32, data: vals.iter().flat_map(|v| v.to_le_bytes()).collect() }
}

fn ascii(tag: u16, s: &str) -> Entry {
    let mut data = s.as_bytes().to_vec();
    data.push(0);
    Entry { tag, ty: 2, count: data.len() as u32, data }
}

fn encode(grid: &GridGeometry, samples: Samples, description: &str) -> Vec<u8> {
    let (spp, bits, fmt, pixels): (u16, u16, u16, Vec<u8>) = match samples {
        Samples::F32(r) => {
            let nb = r.bands.len();
            let mut px = Vec::with_capacity(grid.len() * nb * 4);
            for i in 0..grid.len() {
                for b in &r.bands {
                    px.extend((b[i] as f32).to_le_bytes());
                }
            }
            (nb as u16, 32, 3, px)
        }
        Samples::U8(d) => (1, 8, 1, d.to_vec()),
    };
    let mut keys: Vec<[u16; 4]> = vec![[1025, 0, 1, 1]];
    match grid.crs.as_deref().and_then(epsg_code) {
        Some(code) if code <= u16::MAX as u32 => {
            keys.push([1024, 0, 1, 1]);
            keys.push([3072, 0, 1, code as u16]);
        }
        _ => keys.push([1024, 0, 1, 32767]),
    }
    keys.sort_by_key(|k| k[0]);
    let mut gk = vec![1, 1, 0, keys.len() as u16];
    for k in keys {
        gk.extend_from_slice(&k);
    }

    let mut entries = vec![
        long(256, grid.width as u32),
        long(257, grid.height as u32),
        short(258, &vec![bits; spp as usize]),
        short(259, &[1]),
        short(262, &[1]),
        ascii(270, description),
        long(273, 0), // patched below
        short(277, &[spp]),
        long(278, grid.height as u32),
        long(279, pixels.len() as u32),
        short(284, &[1]),
        short(339, &vec![fmt; spp as usize]),
        double(33550, &[grid.pixel_size, grid.pixel_size, 0.0]),
        double(33922, &[0.0, 0.0, 0.0, grid.origin_x, grid.origin_y, 0.0]),
        short(34735, &gk),
    ];
    if fmt == 3 {
        entries.push(ascii(42113, "nan"));
    } else {
        entries.push(ascii(42113, "0"));
    }
    entries.sort_by_key(|e| e.tag);

    let ifd_offset = 8u32;
    let ifd_len = 2 + 12 * entries.len() as u32 + 4;
    let mut extra_offset = ifd_offset + ifd_len;
    let mut extra = Vec::new();
    let mut ifd = Vec::new();
    ifd.extend((entries.len() as u16).to_le_bytes());
    let mut value_slots = Vec::new();
    for e in &entries {
        ifd.extend(e.tag.to_le_bytes());
        ifd.extend(e.ty.to_le_bytes());
        ifd.extend(e.count.to_le_bytes());
        if e.data.len() <= 4 {
            let mut v = e.data.clone();
            v.resize(4, 0);
            value_slots.push((e.tag, ifd.len()));
            ifd.extend(v);
        } else {
            ifd.extend(extra_offset.to_le_bytes());
            extra.extend(&e.data);
            extra_offset += e.data.len() as u32;
            if extra.len() % 2 == 1 {
                extra.push(0);
                extra_offset += 1;
            }
        }
    }
    ifd.extend(0u32.to_le_bytes());
    let strip_offset = extra_offset;
    if let Some(&(_, pos)) = value_slots.iter().find(|(t, _)| *t == 273) {
        ifd[pos..pos + 4].copy_from_slice(&strip_offset.to_le_bytes());
    }
    let mut out = Vec::with_capacity(strip_offset as usize + pixels.len());
    out.extend(b"II");
    out.extend(42u16.to_le_bytes());
    out.extend(ifd_offset.to_le_bytes());
    out.extend(ifd);
    out.extend(extra);
    out.extend(pixels);
    out
}

fn description(band_names: &[String], provenance: Option<&serde_json::Value>) -> String {
    serde_json::to_string(&Description { bands: band_names.to_vec(), provenance: provenance.cloned() })
        .expect("description serializes")
}

/// Writes a float32 GeoTIFF with NaN nodata.
pub fn write_geotiff_f32(path: &Path, raster: &Raster, provenance: Option<&serde_json::Value>) -> Result<()> {
    let bytes = encode(&raster.grid, Samples::F32(raster), &description(&raster.band_names, provenance));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a single-band uint8 GeoTIFF (0 = nodata).
pub fn write_geotiff_u8(
    path: &Path,
    grid: &GridGeometry,
    data: &[u8],
    band_name: &str,
    provenance: Option<&serde_json::Value>,
) -> Result<()> {
    assert_eq!(data.len(), grid.len());
    let bytes = encode(grid, Samples::U8(data), &description(&[band_name.to_string()], provenance));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a north-up GeoTIFF into a band-major raster. Values equal to the
/// declared nodata become NaN.
pub fn read_geotiff(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let perr = |e: tiff::TiffError| Error::parse(path, e);
    let mut dec = Decoder::new(BufReader::new(file)).map_err(perr)?;
    let (w, h) = dec.dimensions().map_err(perr)?;
    let (w, h) = (w as usize, h as usize);
    let scale = dec
        .find_tag(Tag::Unknown(33550))
        .map_err(perr)?
        .ok_or_else(|| Error::parse(path, "missing ModelPixelScale tag"))?
        .into_f64_vec()
        .map_err(perr)?;
    let tie = dec
        .find_tag(Tag::Unknown(33922))
        .map_err(perr)?
        .ok_or_else(|| Error::parse(path, "missing ModelTiepoint tag"))?
        .into_f64_vec()
        .map_err(perr)?;
    if tie.len() < 6 || scale.len() < 2 {
        return Err(Error::parse(path, "malformed georeferencing tags"));
    }
    if (scale[0] - scale[1]).abs() > 1e-9 * scale[0].abs() {
        return Err(Error::parse(path, "non-square pixels are not supported"));
    }
    let crs = dec
        .find_tag(Tag::Unknown(34735))
        .map_err(perr)?
        .map(|v| v.into_u16_vec())
        .transpose()
        .map_err(perr)?
        .and_then(|gk| {
            gk.get(4..)?
                .chunks(4)
                .find(|k| k.len() == 4 && (k[0] == 3072 || k[0] == 2048) && k[1] == 0)
                .map(|k| format!("EPSG:{}", k[3]))
        });
    let nodata: Option<f64> = dec
        .find_tag(Tag::Unknown(42113))
        .map_err(perr)?
        .and_then(|v| v.into_string().ok())
        .and_then(|s| s.trim_end_matches('\0').trim().parse().ok());
    let desc: Description = dec
        .find_tag(Tag::ImageDescription)
        .map_err(perr)?
        .and_then(|v| v.into_string().ok())
        .and_then(|s| serde_json::from_str(s.trim_end_matches('\0')).ok())
        .unwrap_or_default();
    let grid = GridGeometry {
        origin_x: tie[3] - tie[0] * scale[0],
        origin_y: tie[4] + tie[1] * scale[1],
        pixel_size: scale[0],
        width: w,
        height: h,
        crs,
    };
    let values: Vec<f64> = match dec.read_image().map_err(perr)? {
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        _ => return Err(Error::parse(path, "unsupported sample type")),
    };
    let nb = values.len() / grid.len().max(1);
    let mut bands = vec![Vec::with_capacity(grid.len()); nb];
    for (i, v) in values.into_iter().enumerate() {
        let v = match nodata {
            Some(nd) if v == nd => f64::NAN,
            _ => v,
        };
        bands[i % nb].push(v);
    }
    let band_names = if desc.bands.len() == nb {
        desc.bands
    } else {
        (0..nb).map(|i| format!("band{}", i + 1)).collect()
    };
    Ok(Raster { grid, band_names, bands })
}
