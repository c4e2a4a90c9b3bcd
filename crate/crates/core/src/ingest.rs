//! Loaders for every external dataset.
//!
//! GeoJSON files are recognised by content, not extension, so `.txt`
//! supplementary files load as-is. Coordinates stay as `f64` with no
//! snapping.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geo::{self, GeoError, GeoPoint, GeoPolygon, Geometry};

/// Property names tried, in order, for a detection's confidence.
pub const CONFIDENCE_KEYS: [&str; 3] = ["confidence", "score", "prob"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: parse error at line {line}, column {column} (byte offset {offset}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("{path}: feature {feature}: expected {expected} geometry, found {found}")]
    GeometryMismatch {
        path: PathBuf,
        feature: String,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: feature {feature}: {message}")]
    Validation {
        path: PathBuf,
        feature: String,
        message: String,
    },
    #[error("{path}: feature {feature} has no confidence property (tried {CONFIDENCE_KEYS:?})")]
    MissingConfidence { path: PathBuf, feature: String },
    #[error("{path}: duplicate site id {id}")]
    DuplicateId { path: PathBuf, id: String },
    #[error("{path}: missing column {column}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: table has no data rows")]
    EmptyTable { path: PathBuf },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl IngestError {
    pub fn path(&self) -> Option<&Path> {
        match self {
            IngestError::Io { path, .. }
            | IngestError::Parse { path, .. }
            | IngestError::GeometryMismatch { path, .. }
            | IngestError::Validation { path, .. }
            | IngestError::MissingConfidence { path, .. }
            | IngestError::DuplicateId { path, .. }
            | IngestError::MissingColumn { path, .. }
            | IngestError::EmptyTable { path } => Some(path),
            IngestError::InvalidArgument(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedGeometry {
    Point,
    Polygon,
    Any,
}

impl ExpectedGeometry {
    fn name(&self) -> &'static str {
        match self {
            ExpectedGeometry::Point => "Point",
            ExpectedGeometry::Polygon => "Polygon",
            ExpectedGeometry::Any => "Point or Polygon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub id: String,
    pub geometry: Geometry,
    pub properties: Map<String, Value>,
}

impl Feature {
    pub fn number(&self, key: &str) -> Option<f64> {
        match self.properties.get(key)? {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        }
    }

    pub fn string(&self, key: &str) -> Option<String> {
        match self.properties.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    }
}

fn io_err(path: &Path, source: io::Error) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    String::from_utf8(bytes).map_err(|e| {
        let offset = e.utf8_error().valid_up_to();
        let (line, column) = line_col(&e.as_bytes()[..offset]);
        IngestError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            offset,
            message: "file is not valid UTF-8".into(),
        }
    })
}

fn line_col(prefix: &[u8]) -> (usize, usize) {
    let line = prefix.iter().filter(|&&b| b == b'\n').count() + 1;
    let column = prefix.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
    (line, column)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Parses a GeoJSON FeatureCollection, preserving feature order and
/// properties.
pub fn parse_feature_collection(
    path: &Path,
    text: &str,
    expected: ExpectedGeometry,
) -> Result<Vec<Feature>, IngestError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| IngestError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let invalid = |feature: &str, message: String| IngestError::Validation {
        path: path.to_path_buf(),
        feature: feature.to_string(),
        message,
    };
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(invalid("<collection>", "document is not a GeoJSON FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| invalid("<collection>", "missing \"features\" array".into()))?;

    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let properties = match f.get("properties") {
            Some(Value::Object(m)) => m.clone(),
            None | Some(Value::Null) => Map::new(),
            Some(_) => return Err(invalid(&format!("#{i}"), "properties must be an object".into())),
        };
        let id = feature_id(f, &properties).unwrap_or_else(|| format!("#{i}"));
        let geom = f
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| invalid(&id, "feature has no geometry".into()))?;
        let gtype = geom.get("type").and_then(Value::as_str).unwrap_or("<missing>");
        let mismatch = || IngestError::GeometryMismatch {
            path: path.to_path_buf(),
            feature: id.clone(),
            expected: expected.name(),
            found: gtype.to_string(),
        };
        let coords = geom.get("coordinates").ok_or_else(|| invalid(&id, "geometry has no coordinates".into()))?;
        let geometry = match gtype {
            "Point" if expected != ExpectedGeometry::Polygon => {
                Geometry::Point(parse_position(coords).map_err(|m| invalid(&id, m))?)
            }
            "Polygon" if expected != ExpectedGeometry::Point => {
                Geometry::Polygon(parse_polygon(coords).map_err(|m| invalid(&id, m))?)
            }
            _ => return Err(mismatch()),
        };
        out.push(Feature {
            id,
            geometry,
            properties,
        });
    }
    Ok(out)
}

fn feature_id(f: &Value, props: &Map<String, Value>) -> Option<String> {
    let as_id = |v: &Value| match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    };
    f.get("id")
        .and_then(as_id)
        .or_else(|| ["id", "ID", "fid", "FID", "ID_site"].iter().find_map(|k| props.get(*k).and_then(as_id)))
}

fn parse_position(v: &Value) -> Result<GeoPoint, String> {
    let arr = v.as_array().ok_or("position must be an array")?;
    if arr.len() < 2 {
        return Err("position needs at least two numbers".into());
    }
    let lon = arr[0].as_f64().ok_or("longitude is not a number")?;
    let lat = arr[1].as_f64().ok_or("latitude is not a number")?;
    GeoPoint::new(lon, lat).map_err(|e| e.to_string())
}

fn parse_ring(v: &Value) -> Result<Vec<GeoPoint>, String> {
    v.as_array()
        .ok_or("ring must be an array")?
        .iter()
        .map(parse_position)
        .collect()
}

fn parse_polygon(v: &Value) -> Result<GeoPolygon, String> {
    let rings = v.as_array().ok_or("polygon coordinates must be an array of rings")?;
    let (first, rest) = rings.split_first().ok_or("polygon has no rings")?;
    let exterior = parse_ring(first)?;
    let holes = rest.iter().map(parse_ring).collect::<Result<Vec<_>, _>>()?;
    GeoPolygon::new(exterior, holes).map_err(|e| e.to_string())
}

pub fn load_feature_collection(path: &Path, expected: ExpectedGeometry) -> Result<Vec<Feature>, IngestError> {
    let text = read_text(path)?;
    parse_feature_collection(path, &text, expected)
}

/// A detected palm: a point, or the centroid of its detection polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct PalmDetection {
    pub id: String,
    pub centroid: GeoPoint,
    pub footprint: Option<GeoPolygon>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOptions {
    pub min_confidence: f64,
    /// Confidence assigned to features without a confidence property. When
    /// unset, such features are an error unless `min_confidence` is 0.
    pub default_confidence: Option<f64>,
}

impl DetectionOptions {
    pub fn threshold(min_confidence: f64) -> Self {
        Self {
            min_confidence,
            default_confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub detections: Vec<PalmDetection>,
    pub total: usize,
    pub excluded: usize,
}

pub fn detections_from_features(
    path: &Path,
    features: Vec<Feature>,
    opts: DetectionOptions,
) -> Result<DetectionSet, IngestError> {
    if !(0.0..=1.0).contains(&opts.min_confidence) {
        return Err(IngestError::InvalidArgument(format!(
            "min_confidence {} outside [0, 1]",
            opts.min_confidence
        )));
    }
    let total = features.len();
    let mut detections = Vec::with_capacity(total);
    for f in features {
        let confidence = match CONFIDENCE_KEYS.iter().find(|k| f.properties.contains_key(**k)) {
            Some(key) => f.number(key).ok_or_else(|| IngestError::Validation {
                path: path.to_path_buf(),
                feature: f.id.clone(),
                message: format!("property {key} is not a number"),
            })?,
            None => match opts.default_confidence {
                Some(c) => c,
                None if opts.min_confidence > 0.0 => {
                    return Err(IngestError::MissingConfidence {
                        path: path.to_path_buf(),
                        feature: f.id,
                    })
                }
                None => 1.0,
            },
        };
        if !(0.0..=1.0).contains(&confidence) {
            return Err(IngestError::Validation {
                path: path.to_path_buf(),
                feature: f.id,
                message: format!("confidence {confidence} outside [0, 1]"),
            });
        }
        if confidence < opts.min_confidence {
            continue;
        }
        let (centroid, footprint) = match f.geometry {
            Geometry::Point(p) => (p, None),
            Geometry::Polygon(poly) => {
                let c = poly.centroid().map_err(|e| IngestError::Validation {
                    path: path.to_path_buf(),
                    feature: f.id.clone(),
                    message: e.to_string(),
                })?;
                (c, Some(poly))
            }
        };
        detections.push(PalmDetection {
            id: f.id,
            centroid,
            footprint,
            confidence,
        });
    }
    let excluded = total - detections.len();
    Ok(DetectionSet {
        detections,
        total,
        excluded,
    })
}

pub fn load_detections(path: &Path, opts: DetectionOptions) -> Result<DetectionSet, IngestError> {
    let features = load_feature_collection(path, ExpectedGeometry::Any)?;
    detections_from_features(path, features, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Certainty {
    High,
    Medium,
    Low,
}

/// Representative point of an archaeological site or zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchaeoCentroid {
    pub id_site: String,
    pub location: GeoPoint,
    pub certainty: Certainty,
    pub source: String,
}

/// Loads site points; polygon zones are reduced to their centroids.
pub fn load_centroids(path: &Path) -> Result<Vec<ArchaeoCentroid>, IngestError> {
    let features = load_feature_collection(path, ExpectedGeometry::Any)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(features.len());
    for f in features {
        let id_site = ["ID_site", "id_site", "name"]
            .iter()
            .find_map(|k| f.string(k))
            .unwrap_or_else(|| f.id.clone());
        if !seen.insert(id_site.clone()) {
            return Err(IngestError::DuplicateId {
                path: path.to_path_buf(),
                id: id_site,
            });
        }
        let location = geo::feature_centroid(&f.geometry).map_err(|e| IngestError::Validation {
            path: path.to_path_buf(),
            feature: f.id.clone(),
            message: e.to_string(),
        })?;
        let certainty = match f.string("certainty").or_else(|| f.string("Certainty")).map(|s| s.to_lowercase()) {
            Some(s) if s == "low" => Certainty::Low,
            Some(s) if s == "medium" => Certainty::Medium,
            _ => Certainty::High,
        };
        let source = ["Location_source", "ID_source_field", "source"]
            .iter()
            .find_map(|k| f.string(k))
            .unwrap_or_else(|| "N/A".into());
        out.push(ArchaeoCentroid {
            id_site,
            location,
            certainty,
            source,
        });
    }
    Ok(out)
}

pub fn load_polygons(path: &Path) -> Result<Vec<GeoPolygon>, IngestError> {
    Ok(load_feature_collection(path, ExpectedGeometry::Polygon)?
        .into_iter()
        .filter_map(|f| match f.geometry {
            Geometry::Polygon(p) => Some(p),
            Geometry::Point(_) => None,
        })
        .collect())
}

/// One 200 m annotation cell with its stated area and perimeter.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationCell {
    pub cell_id: String,
    pub polygon: GeoPolygon,
    pub area_m2: f64,
    pub perimeter_m: f64,
}

fn find_numeric(f: &Feature, needle: &str) -> Option<f64> {
    f.properties
        .keys()
        .find(|k| k.to_lowercase().contains(needle))
        .and_then(|k| f.number(k))
}

fn ring_perimeter(ring: &[GeoPoint]) -> f64 {
    ring.windows(2).map(|w| geo::geodesic_distance(w[0], w[1])).sum()
}

/// Loads annotation cells, checking stated areas against the geometry.
pub fn load_annotation_cells(path: &Path) -> Result<Vec<AnnotationCell>, IngestError> {
    let features = load_feature_collection(path, ExpectedGeometry::Polygon)?;
    let mut out = Vec::with_capacity(features.len());
    for f in features {
        let Geometry::Polygon(polygon) = f.geometry.clone() else {
            unreachable!("polygon-only collection")
        };
        let computed = polygon.area_m2();
        let area_m2 = match find_numeric(&f, "area") {
            Some(stated) => {
                if (stated - computed).abs() > 0.02 * computed.max(stated) {
                    return Err(IngestError::Validation {
                        path: path.to_path_buf(),
                        feature: f.id,
                        message: format!("stated area {stated} m² differs from geometry ({computed:.1} m²) by more than 2%"),
                    });
                }
                stated
            }
            None => computed,
        };
        let perimeter_m = find_numeric(&f, "perim").unwrap_or_else(|| ring_perimeter(polygon.exterior()));
        out.push(AnnotationCell {
            cell_id: f.id,
            polygon,
            area_m2,
            perimeter_m,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingFootprint {
    pub polygon: GeoPolygon,
    pub centroid: GeoPoint,
}

pub fn load_buildings(path: &Path) -> Result<Vec<BuildingFootprint>, IngestError> {
    load_feature_collection(path, ExpectedGeometry::Polygon)?
        .into_iter()
        .map(|f| {
            let Geometry::Polygon(polygon) = f.geometry else {
                unreachable!("polygon-only collection")
            };
            let centroid = polygon.centroid().map_err(|e: GeoError| IngestError::Validation {
                path: path.to_path_buf(),
                feature: f.id.clone(),
                message: e.to_string(),
            })?;
            Ok(BuildingFootprint { polygon, centroid })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbifOccurrence {
    pub location: GeoPoint,
    pub elevation_m: Option<f64>,
    pub taxon: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbifTable {
    pub occurrences: Vec<GbifOccurrence>,
    pub total_rows: usize,
    /// Rows skipped for missing or invalid coordinates.
    pub invalid_rows: usize,
}

/// Loads a GBIF occurrence export (TSV or CSV, detected from the header).
pub fn load_gbif_table(path: &Path) -> Result<GbifTable, IngestError> {
    let text = read_text(path)?;
    parse_gbif_table(path, &text)
}

pub fn parse_gbif_table(path: &Path, text: &str) -> Result<GbifTable, IngestError> {
    let header = text.lines().next().unwrap_or("");
    let parse_err = |line: usize, message: String| IngestError::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        offset: byte_offset(text, line, 1),
        message,
    };
    let (tabs, commas) = (header.contains('\t'), header.contains(','));
    let delimiter = match (tabs, commas) {
        (true, true) => return Err(parse_err(1, "header mixes tab and comma delimiters".into())),
        (true, false) => b'\t',
        _ => b',',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .quoting(delimiter == b',')
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing = |name: &str| IngestError::MissingColumn {
        path: path.to_path_buf(),
        column: name.to_string(),
    };
    let lat_col = column("decimalLatitude").ok_or_else(|| missing("decimalLatitude"))?;
    let lon_col = column("decimalLongitude").ok_or_else(|| missing("decimalLongitude"))?;
    let elev_col = column("elevation");
    let taxon_col = column("species").or_else(|| column("scientificName"));

    // Read everything first so a malformed row fails the whole load.
    let mut records = Vec::new();
    for r in reader.records() {
        let rec = r.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(IngestError::EmptyTable { path: path.to_path_buf() });
    }
    let mut occurrences = Vec::with_capacity(records.len());
    let mut invalid_rows = 0;
    for rec in &records {
        let num = |c: usize| rec.get(c).map(str::trim).filter(|s| !s.is_empty()).and_then(|s| s.parse::<f64>().ok());
        let location = match (num(lon_col), num(lat_col)) {
            (Some(lon), Some(lat)) => GeoPoint::new(lon, lat).ok(),
            _ => None,
        };
        let Some(location) = location else {
            invalid_rows += 1;
            continue;
        };
        occurrences.push(GbifOccurrence {
            location,
            elevation_m: elev_col.and_then(num).filter(|e| e.is_finite()),
            taxon: taxon_col.and_then(|c| rec.get(c)).unwrap_or("").to_string(),
        });
    }
    Ok(GbifTable {
        occurrences,
        total_rows: records.len(),
        invalid_rows,
    })
}

fn position_json(p: &GeoPoint) -> Value {
    Value::Array(vec![p.lon.into(), p.lat.into()])
}

pub fn geometry_json(g: &Geometry) -> Value {
    let mut m = Map::new();
    match g {
        Geometry::Point(p) => {
            m.insert("type".into(), "Point".into());
            m.insert("coordinates".into(), position_json(p));
        }
        Geometry::Polygon(poly) => {
            m.insert("type".into(), "Polygon".into());
            let ring = |r: &[GeoPoint]| Value::Array(r.iter().map(position_json).collect());
            let mut rings = vec![ring(poly.exterior())];
            rings.extend(poly.holes().iter().map(|h| ring(h)));
            m.insert("coordinates".into(), Value::Array(rings));
        }
    }
    Value::Object(m)
}

/// Serialises features as a FeatureCollection. `collection_properties`, if
/// given, is stored as a foreign member named `properties`.
pub fn feature_collection_json(features: &[Feature], collection_properties: Option<Map<String, Value>>) -> Value {
    let mut doc = Map::new();
    doc.insert("type".into(), "FeatureCollection".into());
    if let Some(props) = collection_properties {
        doc.insert("properties".into(), Value::Object(props));
    }
    let feats = features
        .iter()
        .map(|f| {
            let mut m = Map::new();
            m.insert("type".into(), "Feature".into());
            m.insert("id".into(), f.id.clone().into());
            m.insert("properties".into(), Value::Object(f.properties.clone()));
            m.insert("geometry".into(), geometry_json(&f.geometry));
            Value::Object(m)
        })
        .collect();
    doc.insert("features".into(), Value::Array(feats));
    Value::Object(doc)
}
