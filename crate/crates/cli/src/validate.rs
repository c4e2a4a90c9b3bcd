//! Input validation with a machine-readable report.

use std::path::Path;

use palmsight_core::ingest::{self, DetectionOptions, IngestError};
use palmsight_core::raster::Mosaic;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct InputError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct InputReport {
    pub input: &'static str,
    pub path: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<InputError>,
}

#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub inputs: Vec<InputReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub config_errors: Vec<String>,
}

fn describe(e: &IngestError) -> InputError {
    let base = |kind| InputError {
        kind,
        message: e.to_string(),
        line: None,
        column: None,
        offset: None,
        feature: None,
    };
    match e {
        IngestError::Io { .. } => base("io"),
        IngestError::Parse { line, column, offset, .. } => InputError {
            line: Some(*line),
            column: Some(*column),
            offset: Some(*offset),
            ..base("parse")
        },
        IngestError::GeometryMismatch { feature, .. } => InputError {
            feature: Some(feature.clone()),
            ..base("geometry_mismatch")
        },
        IngestError::Validation { feature, .. } => InputError {
            feature: Some(feature.clone()),
            ..base("validation")
        },
        IngestError::MissingConfidence { feature, .. } => InputError {
            feature: Some(feature.clone()),
            ..base("missing_confidence")
        },
        IngestError::DuplicateId { .. } => base("duplicate_id"),
        IngestError::MissingColumn { .. } => base("missing_column"),
        IngestError::EmptyTable { .. } => base("empty_table"),
        IngestError::InvalidArgument(_) => base("invalid_argument"),
    }
}

fn check(name: &'static str, path: &Path, cfg: &RunConfig) -> InputReport {
    let result: Result<usize, InputError> = match name {
        "detections" => ingest::load_detections(
            path,
            DetectionOptions {
                min_confidence: cfg.detections.min_confidence,
                default_confidence: cfg.detections.default_confidence,
            },
        )
        .map(|d| d.total)
        .map_err(|e| describe(&e)),
        "centroids" => ingest::load_centroids(path).map(|v| v.len()).map_err(|e| describe(&e)),
        "study_area" | "labels" => ingest::load_polygons(path).map(|v| v.len()).map_err(|e| describe(&e)),
        "labeled_area" => ingest::load_annotation_cells(path).map(|v| v.len()).map_err(|e| describe(&e)),
        "buildings" => ingest::load_buildings(path).map(|v| v.len()).map_err(|e| describe(&e)),
        "gbif" => ingest::load_gbif_table(path).map(|t| t.occurrences.len()).map_err(|e| describe(&e)),
        "srtm_dir" => Mosaic::load_dir(path).map(|m| m.tiles().len()).map_err(|e| InputError {
            kind: "raster",
            message: e.to_string(),
            line: None,
            column: None,
            offset: None,
            feature: None,
        }),
        _ => unreachable!("unknown input {name}"),
    };
    let path = path.display().to_string();
    match result {
        Ok(n) => InputReport {
            input: name,
            path,
            ok: true,
            records: Some(n),
            error: None,
        },
        Err(e) => InputReport {
            input: name,
            path,
            ok: false,
            records: None,
            error: Some(e),
        },
    }
}

pub fn validate(cfg: &RunConfig) -> ValidationReport {
    let inputs: Vec<InputReport> = cfg.inputs.named().into_iter().map(|(name, p)| check(name, p, cfg)).collect();
    let config_errors: Vec<String> = cfg.validate().err().map(|e| format!("{e:#}")).into_iter().collect();
    ValidationReport {
        ok: inputs.iter().all(|i| i.ok) && config_errors.is_empty(),
        inputs,
        config_errors,
    }
}
