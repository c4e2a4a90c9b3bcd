//! Pipeline stages. Each stage recomputes the in-memory results it depends
//! on from the raw inputs, so running stages one by one writes the same
//! files as `run-all`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use palmsight_core::cluster::{associate_sites, hdbscan, hdbscan_partition, ClusterResult, ClusterSiteAssociation};
use palmsight_core::deteval::match_and_score;
use palmsight_core::geo::{GeoPoint, GeoPolygon, Geometry, GridSpec, LocalXY, PlanarPolygon, Projection};
use palmsight_core::index::PointIndex;
use palmsight_core::ingest::{self, ArchaeoCentroid, DetectionOptions, DetectionSet, Feature, PalmDetection};
use palmsight_core::raster::{tag_elevation_subsets, Mosaic, RasterError, SubsetTag};
use palmsight_core::score::{self, ControlConstraint, ControlSample, IdwReport, IdwScore};
use palmsight_core::stats::{self, BootstrapParams, BootstrapResult};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{ClusterSpace, RunConfig, Task};
use crate::manifest::{num, StageOutputs, StageRecord};
use crate::report;

pub const STAGES: [&str; 7] = ["cluster", "idw", "bootstrap", "grid-corr", "elevation", "deteval", "report"];

/// Outcome of a stage that could not run for lack of an optional input.
pub struct Skipped(pub String);

struct Palms {
    set: DetectionSet,
    projection: Projection,
    xy: Vec<LocalXY>,
    index: PointIndex,
}

struct Clusters {
    result: ClusterResult,
    associations: Vec<ClusterSiteAssociation>,
    /// Cluster holding the most site centroids (lowest id on ties).
    site_cluster: Option<usize>,
}

struct ControlSet {
    sample: ControlSample,
    scores: IdwReport,
}

struct Idw {
    sites: IdwReport,
    within: Option<ControlSet>,
    no_sites: Option<ControlSet>,
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    palms: Option<Palms>,
    centroids: Option<Vec<ArchaeoCentroid>>,
    clusters: Option<Clusters>,
    idw: Option<Idw>,
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> std::result::Result<&'a Path, Skipped> {
    p.as_deref().ok_or_else(|| Skipped(format!("no {what} input configured")))
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        Self {
            cfg,
            out,
            palms: None,
            centroids: None,
            clusters: None,
            idw: None,
        }
    }

    fn detection_options(&self) -> DetectionOptions {
        DetectionOptions {
            min_confidence: self.cfg.detections.min_confidence,
            default_confidence: self.cfg.detections.default_confidence,
        }
    }

    fn ensure_palms(&mut self) -> Result<&Palms> {
        if self.palms.is_none() {
            let path = self
                .cfg
                .inputs
                .detections
                .clone()
                .ok_or_else(|| anyhow!("no detections input configured"))?;
            let set = ingest::load_detections(&path, self.detection_options())?;
            log::info!(
                "loaded {} detections from {} ({} below confidence {})",
                set.detections.len(),
                path.display(),
                set.excluded,
                self.cfg.detections.min_confidence
            );
            if set.detections.is_empty() {
                bail!("no detections at or above confidence {}", self.cfg.detections.min_confidence);
            }
            let pts: Vec<GeoPoint> = set.detections.iter().map(|d| d.centroid).collect();
            let projection = Projection::new(bbox_center(&pts));
            let xy = pts
                .iter()
                .map(|p| projection.project(*p))
                .collect::<Result<Vec<_>, _>>()
                .context("projecting detections")?;
            let index = PointIndex::build(&xy)?;
            self.palms = Some(Palms {
                set,
                projection,
                xy,
                index,
            });
        }
        Ok(self.palms.as_ref().expect("just loaded"))
    }

    fn ensure_centroids(&mut self) -> Result<&[ArchaeoCentroid]> {
        if self.centroids.is_none() {
            let path = self
                .cfg
                .inputs
                .centroids
                .clone()
                .ok_or_else(|| anyhow!("no centroids input configured"))?;
            self.centroids = Some(ingest::load_centroids(&path)?);
        }
        Ok(self.centroids.as_deref().expect("just loaded"))
    }

    fn ensure_clusters(&mut self) -> Result<&Clusters> {
        if self.clusters.is_none() {
            self.ensure_palms()?;
            self.ensure_centroids()?;
            let palms = self.palms.as_ref().expect("loaded");
            let params = self.cfg.cluster.params();
            let started = Instant::now();
            let result = match self.cfg.cluster.space {
                ClusterSpace::Meters => hdbscan(&palms.xy, &params)?,
                ClusterSpace::Degrees => {
                    let deg: Vec<[f64; 2]> = palms.set.detections.iter().map(|d| [d.centroid.lon, d.centroid.lat]).collect();
                    ClusterResult::from_partition(&palms.xy, hdbscan_partition(&deg, &params)?)?
                }
            };
            log::info!(
                "clustered {} points into {} clusters ({} noise) in {:.2}s",
                palms.xy.len(),
                result.clusters.len(),
                result.noise_count(),
                started.elapsed().as_secs_f64()
            );
            let associations = associate_sites(&result, self.centroids.as_deref().expect("loaded"));
            let site_cluster = associations
                .iter()
                .filter(|a| !a.centroid_ids.is_empty())
                .max_by(|a, b| a.centroid_ids.len().cmp(&b.centroid_ids.len()).then(b.cluster_id.cmp(&a.cluster_id)))
                .map(|a| a.cluster_id);
            self.clusters = Some(Clusters {
                result,
                associations,
                site_cluster,
            });
        }
        Ok(self.clusters.as_ref().expect("just computed"))
    }

    fn ensure_idw(&mut self) -> Result<&Idw> {
        if self.idw.is_none() {
            self.ensure_clusters()?;
            let cfg = &self.cfg;
            let palms = self.palms.as_ref().expect("loaded");
            let centroids = self.centroids.as_deref().expect("loaded");
            let clusters = self.clusters.as_ref().expect("computed");
            let params = cfg.idw.params();
            let scorer = Scorer::new(palms, clusters, cfg.idw.cluster_only);

            let centers: Vec<(String, GeoPoint)> = centroids.iter().map(|c| (c.id_site.clone(), c.location)).collect();
            let sites = scorer.report(&centers, &params)?;

            let site_points: Vec<GeoPoint> = centroids.iter().map(|c| c.location).collect();
            let hulls: Vec<GeoPolygon> = clusters.result.clusters.iter().map(|c| c.hull.clone()).collect();
            let within = match clusters.site_cluster {
                Some(sc) => {
                    let region = [clusters.result.clusters[sc].hull.clone()];
                    sample_set(
                        &scorer,
                        &params,
                        &region,
                        &site_points,
                        cfg.controls.buffer_m,
                        cfg.controls.n,
                        cfg.sub_seed(Task::ControlsWithin),
                        ControlConstraint::InClusterOutsideBuffers,
                        "cw",
                    )?
                }
                None => None,
            };
            let no_sites = sample_set(
                &scorer,
                &params,
                &hulls,
                &site_points,
                0.0,
                cfg.controls.n,
                cfg.sub_seed(Task::ControlsNoSites),
                ControlConstraint::InClustersWithoutSites,
                "cn",
            )?;
            self.idw = Some(Idw { sites, within, no_sites });
        }
        Ok(self.idw.as_ref().expect("just computed"))
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_set(
    scorer: &Scorer,
    params: &score::IdwParams,
    region: &[GeoPolygon],
    sites: &[GeoPoint],
    buffer_m: f64,
    n: usize,
    seed: u64,
    constraint: ControlConstraint,
    prefix: &str,
) -> Result<Option<ControlSet>> {
    match score::sample_controls(region, sites, buffer_m, n, seed, constraint) {
        Ok(sample) => {
            let centers: Vec<(String, GeoPoint)> = sample
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("{prefix}{i:03}"), *p))
                .collect();
            let scores = scorer.report(&centers, params)?;
            Ok(Some(ControlSet { sample, scores }))
        }
        Err(score::ScoreError::InfeasibleRegion { accepted, proposals }) => {
            log::warn!("{constraint:?}: infeasible region ({accepted} of {proposals} proposals accepted)");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// IDW against all palms, or only against the members of the cluster whose
/// hull contains the scored point.
struct Scorer<'a> {
    palms: &'a Palms,
    per_cluster: Option<Vec<(PlanarPolygon, PointIndex)>>,
}

impl<'a> Scorer<'a> {
    fn new(palms: &'a Palms, clusters: &Clusters, cluster_only: bool) -> Self {
        let per_cluster = cluster_only.then(|| {
            clusters
                .result
                .clusters
                .iter()
                .map(|c| {
                    let xy = c.members.iter().map(|&m| palms.xy[m].xy()).collect();
                    (
                        c.hull.to_planar(),
                        PointIndex::from_xy(palms.projection.origin(), xy).expect("clusters are non-empty"),
                    )
                })
                .collect()
        });
        Self { palms, per_cluster }
    }

    fn report(&self, centers: &[(String, GeoPoint)], params: &score::IdwParams) -> Result<IdwReport> {
        match &self.per_cluster {
            None => Ok(score::idw_report(&self.palms.index, centers, params)?),
            Some(per) => {
                params.validate()?;
                let scores = centers
                    .iter()
                    .map(|(id, c)| {
                        let (g, n_within) = match per.iter().find(|(hull, _)| hull.contains(*c)) {
                            Some((_, idx)) => score::idw_score_xy(idx, self.palms.projection.project_unchecked(*c), params),
                            None => (0.0, 0),
                        };
                        IdwScore {
                            id: id.clone(),
                            g,
                            n_within,
                        }
                    })
                    .collect();
                Ok(IdwReport { params: *params, scores })
            }
        }
    }
}

fn bbox_center(pts: &[GeoPoint]) -> GeoPoint {
    let b = pts.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p.lon), b[1].min(p.lat), b[2].max(p.lon), b[3].max(p.lat)],
    );
    GeoPoint {
        lon: (b[0] + b[2]) / 2.0,
        lat: (b[1] + b[3]) / 2.0,
    }
}

/// Runs one stage and returns its manifest record.
pub fn run_stage(ctx: &mut Context, name: &str, skip_missing: bool) -> Result<StageRecord> {
    let started = Instant::now();
    let out = ctx.out.clone();
    let mut outputs = StageOutputs::new(&out);
    let result = match name {
        "cluster" => stage_cluster(ctx, &mut outputs),
        "idw" => stage_idw(ctx, &mut outputs),
        "bootstrap" => stage_bootstrap(ctx, &mut outputs),
        "grid-corr" => stage_grid_corr(ctx, &mut outputs),
        "elevation" => stage_elevation(ctx, &mut outputs),
        "deteval" => stage_deteval(ctx, &mut outputs),
        "report" => report::stage_report(&out, &mut outputs).map(Ok),
        other => bail!("unknown stage {other}"),
    }
    .with_context(|| format!("stage {name}"))?;
    let status = match result {
        Ok(()) => "completed",
        Err(Skipped(reason)) => {
            if !skip_missing {
                bail!("stage {name}: {reason}");
            }
            outputs.warn(format!("skipped: {reason}"));
            "skipped"
        }
    };
    let seconds = started.elapsed().as_secs_f64();
    log::info!("stage {name} {status} in {seconds:.2}s");
    Ok(outputs.finish(name, status, seconds))
}

type StageResult = Result<std::result::Result<(), Skipped>>;

fn point_feature(id: String, p: GeoPoint, properties: Map<String, Value>) -> Feature {
    Feature {
        id,
        geometry: Geometry::Point(p),
        properties,
    }
}

fn props(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn stage_cluster(ctx: &mut Context, out: &mut StageOutputs) -> StageResult {
    ctx.ensure_clusters()?;
    let palms = ctx.palms.as_ref().expect("loaded");
    let clusters = ctx.clusters.as_ref().expect("computed");
    let centroids = ctx.centroids.as_deref().expect("loaded");
    let result = &clusters.result;

    let hulls: Vec<Feature> = result
        .clusters
        .iter()
        .zip(&clusters.associations)
        .map(|(c, a)| Feature {
            id: format!("cluster-{}", c.id),
            geometry: Geometry::Polygon(c.hull.clone()),
            properties: props(json!({
                "cluster_id": c.id,
                "n_members": c.members.len(),
                "area_m2": c.area_m2,
                "stability": c.stability,
                "n_sites": a.centroid_ids.len(),
            })),
        })
        .collect();
    out.write_json("clusters.geojson", &ingest::feature_collection_json(&hulls, None))?;

    out.write_csv(
        "labels.csv",
        &["detection_id", "lon", "lat", "confidence", "cluster"],
        palms.set.detections.iter().zip(&result.labels).map(|(d, l)| {
            vec![
                d.id.clone(),
                num(d.centroid.lon),
                num(d.centroid.lat),
                num(d.confidence),
                l.map(|c| c.to_string()).unwrap_or_default(),
            ]
        }),
    )?;

    let associated: Vec<&String> = clusters.associations.iter().flat_map(|a| &a.centroid_ids).collect();
    let unassociated: Vec<&String> = centroids.iter().map(|c| &c.id_site).filter(|id| !associated.contains(id)).collect();
    let largest = result.largest();
    out.write_json(
        "associations.json",
        &json!({
            "site_cluster": clusters.site_cluster,
            "largest_cluster": largest.map(|c| c.id),
            "largest_cluster_sites": largest.map(|c| clusters.associations[c.id].centroid_ids.len()),
            "clusters": clusters.associations.iter().filter(|a| !a.centroid_ids.is_empty()).collect::<Vec<_>>(),
            "unassociated_centroids": unassociated,
        }),
    )?;
    out.write_json(
        "cluster_summary.json",
        &json!({
            "detections_total": palms.set.total,
            "detections_excluded": palms.set.excluded,
            "detections_kept": palms.set.detections.len(),
            "min_confidence": ctx.cfg.detections.min_confidence,
            "params": ctx.cfg.cluster.params(),
            "space": ctx.cfg.cluster.space,
            "projection_origin": palms.projection.origin(),
            "n_clusters": result.clusters.len(),
            "noise": result.noise_count(),
            "largest_cluster_size": largest.map(|c| c.members.len()),
            "cluster_sizes": result.clusters.iter().map(|c| c.members.len()).collect::<Vec<_>>(),
        }),
    )?;
    Ok(Ok(()))
}

fn controls_geojson(set: &ControlSet) -> Value {
    let features: Vec<Feature> = set
        .sample
        .points
        .iter()
        .zip(&set.scores.scores)
        .map(|(p, s)| point_feature(s.id.clone(), *p, props(json!({ "G": s.g, "n_within": s.n_within }))))
        .collect();
    ingest::feature_collection_json(
        &features,
        Some(props(json!({
            "seed": set.sample.seed,
            "constraint": set.sample.constraint,
            "buffer_m": set.sample.buffer_m,
            "proposals": set.sample.proposals,
            "accepted": set.sample.accepted,
            "acceptance_rate": set.sample.acceptance_rate(),
        }))),
    )
}

fn stage_idw(ctx: &mut Context, out: &mut StageOutputs) -> StageResult {
    ctx.ensure_idw()?;
    let idw = ctx.idw.as_ref().expect("computed");
    let centroids = ctx.centroids.as_deref().expect("loaded");
    let mut rows = Vec::new();
    for (c, s) in centroids.iter().zip(&idw.sites.scores) {
        rows.push(vec!["site".into(), s.id.clone(), num(c.location.lon), num(c.location.lat), num(s.g), s.n_within.to_string()]);
    }
    for (name, set) in [("controls_within", &idw.within), ("controls_no_sites", &idw.no_sites)] {
        if let Some(set) = set {
            for (p, s) in set.sample.points.iter().zip(&set.scores.scores) {
                rows.push(vec![name.into(), s.id.clone(), num(p.lon), num(p.lat), num(s.g), s.n_within.to_string()]);
            }
        }
    }
    out.write_csv("idw.csv", &["set", "id", "lon", "lat", "G", "n_within"], rows)?;
    out.write_json(
        "idw.json",
        &json!({
            "params": idw.sites.params,
            "cluster_only": ctx.cfg.idw.cluster_only,
            "sites": idw.sites.scores,
            "controls_within": idw.within.as_ref().map(|s| &s.scores.scores),
            "controls_no_sites": idw.no_sites.as_ref().map(|s| &s.scores.scores),
        }),
    )?;
    match &idw.within {
        Some(set) => {
            out.write_json("controls_within.geojson", &controls_geojson(set))?;
        }
        None => out.warn("no within-cluster control points (no site-bearing cluster or region infeasible)".into()),
    }
    match &idw.no_sites {
        Some(set) => {
            out.write_json("controls_no_sites.geojson", &controls_geojson(set))?;
        }
        None => out.warn("no control points in site-free clusters".into()),
    }
    Ok(Ok(()))
}

#[derive(Serialize)]
struct BootstrapSet {
    name: String,
    n: usize,
    result: BootstrapResult,
}

fn stage_bootstrap(ctx: &mut Context, out: &mut StageOutputs) -> StageResult {
    ctx.ensure_idw()?;
    let idw = ctx.idw.as_ref().expect("computed");
    let clusters = ctx.clusters.as_ref().expect("computed");
    let bc = &ctx.cfg.bootstrap;
    let params = |task| BootstrapParams {
        samples: bc.samples,
        sample_size: bc.sample_size,
        ci_level: bc.ci_level,
        seed: ctx.cfg.sub_seed(task),
    };
    let site_ids: Option<&Vec<String>> = clusters.site_cluster.map(|sc| &clusters.associations[sc].centroid_ids);
    let site_values: Vec<f64> = idw
        .sites
        .scores
        .iter()
        .filter(|s| site_ids.is_none_or(|ids| ids.contains(&s.id)))
        .map(|s| s.g)
        .collect();
    if site_ids.is_none() {
        out.warn("no cluster contains a site centroid; using all centroids".into());
    }
    let mut sets = Vec::new();
    let mut push = |name: &str, values: &[f64], task| -> Result<()> {
        if values.is_empty() {
            return Ok(());
        }
        sets.push(BootstrapSet {
            name: name.into(),
            n: values.len(),
            result: stats::bootstrap_mean_ci(values, &params(task))?,
        });
        Ok(())
    };
    push("site_centroids", &site_values, Task::BootstrapSites)?;
    if let Some(s) = &idw.within {
        push("controls_within_cluster", &s.scores.values(), Task::BootstrapWithin)?;
    }
    if let Some(s) = &idw.no_sites {
        push("controls_no_site_clusters", &s.scores.values(), Task::BootstrapNoSites)?;
    }
    let comparisons: Vec<Value> = sets
        .iter()
        .skip(1)
        .map(|other| {
            let site = &sets[0].result;
            json!({
                "a": sets[0].name,
                "b": other.name,
                "a_mean_exceeds_b": site.observed_mean > other.result.observed_mean,
                "intervals_overlap": site.overlaps(&other.result),
            })
        })
        .collect();
    out.write_csv(
        "bootstrap.csv",
        &["set", "n", "observed_mean", "ci_low", "ci_high", "ci_level"],
        sets.iter().map(|s| {
            vec![
                s.name.clone(),
                s.n.to_string(),
                num(s.result.observed_mean),
                num(s.result.ci_low),
                num(s.result.ci_high),
                num(s.result.ci_level),
            ]
        }),
    )?;
    out.write_json(
        "bootstrap.json",
        &json!({
            "samples": bc.samples,
            "sample_size": bc.sample_size,
            "ci_level": bc.ci_level,
            "sets": sets,
            "comparisons": comparisons,
        }),
    )?;
    Ok(Ok(()))
}

fn stage_grid_corr(ctx: &mut Context, out: &mut StageOutputs) -> StageResult {
    let buildings_path = match require(&ctx.cfg.inputs.buildings, "buildings") {
        Ok(p) => p.to_path_buf(),
        Err(s) => return Ok(Err(s)),
    };
    let study = match &ctx.cfg.inputs.study_area {
        Some(p) => Some(ingest::load_polygons(p)?),
        None => None,
    };
    let buildings = ingest::load_buildings(&buildings_path)?;
    let palms = ctx.ensure_palms()?;
    let palm_pts: Vec<GeoPoint> = palms.set.detections.iter().map(|d| d.centroid).collect();
    let bld_pts: Vec<GeoPoint> = buildings.iter().map(|b| b.centroid).collect();
    let mut extent_pts: Vec<GeoPoint> = palm_pts.iter().chain(&bld_pts).copied().collect();
    if let Some(study) = &study {
        extent_pts.extend(study.iter().flat_map(|p| p.exterior().iter().copied()));
    }
    let grid = GridSpec::covering(&extent_pts, ctx.cfg.grid.cell_size)?;
    let palm_counts = score::count_per_cell(&palm_pts, &grid);
    let bld_counts = score::count_per_cell(&bld_pts, &grid);

    let (cells, rule): (Vec<(u32, u32)>, &str) = match &study {
        Some(study) => {
            let planar: Vec<PlanarPolygon> = study.iter().map(|p| p.to_planar()).collect();
            let mut cells = Vec::new();
            for row in 0..grid.n_rows {
                for col in 0..grid.n_cols {
                    let c = grid.cell_center(col, row);
                    if planar.iter().any(|p| p.contains(c)) {
                        cells.push((col, row));
                    }
                }
            }
            (cells, "cell center inside study area")
        }
        None => {
            let mut cells: Vec<(u32, u32)> = palm_counts.counts.keys().chain(bld_counts.counts.keys()).copied().collect();
            cells.sort_by_key(|&(c, r)| (r, c));
            cells.dedup();
            (cells, "cells with at least one palm or building")
        }
    };
    let palms_v: Vec<f64> = cells.iter().map(|&c| palm_counts.get(c) as f64).collect();
    let blds_v: Vec<f64> = cells.iter().map(|&c| bld_counts.get(c) as f64).collect();
    out.write_csv(
        "grid_counts.csv",
        &["col", "row", "center_lon", "center_lat", "palms", "buildings"],
        cells.iter().zip(palms_v.iter().zip(&blds_v)).map(|(&(c, r), (p, b))| {
            let center = grid.cell_center(c, r);
            vec![c.to_string(), r.to_string(), num(center.lon), num(center.lat), p.to_string(), b.to_string()]
        }),
    )?;
    let spearman = match stats::spearman(&palms_v, &blds_v) {
        Ok(r) => json!(r),
        Err(e) => {
            out.warn(format!("spearman: {e}"));
            json!({ "error": e.to_string() })
        }
    };
    out.write_json(
        "grid_corr.json",
        &json!({
            "grid": grid,
            "cell_rule": rule,
            "n_cells": cells.len(),
            "palms_in_cells": palms_v.iter().sum::<f64>(),
            "buildings_in_cells": blds_v.iter().sum::<f64>(),
            "palms_off_grid": palm_counts.outside,
            "buildings_off_grid": bld_counts.outside,
            "building_assignment": "footprint centroid",
            "spearman": spearman,
        }),
    )?;
    Ok(Ok(()))
}

fn round_m(v: f64) -> f64 {
    v.round()
}

fn stage_elevation(ctx: &mut Context, out: &mut StageOutputs) -> StageResult {
    let srtm_dir = match require(&ctx.cfg.inputs.srtm_dir, "srtm_dir") {
        Ok(p) => p.to_path_buf(),
        Err(s) => return Ok(Err(s)),
    };
    let mosaic = Mosaic::load_dir(&srtm_dir)?;
    if mosaic.is_empty() {
        return Ok(Err(Skipped(format!("no .hgt tiles in {}", srtm_dir.display()))));
    }
    ctx.ensure_clusters()?;
    let ec = ctx.cfg.elevation.clone();
    let palms = ctx.palms.as_ref().expect("loaded");
    let clusters = ctx.clusters.as_ref().expect("computed");
    let centroids = ctx.centroids.as_deref().expect("loaded");
    let palm_pts: Vec<GeoPoint> = palms.set.detections.iter().map(|d| d.centroid).collect();
    let tags = tag_elevation_subsets(&palm_pts, &clusters.result, centroids, ec.buffer_m);

    let mut by_tag: BTreeMap<SubsetTag, Vec<f64>> = BTreeMap::new();
    let mut dropped: BTreeMap<SubsetTag, usize> = BTreeMap::new();
    let mut rows = Vec::new();
    let samples = palmsight_core::par::map_slice(&palm_pts, |p| mosaic.sample(*p, ec.mode));
    for ((d, tag), s) in palms.set.detections.iter().zip(&tags).zip(samples) {
        match s {
            Ok(e) => {
                by_tag.entry(*tag).or_default().push(e);
                rows.push(vec![tag.as_str().into(), d.id.clone(), num(d.centroid.lon), num(d.centroid.lat), num(e)]);
            }
            Err(RasterError::VoidCell { .. } | RasterError::NoCoverage { .. }) => *dropped.entry(*tag).or_default() += 1,
            Err(e) => return Err(e.into()),
        }
    }

    let mut gbif_info = Value::Null;
    if let Some(path) = &ctx.cfg.inputs.gbif {
        let table = ingest::load_gbif_table(path)?;
        let mut values = Vec::new();
        let mut from_table = 0;
        for (i, occ) in table.occurrences.iter().enumerate() {
            let e = match mosaic.sample(occ.location, ec.mode) {
                Ok(e) => Some(e),
                Err(_) => occ.elevation_m.inspect(|_| from_table += 1),
            };
            if let Some(e) = e {
                values.push((i, occ.location, e));
            }
        }
        let raw: Vec<f64> = values.iter().map(|v| v.2).collect();
        match stats::iqr_filter(&raw, ec.iqr_k) {
            Ok(f) => {
                for (i, loc, e) in &values {
                    if (f.lower..=f.upper).contains(e) {
                        rows.push(vec!["gbif_baseline".into(), format!("gbif-{i}"), num(loc.lon), num(loc.lat), num(*e)]);
                    }
                }
                gbif_info = json!({
                    "total_rows": table.total_rows,
                    "invalid_rows": table.invalid_rows,
                    "with_elevation": raw.len(),
                    "elevation_from_table": from_table,
                    "iqr": { "k": ec.iqr_k, "q1": f.q1, "q3": f.q3, "lower": f.lower, "upper": f.upper, "removed": f.removed },
                });
                by_tag.insert(SubsetTag::GbifBaseline, f.kept);
            }
            Err(e) => out.warn(format!("gbif baseline: {e}")),
        }
    }

    let mut centroid_rows = Vec::new();
    for c in centroids {
        match mosaic.sample(c.location, ec.mode) {
            Ok(e) => centroid_rows.push(json!({ "id_site": c.id_site, "elevation_m": round_m(e) })),
            Err(e) => out.warn(format!("centroid {}: {e}", c.id_site)),
        }
    }
    let centroid_elev: Vec<f64> = centroid_rows.iter().filter_map(|r| r["elevation_m"].as_f64()).collect();
    let centroid_summary = stats::summarize(&centroid_elev).map(|s| {
        json!({ "n": s.n, "min": round_m(s.min), "max": round_m(s.max), "mean": round_m(s.mean) })
    });

    let groups: Vec<(SubsetTag, Vec<f64>)> = by_tag.into_iter().filter(|(_, v)| !v.is_empty()).collect();
    let all: Vec<f64> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
    let kde = kde_section(&groups, &all, ec.kde_points, out);
    let labels: Vec<String> = groups.iter().map(|g| g.0.as_str().to_string()).collect();
    let values: Vec<Vec<f64>> = groups.iter().map(|g| g.1.clone()).collect();
    let (kw, dunn) = match stats::kruskal_wallis(&values) {
        Ok(kw) => {
            let dunn = stats::dunn_posthoc(&values, ec.dunn_adjustment)?.with_labels(&labels);
            (json!(kw), Some(dunn))
        }
        Err(e) => {
            out.warn(format!("kruskal-wallis: {e}"));
            (Value::Null, None)
        }
    };

    out.write_csv("elevation_samples.csv", &["subset", "id", "lon", "lat", "elevation_m"], rows)?;
    if let Some(d) = &dunn {
        let mut drows = Vec::new();
        for i in 0..d.labels.len() {
            for j in (i + 1)..d.labels.len() {
                drows.push(vec![
                    d.labels[i].clone(),
                    d.labels[j].clone(),
                    num(d.z[i][j]),
                    num(d.p_raw[i][j]),
                    num(d.p_adjusted[i][j]),
                ]);
            }
        }
        out.write_csv("dunn.csv", &["group_a", "group_b", "z", "p_raw", "p_adjusted"], drows)?;
    }
    let subsets: Vec<Value> = SubsetTag::ALL
        .iter()
        .map(|t| {
            let vals = groups.iter().find(|g| g.0 == *t).map(|g| g.1.as_slice()).unwrap_or(&[]);
            json!({
                "subset": t.as_str(),
                "n": vals.len(),
                "dropped": dropped.get(t).copied().unwrap_or(0),
                "summary": stats::summarize(vals),
            })
        })
        .collect();
    out.write_json(
        "elevation.json",
        &json!({
            "mode": ec.mode,
            "buffer_m": ec.buffer_m,
            "subsets": subsets,
            "gbif": gbif_info,
            "centroids": { "summary": centroid_summary, "sites": centroid_rows },
            "kde": kde,
            "kruskal_wallis": kw,
            "dunn": dunn,
        }),
    )?;
    Ok(Ok(()))
}

fn kde_section(groups: &[(SubsetTag, Vec<f64>)], all: &[f64], points: usize, out: &mut StageOutputs) -> Value {
    if all.is_empty() || points < 2 {
        return Value::Null;
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1.0);
    let (lo, hi) = (lo - pad, hi + pad);
    let grid: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let mut per = Map::new();
    for (tag, vals) in groups {
        match stats::gaussian_kde(vals, &grid, None) {
            Ok(k) => {
                per.insert(tag.as_str().into(), json!({ "bandwidth": k.bandwidth, "density": k.densities }));
            }
            Err(e) => out.warn(format!("kde {}: {e}", tag.as_str())),
        }
    }
    json!({ "grid": grid, "subsets": per })
}

fn stage_deteval(ctx: &mut Context, out: &mut StageOutputs) -> StageResult {
    let labels_path = match require(&ctx.cfg.inputs.labels, "labels") {
        Ok(p) => p.to_path_buf(),
        Err(s) => return Ok(Err(s)),
    };
    let det_path = ctx
        .cfg
        .inputs
        .detections
        .clone()
        .ok_or_else(|| anyhow!("no detections input configured"))?;
    let cfg = ctx.cfg.deteval.clone();
    let lowest = cfg.confidence_thresholds.iter().copied().fold(1.0, f64::min);
    let preds = ingest::load_detections(
        &det_path,
        DetectionOptions {
            min_confidence: lowest,
            default_confidence: ctx.cfg.detections.default_confidence,
        },
    )?
    .detections;
    let labels = ingest::load_polygons(&labels_path)?;
    let (preds, labels): (Vec<PalmDetection>, Vec<GeoPolygon>) = match &ctx.cfg.inputs.labeled_area {
        Some(area_path) => {
            let cells = ingest::load_annotation_cells(area_path)?;
            let planar: Vec<PlanarPolygon> = cells.iter().map(|c| c.polygon.to_planar()).collect();
            let inside = |p: GeoPoint| planar.iter().any(|c| c.contains(p));
            let preds = preds.into_iter().filter(|d| inside(d.centroid)).collect();
            let mut kept = Vec::new();
            for l in labels {
                if inside(l.centroid()?) {
                    kept.push(l);
                }
            }
            (preds, kept)
        }
        None => (preds, labels),
    };
    let rows = match_and_score(&preds, &labels, &cfg)?;
    if rows.iter().any(|r| r.precision_undefined) {
        out.warn("precision reported as 1 where no prediction passed the threshold".into());
    }
    out.write_csv(
        "deteval.csv",
        &["threshold", "true_positives", "false_positives", "false_negatives", "precision", "recall", "precision_undefined"],
        rows.iter().map(|r| {
            vec![
                num(r.threshold),
                r.true_positives.to_string(),
                r.false_positives.to_string(),
                r.false_negatives.to_string(),
                num(r.precision),
                num(r.recall),
                r.precision_undefined.to_string(),
            ]
        }),
    )?;
    out.write_json(
        "deteval.json",
        &json!({
            "iou_threshold": cfg.iou_threshold,
            "n_labels": labels.len(),
            "n_predictions": preds.len(),
            "rows": rows,
        }),
    )?;
    Ok(Ok(()))
}
