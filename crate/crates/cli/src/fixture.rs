//! Synthetic input bundle: every input the pipeline reads, generated from a
//! Thomas landscape with known structure, plus a config that points at it.

use std::fs;
use std::path::Path;

use anyhow::Result;
use palmsight_core::geo::{GeoPoint, GeoPolygon, Geometry, Projection};
use palmsight_core::ingest::{feature_collection_json, Feature};
use palmsight_core::raster::SrtmTile;
use palmsight_core::synth::{generate, Parents, ThomasParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub const ORIGIN: GeoPoint = GeoPoint { lon: -73.6, lat: 11.4 };
const HALF_EXTENT: f64 = 10_000.0;

/// Local offsets of the sites inside the main palm cluster.
const CLUSTER_SITES: [[f64; 2]; 6] = [[0.0, 0.0], [300.0, 150.0], [-250.0, 200.0], [150.0, -300.0], [-300.0, -200.0], [450.0, -50.0]];
/// Regional sites away from any palm cluster.
const REGIONAL_SITES: [[f64; 2]; 2] = [[8_000.0, 6_500.0], [-7_500.0, 7_000.0]];
const CONTROL_PARENTS: [[f64; 2]; 4] = [[6_000.0, -5_000.0], [-6_000.0, -5_500.0], [5_000.0, 3_000.0], [-4_500.0, 2_500.0]];

/// Closed rectangle ring centred on a local point.
fn rect(proj: &Projection, c: [f64; 2], half: f64) -> GeoPolygon {
    let corners = [[-half, -half], [half, -half], [half, half], [-half, half], [-half, -half]];
    let ring = corners.iter().map(|d| proj.unproject(c[0] + d[0], c[1] + d[1])).collect();
    GeoPolygon::new(ring, Vec::new()).expect("rectangle is a valid ring")
}

fn props(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// Smooth synthetic terrain: a ridge rising to the north-east.
fn terrain(row: usize, col: usize) -> i16 {
    let (r, c) = (row as f64, col as f64);
    (700.0 + 0.25 * c - 0.15 * r + 120.0 * (r / 300.0).sin() * (c / 450.0).cos()).round() as i16
}

pub fn write_bundle(dir: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let proj = Projection::new(ORIGIN);
    let mut parents = vec![[0.0, 0.0]];
    parents.extend(CONTROL_PARENTS);
    let mut offspring = vec![1_500.0];
    offspring.extend([220.0; 4]);
    let land = generate(&ThomasParams {
        origin: ORIGIN,
        parents: Parents::Fixed(parents),
        mean_offspring: 0.0,
        offspring_per_parent: Some(offspring),
        sigma: 180.0,
        background_per_km2: 0.3,
        extent: [-HALF_EXTENT, -HALF_EXTENT, HALF_EXTENT, HALF_EXTENT],
        seed,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let xy = land.xy();

    // Detections: 6 m boxes, confident; then low-confidence distractors.
    let mut detections = Vec::new();
    let mut boxes: Vec<([f64; 2], f64)> = Vec::new();
    for p in &xy {
        boxes.push((*p, rng.random_range(0.45..1.0)));
    }
    for _ in 0..xy.len() / 20 {
        let p = [rng.random_range(-1_000.0..1_000.0), rng.random_range(-1_000.0..1_000.0)];
        boxes.push((p, rng.random_range(0.05..0.39)));
    }
    for (i, (p, conf)) in boxes.iter().enumerate() {
        detections.push(Feature {
            id: format!("palm-{i}"),
            geometry: Geometry::Polygon(rect(&proj, *p, 3.0)),
            properties: props(json!({ "confidence": (conf * 1000.0).round() / 1000.0 })),
        });
    }
    write_json(&dir.join("detections.geojson"), &feature_collection_json(&detections, None))?;

    // Labels: most confident detections near the main cluster, offset by 1 m,
    // plus some palms the detector missed.
    let mut labels = Vec::new();
    for (p, conf) in &boxes {
        if p[0].abs() < 750.0 && p[1].abs() < 750.0 && *conf > 0.5 && rng.random_bool(0.9) {
            labels.push(rect(&proj, [p[0] + 1.0, p[1]], 3.0));
        }
    }
    for _ in 0..40 {
        let p = [rng.random_range(-700.0..700.0), rng.random_range(-700.0..700.0)];
        labels.push(rect(&proj, p, 3.0));
    }
    let label_features: Vec<Feature> = labels
        .into_iter()
        .enumerate()
        .map(|(i, g)| Feature {
            id: format!("label-{i}"),
            geometry: Geometry::Polygon(g),
            properties: Map::new(),
        })
        .collect();
    write_json(&dir.join("labels.geojson"), &feature_collection_json(&label_features, None))?;

    // Labeled area: 3 x 3 cells of 500 m.
    let mut cells = Vec::new();
    for r in 0..3 {
        for c in 0..3 {
            let center = [(c as f64 - 1.0) * 500.0, (r as f64 - 1.0) * 500.0];
            let poly = rect(&proj, center, 250.0);
            cells.push(Feature {
                id: format!("cell-{r}-{c}"),
                properties: props(json!({ "area_m2": (poly.area_m2() * 100.0).round() / 100.0 })),
                geometry: Geometry::Polygon(poly),
            });
        }
    }
    write_json(&dir.join("labeled_area.geojson"), &feature_collection_json(&cells, None))?;

    // Sites.
    let sites: Vec<Feature> = CLUSTER_SITES
        .iter()
        .chain(&REGIONAL_SITES)
        .enumerate()
        .map(|(i, p)| Feature {
            id: format!("site-{}", i + 1),
            geometry: Geometry::Point(proj.unproject(p[0], p[1])),
            properties: props(json!({
                "ID_site": format!("S{}", i + 1),
                "certainty": if i < CLUSTER_SITES.len() { "high" } else { "medium" },
                "Location_source": "synthetic",
            })),
        })
        .collect();
    write_json(&dir.join("centroids.geojson"), &feature_collection_json(&sites, None))?;

    // Study area covers the whole extent.
    let study = Feature {
        id: "study-area".into(),
        geometry: Geometry::Polygon(rect(&proj, [0.0, 0.0], HALF_EXTENT)),
        properties: Map::new(),
    };
    write_json(&dir.join("study_area.geojson"), &feature_collection_json(&[study], None))?;

    // Buildings follow a quarter of the palms, offset 20 m.
    let buildings: Vec<Feature> = xy
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 4 == 0)
        .map(|(i, p)| Feature {
            id: format!("bldg-{i}"),
            geometry: Geometry::Polygon(rect(&proj, [p[0] + 20.0, p[1]], 5.0)),
            properties: Map::new(),
        })
        .collect();
    write_json(&dir.join("buildings.geojson"), &feature_collection_json(&buildings, None))?;

    // GBIF occurrences: valid rows, rows without coordinates, and off-tile
    // rows whose table elevation is an outlier.
    let mut tsv = String::from("gbifID\tspecies\tdecimalLatitude\tdecimalLongitude\televation\n");
    for i in 0..80 {
        let p = proj.unproject(rng.random_range(-HALF_EXTENT..HALF_EXTENT), rng.random_range(-HALF_EXTENT..HALF_EXTENT));
        tsv.push_str(&format!("{i}\tAttalea butyracea\t{:.6}\t{:.6}\t{}\n", p.lat, p.lon, rng.random_range(300..1500)));
    }
    for i in 80..84 {
        tsv.push_str(&format!("{i}\tAttalea butyracea\t\t-73.6\t900\n"));
    }
    for i in 84..87 {
        tsv.push_str(&format!("{i}\tAttalea butyracea\t12.{i}\t-72.5\t{}\n", 9000 + i));
    }
    fs::write(dir.join("gbif.tsv"), tsv)?;

    let srtm = dir.join("srtm");
    fs::create_dir_all(&srtm)?;
    SrtmTile::from_fn(11, -74, terrain).write(&srtm)?;

    let config = json!({
        "inputs": {
            "detections": "detections.geojson",
            "centroids": "centroids.geojson",
            "study_area": "study_area.geojson",
            "labels": "labels.geojson",
            "labeled_area": "labeled_area.geojson",
            "buildings": "buildings.geojson",
            "gbif": "gbif.tsv",
            "srtm_dir": "srtm",
        },
        "output_dir": "out",
        "seed": seed,
        "cluster": { "min_cluster_size": 50 },
        "controls": { "n": 100, "buffer_m": 150.0 },
        "bootstrap": { "samples": 1000, "sample_size": 17, "ci_level": 0.8 },
    });
    write_json(&dir.join("config.json"), &config)?;
    log::info!(
        "wrote synthetic bundle to {} ({} palms, {} distractors, {} discarded offspring)",
        dir.display(),
        xy.len(),
        boxes.len() - xy.len(),
        land.discarded
    );
    Ok(())
}
