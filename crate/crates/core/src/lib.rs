//! Spatial statistics toolkit for detected-palm point data.
//!
//! The crate turns palm detections (GeoJSON points or boxes) into density
//! clusters, scores palm density around archaeological reference points with
//! an inverse-distance-weighted sum, compares reference points against random
//! control locations by bootstrap, and summarises elevation distributions of
//! palm subsets against an occurrence baseline.
//!
//! Module map:
//!
//! * [`geo`] - haversine distances, local azimuthal-equidistant projection,
//!   grids, convex hulls, polygon area/containment/centroids.
//! * [`ingest`] - GeoJSON and GBIF table loaders with validation.
//! * [`index`] - static 2-d tree for exact kNN and radius queries.
//! * [`cluster`] - HDBSCAN (core distances, mutual-reachability MST,
//!   condensed tree, excess-of-mass/leaf selection) and cluster/site links.
//! * [`score`] - IDW density score, control-point sampling, grid counting.
//! * [`stats`] - bootstrap CIs, Spearman, Kruskal-Wallis, Dunn, IQR filter,
//!   Gaussian KDE and the special functions behind their p-values.
//! * [`raster`] - SRTM `.hgt` tiles and elevation sampling.
//! * [`deteval`] - IoU matching and precision/recall at confidence thresholds.
//! * [`synth`] - Thomas cluster process generator and power experiments.
//!
//! Data-parallel loops go through [`par`]; with the default `parallel`
//! feature they run on rayon, without it they run sequentially. Results are
//! identical either way.

pub mod cluster;
pub mod deteval;
pub mod geo;
pub mod index;
pub mod ingest;
pub mod par;
pub mod raster;
pub mod score;
pub mod stats;
pub mod synth;

pub use geo::{GeoPoint, GeoPolygon, LocalXY};
