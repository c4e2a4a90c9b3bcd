//! IDW density scores, control-point sampling and per-cell counts.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoPoint, GeoPolygon, GridSpec, PlanarPolygon, Projection};
use crate::index::PointIndex;
use crate::par;

/// Distances below this are clamped so a palm sitting on the center stays
/// finite (half the imagery pixel pitch, rounded up).
pub const MIN_DISTANCE_M: f64 = 0.5;

/// Proposals after which the acceptance rate is checked.
pub const FEASIBILITY_PROPOSALS: u64 = 1_000_000;
pub const MIN_ACCEPTANCE_RATE: f64 = 1e-4;

const CHUNK: u64 = 4096;
const CHUNKS_PER_WAVE: u64 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("admissible region too small: {accepted} of {proposals} proposals accepted")]
    InfeasibleRegion { accepted: u64, proposals: u64 },
    #[error("control point {index} failed re-verification")]
    VerificationFailed { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdwParams {
    pub radius: f64,
    pub decay_w: f64,
}

impl Default for IdwParams {
    fn default() -> Self {
        Self {
            radius: 1000.0,
            decay_w: 1.0,
        }
    }
}

impl IdwParams {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(ScoreError::InvalidParameter(format!("radius {} must be > 0", self.radius)));
        }
        if !(self.decay_w >= 0.0 && self.decay_w.is_finite()) {
            return Err(ScoreError::InvalidParameter(format!("decay_w {} must be >= 0", self.decay_w)));
        }
        Ok(())
    }
}

/// IDW score at a planar location: sum of d^-w over palms within the radius.
/// Returns the score and the number of contributing palms.
pub fn idw_score_xy(idx: &PointIndex, q: [f64; 2], params: &IdwParams) -> (f64, usize) {
    let mut hits: Vec<(usize, f64)> = idx.within_radius(q, params.radius);
    // fixed summation order keeps the score independent of tree layout
    hits.sort_by_key(|h| h.0);
    let g = hits
        .iter()
        .map(|&(_, d)| d.max(MIN_DISTANCE_M).powf(-params.decay_w))
        .sum();
    (g, hits.len())
}

/// IDW score around `center`, projected into the index's frame.
pub fn idw_score(idx: &PointIndex, center: GeoPoint, params: &IdwParams) -> f64 {
    let q = Projection::new(idx.origin()).project_unchecked(center);
    idw_score_xy(idx, q, params).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdwScore {
    pub id: String,
    #[serde(rename = "G")]
    pub g: f64,
    pub n_within: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdwReport {
    pub params: IdwParams,
    pub scores: Vec<IdwScore>,
}

impl IdwReport {
    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.g).collect()
    }
}

/// Scores many centers against one shared index.
pub fn idw_report(idx: &PointIndex, centers: &[(String, GeoPoint)], params: &IdwParams) -> Result<IdwReport, ScoreError> {
    params.validate()?;
    let proj = Projection::new(idx.origin());
    let scores = par::map_slice(centers, |(id, c)| {
        let (g, n_within) = idw_score_xy(idx, proj.project_unchecked(*c), params);
        IdwScore {
            id: id.clone(),
            g,
            n_within,
        }
    });
    Ok(IdwReport { params: *params, scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlConstraint {
    /// Inside a region polygon and farther than the buffer from every site.
    InClusterOutsideBuffers,
    /// Inside a region polygon that contains no site.
    InClustersWithoutSites,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub points: Vec<GeoPoint>,
    pub seed: u64,
    pub constraint: ControlConstraint,
    pub buffer_m: f64,
    pub proposals: u64,
    pub accepted: u64,
}

impl ControlSample {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

struct Admissible<'a> {
    planar: Vec<PlanarPolygon>,
    sites: &'a [GeoPoint],
    buffer_m: f64,
    constraint: ControlConstraint,
}

impl Admissible<'_> {
    fn accepts(&self, p: GeoPoint) -> bool {
        if !self.planar.iter().any(|poly| poly.contains(p)) {
            return false;
        }
        match self.constraint {
            ControlConstraint::InClusterOutsideBuffers => {
                self.sites.iter().all(|s| geo::geodesic_distance(*s, p) > self.buffer_m)
            }
            ControlConstraint::InClustersWithoutSites => true,
        }
    }
}

/// Uniform control points over the admissible part of `region`, by rejection
/// sampling in the region's bounding box. Proposal chunk `j` draws from its
/// own ChaCha stream, so the output is independent of the worker count.
pub fn sample_controls(
    region: &[GeoPolygon],
    sites: &[GeoPoint],
    buffer_m: f64,
    n: usize,
    seed: u64,
    constraint: ControlConstraint,
) -> Result<ControlSample, ScoreError> {
    if n == 0 {
        return Err(ScoreError::InvalidParameter("n must be at least 1".into()));
    }
    if buffer_m.is_nan() || buffer_m < 0.0 {
        return Err(ScoreError::InvalidParameter(format!("buffer {buffer_m} must be >= 0")));
    }
    let polys: Vec<&GeoPolygon> = match constraint {
        ControlConstraint::InClusterOutsideBuffers => region.iter().collect(),
        ControlConstraint::InClustersWithoutSites => {
            region.iter().filter(|poly| !sites.iter().any(|s| poly.contains(*s))).collect()
        }
    };
    if polys.is_empty() {
        return Err(ScoreError::InfeasibleRegion {
            accepted: 0,
            proposals: 0,
        });
    }
    let gb = polys.iter().map(|p| p.bbox()).fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |a, b| [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])],
    );
    let frame = Projection::new(GeoPoint {
        lon: (gb[0] + gb[2]) / 2.0,
        lat: (gb[1] + gb[3]) / 2.0,
    });
    let adm = Admissible {
        planar: polys.iter().map(|p| p.to_planar()).collect(),
        sites,
        buffer_m,
        constraint,
    };
    let bbox = polys.iter().map(|p| p.to_planar_with(frame).bbox()).fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |a, b| [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])],
    );
    // the rings' images are bounded by their vertices' bbox only up to edge
    // curvature; pad by a metre so no admissible point is cut off
    let bbox = [bbox[0] - 1.0, bbox[1] - 1.0, bbox[2] + 1.0, bbox[3] + 1.0];

    let mut points = Vec::with_capacity(n);
    let mut proposals = 0u64;
    let mut next_chunk = 0u64;
    while points.len() < n {
        let wave = par::map_range(CHUNKS_PER_WAVE as usize, |k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(next_chunk + k as u64);
            (0..CHUNK)
                .map(|_| {
                    let x = rng.random_range(bbox[0]..bbox[2]);
                    let y = rng.random_range(bbox[1]..bbox[3]);
                    let p = frame.unproject(x, y);
                    adm.accepts(p).then_some(p)
                })
                .collect::<Vec<_>>()
        });
        next_chunk += CHUNKS_PER_WAVE;
        'wave: for chunk in wave {
            for p in chunk {
                proposals += 1;
                if let Some(p) = p {
                    points.push(p);
                    if points.len() == n {
                        break 'wave;
                    }
                }
            }
        }
        if proposals >= FEASIBILITY_PROPOSALS && (points.len() as f64) < MIN_ACCEPTANCE_RATE * proposals as f64 {
            return Err(ScoreError::InfeasibleRegion {
                accepted: points.len() as u64,
                proposals,
            });
        }
    }
    for (i, p) in points.iter().enumerate() {
        if !verify_control(*p, &polys, sites, buffer_m, constraint) {
            return Err(ScoreError::VerificationFailed { index: i });
        }
    }
    Ok(ControlSample {
        accepted: points.len() as u64,
        points,
        seed,
        constraint,
        buffer_m,
        proposals,
    })
}

fn verify_control(
    p: GeoPoint,
    polys: &[&GeoPolygon],
    sites: &[GeoPoint],
    buffer_m: f64,
    constraint: ControlConstraint,
) -> bool {
    let inside = polys.iter().any(|poly| poly.contains(p));
    match constraint {
        ControlConstraint::InClusterOutsideBuffers => {
            inside && geo::min_distance_to_set(p, sites).map_or(true, |d| d > buffer_m)
        }
        ControlConstraint::InClustersWithoutSites => inside,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellCounts {
    pub counts: BTreeMap<(u32, u32), usize>,
    pub outside: usize,
}

impl CellCounts {
    pub fn inside(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, cell: (u32, u32)) -> usize {
        self.counts.get(&cell).copied().unwrap_or(0)
    }
}

/// Counts points per grid cell; points off the grid are tallied separately.
pub fn count_per_cell(points: &[GeoPoint], grid: &GridSpec) -> CellCounts {
    let cells = par::map_slice(points, |p| geo::grid_index(*p, grid).ok());
    let mut out = CellCounts::default();
    for c in cells {
        match c {
            Some(cell) => *out.counts.entry(cell).or_insert(0) += 1,
            None => out.outside += 1,
        }
    }
    out
}
