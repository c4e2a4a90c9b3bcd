//! Thomas cluster process landscapes with known parents, and a Monte-Carlo
//! harness for the site-versus-control bootstrap comparison.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::cluster::{hdbscan_partition, ClusterError, HdbscanParams};
use crate::geo::{convex_hull_xy, GeoPoint, Geometry, LocalXY, Projection};
use crate::index::PointIndex;
use crate::ingest::{feature_collection_json, Feature};
use crate::par;
use crate::score::{idw_score_xy, IdwParams};
use crate::stats::{bootstrap_mean_ci, BootstrapParams, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("could not place {wanted} parents {min_sep} m apart")]
    ParentPlacement { wanted: usize, min_sep: f64 },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parents {
    Fixed(Vec<[f64; 2]>),
    /// Homogeneous Poisson parents, per km².
    Random { intensity_per_km2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThomasParams {
    pub origin: GeoPoint,
    pub parents: Parents,
    /// Mean offspring per parent. A per-parent override may be given in
    /// `offspring_per_parent` (same length as fixed parents).
    pub mean_offspring: f64,
    #[serde(default)]
    pub offspring_per_parent: Option<Vec<f64>>,
    pub sigma: f64,
    pub background_per_km2: f64,
    /// (min x, min y, max x, max y) in local meters.
    pub extent: [f64; 4],
    pub seed: u64,
}

impl ThomasParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParameter(m));
        if !(self.mean_offspring >= 0.0 && self.mean_offspring.is_finite()) {
            return bad(format!("mean offspring {} must be >= 0", self.mean_offspring));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be > 0", self.sigma));
        }
        if !(self.background_per_km2 >= 0.0 && self.background_per_km2.is_finite()) {
            return bad(format!("background intensity {} must be >= 0", self.background_per_km2));
        }
        let e = self.extent;
        if !(e[2] > e[0] && e[3] > e[1]) {
            return bad("extent must have positive width and height".into());
        }
        if let Parents::Random { intensity_per_km2 } = self.parents {
            if !(intensity_per_km2 >= 0.0 && intensity_per_km2.is_finite()) {
                return bad(format!("parent intensity {intensity_per_km2} must be >= 0"));
            }
        }
        if let (Some(per), Parents::Fixed(ps)) = (&self.offspring_per_parent, &self.parents) {
            if per.len() != ps.len() || per.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
                return bad("offspring_per_parent must match parents and be >= 0".into());
            }
        }
        Ok(())
    }

    fn area_km2(&self) -> f64 {
        (self.extent[2] - self.extent[0]) * (self.extent[3] - self.extent[1]) / 1e6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub origin: GeoPoint,
    pub points: Vec<LocalXY>,
    /// Parent index of each point; `None` for background.
    pub parent_of: Vec<Option<usize>>,
    pub parent_centers: Vec<[f64; 2]>,
    /// Offspring dropped for falling outside the extent.
    pub discarded: usize,
}

impl Landscape {
    pub fn xy(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(LocalXY::xy).collect()
    }

    pub fn geo_points(&self) -> Vec<GeoPoint> {
        let proj = Projection::new(self.origin);
        self.points.iter().map(|p| proj.unproject(p.x, p.y)).collect()
    }

    /// Detection GeoJSON in the schema the loaders read, confidence 1.0.
    pub fn detections_geojson(&self) -> Value {
        let features: Vec<Feature> = self
            .geo_points()
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut props = Map::new();
                props.insert("confidence".into(), 1.0.into());
                Feature {
                    id: format!("palm-{i}"),
                    geometry: Geometry::Point(p),
                    properties: props,
                }
            })
            .collect();
        feature_collection_json(&features, None)
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

fn inside(e: &[f64; 4], p: [f64; 2]) -> bool {
    p[0] >= e[0] && p[0] <= e[2] && p[1] >= e[1] && p[1] <= e[3]
}

/// Samples a landscape. Stream 0 places random parents, stream 1 the
/// background, and stream `2 + k` the offspring of parent `k`.
pub fn generate(params: &ThomasParams) -> Result<Landscape, SynthError> {
    params.validate()?;
    let e = params.extent;
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(s);
        rng
    };
    let parent_centers = match &params.parents {
        Parents::Fixed(ps) => ps.clone(),
        Parents::Random { intensity_per_km2 } => {
            let mut rng = stream(0);
            let n = poisson(&mut rng, intensity_per_km2 * params.area_km2());
            (0..n)
                .map(|_| [rng.random_range(e[0]..e[2]), rng.random_range(e[1]..e[3])])
                .collect()
        }
    };
    let offsets = Normal::new(0.0, params.sigma).expect("sigma validated");
    let families = par::map_range(parent_centers.len(), |k| {
        let mut rng = stream(2 + k as u64);
        let mean = params.offspring_per_parent.as_ref().map_or(params.mean_offspring, |m| m[k]);
        let n = poisson(&mut rng, mean);
        let c = parent_centers[k];
        (0..n)
            .map(|_| [c[0] + offsets.sample(&mut rng), c[1] + offsets.sample(&mut rng)])
            .collect::<Vec<_>>()
    });

    let mut points = Vec::new();
    let mut parent_of = Vec::new();
    let mut discarded = 0;
    for (k, fam) in families.into_iter().enumerate() {
        for p in fam {
            if inside(&e, p) {
                points.push(p);
                parent_of.push(Some(k));
            } else {
                discarded += 1;
            }
        }
    }
    let mut rng = stream(1);
    let n_bg = poisson(&mut rng, params.background_per_km2 * params.area_km2());
    for _ in 0..n_bg {
        points.push([rng.random_range(e[0]..e[2]), rng.random_range(e[1]..e[3])]);
        parent_of.push(None);
    }
    Ok(Landscape {
        origin: params.origin,
        points: points
            .into_iter()
            .map(|[x, y]| LocalXY {
                x,
                y,
                origin: params.origin,
            })
            .collect(),
        parent_of,
        parent_centers,
        discarded,
    })
}

/// One cell of the power grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerScenario {
    pub name: String,
    pub mu_site: f64,
    pub mu_control: f64,
    pub sigma: f64,
    pub background_per_km2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub n_sites: usize,
    pub n_control_parents: usize,
    pub extent_m: f64,
    pub min_parent_separation_m: f64,
    pub hdbscan: HdbscanParams,
    pub idw: IdwParams,
    pub bootstrap_samples: usize,
    pub bootstrap_sample_size: usize,
    pub ci_level: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            n_sites: 17,
            n_control_parents: 17,
            extent_m: 30_000.0,
            min_parent_separation_m: 3_000.0,
            hdbscan: HdbscanParams::with_min_cluster_size(20),
            idw: IdwParams::default(),
            bootstrap_samples: 1000,
            bootstrap_sample_size: 17,
            ci_level: 0.80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub scenario: PowerScenario,
    pub replicates: usize,
    /// Replicates whose site and control CIs do not overlap.
    pub separations: usize,
    /// Separations with the site interval above the control interval.
    pub site_above: usize,
    /// Replicates with no site-free cluster to draw controls from.
    pub degenerate: usize,
    pub power: f64,
    pub mean_site_g: f64,
    pub mean_control_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ReplicateOutcome {
    separated: bool,
    site_above: bool,
    degenerate: bool,
    site_mean: f64,
    control_mean: f64,
}

fn place_parents(rng: &mut ChaCha8Rng, n: usize, extent: f64, min_sep: f64) -> Result<Vec<[f64; 2]>, SynthError> {
    let margin = (0.05 * extent).min(2_000.0);
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > 100_000 {
            return Err(SynthError::ParentPlacement { wanted: n, min_sep });
        }
        let c = [rng.random_range(margin..extent - margin), rng.random_range(margin..extent - margin)];
        if out.iter().all(|o| (o[0] - c[0]).hypot(o[1] - c[1]) >= min_sep) {
            out.push(c);
        }
    }
    Ok(out)
}

fn convex_contains(hull: &[[f64; 2]], q: [f64; 2]) -> bool {
    let n = hull.len();
    (0..n).all(|i| {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]) >= -1e-9
    })
}

fn run_replicate(
    scenario: &PowerScenario,
    pipeline: &PipelineParams,
    origin: GeoPoint,
    rng: &mut ChaCha8Rng,
) -> Result<ReplicateOutcome, SynthError> {
    let n_parents = pipeline.n_sites + pipeline.n_control_parents;
    let centers = place_parents(rng, n_parents, pipeline.extent_m, pipeline.min_parent_separation_m)?;
    let mut per_parent = vec![scenario.mu_site; pipeline.n_sites];
    per_parent.resize(n_parents, scenario.mu_control);
    let land = generate(&ThomasParams {
        origin,
        parents: Parents::Fixed(centers.clone()),
        mean_offspring: scenario.mu_site,
        offspring_per_parent: Some(per_parent),
        sigma: scenario.sigma,
        background_per_km2: scenario.background_per_km2,
        extent: [0.0, 0.0, pipeline.extent_m, pipeline.extent_m],
        seed: rng.next_u64(),
    })?;
    let xy = land.xy();
    let sites = &centers[..pipeline.n_sites];
    let degenerate = ReplicateOutcome {
        separated: false,
        site_above: false,
        degenerate: true,
        site_mean: f64::NAN,
        control_mean: f64::NAN,
    };
    if xy.len() < pipeline.hdbscan.min_cluster_size {
        return Ok(degenerate);
    }
    let partition = hdbscan_partition(&xy, &pipeline.hdbscan)?;
    let index = PointIndex::from_xy(origin, xy.clone()).expect("non-empty");

    let mut control_centers = Vec::new();
    for (members, _) in &partition.clusters {
        let mpts: Vec<[f64; 2]> = members.iter().map(|&m| xy[m]).collect();
        let has_site = match convex_hull_xy(&mpts) {
            Ok(h) => sites.iter().any(|s| convex_contains(&h, *s)),
            Err(_) => false,
        };
        if !has_site {
            let n = mpts.len() as f64;
            let sx: f64 = mpts.iter().map(|p| p[0]).sum();
            let sy: f64 = mpts.iter().map(|p| p[1]).sum();
            control_centers.push([sx / n, sy / n]);
        }
    }
    if control_centers.is_empty() {
        return Ok(degenerate);
    }
    let site_g: Vec<f64> = sites.iter().map(|s| idw_score_xy(&index, *s, &pipeline.idw).0).collect();
    let control_g: Vec<f64> = control_centers.iter().map(|c| idw_score_xy(&index, *c, &pipeline.idw).0).collect();
    let boot = |seed| BootstrapParams {
        samples: pipeline.bootstrap_samples,
        sample_size: pipeline.bootstrap_sample_size,
        ci_level: pipeline.ci_level,
        seed,
    };
    let s = bootstrap_mean_ci(&site_g, &boot(rng.next_u64()))?;
    let c = bootstrap_mean_ci(&control_g, &boot(rng.next_u64()))?;
    Ok(ReplicateOutcome {
        separated: !s.overlaps(&c),
        site_above: s.ci_low > c.ci_high,
        degenerate: false,
        site_mean: s.observed_mean,
        control_mean: c.observed_mean,
    })
}

/// For each scenario, the fraction of replicates in which the site and
/// control bootstrap intervals separate. Replicate `r` of scenario `s` runs
/// on stream `s * 2^32 + r`, so the table does not depend on scheduling.
pub fn power_experiment(
    effect_grid: &[PowerScenario],
    pipeline: &PipelineParams,
    replicates: usize,
    seed: u64,
    origin: GeoPoint,
) -> Result<Vec<PowerRow>, SynthError> {
    if replicates == 0 {
        return Err(SynthError::InvalidParameter("replicates must be at least 1".into()));
    }
    pipeline.hdbscan.validate()?;
    let mut rows = Vec::with_capacity(effect_grid.len());
    for (si, scenario) in effect_grid.iter().enumerate() {
        let outcomes = par::map_range(replicates, |r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((si as u64) << 32) + r as u64);
            run_replicate(scenario, pipeline, origin, &mut rng)
        });
        let outcomes: Vec<ReplicateOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;
        let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| !o.degenerate).collect();
        let mean_of = |f: fn(&ReplicateOutcome) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|o| f(o)).sum::<f64>() / ok.len() as f64
            }
        };
        let separations = outcomes.iter().filter(|o| o.separated).count();
        rows.push(PowerRow {
            scenario: scenario.clone(),
            replicates,
            separations,
            site_above: outcomes.iter().filter(|o| o.site_above).count(),
            degenerate: outcomes.len() - ok.len(),
            power: separations as f64 / replicates as f64,
            mean_site_g: mean_of(|o| o.site_mean),
            mean_control_g: mean_of(|o| o.control_mean),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const O: GeoPoint = GeoPoint { lon: -73.6, lat: 11.4 };

    fn base(seed: u64) -> ThomasParams {
        ThomasParams {
            origin: O,
            parents: Parents::Fixed(vec![[5000.0, 5000.0]]),
            mean_offspring: 1000.0,
            offspring_per_parent: None,
            sigma: 50.0,
            background_per_km2: 0.0,
            extent: [0.0, 0.0, 10_000.0, 10_000.0],
            seed,
        }
    }

    #[test]
    fn empty_when_nothing_to_draw() {
        let p = ThomasParams {
            mean_offspring: 0.0,
            ..base(1)
        };
        assert!(generate(&p).unwrap().points.is_empty());
    }

    #[test]
    fn offspring_count_moments() {
        let counts: Vec<f64> = (0..50).map(|s| generate(&base(s)).unwrap().points.len() as f64).collect();
        let mean = counts.iter().sum::<f64>() / 50.0;
        assert!((mean - 1000.0).abs() < 3.0 * 1000f64.sqrt());
    }

    #[test]
    fn background_count_moments() {
        let lambda_area = 2.0 * 100.0;
        for s in 0..50 {
            let p = ThomasParams {
                mean_offspring: 0.0,
                background_per_km2: 2.0,
                ..base(s)
            };
            let n = generate(&p).unwrap().points.len() as f64;
            assert!((n - lambda_area).abs() < 4.0 * lambda_area.sqrt());
        }
    }

    #[test]
    fn deterministic_and_tagged() {
        let p = ThomasParams {
            background_per_km2: 1.0,
            ..base(9)
        };
        let a = generate(&p).unwrap();
        assert_eq!(a, generate(&p).unwrap());
        assert_eq!(a.points.len(), a.parent_of.len());
        assert!(a.parent_of.iter().any(Option::is_none));
    }

    #[test]
    fn invalid_params() {
        assert!(generate(&ThomasParams { sigma: 0.0, ..base(1) }).is_err());
        assert!(generate(&ThomasParams { mean_offspring: -1.0, ..base(1) }).is_err());
    }

    #[test]
    fn fixture_geojson_has_confidence() {
        let v = generate(&ThomasParams { mean_offspring: 30.0, ..base(2) }).unwrap().detections_geojson();
        let f = &v["features"][0];
        assert_eq!(f["properties"]["confidence"], 1.0);
        assert_eq!(f["geometry"]["type"], "Point");
    }

    #[test]
    fn small_power_table_is_deterministic() {
        let pipeline = PipelineParams {
            n_sites: 4,
            n_control_parents: 4,
            extent_m: 12_000.0,
            bootstrap_samples: 200,
            hdbscan: HdbscanParams::with_min_cluster_size(10),
            ..Default::default()
        };
        let grid = [PowerScenario {
            name: "strong".into(),
            mu_site: 200.0,
            mu_control: 20.0,
            sigma: 80.0,
            background_per_km2: 0.2,
        }];
        let a = power_experiment(&grid, &pipeline, 6, 3, O).unwrap();
        let b = power_experiment(&grid, &pipeline, 6, 3, O).unwrap();
        assert_eq!(a, b);
        assert!(a[0].site_above >= 5);
    }
}
