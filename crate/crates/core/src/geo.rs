//! WGS84 geodesy and planar geometry.
//!
//! Distances are haversine on the IUGG mean sphere. Everything that needs a
//! plane (grids, hulls, areas, containment) works in a local azimuthal
//! equidistant projection, which keeps distances from its origin exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// IUGG mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Largest distance from the origin that [`Projection::project`] accepts.
pub const MAX_PROJECTION_RANGE_M: f64 = 100_000.0;

/// Points within this distance of a ring edge count as on the boundary.
pub const BOUNDARY_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate (lon {lon}, lat {lat})")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("point is {distance_m:.1} m from the projection origin (limit {MAX_PROJECTION_RANGE_M} m)")]
    OutOfProjectionRange { distance_m: f64 },
    #[error("point lies outside the grid extent")]
    OutsideGrid,
    #[error("degenerate hull: {0}")]
    DegenerateHull(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("points come from different projection origins")]
    MixedOrigins,
    #[error("empty point set")]
    EmptySet,
}

/// A WGS84 longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeoError> {
        let ok = lon.is_finite()
            && lat.is_finite()
            && (-180.0..=180.0).contains(&lon)
            && (-90.0..=90.0).contains(&lat);
        if ok {
            Ok(Self { lon, lat })
        } else {
            Err(GeoError::InvalidCoordinate { lon, lat })
        }
    }

    pub fn distance_to(&self, other: &GeoPoint) -> f64 {
        geodesic_distance(*self, *other)
    }
}

/// Haversine great-circle distance in meters.
pub fn geodesic_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let s_lat = (dlat / 2.0).sin();
    let s_lon = (dlon / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Minimum geodesic distance from `p` to any point of `set`.
pub fn min_distance_to_set(p: GeoPoint, set: &[GeoPoint]) -> Result<f64, GeoError> {
    set.iter()
        .map(|c| geodesic_distance(p, *c))
        .min_by(f64::total_cmp)
        .ok_or(GeoError::EmptySet)
}

/// Planar coordinates in meters east/north of a projection origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalXY {
    pub x: f64,
    pub y: f64,
    pub origin: GeoPoint,
}

impl LocalXY {
    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Spherical azimuthal-equidistant projection about a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    origin: GeoPoint,
    sin_lat0: f64,
    cos_lat0: f64,
}

impl Projection {
    pub fn new(origin: GeoPoint) -> Self {
        let lat0 = origin.lat.to_radians();
        Self {
            origin,
            sin_lat0: lat0.sin(),
            cos_lat0: lat0.cos(),
        }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn project(&self, p: GeoPoint) -> Result<LocalXY, GeoError> {
        let d = geodesic_distance(self.origin, p);
        if d > MAX_PROJECTION_RANGE_M {
            return Err(GeoError::OutOfProjectionRange { distance_m: d });
        }
        let [x, y] = self.project_unchecked(p);
        Ok(LocalXY {
            x,
            y,
            origin: self.origin,
        })
    }

    /// Projects without the range check. Used for polygon rings, where a
    /// vertex far from the reference point only costs accuracy.
    pub fn project_unchecked(&self, p: GeoPoint) -> [f64; 2] {
        let lat = p.lat.to_radians();
        let dlon = (p.lon - self.origin.lon).to_radians();
        let (sin_lat, cos_lat) = lat.sin_cos();
        let (sin_dlon, cos_dlon) = dlon.sin_cos();
        let c = geodesic_distance(self.origin, p) / EARTH_RADIUS_M;
        let k = if c < 1e-12 { 1.0 } else { c / c.sin() };
        let x = EARTH_RADIUS_M * k * cos_lat * sin_dlon;
        let y = EARTH_RADIUS_M * k * (self.cos_lat0 * sin_lat - self.sin_lat0 * cos_lat * cos_dlon);
        [x, y]
    }

    pub fn unproject(&self, x: f64, y: f64) -> GeoPoint {
        let rho = x.hypot(y);
        if rho == 0.0 {
            return self.origin;
        }
        let c = rho / EARTH_RADIUS_M;
        let (sin_c, cos_c) = c.sin_cos();
        let lat = (cos_c * self.sin_lat0 + y * sin_c * self.cos_lat0 / rho)
            .clamp(-1.0, 1.0)
            .asin();
        let dlon = (x * sin_c).atan2(rho * self.cos_lat0 * cos_c - y * self.sin_lat0 * sin_c);
        GeoPoint {
            lon: normalize_lon(self.origin.lon + dlon.to_degrees()),
            lat: lat.to_degrees(),
        }
    }
}

fn normalize_lon(lon: f64) -> f64 {
    if lon > 180.0 {
        lon - 360.0
    } else if lon < -180.0 {
        lon + 360.0
    } else {
        lon
    }
}

pub fn project(p: GeoPoint, origin: GeoPoint) -> Result<LocalXY, GeoError> {
    Projection::new(origin).project(p)
}

pub fn unproject(q: &LocalXY) -> GeoPoint {
    Projection::new(q.origin).unproject(q.x, q.y)
}

/// Regular square grid anchored at its southwest corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: GeoPoint,
    pub cell_size: f64,
    pub n_cols: u32,
    pub n_rows: u32,
}

// Absorbs projection round-off for points built to sit exactly on an edge.
const EDGE_EPS: f64 = 1e-9;

impl GridSpec {
    pub fn new(origin: GeoPoint, cell_size: f64, n_cols: u32, n_rows: u32) -> Result<Self, GeoError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(GeoError::InvalidGrid(format!("cell size {cell_size} must be > 0")));
        }
        if n_cols == 0 || n_rows == 0 {
            return Err(GeoError::InvalidGrid("grid needs at least one cell".into()));
        }
        Ok(Self {
            origin,
            cell_size,
            n_cols,
            n_rows,
        })
    }

    /// Smallest grid anchored southwest of `points` that contains all of them.
    pub fn covering(points: &[GeoPoint], cell_size: f64) -> Result<Self, GeoError> {
        if points.is_empty() {
            return Err(GeoError::EmptySet);
        }
        let min_lon = points.iter().map(|p| p.lon).fold(f64::INFINITY, f64::min);
        let min_lat = points.iter().map(|p| p.lat).fold(f64::INFINITY, f64::min);
        let mut origin = GeoPoint {
            lon: min_lon,
            lat: min_lat,
        };
        // The projected frame is slightly curved, so re-anchor until no point
        // has a negative coordinate.
        for _ in 0..4 {
            let proj = Projection::new(origin);
            let xy: Vec<[f64; 2]> = points
                .iter()
                .map(|p| proj.project(*p).map(|q| q.xy()))
                .collect::<Result<_, _>>()?;
            let min_x = xy.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
            let min_y = xy.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
            if min_x >= 0.0 && min_y >= 0.0 {
                let max_x = xy.iter().map(|q| q[0]).fold(0.0, f64::max);
                let max_y = xy.iter().map(|q| q[1]).fold(0.0, f64::max);
                let n_cols = (max_x / cell_size).floor() as u32 + 1;
                let n_rows = (max_y / cell_size).floor() as u32 + 1;
                return GridSpec::new(origin, cell_size, n_cols, n_rows);
            }
            origin = proj.unproject(min_x.min(0.0) - 1e-3, min_y.min(0.0) - 1e-3);
        }
        Err(GeoError::InvalidGrid("could not anchor grid southwest of points".into()))
    }

    /// Center of a cell in geographic coordinates.
    pub fn cell_center(&self, col: u32, row: u32) -> GeoPoint {
        Projection::new(self.origin).unproject(
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Cell `(col, row)` containing `p`. Cells are closed on their west and
/// south edges.
pub fn grid_index(p: GeoPoint, g: &GridSpec) -> Result<(u32, u32), GeoError> {
    let q = Projection::new(g.origin)
        .project(p)
        .map_err(|_| GeoError::OutsideGrid)?;
    let fx = q.x / g.cell_size + EDGE_EPS;
    let fy = q.y / g.cell_size + EDGE_EPS;
    if fx < 0.0 || fy < 0.0 {
        return Err(GeoError::OutsideGrid);
    }
    let (col, row) = (fx.floor(), fy.floor());
    if col >= g.n_cols as f64 || row >= g.n_rows as f64 {
        return Err(GeoError::OutsideGrid);
    }
    Ok((col as u32, row as u32))
}

/// A polygon with a closed exterior ring and optional closed holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPolygon {
    exterior: Vec<GeoPoint>,
    holes: Vec<Vec<GeoPoint>>,
}

impl GeoPolygon {
    /// Validates ring closure, vertex count and simplicity.
    pub fn new(exterior: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Result<Self, GeoError> {
        validate_ring(&exterior, "exterior")?;
        for (i, h) in holes.iter().enumerate() {
            validate_ring(h, &format!("hole {i}"))?;
        }
        Ok(Self { exterior, holes })
    }

    /// Builds a polygon from rings already known to be valid.
    pub(crate) fn from_valid_rings(exterior: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Self {
        Self { exterior, holes }
    }

    pub fn exterior(&self) -> &[GeoPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<GeoPoint>] {
        &self.holes
    }

    /// (min lon, min lat, max lon, max lat) of the exterior ring.
    pub fn bbox(&self) -> [f64; 4] {
        self.exterior.iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, p| [b[0].min(p.lon), b[1].min(p.lat), b[2].max(p.lon), b[3].max(p.lat)],
        )
    }

    /// Center of the exterior bounding box; the default projection origin.
    pub fn reference_point(&self) -> GeoPoint {
        let b = self.bbox();
        GeoPoint {
            lon: (b[0] + b[2]) / 2.0,
            lat: (b[1] + b[3]) / 2.0,
        }
    }

    pub fn to_planar(&self) -> PlanarPolygon {
        self.to_planar_with(Projection::new(self.reference_point()))
    }

    pub fn to_planar_with(&self, projection: Projection) -> PlanarPolygon {
        let ring = |r: &[GeoPoint]| r.iter().map(|p| projection.project_unchecked(*p)).collect();
        PlanarPolygon {
            projection,
            exterior: ring(&self.exterior),
            holes: self.holes.iter().map(|h| ring(h)).collect(),
        }
    }

    pub fn area_m2(&self) -> f64 {
        self.to_planar().area()
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.to_planar().contains(p)
    }

    pub fn centroid(&self) -> Result<GeoPoint, GeoError> {
        self.to_planar().centroid()
    }
}

fn validate_ring(ring: &[GeoPoint], what: &str) -> Result<(), GeoError> {
    if ring.len() < 4 {
        return Err(GeoError::InvalidPolygon(format!(
            "{what} ring has {} vertices, need at least 4",
            ring.len()
        )));
    }
    if ring.first() != ring.last() {
        return Err(GeoError::InvalidPolygon(format!("{what} ring is not closed")));
    }
    for p in ring {
        GeoPoint::new(p.lon, p.lat)?;
    }
    // Simplicity check in a plane tangent at the ring's first vertex.
    let proj = Projection::new(ring[0]);
    let pts: Vec<[f64; 2]> = ring.iter().map(|p| proj.project_unchecked(*p)).collect();
    let segs: Vec<([f64; 2], [f64; 2])> = pts
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| a != b)
        .collect();
    let n = segs.len();
    if n < 3 {
        return Err(GeoError::InvalidPolygon(format!("{what} ring collapses to a line")));
    }
    for i in 0..n {
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(segs[i], segs[j]) {
                return Err(GeoError::InvalidPolygon(format!(
                    "{what} ring self-intersects (edges {i} and {j})"
                )));
            }
        }
    }
    Ok(())
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Proper crossing or positive-length collinear overlap. Touching at a single
/// endpoint is allowed.
fn segments_cross(s: ([f64; 2], [f64; 2]), t: ([f64; 2], [f64; 2])) -> bool {
    let d1 = cross(t.0, t.1, s.0);
    let d2 = cross(t.0, t.1, s.1);
    let d3 = cross(s.0, s.1, t.0);
    let d4 = cross(s.0, s.1, t.1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    if d1 == 0.0 && d2 == 0.0 {
        // Collinear: overlap length along the dominant axis.
        let axis = if (s.1[0] - s.0[0]).abs() >= (s.1[1] - s.0[1]).abs() { 0 } else { 1 };
        let (a0, a1) = minmax(s.0[axis], s.1[axis]);
        let (b0, b1) = minmax(t.0[axis], t.1[axis]);
        return a1.min(b1) - a0.max(b0) > 0.0;
    }
    false
}

fn minmax(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A polygon projected to a local plane. Rings are closed.
#[derive(Debug, Clone)]
pub struct PlanarPolygon {
    projection: Projection,
    exterior: Vec<[f64; 2]>,
    holes: Vec<Vec<[f64; 2]>>,
}

impl PlanarPolygon {
    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn exterior(&self) -> &[[f64; 2]] {
        &self.exterior
    }

    pub fn area(&self) -> f64 {
        let outer = signed_area(&self.exterior).abs();
        let inner: f64 = self.holes.iter().map(|h| signed_area(h).abs()).sum();
        (outer - inner).max(0.0)
    }

    /// (min x, min y, max x, max y) of the exterior.
    pub fn bbox(&self) -> [f64; 4] {
        self.exterior.iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
        )
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.contains_xy(self.projection.project_unchecked(p))
    }

    /// Ray casting; points on any ring boundary count as inside.
    pub fn contains_xy(&self, q: [f64; 2]) -> bool {
        if on_ring_boundary(&self.exterior, q) {
            return true;
        }
        if !crossing_parity(&self.exterior, q) {
            return false;
        }
        for h in &self.holes {
            if on_ring_boundary(h, q) {
                return true;
            }
            if crossing_parity(h, q) {
                return false;
            }
        }
        true
    }

    /// Area-weighted centroid, unprojected back to WGS84.
    pub fn centroid(&self) -> Result<GeoPoint, GeoError> {
        let (ax, cx, cy) = ring_moments(&self.exterior);
        let sign = ax.signum();
        let (mut a, mut mx, mut my) = (ax * sign, cx * sign, cy * sign);
        for h in &self.holes {
            let (ha, hx, hy) = ring_moments(h);
            let s = ha.signum();
            a -= ha * s;
            mx -= hx * s;
            my -= hy * s;
        }
        if a.abs() < 1e-12 {
            return Err(GeoError::DegenerateHull("polygon has zero area".into()));
        }
        Ok(self.projection.unproject(mx / a, my / a))
    }
}

fn signed_area(ring: &[[f64; 2]]) -> f64 {
    ring.windows(2)
        .map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1])
        .sum::<f64>()
        / 2.0
}

/// (signed area, area * cx, area * cy) of a closed ring.
fn ring_moments(ring: &[[f64; 2]]) -> (f64, f64, f64) {
    // Shift to the first vertex to keep the cross products well conditioned.
    let o = ring[0];
    let (mut a2, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for w in ring.windows(2) {
        let (x0, y0) = (w[0][0] - o[0], w[0][1] - o[1]);
        let (x1, y1) = (w[1][0] - o[0], w[1][1] - o[1]);
        let c = x0 * y1 - x1 * y0;
        a2 += c;
        sx += (x0 + x1) * c;
        sy += (y0 + y1) * c;
    }
    let a = a2 / 2.0;
    (a, sx / 6.0 + a * o[0], sy / 6.0 + a * o[1])
}

fn on_ring_boundary(ring: &[[f64; 2]], q: [f64; 2]) -> bool {
    ring.windows(2)
        .any(|w| point_segment_distance(q, w[0], w[1]) <= BOUNDARY_TOLERANCE_M)
}

fn point_segment_distance(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (q[0] - (a[0] + t * dx)).hypot(q[1] - (a[1] + t * dy))
}

fn crossing_parity(ring: &[[f64; 2]], q: [f64; 2]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a[1] > q[1]) != (b[1] > q[1]) {
            let x = a[0] + (q[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if q[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Monotone-chain hull of planar points, counter-clockwise, without the
/// closing vertex. Collinear boundary points are dropped.
pub fn convex_hull_xy(points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>, GeoError> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Err(GeoError::DegenerateHull(format!(
            "{} distinct points, need at least 3",
            pts.len()
        )));
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(GeoError::DegenerateHull("all points are collinear".into()));
    }
    Ok(hull)
}

/// Convex hull of projected points as a WGS84 polygon.
pub fn convex_hull(points: &[LocalXY]) -> Result<GeoPolygon, GeoError> {
    let first = points
        .first()
        .ok_or_else(|| GeoError::DegenerateHull("no points".into()))?;
    if points.iter().any(|p| p.origin != first.origin) {
        return Err(GeoError::MixedOrigins);
    }
    let xy: Vec<[f64; 2]> = points.iter().map(LocalXY::xy).collect();
    let hull = convex_hull_xy(&xy)?;
    let proj = Projection::new(first.origin);
    let mut ring: Vec<GeoPoint> = hull.iter().map(|q| proj.unproject(q[0], q[1])).collect();
    ring.push(ring[0]);
    Ok(GeoPolygon::from_valid_rings(ring, Vec::new()))
}

pub fn polygon_area(poly: &GeoPolygon) -> f64 {
    poly.area_m2()
}

pub fn contains(poly: &GeoPolygon, p: GeoPoint) -> bool {
    poly.contains(p)
}

/// Point or polygon geometry of a feature.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Point(GeoPoint),
    Polygon(GeoPolygon),
}

impl Geometry {
    pub fn kind(&self) -> &'static str {
        match self {
            Geometry::Point(_) => "Point",
            Geometry::Polygon(_) => "Polygon",
        }
    }
}

/// Points map to themselves; polygons to their area-weighted centroid.
pub fn feature_centroid(g: &Geometry) -> Result<GeoPoint, GeoError> {
    match g {
        Geometry::Point(p) => Ok(*p),
        Geometry::Polygon(poly) => poly.centroid(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gp(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    /// Square polygon `[0, side]^2` in local meters about `origin`.
    fn local_square(origin: GeoPoint, x0: f64, y0: f64, side: f64) -> Vec<GeoPoint> {
        let proj = Projection::new(origin);
        let c = [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side), (x0, y0)];
        c.iter().map(|&(x, y)| proj.unproject(x, y)).collect()
    }

    const ORIGIN: GeoPoint = GeoPoint { lon: -73.9, lat: 11.1 };

    #[test]
    fn rejects_out_of_range_coordinates() {
        assert!(GeoPoint::new(181.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -90.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn haversine_closed_forms() {
        let o = gp(0.0, 0.0);
        assert_eq!(geodesic_distance(o, o), 0.0);
        let one_degree = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;
        assert!((one_degree - 111_195.08).abs() < 0.01);
        assert!((geodesic_distance(o, gp(1.0, 0.0)) - one_degree).abs() < 0.01);
        assert!((geodesic_distance(o, gp(0.0, 1.0)) - one_degree).abs() < 0.01);
    }

    #[test]
    fn triangle_inequality_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let mut p = || gp(rng.random_range(-180.0..180.0), rng.random_range(-89.0..89.0));
            let (a, b, c) = (p(), p(), p());
            let ab = geodesic_distance(a, b);
            let bc = geodesic_distance(b, c);
            let ac = geodesic_distance(a, c);
            assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-9);
            assert_eq!(ab, geodesic_distance(b, a));
        }
    }

    #[test]
    fn projection_basics() {
        let o = gp(0.0, 0.0);
        let q = project(o, o).unwrap();
        assert_eq!((q.x, q.y), (0.0, 0.0));
        let q = project(gp(0.0, 0.001), o).unwrap();
        assert!((q.y - 111.195).abs() < 1e-3);
        assert!(q.x.abs() < 1e-9);
        assert!(matches!(
            project(gp(2.0, 0.0), o),
            Err(GeoError::OutOfProjectionRange { .. })
        ));
    }

    #[test]
    fn projection_round_trip_within_60km() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let proj = Projection::new(ORIGIN);
        for _ in 0..2000 {
            let r = rng.random_range(0.0..60_000.0);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let p = proj.unproject(r * theta.cos(), r * theta.sin());
            let q = proj.project(p).unwrap();
            let back = unproject(&q);
            assert!((back.lon - p.lon).abs() < 1e-7 && (back.lat - p.lat).abs() < 1e-7);
            assert!((q.x - r * theta.cos()).abs() < 0.01 && (q.y - r * theta.sin()).abs() < 0.01);
            // distances from the origin are preserved
            assert!((geodesic_distance(ORIGIN, p) - r).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_index_floor_and_edges() {
        let g = GridSpec::new(ORIGIN, 200.0, 10, 10).unwrap();
        assert_eq!(grid_index(ORIGIN, &g).unwrap(), (0, 0));
        let proj = Projection::new(ORIGIN);
        assert_eq!(grid_index(proj.unproject(250.0, 50.0), &g).unwrap(), (1, 0));
        // west/south edges are closed: x == 200 belongs to column 1
        assert_eq!(grid_index(proj.unproject(200.0, 50.0), &g).unwrap(), (1, 0));
        assert_eq!(grid_index(proj.unproject(50.0, 400.0), &g).unwrap(), (0, 2));
        assert_eq!(grid_index(proj.unproject(-1.0, 50.0), &g), Err(GeoError::OutsideGrid));
        assert_eq!(grid_index(proj.unproject(2000.0, 50.0), &g), Err(GeoError::OutsideGrid));
        assert!(GridSpec::new(ORIGIN, 0.0, 1, 1).is_err());
    }

    #[test]
    fn covering_grid_contains_every_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let proj = Projection::new(ORIGIN);
        let pts: Vec<GeoPoint> = (0..500)
            .map(|_| proj.unproject(rng.random_range(-5000.0..5000.0), rng.random_range(-5000.0..5000.0)))
            .collect();
        let g = GridSpec::covering(&pts, 200.0).unwrap();
        for p in &pts {
            assert!(grid_index(*p, &g).is_ok());
        }
    }

    #[test]
    fn hull_of_square_and_center() {
        let mk = |x, y| LocalXY { x, y, origin: ORIGIN };
        let pts = [mk(0.0, 0.0), mk(1.0, 0.0), mk(1.0, 1.0), mk(0.0, 1.0), mk(0.5, 0.5)];
        let xy: Vec<[f64; 2]> = pts.iter().map(|p| p.xy()).collect();
        let hull = convex_hull_xy(&xy).unwrap();
        assert_eq!(hull, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let poly = convex_hull(&pts).unwrap();
        assert_eq!(poly.exterior().len(), 5);
        for p in &pts {
            assert!(poly.contains(unproject(p)));
        }
    }

    #[test]
    fn hull_triangle_and_degenerate_inputs() {
        let tri = convex_hull_xy(&[[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]]).unwrap();
        assert_eq!(tri.len(), 3);
        assert!(matches!(convex_hull_xy(&[[0.0, 0.0], [1.0, 1.0]]), Err(GeoError::DegenerateHull(_))));
        assert!(matches!(
            convex_hull_xy(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
            Err(GeoError::DegenerateHull(_))
        ));
    }

    #[test]
    fn hull_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 2]> = (0..500)
            .map(|_| [rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0)])
            .collect();
        let hull = convex_hull_xy(&pts).unwrap();
        // Oracle: (i, j) is a hull edge iff every other point is left of or on i->j.
        let mut oracle_vertices = std::collections::BTreeSet::new();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if i == j {
                    continue;
                }
                let all_left = pts.iter().all(|&p| cross(pts[i], pts[j], p) >= 0.0);
                if all_left {
                    oracle_vertices.insert(i);
                    oracle_vertices.insert(j);
                }
            }
        }
        let got: std::collections::BTreeSet<usize> = hull
            .iter()
            .map(|h| pts.iter().position(|p| p == h).unwrap())
            .collect();
        assert_eq!(got, oracle_vertices);
        let n = hull.len();
        for k in 0..n {
            let (a, b) = (hull[k], hull[(k + 1) % n]);
            assert!(pts.iter().all(|&p| cross(a, b, p) >= 0.0));
        }
    }

    #[test]
    fn areas() {
        let sq = GeoPolygon::new(local_square(ORIGIN, 0.0, 0.0, 1000.0), vec![]).unwrap();
        assert!((polygon_area(&sq) - 1.0e6).abs() < 1.0e3);
        let proj = Projection::new(ORIGIN);
        let tri: Vec<GeoPoint> = [(0.0, 0.0), (1000.0, 0.0), (0.0, 1000.0), (0.0, 0.0)]
            .iter()
            .map(|&(x, y)| proj.unproject(x, y))
            .collect();
        let tri = GeoPolygon::new(tri, vec![]).unwrap();
        assert!((polygon_area(&tri) - 5.0e5).abs() < 5.0);
        let mut hole = local_square(ORIGIN, 300.0, 300.0, 100.0);
        hole.reverse();
        let holed = GeoPolygon::new(local_square(ORIGIN, 0.0, 0.0, 1000.0), vec![hole]).unwrap();
        assert!((polygon_area(&holed) - (polygon_area(&sq) - 1.0e4)).abs() < 1.0);
    }

    #[test]
    fn containment() {
        let sq = GeoPolygon::new(local_square(ORIGIN, 0.0, 0.0, 1000.0), vec![]).unwrap();
        let proj = Projection::new(ORIGIN);
        assert!(contains(&sq, proj.unproject(500.0, 500.0)));
        assert!(!contains(&sq, proj.unproject(1001.0, 500.0)));
        assert!(contains(&sq, sq.exterior()[1]));
        let holed = GeoPolygon::new(
            local_square(ORIGIN, 0.0, 0.0, 1000.0),
            vec![local_square(ORIGIN, 300.0, 300.0, 100.0)],
        )
        .unwrap();
        assert!(!contains(&holed, proj.unproject(350.0, 350.0)));
        assert!(contains(&holed, proj.unproject(600.0, 600.0)));
    }

    #[test]
    fn containment_agrees_with_convexity_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 2]> = (0..60)
            .map(|_| [rng.random_range(-800.0..800.0), rng.random_range(-800.0..800.0)])
            .collect();
        let hull = convex_hull_xy(&pts).unwrap();
        let mut ring = hull.clone();
        ring.push(hull[0]);
        let planar = PlanarPolygon {
            projection: Projection::new(ORIGIN),
            exterior: ring,
            holes: vec![],
        };
        let n = hull.len();
        for _ in 0..1000 {
            let q = [rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0)];
            let oracle = (0..n).all(|k| cross(hull[k], hull[(k + 1) % n], q) >= 0.0);
            assert_eq!(planar.contains_xy(q), oracle);
        }
    }

    #[test]
    fn min_distance() {
        let p = gp(-73.9, 11.1);
        assert_eq!(min_distance_to_set(p, &[p]).unwrap(), 0.0);
        let far = Projection::new(p).unproject(1500.0, 0.0);
        assert!((min_distance_to_set(p, &[far]).unwrap() - 1500.0).abs() < 1.0);
        assert_eq!(min_distance_to_set(p, &[]), Err(GeoError::EmptySet));
    }

    #[test]
    fn centroids() {
        let p = gp(-73.9, 11.1);
        assert_eq!(feature_centroid(&Geometry::Point(p)).unwrap(), p);
        let sq = GeoPolygon::new(local_square(ORIGIN, -500.0, -500.0, 1000.0), vec![]).unwrap();
        let c = feature_centroid(&Geometry::Polygon(sq)).unwrap();
        assert!(geodesic_distance(c, ORIGIN) < 0.01);
    }

    #[test]
    fn l_shape_centroid_matches_monte_carlo() {
        let proj = Projection::new(ORIGIN);
        let l = [(0.0, 0.0), (1000.0, 0.0), (1000.0, 300.0), (300.0, 300.0), (300.0, 1000.0), (0.0, 1000.0), (0.0, 0.0)];
        let ring: Vec<GeoPoint> = l.iter().map(|&(x, y)| proj.unproject(x, y)).collect();
        let poly = GeoPolygon::new(ring, vec![]).unwrap();
        let c = feature_centroid(&Geometry::Polygon(poly)).unwrap();
        let inside = |x: f64, y: f64| y < 300.0 || x < 300.0;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        while n < 1_000_000 {
            let (x, y) = (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
            if inside(x, y) {
                sx += x;
                sy += y;
                n += 1;
            }
        }
        let mc = proj.unproject(sx / n as f64, sy / n as f64);
        assert!(geodesic_distance(c, mc) < 1.0, "{}", geodesic_distance(c, mc));
    }

    #[test]
    fn polygon_validation() {
        let open = vec![gp(0.0, 0.0), gp(0.001, 0.0), gp(0.001, 0.001), gp(0.0, 0.001)];
        assert!(matches!(GeoPolygon::new(open, vec![]), Err(GeoError::InvalidPolygon(_))));
        let bowtie = vec![gp(0.0, 0.0), gp(0.001, 0.001), gp(0.001, 0.0), gp(0.0, 0.001), gp(0.0, 0.0)];
        assert!(matches!(GeoPolygon::new(bowtie, vec![]), Err(GeoError::InvalidPolygon(_))));
    }

    #[test]
    fn zero_area_polygon_centroid_is_degenerate() {
        // A closed ring folded back on itself fails validation, so build the
        // planar form directly.
        let planar = PlanarPolygon {
            projection: Projection::new(ORIGIN),
            exterior: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 0.0]],
            holes: vec![],
        };
        assert!(matches!(planar.centroid(), Err(GeoError::DegenerateHull(_))));
    }
}
