//! SRTM 1-arc-second `.hgt` tiles and elevation sampling.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{associate_sites, ClusterResult};
use crate::geo::{geodesic_distance, GeoPoint};
use crate::ingest::ArchaeoCentroid;

pub const TILE_SIZE: usize = 3601;
pub const TILE_BYTES: u64 = (TILE_SIZE * TILE_SIZE * 2) as u64;
pub const VOID: i16 = -32768;
const POSTS_PER_DEGREE: f64 = 3600.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{0}: file name does not match [NS]dd[EW]ddd.hgt")]
    BadFilename(PathBuf),
    #[error("{path}: expected {TILE_BYTES} bytes, found {size}")]
    BadSize { path: PathBuf, size: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no loaded tile covers ({lon}, {lat})")]
    NoCoverage { lon: f64, lat: f64 },
    #[error("void post near ({lon}, {lat})")]
    VoidCell { lon: f64, lat: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Nearest,
    #[default]
    Bilinear,
}

/// One tile; posts are row-major from the north edge.
#[derive(Clone, PartialEq)]
pub struct SrtmTile {
    pub sw_lat: i32,
    pub sw_lon: i32,
    posts: Vec<i16>,
}

impl std::fmt::Debug for SrtmTile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SrtmTile({})", self.file_name())
    }
}

/// Parses `N11W074.hgt` into (11, -74).
pub fn parse_tile_name(name: &str) -> Option<(i32, i32)> {
    let stem = name.strip_suffix(".hgt").or_else(|| name.strip_suffix(".HGT"))?;
    let b = stem.as_bytes();
    if b.len() != 7 || !b[1..3].iter().chain(&b[4..7]).all(u8::is_ascii_digit) {
        return None;
    }
    let lat: i32 = stem[1..3].parse().ok()?;
    let lon: i32 = stem[4..7].parse().ok()?;
    let lat = match b[0].to_ascii_uppercase() {
        b'N' => lat,
        b'S' => -lat,
        _ => return None,
    };
    let lon = match b[3].to_ascii_uppercase() {
        b'E' => lon,
        b'W' => -lon,
        _ => return None,
    };
    (lat.abs() <= 90 && lon.abs() <= 180).then_some((lat, lon))
}

impl SrtmTile {
    /// Builds a tile from `f(row, col)`.
    pub fn from_fn(sw_lat: i32, sw_lon: i32, f: impl Fn(usize, usize) -> i16) -> Self {
        let mut posts = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
        for r in 0..TILE_SIZE {
            for c in 0..TILE_SIZE {
                posts.push(f(r, c));
            }
        }
        Self { sw_lat, sw_lon, posts }
    }

    pub fn from_bytes(sw_lat: i32, sw_lon: i32, bytes: &[u8]) -> Option<Self> {
        if bytes.len() as u64 != TILE_BYTES {
            return None;
        }
        let posts = bytes.chunks_exact(2).map(|b| i16::from_be_bytes([b[0], b[1]])).collect();
        Some(Self { sw_lat, sw_lon, posts })
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}{:02}{}{:03}.hgt",
            if self.sw_lat >= 0 { 'N' } else { 'S' },
            self.sw_lat.abs(),
            if self.sw_lon >= 0 { 'E' } else { 'W' },
            self.sw_lon.abs()
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.posts.iter().flat_map(|v| v.to_be_bytes()).collect()
    }

    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_bytes())?;
        Ok(path)
    }

    pub fn post(&self, row: usize, col: usize) -> i16 {
        self.posts[row * TILE_SIZE + col]
    }

    /// Geographic position of a post.
    pub fn post_location(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint {
            lon: self.sw_lon as f64 + col as f64 / POSTS_PER_DEGREE,
            lat: (self.sw_lat + 1) as f64 - row as f64 / POSTS_PER_DEGREE,
        }
    }

    pub fn covers(&self, p: GeoPoint) -> bool {
        let (lat0, lon0) = (self.sw_lat as f64, self.sw_lon as f64);
        (lat0..=lat0 + 1.0).contains(&p.lat) && (lon0..=lon0 + 1.0).contains(&p.lon)
    }

    /// Fractional (row, col) of `p` within the tile.
    fn grid_position(&self, p: GeoPoint) -> (f64, f64) {
        let row = ((self.sw_lat + 1) as f64 - p.lat) * POSTS_PER_DEGREE;
        let col = (p.lon - self.sw_lon as f64) * POSTS_PER_DEGREE;
        (row.clamp(0.0, 3600.0), col.clamp(0.0, 3600.0))
    }

    pub fn sample(&self, p: GeoPoint, mode: SampleMode) -> Result<f64, RasterError> {
        let void = || RasterError::VoidCell { lon: p.lon, lat: p.lat };
        let (r, c) = self.grid_position(p);
        match mode {
            SampleMode::Bilinear => {
                let r0 = (r.floor() as usize).min(TILE_SIZE - 2);
                let c0 = (c.floor() as usize).min(TILE_SIZE - 2);
                let (fr, fc) = (r - r0 as f64, c - c0 as f64);
                let v = [
                    self.post(r0, c0),
                    self.post(r0, c0 + 1),
                    self.post(r0 + 1, c0),
                    self.post(r0 + 1, c0 + 1),
                ];
                if v.contains(&VOID) {
                    return Err(void());
                }
                let [a, b, cc, d] = v.map(f64::from);
                let top = a + fc * (b - a);
                let bottom = cc + fc * (d - cc);
                Ok(top + fr * (bottom - top))
            }
            SampleMode::Nearest => {
                let rn = r.round() as usize;
                let cn = c.round() as usize;
                let v = self.post(rn, cn);
                if v != VOID {
                    return Ok(v.into());
                }
                // closest non-void neighbour within one post
                let mut best: Option<(f64, i16)> = None;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (nr, nc) = (rn as i64 + dr, cn as i64 + dc);
                        if nr < 0 || nc < 0 || nr >= TILE_SIZE as i64 || nc >= TILE_SIZE as i64 {
                            continue;
                        }
                        let v = self.post(nr as usize, nc as usize);
                        if v == VOID {
                            continue;
                        }
                        let d = (nr as f64 - r).hypot(nc as f64 - c);
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, v));
                        }
                    }
                }
                best.map(|(_, v)| v.into()).ok_or_else(void)
            }
        }
    }
}

pub fn load_hgt(path: &Path) -> Result<SrtmTile, RasterError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let (sw_lat, sw_lon) = parse_tile_name(name).ok_or_else(|| RasterError::BadFilename(path.to_path_buf()))?;
    let io_err = |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    };
    let size = fs::metadata(path).map_err(io_err)?.len();
    if size != TILE_BYTES {
        return Err(RasterError::BadSize {
            path: path.to_path_buf(),
            size,
        });
    }
    let bytes = fs::read(path).map_err(io_err)?;
    SrtmTile::from_bytes(sw_lat, sw_lon, &bytes).ok_or(RasterError::BadSize {
        path: path.to_path_buf(),
        size: bytes.len() as u64,
    })
}

/// A set of tiles. Where tiles share an edge either one answers, since SRTM
/// tiles repeat their edge posts.
#[derive(Debug, Clone, Default)]
pub struct Mosaic {
    tiles: Vec<SrtmTile>,
}

impl Mosaic {
    pub fn new(mut tiles: Vec<SrtmTile>) -> Self {
        tiles.sort_by_key(|t| (t.sw_lat, t.sw_lon));
        Self { tiles }
    }

    /// Loads every `.hgt` file in `dir`, sorted by name.
    pub fn load_dir(dir: &Path) -> Result<Self, RasterError> {
        let io_err = |source| RasterError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("hgt")))
            .collect();
        paths.sort();
        Ok(Self::new(paths.iter().map(|p| load_hgt(p)).collect::<Result<_, _>>()?))
    }

    pub fn tiles(&self) -> &[SrtmTile] {
        &self.tiles
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn sample(&self, p: GeoPoint, mode: SampleMode) -> Result<f64, RasterError> {
        self.tiles
            .iter()
            .find(|t| t.covers(p))
            .ok_or(RasterError::NoCoverage { lon: p.lon, lat: p.lat })?
            .sample(p, mode)
    }
}

pub fn sample_elevation(tiles: &Mosaic, p: GeoPoint, mode: SampleMode) -> Result<f64, RasterError> {
    tiles.sample(p, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetTag {
    NearSite,
    ClusterNoBuffer,
    ClusterNoSites,
    Unclustered,
    GbifBaseline,
}

impl SubsetTag {
    pub const ALL: [SubsetTag; 5] = [
        SubsetTag::NearSite,
        SubsetTag::ClusterNoBuffer,
        SubsetTag::ClusterNoSites,
        SubsetTag::Unclustered,
        SubsetTag::GbifBaseline,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SubsetTag::NearSite => "near_site",
            SubsetTag::ClusterNoBuffer => "cluster_no_buffer",
            SubsetTag::ClusterNoSites => "cluster_no_sites",
            SubsetTag::Unclustered => "unclustered",
            SubsetTag::GbifBaseline => "gbif_baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElevationSample {
    pub location: GeoPoint,
    pub elevation_m: f64,
    pub subset_tag: SubsetTag,
}

/// Tags each palm (by index into `palms`, matching `clusters.labels`):
/// near a site of a site-bearing cluster, elsewhere in such a cluster, in a
/// cluster without sites, or unclustered.
pub fn tag_elevation_subsets(
    palms: &[GeoPoint],
    clusters: &ClusterResult,
    centroids: &[ArchaeoCentroid],
    buffer_m: f64,
) -> Vec<SubsetTag> {
    let assoc = associate_sites(clusters, centroids);
    let site_bearing: Vec<bool> = assoc.iter().map(|a| !a.centroid_ids.is_empty()).collect();
    let anchored: Vec<GeoPoint> = centroids
        .iter()
        .filter(|c| assoc.iter().any(|a| a.centroid_ids.contains(&c.id_site)))
        .map(|c| c.location)
        .collect();
    crate::par::map_range(palms.len(), |i| {
        let p = palms[i];
        if anchored.iter().any(|s| geodesic_distance(*s, p) <= buffer_m) {
            return SubsetTag::NearSite;
        }
        match clusters.labels[i] {
            Some(c) if site_bearing[c] => SubsetTag::ClusterNoBuffer,
            Some(_) => SubsetTag::ClusterNoSites,
            None => SubsetTag::Unclustered,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filename_grammar() {
        assert_eq!(parse_tile_name("N11W074.hgt"), Some((11, -74)));
        assert_eq!(parse_tile_name("S03E120.hgt"), Some((-3, 120)));
        assert_eq!(parse_tile_name("N11W74.hgt"), None);
        assert_eq!(parse_tile_name("X11W074.hgt"), None);
        assert_eq!(parse_tile_name("N11W074.tif"), None);
    }

    #[test]
    fn file_round_trip_and_bad_size() {
        let dir = tempfile::tempdir().unwrap();
        let t = SrtmTile::from_fn(11, -74, |r, c| ((r * 7 + c) % 3000) as i16);
        let path = t.write(dir.path()).unwrap();
        assert!(path.ends_with("N11W074.hgt"));
        assert_eq!(load_hgt(&path).unwrap(), t);
        let short = dir.path().join("N10W074.hgt");
        fs::write(&short, vec![0u8; 1000]).unwrap();
        assert!(matches!(load_hgt(&short), Err(RasterError::BadSize { size: 1000, .. })));
        let bad = dir.path().join("tile.hgt");
        fs::write(&bad, vec![0u8; 10]).unwrap();
        assert!(matches!(load_hgt(&bad), Err(RasterError::BadFilename(_))));
    }

    #[test]
    fn constant_and_gradient_tiles() {
        let flat = Mosaic::new(vec![SrtmTile::from_fn(11, -74, |_, _| 100)]);
        let p = GeoPoint { lon: -73.6, lat: 11.4 };
        assert_eq!(flat.sample(p, SampleMode::Bilinear).unwrap(), 100.0);
        assert_eq!(flat.sample(p, SampleMode::Nearest).unwrap(), 100.0);

        let grad = SrtmTile::from_fn(11, -74, |_, c| c as i16);
        let mid = GeoPoint {
            lon: -74.0 + 10.5 / 3600.0,
            lat: 11.5,
        };
        assert!((grad.sample(mid, SampleMode::Bilinear).unwrap() - 10.5).abs() < 1e-6);
        assert_eq!(
            Mosaic::new(vec![grad]).sample(GeoPoint { lon: 0.0, lat: 0.0 }, SampleMode::Bilinear).unwrap_err().to_string(),
            "no loaded tile covers (0, 0)"
        );
    }

    #[test]
    fn voids() {
        let t = SrtmTile::from_fn(11, -74, |r, c| if (r, c) == (100, 100) { VOID } else { 7 });
        let p = t.post_location(100, 100);
        assert!(matches!(t.sample(p, SampleMode::Bilinear), Err(RasterError::VoidCell { .. })));
        assert_eq!(t.sample(p, SampleMode::Nearest).unwrap(), 7.0);
        let all_void = SrtmTile::from_fn(11, -74, |_, _| VOID);
        assert!(all_void.sample(p, SampleMode::Nearest).is_err());
    }

    #[test]
    fn shared_edges_agree() {
        // global function of (lat, lon) in post units, so edge posts coincide
        let f = |sw_lat: i32, sw_lon: i32| {
            move |r: usize, c: usize| {
                let gy = (sw_lat + 1) as i64 * 3600 - r as i64;
                let gx = sw_lon as i64 * 3600 + c as i64;
                ((gx * 3 + gy * 5).rem_euclid(2000)) as i16
            }
        };
        let a = SrtmTile::from_fn(11, -74, f(11, -74));
        let b = SrtmTile::from_fn(11, -73, f(11, -73));
        let p = GeoPoint { lon: -73.0, lat: 11.3 };
        for mode in [SampleMode::Nearest, SampleMode::Bilinear] {
            assert_eq!(a.sample(p, mode).unwrap(), b.sample(p, mode).unwrap());
        }
    }
}
