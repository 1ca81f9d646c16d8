//! Wards, coordinates, great-circle distance and the inter-ward distance matrix.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("duplicate ward `{0}`")]
    DuplicateWard(String),
    #[error("no centroid for ward `{0}`")]
    MissingWard(String),
    #[error("unknown ward `{0}`")]
    UnknownWard(String),
    #[error("distance matrix is {rows}x{cols}, expected {n}x{n}")]
    Shape { rows: usize, cols: usize, n: usize },
    #[error("distance matrix entry ({from}, {to}) = {value} is invalid: {reason}")]
    Entry { from: String, to: String, value: f64, reason: &'static str },
}

/// Compact index of a ward inside a loaded [`Wards`] registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WardId(pub usize);

impl WardId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for WardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ordered set of ward codes; the position of a code is its [`WardId`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Wards {
    codes: Vec<String>,
    index: HashMap<String, WardId>,
}

impl Wards {
    pub fn new<I, S>(codes: I) -> Result<Self, GeoError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut wards = Wards::default();
        for code in codes {
            let code = code.into();
            if wards.index.contains_key(&code) {
                return Err(GeoError::DuplicateWard(code));
            }
            wards.index.insert(code.clone(), WardId(wards.codes.len()));
            wards.codes.push(code);
        }
        Ok(wards)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, id: WardId) -> &str {
        &self.codes[id.0]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn get(&self, code: &str) -> Option<WardId> {
        self.index.get(code).copied()
    }

    pub fn lookup(&self, code: &str) -> Result<WardId, GeoError> {
        self.get(code).ok_or_else(|| GeoError::UnknownWard(code.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = WardId> + '_ {
        (0..self.codes.len()).map(WardId)
    }
}

/// A WGS84 coordinate in degrees. Ranges are checked at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint<F> {
    lat: F,
    lon: F,
}

impl<F: Scalar> GeoPoint<F> {
    pub fn new(lat: F, lon: F) -> Result<Self, GeoError> {
        let (la, lo) = (lat.to_f64().unwrap_or(f64::NAN), lon.to_f64().unwrap_or(f64::NAN));
        if !(-90.0..=90.0).contains(&la) {
            return Err(GeoError::Latitude(la));
        }
        if !(-180.0..=180.0).contains(&lo) {
            return Err(GeoError::Longitude(lo));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> F {
        self.lat
    }

    pub fn lon(&self) -> F {
        self.lon
    }
}

/// Great-circle distance in meters (haversine form, spherical Earth).
pub fn haversine<F: Scalar>(a: GeoPoint<F>, b: GeoPoint<F>) -> F {
    let two = F::lit(2.0);
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s1 = (dphi / two).sin();
    let s2 = (dlambda / two).sin();
    let h = s1 * s1 + phi1.cos() * phi2.cos() * s2 * s2;
    // h can exceed 1 by an ulp for antipodal points
    let h = h.min(F::one()).max(F::zero());
    two * F::lit(EARTH_RADIUS_M) * h.sqrt().asin()
}

/// Symmetric n×n matrix of inter-ward distances in kilometers.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<F> {
    n: usize,
    km: Vec<F>,
}

impl<F: Scalar> DistanceMatrix<F> {
    /// Builds the matrix from one centroid per ward of `wards`.
    ///
    /// Every ward must appear exactly once in `centroids`.
    pub fn from_centroids(wards: &Wards, centroids: &[(WardId, GeoPoint<F>)]) -> Result<Self, GeoError> {
        let n = wards.len();
        let mut points: Vec<Option<GeoPoint<F>>> = vec![None; n];
        for (id, p) in centroids {
            let slot = points.get_mut(id.0).ok_or_else(|| GeoError::UnknownWard(id.to_string()))?;
            if slot.is_some() {
                return Err(GeoError::DuplicateWard(wards.code(*id).to_string()));
            }
            *slot = Some(*p);
        }
        let points = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| GeoError::MissingWard(wards.code(WardId(i)).to_string())))
            .collect::<Result<Vec<_>, _>>()?;

        let mut km = vec![F::zero(); n * n];
        let thousand = F::lit(1000.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = haversine(points[i], points[j]) / thousand;
                km[i * n + j] = d;
                km[j * n + i] = d;
            }
        }
        Ok(Self { n, km })
    }

    /// Accepts an externally supplied matrix (e.g. road distances).
    ///
    /// Only symmetry, a zero diagonal and non-negativity are enforced.
    pub fn from_rows(wards: &Wards, rows: Vec<Vec<F>>) -> Result<Self, GeoError> {
        let n = wards.len();
        if rows.len() != n {
            return Err(GeoError::Shape { rows: rows.len(), cols: rows.first().map_or(0, Vec::len), n });
        }
        let mut km = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(GeoError::Shape { rows: rows.len(), cols: row.len(), n });
            }
            km.extend_from_slice(row);
        }
        let entry_err = |i: usize, j: usize, v: F, reason| GeoError::Entry {
            from: wards.code(WardId(i)).to_string(),
            to: wards.code(WardId(j)).to_string(),
            value: v.to_f64().unwrap_or(f64::NAN),
            reason,
        };
        for i in 0..n {
            if km[i * n + i] != F::zero() {
                return Err(entry_err(i, i, km[i * n + i], "diagonal must be zero"));
            }
            for j in 0..n {
                let v = km[i * n + j];
                if !v.is_finite() || v < F::zero() {
                    return Err(entry_err(i, j, v, "must be finite and non-negative"));
                }
                if v != km[j * n + i] {
                    return Err(entry_err(i, j, v, "matrix must be symmetric"));
                }
            }
        }
        Ok(Self { n, km })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn km(&self, a: WardId, b: WardId) -> F {
        self.km[a.0 * self.n + b.0]
    }

    pub fn row(&self, a: WardId) -> &[F] {
        &self.km[a.0 * self.n..(a.0 + 1) * self.n]
    }

    /// Largest violation of the triangle inequality, in kilometers (0 when none).
    pub fn max_triangle_violation(&self) -> F {
        let n = self.n;
        let mut worst = F::zero();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let excess = self.km[i * n + j] - (self.km[i * n + k] + self.km[k * n + j]);
                    worst = worst.max(excess);
                }
            }
        }
        worst
    }
}

/// Maps coordinates to wards.
#[derive(Debug, Clone)]
pub enum WardLocator {
    /// Nearest ward centroid by great-circle distance; ties go to the lower ward index.
    NearestCentroid(Vec<GeoPoint<f64>>),
    /// Polygon containment with nearest-centroid fallback for points outside every polygon.
    Polygons { rings: Vec<(WardId, Vec<GeoPoint<f64>>)>, centroids: Vec<GeoPoint<f64>> },
}

impl WardLocator {
    pub fn locate(&self, p: GeoPoint<f64>) -> WardId {
        match self {
            WardLocator::NearestCentroid(c) => nearest(c, p),
            WardLocator::Polygons { rings, centroids } => {
                rings.iter().find(|(_, ring)| point_in_ring(ring, p)).map(|(id, _)| *id).unwrap_or_else(|| nearest(centroids, p))
            }
        }
    }
}

fn nearest(centroids: &[GeoPoint<f64>], p: GeoPoint<f64>) -> WardId {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = haversine(*c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    WardId(best.0)
}

/// Even-odd ray casting in the lon/lat plane.
fn point_in_ring(ring: &[GeoPoint<f64>], p: GeoPoint<f64>) -> bool {
    let (x, y) = (p.lon(), p.lat());
    let mut inside = false;
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (ring[i].lon(), ring[i].lat());
        let (xj, yj) = (ring[j].lon(), ring[j].lat());
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}
