//! Pixel-to-world planar homography and the local tangent plane used to turn
//! GPS keypoints into meters.

use roadsafe_stats::linalg::Svd;
use roadsafe_stats::{Matrix, Real};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
/// `|λ|` at or below this is treated as a point at infinity.
pub const INFINITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointPair<T> {
    pub pixel: [T; 2],
    pub world: [T; 2],
}

impl<T: Real> KeypointPair<T> {
    pub fn new(pixel: [T; 2], world: [T; 2]) -> Self {
        Self { pixel, world }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography<T> {
    pub matrix: [[T; 3]; 3],
    /// Reprojection RMS over the fitting pairs, meters.
    pub residual_rms: T,
}

impl<T: Real> Homography<T> {
    pub fn identity() -> Self {
        Self::from_matrix(diag(T::one(), T::one(), T::one()))
    }

    /// Wraps a matrix as given, without rescaling.
    pub fn from_matrix(matrix: [[T; 3]; 3]) -> Self {
        Self {
            matrix,
            residual_rms: T::zero(),
        }
    }

    pub fn apply(&self, p: [T; 2]) -> Result<[T; 2]> {
        let h = &self.matrix;
        let w = |r: usize| h[r][0] * p[0] + h[r][1] * p[1] + h[r][2];
        let lambda = w(2);
        if lambda.abs() <= T::lit(INFINITY_EPS) {
            return Err(Error::PointAtInfinity(lambda.to_f64_lossy()));
        }
        Ok([w(0) / lambda, w(1) / lambda])
    }

    pub fn determinant(&self) -> T {
        det3(&self.matrix)
    }

    /// World-to-pixel transform.
    pub fn inverse(&self) -> Result<Self> {
        let inv = invert3(&self.matrix)
            .ok_or_else(|| Error::Rank("homography matrix is singular".into()))?;
        Ok(Self {
            matrix: normalize_scale(inv),
            residual_rms: self.residual_rms,
        })
    }

    /// Matrix divided by its Frobenius norm with a sign fixed so the largest
    /// magnitude entry is positive; two homographies equal up to scale have
    /// the same canonical form.
    pub fn canonical(&self) -> [[T; 3]; 3] {
        let m = &self.matrix;
        let norm = m.iter().flatten().map(|&v| v * v).sum::<T>().sqrt();
        let pivot = m
            .iter()
            .flatten()
            .copied()
            .fold(T::zero(), |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let s = if pivot < T::zero() { -norm } else { norm };
        m.map(|row| row.map(|v| v / s))
    }
}

fn diag<T: Real>(a: T, b: T, c: T) -> [[T; 3]; 3] {
    let z = T::zero();
    [[a, z, z], [z, b, z], [z, z, c]]
}

fn matmul3<T: Real>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn invert3<T: Real>(m: &[[T; 3]; 3]) -> Option<[[T; 3]; 3]> {
    let det = det3(m);
    let scale = m.iter().flatten().fold(T::zero(), |a, &v| a.max(v.abs()));
    if scale == T::zero() || det.abs() <= T::lit(T::TINY) * scale * scale * scale {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    Some(adj.map(|row| row.map(|v| v / det)))
}

/// Divides by `h33` when it is safely nonzero, otherwise by the Frobenius norm.
fn normalize_scale<T: Real>(m: [[T; 3]; 3]) -> [[T; 3]; 3] {
    let norm = m.iter().flatten().map(|&v| v * v).sum::<T>().sqrt();
    let s = if m[2][2].abs() > T::lit(1e-9) * norm {
        m[2][2]
    } else {
        norm
    };
    m.map(|row| row.map(|v| v / s))
}

/// Similarity that moves the centroid to the origin and sets the mean
/// distance from it to sqrt(2).
fn hartley<T: Real>(points: &[[T; 2]]) -> Result<[[T; 3]; 3]> {
    let n = T::from_count(points.len());
    let cx = points.iter().map(|p| p[0]).sum::<T>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<T>() / n;
    let mean_dist = points
        .iter()
        .map(|p| (p[0] - cx).hypot(p[1] - cy))
        .sum::<T>()
        / n;
    if !(mean_dist > T::zero()) {
        return Err(Error::Rank("all points coincide".into()));
    }
    let s = T::SQRT_2() / mean_dist;
    let z = T::zero();
    Ok([[s, z, -s * cx], [z, s, -s * cy], [z, z, T::one()]])
}

fn transform<T: Real>(t: &[[T; 3]; 3], p: [T; 2]) -> [T; 2] {
    [
        t[0][0] * p[0] + t[0][1] * p[1] + t[0][2],
        t[1][0] * p[0] + t[1][1] * p[1] + t[1][2],
    ]
}

fn collinear<T: Real>(a: [T; 2], b: [T; 2], c: [T; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = (b[0] - a[0]).hypot(b[1] - a[1]) * (c[0] - a[0]).hypot(c[1] - a[1]);
    cross.abs() <= T::lit(T::TINY.sqrt()) * scale
}

/// Direct linear transform with Hartley normalization. The homogeneous
/// solution is the right singular vector of the smallest singular value.
pub fn fit_homography<T: Real>(pairs: &[KeypointPair<T>]) -> Result<Homography<T>> {
    if pairs.len() < 4 {
        return Err(Error::Parameter(format!(
            "a homography needs at least 4 keypoint pairs, got {}",
            pairs.len()
        )));
    }
    if pairs
        .iter()
        .any(|p| p.pixel.iter().chain(&p.world).any(|v| !v.is_finite()))
    {
        return Err(Error::Data("keypoint coordinates must be finite".into()));
    }
    let pixels: Vec<[T; 2]> = pairs.iter().map(|p| p.pixel).collect();
    let worlds: Vec<[T; 2]> = pairs.iter().map(|p| p.world).collect();
    if pairs.len() == 4 {
        for (a, b, c) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if collinear(pixels[a], pixels[b], pixels[c]) {
                return Err(Error::Rank(format!(
                    "pixel keypoints {a}, {b} and {c} are collinear"
                )));
            }
        }
    }
    let tp = hartley(&pixels)?;
    let tw = hartley(&worlds)?;

    let rows = (2 * pairs.len()).max(9);
    let mut a = Matrix::zeros(rows, 9);
    for (i, (p, w)) in pixels.iter().zip(&worlds).enumerate() {
        let [u, v] = transform(&tp, *p);
        let [x, y] = transform(&tw, *w);
        let one = T::one();
        let r0 = [-u, -v, -one, T::zero(), T::zero(), T::zero(), x * u, x * v, x];
        let r1 = [T::zero(), T::zero(), T::zero(), -u, -v, -one, y * u, y * v, y];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = Svd::new(&a);
    let sv = &svd.singular_values;
    // a second (near) null direction means the correspondences do not pin
    // down a unique transform
    if sv[7] <= T::lit(T::TINY.sqrt()) * sv[0] {
        return Err(Error::Rank(
            "keypoint configuration is degenerate (rank-deficient system)".into(),
        ));
    }
    let h: Vec<T> = (0..9).map(|i| svd.v[(i, 8)]).collect();
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]];
    let tw_inv =
        invert3(&tw).ok_or_else(|| Error::Rank("world normalization is singular".into()))?;
    let full = normalize_scale(matmul3(&tw_inv, &matmul3(&hn, &tp)));
    if invert3(&full).is_none() {
        return Err(Error::Rank("fitted homography is singular".into()));
    }
    let mut hom = Homography::from_matrix(full);
    let mut sq = T::zero();
    for (p, w) in pixels.iter().zip(&worlds) {
        let q = hom.apply(*p)?;
        sq = sq + (q[0] - w[0]).powi(2) + (q[1] - w[1]).powi(2);
    }
    hom.residual_rms = (sq / T::from_count(pairs.len())).sqrt();
    Ok(hom)
}

pub fn apply_homography<T: Real>(h: &Homography<T>, p: [T; 2]) -> Result<[T; 2]> {
    h.apply(p)
}

/// Equirectangular tangent plane at an anchor: x east, y north, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentPlane {
    pub lat0: f64,
    pub lon0: f64,
}

impl TangentPlane {
    pub fn new(lat0: f64, lon0: f64) -> Self {
        Self { lat0, lon0 }
    }

    pub fn to_local(&self, lat: f64, lon: f64) -> [f64; 2] {
        let x = EARTH_RADIUS_M * (lon - self.lon0).to_radians() * self.lat0.to_radians().cos();
        let y = EARTH_RADIUS_M * (lat - self.lat0).to_radians();
        [x, y]
    }

    pub fn to_geo(&self, p: [f64; 2]) -> (f64, f64) {
        let lat = self.lat0 + (p[1] / EARTH_RADIUS_M).to_degrees();
        let lon = self.lon0 + (p[0] / (EARTH_RADIUS_M * self.lat0.to_radians().cos())).to_degrees();
        (lat, lon)
    }
}

/// One keypoint as stored on disk. World coordinates are either GPS degrees
/// or meters already in the local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Keypoint {
    Geo { u: f64, v: f64, lat: f64, lon: f64 },
    Planar { u: f64, v: f64, x: f64, y: f64 },
}

pub fn parse_keypoints(json: &str) -> Result<Vec<Keypoint>> {
    Ok(serde_json::from_str(json)?)
}

/// Converts keypoints to pairs. GPS keypoints are projected onto the tangent
/// plane at `anchor` or, when none is given, at their own centroid.
pub fn keypoint_pairs(
    keypoints: &[Keypoint],
    anchor: Option<(f64, f64)>,
) -> (Vec<KeypointPair<f64>>, Option<TangentPlane>) {
    let geo: Vec<(f64, f64)> = keypoints
        .iter()
        .filter_map(|k| match *k {
            Keypoint::Geo { lat, lon, .. } => Some((lat, lon)),
            Keypoint::Planar { .. } => None,
        })
        .collect();
    let plane = if geo.is_empty() {
        None
    } else {
        let (lat0, lon0) = anchor.unwrap_or_else(|| {
            let n = geo.len() as f64;
            (
                geo.iter().map(|g| g.0).sum::<f64>() / n,
                geo.iter().map(|g| g.1).sum::<f64>() / n,
            )
        });
        Some(TangentPlane::new(lat0, lon0))
    };
    let pairs = keypoints
        .iter()
        .map(|k| match *k {
            Keypoint::Geo { u, v, lat, lon } => {
                KeypointPair::new([u, v], plane.expect("geo keypoints set a plane").to_local(lat, lon))
            }
            Keypoint::Planar { u, v, x, y } => KeypointPair::new([u, v], [x, y]),
        })
        .collect();
    (pairs, plane)
}
