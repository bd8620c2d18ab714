//! Planar primitives shared across the crate: poses, position covariances,
//! rectangular footprints, convex polygons and the drivable area.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues below `-PSD_TOLERANCE` are rejected, those in
/// `[-PSD_TOLERANCE, 0)` are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-12;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_heading(angle: f64) -> Result<f64> {
    if !angle.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite heading {angle}")));
    }
    if angle > -PI && angle <= PI {
        return Ok(angle);
    }
    let mut wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped -= 2.0 * PI;
    }
    if wrapped <= -PI {
        wrapped += 2.0 * PI;
    }
    Ok(wrapped)
}

/// A point or displacement in the map frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    /// Counter-clockwise rotation by `angle`.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, other: Vec2, f: f64) -> Vec2 {
        self + (other - self).scale(f)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Position and heading in the map frame. Heading is CCW-positive from +x,
/// kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite pose position ({x}, {y})")));
        }
        Ok(Self { x, y, heading: normalize_heading(heading)? })
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Same heading, different position.
    pub fn with_position(&self, p: Vec2) -> Pose2 {
        Pose2 { x: p.x, y: p.y, heading: self.heading }
    }
}

/// Offset of the opponent from the ego, `opp - ego`, in the map frame.
pub fn relative_position(ego: &Pose2, opp: &Pose2) -> Vec2 {
    opp.position() - ego.position()
}

/// Symmetric positive semi-definite 2×2 position covariance, m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Covariance2 {
    xx: f64,
    xy: f64,
    yy: f64,
}

impl Covariance2 {
    pub const ZERO: Covariance2 = Covariance2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    /// Builds a covariance from its three independent entries.
    pub fn new(xx: f64, xy: f64, yy: f64) -> Result<Self> {
        Self::from_matrix([[xx, xy], [xy, yy]])
    }

    /// Validates a full matrix: finite, symmetric, PSD up to [`PSD_TOLERANCE`].
    pub fn from_matrix(m: [[f64; 2]; 2]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariance has non-finite entries".into()));
        }
        let scale = m[0][1].abs().max(m[1][0].abs()).max(1.0);
        if (m[0][1] - m[1][0]).abs() > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "covariance is not symmetric ({} != {})",
                m[0][1], m[1][0]
            )));
        }
        let raw = Covariance2 { xx: m[0][0], xy: 0.5 * (m[0][1] + m[1][0]), yy: m[1][1] };
        let (lo, _) = raw.eigenvalues();
        if lo < -PSD_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "covariance has negative eigenvalue {lo:e}"
            )));
        }
        if lo < 0.0 {
            return Ok(raw.clamped());
        }
        Ok(raw)
    }

    /// `diag(σ², σ²)`.
    pub fn isotropic(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidInput(format!("invalid standard deviation {sigma}")));
        }
        Ok(Covariance2 { xx: sigma * sigma, xy: 0.0, yy: sigma * sigma })
    }

    pub fn diagonal(var_x: f64, var_y: f64) -> Result<Self> {
        Self::new(var_x, 0.0, var_y)
    }

    pub fn xx(&self) -> f64 {
        self.xx
    }

    pub fn xy(&self) -> f64 {
        self.xy
    }

    pub fn yy(&self) -> f64 {
        self.yy
    }

    pub fn to_matrix(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }

    /// `(smallest, largest)` eigenvalue.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = half_diff.hypot(self.xy);
        (mean - radius, mean + radius)
    }

    pub fn is_zero(&self) -> bool {
        self.xx == 0.0 && self.xy == 0.0 && self.yy == 0.0
    }

    /// Entrywise sum. Sums of PSD matrices are PSD, so no re-validation.
    pub fn add(&self, other: &Covariance2) -> Covariance2 {
        Covariance2 { xx: self.xx + other.xx, xy: self.xy + other.xy, yy: self.yy + other.yy }
    }

    /// `R Σ Rᵀ` for a CCW rotation by `angle`.
    pub fn rotate(&self, angle: f64) -> Covariance2 {
        let (s, c) = angle.sin_cos();
        // R Σ Rᵀ expanded for the symmetric case.
        let xx = c * c * self.xx - 2.0 * s * c * self.xy + s * s * self.yy;
        let yy = s * s * self.xx + 2.0 * s * c * self.xy + c * c * self.yy;
        let xy = s * c * (self.xx - self.yy) + (c * c - s * s) * self.xy;
        Covariance2 { xx: xx.max(0.0), xy, yy: yy.max(0.0) }
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ`, as `(l11, l21, l22)`.
    /// Zero pivots are allowed so degenerate matrices still factor.
    pub fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.xx.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.xy / l11 } else { 0.0 };
        let l22 = (self.yy - l21 * l21).max(0.0).sqrt();
        (l11, l21, l22)
    }

    fn clamped(&self) -> Covariance2 {
        let (lo, hi) = self.eigenvalues();
        let hi = hi.max(0.0);
        if lo >= 0.0 {
            return *self;
        }
        // eigenvector of the largest eigenvalue
        let v = if self.xy.abs() > 0.0 {
            let v = Vec2::new(hi - self.yy, self.xy);
            v.scale(1.0 / v.norm())
        } else if self.xx >= self.yy {
            Vec2::new(1.0, 0.0)
        } else {
            Vec2::new(0.0, 1.0)
        };
        Covariance2 { xx: hi * v.x * v.x, xy: hi * v.x * v.y, yy: hi * v.y * v.y }
    }
}

impl TryFrom<[[f64; 2]; 2]> for Covariance2 {
    type Error = Error;
    fn try_from(m: [[f64; 2]; 2]) -> Result<Self> {
        Covariance2::from_matrix(m)
    }
}

impl From<Covariance2> for [[f64; 2]; 2] {
    fn from(c: Covariance2) -> Self {
        c.to_matrix()
    }
}

/// Pose estimate with Gaussian position uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief2 {
    pub mean: Pose2,
    pub position_covariance: Covariance2,
}

impl GaussianBelief2 {
    pub fn new(mean: Pose2, position_covariance: Covariance2) -> Self {
        Self { mean, position_covariance }
    }

    pub fn isotropic(mean: Pose2, sigma: f64) -> Result<Self> {
        Ok(Self { mean, position_covariance: Covariance2::isotropic(sigma)? })
    }
}

/// Body-frame rectangle centered on the pose, `length` along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub fn new(length: f64, width: f64) -> Result<Self> {
        let fp = Footprint { length, width };
        fp.check()?;
        Ok(fp)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.length.is_finite() && self.width.is_finite() && self.length > 0.0 && self.width > 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "footprint must have positive size, got {}x{}",
                self.length, self.width
            )));
        }
        Ok(())
    }

    /// Corners in CCW order, rotated by `heading` about the center.
    pub fn corners(&self, heading: f64) -> [Vec2; 4] {
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [
            Vec2::new(-hl, -hw).rotate(heading),
            Vec2::new(hl, -hw).rotate(heading),
            Vec2::new(hl, hw).rotate(heading),
            Vec2::new(-hl, hw).rotate(heading),
        ]
    }

    pub fn circumradius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

/// Strictly convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("polygon has non-finite vertices".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            for j in i + 1..n {
                if vertices[i] == vertices[j] {
                    return Err(Error::InvalidInput(format!("polygon repeats vertex {i} at {j}")));
                }
            }
        }
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if (b - a).cross(c - b) <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "polygon is not strictly convex counter-clockwise at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        // a star-shaped winding could pass the local turn test; total turning must be one loop
        let area2: f64 = (0..n).map(|i| vertices[i].cross(vertices[(i + 1) % n])).sum();
        let turning: f64 = (0..n)
            .map(|i| {
                let e0 = vertices[(i + 1) % n] - vertices[i];
                let e1 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
                e0.cross(e1).atan2(e0.dot(e1))
            })
            .sum();
        if area2 <= 0.0 || (turning - 2.0 * PI).abs() > 1e-6 {
            return Err(Error::InvalidInput("polygon winds more than once".into()));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![Vec2::new(x0, y0), Vec2::new(x1, y0), Vec2::new(x1, y1), Vec2::new(x0, y1)])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let c = p.cross(q);
            a2 += c;
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        Vec2::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n).map(|i| self.vertices[i].cross(self.vertices[(i + 1) % n])).sum::<f64>()
    }

    /// Inclusive containment test; boundary points count as inside.
    pub fn contains(&self, p: Vec2) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let edge = b - a;
            // tolerance scaled by edge length so vertices and edges test inside
            edge.cross(p - a) >= -1e-12 * edge.norm().max(1.0) * (p - a).norm().max(1.0)
        })
    }

    /// Largest distance from `center` to any vertex.
    pub fn radius_about(&self, center: Vec2) -> f64 {
        self.vertices.iter().map(|v| (*v - center).norm()).fold(0.0, f64::max)
    }

    /// Applies an orientation-preserving affine map `v -> f(v)`.
    pub(crate) fn map_vertices(&self, f: impl Fn(Vec2) -> Vec2) -> Vec<Vec2> {
        self.vertices.iter().map(|v| f(*v)).collect()
    }

    pub fn rotate(&self, angle: f64) -> ConvexPolygon {
        ConvexPolygon { vertices: self.map_vertices(|v| v.rotate(angle)) }
    }

    pub fn translate(&self, d: Vec2) -> ConvexPolygon {
        ConvexPolygon { vertices: self.map_vertices(|v| v + d) }
    }

    /// Builds without validation; callers guarantee CCW strict convexity.
    pub(crate) fn from_trusted(vertices: Vec<Vec2>) -> ConvexPolygon {
        ConvexPolygon { vertices }
    }
}

/// Union of convex polygons the ego may occupy.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivableArea {
    polygons: Vec<ConvexPolygon>,
}

impl DrivableArea {
    pub fn new(polygons: Vec<ConvexPolygon>) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::InvalidInput("drivable area needs at least one polygon".into()));
        }
        Ok(Self { polygons })
    }

    pub fn polygons(&self) -> &[ConvexPolygon] {
        &self.polygons
    }

    pub fn contains(&self, p: Vec2) -> bool {
        point_in_drivable_area(p, self)
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in self.polygons.iter().flat_map(|p| p.vertices()) {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }
}

pub fn point_in_drivable_area(p: Vec2, area: &DrivableArea) -> bool {
    area.polygons.iter().any(|poly| poly.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heading_examples() {
        assert_eq!(normalize_heading(0.0).unwrap(), 0.0);
        assert!((normalize_heading(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert_eq!(normalize_heading(-PI).unwrap(), PI);
        assert_eq!(normalize_heading(PI).unwrap(), PI);
        assert!(normalize_heading(f64::NAN).is_err());
        assert!(normalize_heading(f64::INFINITY).is_err());
    }

    #[test]
    fn relative_position_examples() {
        let p = |x, y| Pose2::new(x, y, 0.0).unwrap();
        assert_eq!(relative_position(&p(0.0, 0.0), &p(3.0, 4.0)), Vec2::new(3.0, 4.0));
        assert_eq!(relative_position(&p(2.5, 1.0), &p(2.5, 1.0)), Vec2::ZERO);
        assert_eq!(relative_position(&p(1.0, -2.0), &p(-1.0, 2.0)), Vec2::new(-2.0, 4.0));
    }

    #[test]
    fn drivable_area_examples() {
        let tri = ConvexPolygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(0.0, 3.0),
        ])
        .unwrap();
        let area = DrivableArea::new(vec![
            ConvexPolygon::rectangle(10.0, 10.0, 20.0, 12.0).unwrap(),
            tri.clone(),
        ])
        .unwrap();
        assert!(area.contains(tri.centroid()));
        assert!(area.contains(Vec2::new(15.0, 11.0)));
        assert!(!area.contains(Vec2::new(1e6, 1e6)));
        for poly in area.polygons() {
            for v in poly.vertices() {
                assert!(area.contains(*v), "vertex {v:?} must be inside");
            }
        }
        // midpoint of the hypotenuse
        assert!(area.contains(Vec2::new(2.0, 1.5)));
        assert!(!area.contains(Vec2::new(2.0, 1.5 + 1e-6)));
    }

    #[test]
    fn polygon_rejections() {
        assert!(ConvexPolygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)]).is_err());
        // clockwise
        assert!(ConvexPolygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 0.0)
        ])
        .is_err());
        // collinear middle vertex
        assert!(ConvexPolygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(1.0, 1.0)
        ])
        .is_err());
        // repeated
        assert!(ConvexPolygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0)
        ])
        .is_err());
        // pentagram: every turn is left but it winds twice
        let star: Vec<Vec2> = (0..5).map(|k| Vec2::from_angle(k as f64 * 4.0 * PI / 5.0)).collect();
        assert!(ConvexPolygon::new(star).is_err());
        assert!(DrivableArea::new(vec![]).is_err());
    }

    #[test]
    fn covariance_validation() {
        let c = Covariance2::new(0.1, 0.02, 0.2).unwrap();
        assert_eq!(c.to_matrix(), [[0.1, 0.02], [0.02, 0.2]]);
        assert!(Covariance2::from_matrix([[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(Covariance2::new(1.0, 2.0, 1.0).is_err());
        assert!(Covariance2::new(f64::NAN, 0.0, 1.0).is_err());

        // rank-one up to rounding: eigenvalue in [-1e-12, 0) gets clamped
        let near = Covariance2::new(1.0, 1.0, 1.0 - 5e-13).unwrap();
        let (lo, hi) = near.eigenvalues();
        assert!(lo >= -1e-15, "clamped lower eigenvalue {lo}");
        assert!((hi - 2.0).abs() < 1e-9);
        assert!(Covariance2::new(1.0, 1.0, 1.0 - 1e-9).is_err());

        let iso = Covariance2::isotropic(0.3).unwrap();
        assert_eq!(iso.to_matrix(), [[0.09, 0.0], [0.0, 0.09]]);
        assert!(Covariance2::isotropic(-1.0).is_err());
    }

    #[test]
    fn covariance_rotation_preserves_eigenvalues() {
        let c = Covariance2::new(0.5, 0.1, 0.2).unwrap();
        let r = c.rotate(0.7);
        let (a, b) = c.eigenvalues();
        let (ra, rb) = r.eigenvalues();
        assert!((a - ra).abs() < 1e-12 && (b - rb).abs() < 1e-12);
        let back = r.rotate(-0.7);
        assert!((back.xx() - c.xx()).abs() < 1e-12);
        assert!((back.xy() - c.xy()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_reconstructs() {
        let c = Covariance2::new(0.4, 0.01, 0.3).unwrap();
        let (l11, l21, l22) = c.cholesky();
        assert!((l11 * l11 - 0.4).abs() < 1e-15);
        assert!((l11 * l21 - 0.01).abs() < 1e-15);
        assert!((l21 * l21 + l22 * l22 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn footprint_corners_ccw() {
        let fp = Footprint::new(4.0, 2.0).unwrap();
        assert!(ConvexPolygon::new(fp.corners(0.3).to_vec()).is_ok());
        assert!(Footprint::new(0.0, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_idempotent(a in -1e4f64..1e4) {
                let n = normalize_heading(a).unwrap();
                prop_assert!(n > -PI && n <= PI);
                prop_assert_eq!(normalize_heading(n).unwrap(), n);
                let turns = (a - n) / (2.0 * PI);
                prop_assert!((turns - turns.round()).abs() < 1e-9);
            }

            #[test]
            fn relative_position_antisymmetric(
                ax in -100.0f64..100.0, ay in -100.0f64..100.0,
                bx in -100.0f64..100.0, by in -100.0f64..100.0,
            ) {
                let a = Pose2::new(ax, ay, 0.0).unwrap();
                let b = Pose2::new(bx, by, 1.0).unwrap();
                prop_assert_eq!(relative_position(&a, &b), -relative_position(&b, &a));
            }

            #[test]
            fn containment_invariant_under_vertex_rotation(
                shift in 0usize..6, px in -3.0f64..3.0, py in -3.0f64..3.0,
            ) {
                let verts: Vec<Vec2> = (0..6)
                    .map(|k| Vec2::from_angle(k as f64 * PI / 3.0).scale(2.0))
                    .collect();
                let mut rotated = verts.clone();
                rotated.rotate_left(shift);
                let a = DrivableArea::new(vec![ConvexPolygon::new(verts).unwrap()]).unwrap();
                let b = DrivableArea::new(vec![ConvexPolygon::new(rotated).unwrap()]).unwrap();
                let p = Vec2::new(px, py);
                prop_assert_eq!(point_in_drivable_area(p, &a), point_in_drivable_area(p, &b));
            }
        }
    }
}
