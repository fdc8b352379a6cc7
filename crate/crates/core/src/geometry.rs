//! Implicit interface descriptions.
//!
//! A [`LevelSet`] splits the plane into `Ω⁺ = {φ > 0}` and `Ω⁻ = {φ < 0}`;
//! the interface `Γ` is the zero set. CSG combinators read `φ < 0` as "inside
//! the described region", so `union` is a pointwise minimum and
//! `intersection` a pointwise maximum.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Point2, Vector2};
use thiserror::Error;

pub type Point = Point2<f64>;
pub type Vec2 = Vector2<f64>;

/// One of the two phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Plus, Side::Minus];

    pub fn index(self) -> usize {
        match self {
            Side::Plus => 0,
            Side::Minus => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }

    /// Side a level-set value belongs to. Exact zeros count as `Plus`.
    pub fn of_value(v: f64) -> Side {
        if v >= 0.0 {
            Side::Plus
        } else {
            Side::Minus
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Plus => write!(f, "+"),
            Side::Minus => write!(f, "-"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    Smooth,
    PiecewiseSmooth,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("level-set gradient vanishes at ({x}, {y})")]
    DegenerateGradient { x: f64, y: f64 },
    #[error("invalid shape parameter: {0}")]
    InvalidParameter(String),
}

type ScalarFn = dyn Fn(&Point) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&Point) -> Vec2 + Send + Sync;

/// Signed implicit function. Immutable and cheap to clone.
#[derive(Clone)]
pub struct LevelSet {
    value: Arc<ScalarFn>,
    gradient: Option<Arc<GradientFn>>,
    smoothness: Smoothness,
    length_scale: f64,
}

impl fmt::Debug for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSet")
            .field("smoothness", &self.smoothness)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl LevelSet {
    pub fn new(value: impl Fn(&Point) -> f64 + Send + Sync + 'static, smoothness: Smoothness) -> Self {
        LevelSet {
            value: Arc::new(value),
            gradient: None,
            smoothness,
            length_scale: 1.0,
        }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&Point) -> Vec2 + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    /// Characteristic length used for the finite-difference step.
    pub fn with_length_scale(mut self, scale: f64) -> Self {
        self.length_scale = scale;
        self
    }

    #[inline]
    pub fn value(&self, p: &Point) -> f64 {
        (self.value)(p)
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Analytic gradient when available, central differences otherwise.
    pub fn gradient(&self, p: &Point) -> Vec2 {
        if let Some(g) = &self.gradient {
            return g(p);
        }
        let eps = 1e-6 * self.length_scale;
        let dx = Vec2::new(eps, 0.0);
        let dy = Vec2::new(0.0, eps);
        Vec2::new(
            (self.value(&(p + dx)) - self.value(&(p - dx))) / (2.0 * eps),
            (self.value(&(p + dy)) - self.value(&(p - dy))) / (2.0 * eps),
        )
    }

    /// Unit normal `n⁺ = −∇φ/|∇φ|`, pointing out of `Ω⁺` into `Ω⁻`.
    pub fn normal_at(&self, p: &Point) -> Result<Vec2, GeometryError> {
        let g = self.gradient(p);
        let norm = g.norm();
        if !(norm >= 1e-12) {
            return Err(GeometryError::DegenerateGradient { x: p.x, y: p.y });
        }
        Ok(-g / norm)
    }

    pub fn complement(&self) -> LevelSet {
        let a = self.clone();
        let mut out = LevelSet::new(move |p| -a.value(p), Smoothness::PiecewiseSmooth);
        if let Some(g) = self.gradient.clone() {
            out = out.with_gradient(move |p| -g(p));
        }
        out.length_scale = self.length_scale;
        out
    }

    pub fn union(&self, other: &LevelSet) -> LevelSet {
        let (a, b) = (self.clone(), other.clone());
        let mut out = LevelSet::new(move |p| a.value(p).min(b.value(p)), Smoothness::PiecewiseSmooth);
        out.length_scale = self.length_scale.min(other.length_scale);
        out
    }

    pub fn intersection(&self, other: &LevelSet) -> LevelSet {
        let (a, b) = (self.clone(), other.clone());
        let mut out = LevelSet::new(move |p| a.value(p).max(b.value(p)), Smoothness::PiecewiseSmooth);
        out.length_scale = self.length_scale.min(other.length_scale);
        out
    }
}

/// Union of two level sets (pointwise minimum).
pub fn csg_union(a: &LevelSet, b: &LevelSet) -> LevelSet {
    a.union(b)
}

/// Intersection of two level sets (pointwise maximum).
pub fn csg_intersection(a: &LevelSet, b: &LevelSet) -> LevelSet {
    a.intersection(b)
}

/// Complement of a level set (negation).
pub fn csg_complement(a: &LevelSet) -> LevelSet {
    a.complement()
}

/// Parameters of the built-in shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeParams {
    pub center: Point,
    pub radius: f64,
    pub flower_amplitude: f64,
    pub flower_lobes: u32,
    pub wedge_opening: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams {
            center: Point::origin(),
            radius: 0.7,
            flower_amplitude: 0.3,
            flower_lobes: 5,
            wedge_opening: 1.5 * PI,
        }
    }
}

impl ShapeParams {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius > 0.0) {
            return Err(GeometryError::InvalidParameter(format!("radius must be positive, got {}", self.radius)));
        }
        if !(self.wedge_opening > 0.0 && self.wedge_opening < 2.0 * PI) {
            return Err(GeometryError::InvalidParameter(format!(
                "wedge opening must lie in (0, 2π), got {}",
                self.wedge_opening
            )));
        }
        Ok(())
    }
}

/// Polar angle about `center` in `[0, 2π)`, with the angle at the center itself set to 0.
pub fn polar_angle(p: &Point, center: &Point) -> f64 {
    let d = p - center;
    if d.x == 0.0 && d.y == 0.0 {
        return 0.0;
    }
    let t = d.y.atan2(d.x);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// `φ(p) = |p − c| − r`: the open disk is `Ω⁻`.
pub fn circle_levelset(center: Point, radius: f64) -> LevelSet {
    assert!(radius > 0.0, "circle radius must be positive");
    LevelSet::new(move |p| (p - center).norm() - radius, Smoothness::Smooth)
        .with_gradient(move |p| {
            let d = p - center;
            let r = d.norm();
            if r == 0.0 {
                Vec2::zeros()
            } else {
                d / r
            }
        })
        .with_length_scale(radius)
}

/// `φ(r, θ) = r − R(1 + A sin(kθ))` in polar coordinates about `center`.
pub fn flower_levelset_with(params: &ShapeParams) -> LevelSet {
    let ShapeParams {
        center,
        radius,
        flower_amplitude,
        flower_lobes,
        ..
    } = *params;
    let lobes = flower_lobes as f64;
    LevelSet::new(
        move |p| {
            let r = (p - center).norm();
            let theta = polar_angle(p, &center);
            r - radius * (1.0 + flower_amplitude * (lobes * theta).sin())
        },
        Smoothness::Smooth,
    )
    .with_length_scale(radius)
}

/// The five-lobed flower of radius 0.7 and amplitude 0.3.
pub fn flower_levelset(center: Point) -> LevelSet {
    flower_levelset_with(&ShapeParams {
        center,
        ..ShapeParams::default()
    })
}

/// Half-plane `φ(p) = n·p − offset`; `Ω⁻` is where `n·p < offset`.
pub fn halfplane_levelset(normal: Vec2, offset: f64) -> LevelSet {
    let n = normal.normalize();
    LevelSet::new(move |p| n.dot(&p.coords) - offset, Smoothness::Smooth).with_gradient(move |_| n)
}

fn unit_direction(angle: f64) -> Vec2 {
    let snap = |v: f64| if v.abs() < 1e-14 { 0.0 } else { v };
    Vec2::new(snap(angle.cos()), snap(angle.sin()))
}

/// Disk sector `{|p − c| < r, θ ∈ (θ₀, θ₁)}` as `Ω⁻`, built from the disk and two
/// half-planes bounded by the rays at `θ₀` and `θ₁`.
pub fn pacman_levelset(center: Point, radius: f64, sector: (f64, f64)) -> LevelSet {
    let (t0, t1) = sector;
    let opening = t1 - t0;
    assert!(radius > 0.0 && opening > 0.0 && opening < 2.0 * PI, "invalid pacman parameters");
    let e0 = unit_direction(t0);
    let e1 = unit_direction(t1);
    // negative on the counter-clockwise side of the ray at θ₀
    let left_of_start =
        LevelSet::new(move |p| -cross(&e0, &(p - center)), Smoothness::Smooth).with_gradient(move |_| Vec2::new(e0.y, -e0.x));
    // negative on the clockwise side of the ray at θ₁
    let right_of_end =
        LevelSet::new(move |p| cross(&e1, &(p - center)), Smoothness::Smooth).with_gradient(move |_| Vec2::new(-e1.y, e1.x));
    let wedge = if opening > PI {
        left_of_start.union(&right_of_end)
    } else {
        left_of_start.intersection(&right_of_end)
    };
    circle_levelset(center, radius)
        .intersection(&wedge)
        .with_length_scale(radius)
}

#[inline]
fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn circle_values() {
        let ls = circle_levelset(Point::origin(), 0.7);
        assert!(ls.value(&pt(0.7, 0.0)).abs() < 1e-15);
        assert!((ls.value(&pt(0.0, 0.0)) + 0.7).abs() < 1e-15);
        assert!((ls.value(&pt(1.0, 1.0)) - (2f64.sqrt() - 0.7)).abs() < 1e-15);
    }

    #[test]
    fn flower_values() {
        let ls = flower_levelset(Point::origin());
        // θ = π/2: sin(5π/2) = 1, zero at r = 0.91
        assert!(ls.value(&pt(0.0, 0.91)).abs() < 1e-12);
        assert!(ls.value(&pt(0.7, 0.0)).abs() < 1e-12);
        assert!((ls.value(&Point::origin()) + 0.7).abs() < 1e-15);
    }

    #[test]
    fn pacman_signs() {
        let c = pt(0.5, 0.5);
        let ls = pacman_levelset(c, 0.3, (0.0, 1.5 * PI));
        // inside the disk, inside the sector (second quadrant)
        assert!(ls.value(&pt(0.4, 0.6)) < 0.0);
        // inside the disk, in the removed wedge (fourth quadrant)
        assert!(ls.value(&pt(0.6, 0.4)) > 0.0);
        // on the arc inside the sector
        let p = c + 0.3 * Vec2::new((0.75 * PI).cos(), (0.75 * PI).sin());
        assert!(ls.value(&p).abs() < 1e-14);
        // wedge edges lie exactly on the zero set
        assert_eq!(ls.value(&pt(0.6, 0.5)), 0.0);
        assert_eq!(ls.value(&pt(0.5, 0.4)), 0.0);
        assert!(ls.value(&pt(0.95, 0.95)) > 0.0);
    }

    #[test]
    fn csg_identities() {
        let a = circle_levelset(pt(0.2, 0.1), 0.4);
        let b = halfplane_levelset(Vec2::new(1.0, 0.0), 0.3);
        let cc = a.complement().complement();
        let uu = a.union(&a);
        let lhs = a.union(&b).complement();
        let rhs = a.complement().intersection(&b.complement());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = pt(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            assert_eq!(cc.value(&p), a.value(&p));
            assert_eq!(uu.value(&p), a.value(&p));
            assert_eq!(lhs.value(&p), rhs.value(&p));
        }
        assert_eq!(a.union(&b).smoothness(), Smoothness::PiecewiseSmooth);
    }

    #[test]
    fn intersection_of_halfplanes() {
        // regions x > 0.3 and y > 0.3 described with negative inside
        let hx = halfplane_levelset(Vec2::new(-1.0, 0.0), -0.3);
        let hy = halfplane_levelset(Vec2::new(0.0, -1.0), -0.3);
        assert!(hx.intersection(&hy).value(&pt(0.5, 0.2)) > 0.0);
        assert!(hx.intersection(&hy).value(&pt(0.5, 0.4)) < 0.0);
    }

    #[test]
    fn normals() {
        let ls = circle_levelset(Point::origin(), 0.5);
        let n = ls.normal_at(&pt(0.5, 0.0)).unwrap();
        assert!((n - Vec2::new(-1.0, 0.0)).norm() < 1e-14);

        let hp = halfplane_levelset(Vec2::new(1.0, 0.0), 0.5);
        for p in [pt(0.1, 0.2), pt(3.0, -1.0)] {
            assert!((hp.normal_at(&p).unwrap() - Vec2::new(-1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn flower_normal_matches_polar_derivative() {
        let (rr, a, k) = (0.7, 0.3, 5.0);
        let ls = flower_levelset(Point::origin());
        for &theta in &[0.0f64, 0.3, 1.1, 2.5] {
            let r = rr * (1.0 + a * (k * theta).sin());
            let p = pt(r * theta.cos(), r * theta.sin());
            // ∇φ = e_r − (R A k cos kθ / r) e_θ
            let er = Vec2::new(theta.cos(), theta.sin());
            let et = Vec2::new(-theta.sin(), theta.cos());
            let g = er - (rr * a * k * (k * theta).cos() / r) * et;
            let expected = -g / g.norm();
            let n = ls.normal_at(&p).unwrap();
            assert!((n - expected).norm() < 1e-5, "θ = {theta}");
            assert!((n.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_gradient_is_an_error() {
        let ls = LevelSet::new(|p| p.x * p.x + p.y * p.y, Smoothness::Smooth);
        assert!(matches!(
            ls.normal_at(&Point::origin()),
            Err(GeometryError::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn sign_stable_away_from_interface() {
        let shapes = [
            circle_levelset(Point::origin(), 0.7),
            flower_levelset(Point::origin()),
            pacman_levelset(pt(0.5, 0.5), 0.3, (0.0, 1.5 * PI)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for ls in &shapes {
            for _ in 0..1000 {
                let p = pt(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                let v = ls.value(&p);
                if v.abs() < 1e-10 {
                    continue;
                }
                let q = p + Vec2::new(1e-12, -1e-12);
                assert_eq!(Side::of_value(v), Side::of_value(ls.value(&q)));
            }
        }
    }

    #[test]
    fn shape_params_validation() {
        assert!(ShapeParams::default().validate().is_ok());
        let bad = ShapeParams {
            radius: -1.0,
            ..ShapeParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = ShapeParams {
            wedge_opening: 7.0,
            ..ShapeParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
