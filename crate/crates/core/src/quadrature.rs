//! Gauss rules on the segment, square and triangle.

use crate::geometry::{Point, Vec2};

pub const MAX_DEGREE: usize = 10;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn extend(&mut self, other: &QuadratureRule) {
        self.points.extend_from_slice(&other.points);
        self.weights.extend_from_slice(&other.weights);
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wt = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wt;
        w[n - 1 - i] = 0.5 * wt;
    }
    (x, w)
}

/// Number of Gauss points exact for polynomials of degree `degree`.
pub fn points_for_degree(degree: usize) -> usize {
    (degree + 2) / 2
}

/// Tensor Gauss rule on the axis-aligned square `[o, o + h]²`.
pub fn square_rule(origin: &Point, h: f64, degree: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre_01(points_for_degree(degree));
    let mut rule = QuadratureRule::default();
    for (yj, wj) in x.iter().zip(&w) {
        for (xi, wi) in x.iter().zip(&w) {
            rule.points.push(Point::new(origin.x + h * xi, origin.y + h * yj));
            rule.weights.push(h * h * wi * wj);
        }
    }
    rule
}

/// Collapsed-coordinate Gauss rule on the reference triangle `(0,0), (1,0), (0,1)`,
/// exact for total degree `degree`.
pub fn reference_triangle_rule(degree: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (xs, ws) = gauss_legendre_01(points_for_degree(degree));
    let (xt, wt) = gauss_legendre_01(points_for_degree(degree + 1));
    let mut pts = Vec::with_capacity(xs.len() * xt.len());
    let mut wts = Vec::with_capacity(xs.len() * xt.len());
    for (t, w2) in xt.iter().zip(&wt) {
        for (s, w1) in xs.iter().zip(&ws) {
            pts.push([s * (1.0 - t), *t]);
            wts.push(w1 * w2 * (1.0 - t));
        }
    }
    (pts, wts)
}

/// Rule on an arbitrary triangle, appended to `rule`.
pub fn push_triangle(rule: &mut QuadratureRule, v: &[Point; 3], reference: &(Vec<[f64; 2]>, Vec<f64>)) {
    let e1 = v[1] - v[0];
    let e2 = v[2] - v[0];
    let jac = (e1.x * e2.y - e1.y * e2.x).abs();
    if jac == 0.0 {
        return;
    }
    for (xi, w) in reference.0.iter().zip(&reference.1) {
        rule.points.push(v[0] + xi[0] * e1 + xi[1] * e2);
        rule.weights.push(w * jac);
    }
}

/// Gauss rule on the segment `[a, b]`, weights scaled by its length.
pub fn segment_rule(a: &Point, b: &Point, degree: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre_01(points_for_degree(degree));
    let d: Vec2 = b - a;
    let len = d.norm();
    QuadratureRule {
        points: x.iter().map(|t| a + d * *t).collect(),
        weights: w.iter().map(|wi| wi * len).collect(),
    }
}
