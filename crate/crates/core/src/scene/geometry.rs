//! Planar geometry on lane centerlines and crosswalk polygons.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn rotate(v: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// A centerline with per-vertex widths and cumulative stations.
#[derive(Clone, Debug)]
pub struct Polyline {
    points: Vec<Point>,
    widths: Vec<f64>,
    stations: Vec<f64>,
    curvature: Vec<f64>,
}

/// Projection of a point onto a [`Polyline`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frenet {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed distance to the centerline, positive to the left of the
    /// direction of travel.
    pub d: f64,
    /// Unit tangent at the foot point.
    pub tangent: Point,
    /// Interpolated width at the foot point.
    pub width: f64,
    /// Interpolated signed curvature at the foot point.
    pub curvature: f64,
    /// Longitudinal overshoot past the first or last vertex (0 inside).
    pub overshoot: f64,
}

impl Polyline {
    pub fn new(points: &[Point], widths: &[f64]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Geometry(format!(
                "centerline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if widths.len() != points.len() {
            return Err(Error::Geometry(format!(
                "{} widths for {} centerline points",
                widths.len(),
                points.len()
            )));
        }
        if let Some(w) = widths.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Geometry(format!("lane width {w} is not positive")));
        }
        let mut stations = Vec::with_capacity(points.len());
        stations.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            let len = sub(w[1], w[0]).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(len > 1e-9) {
                return Err(Error::Geometry(format!("repeated centerline point at index {}", i + 1)));
            }
            stations.push(stations[i] + len);
        }
        let n = points.len();
        let mut curvature = vec![0.0; n];
        for i in 1..n - 1 {
            let a = sub(points[i], points[i - 1]);
            let b = sub(points[i + 1], points[i]);
            let turn = cross(a, b).atan2(dot(a, b));
            let half = 0.5 * (stations[i + 1] - stations[i - 1]);
            curvature[i] = turn / half;
        }
        Ok(Polyline {
            points: points.to_vec(),
            widths: widths.to_vec(),
            stations,
            curvature,
        })
    }

    pub fn length(&self) -> f64 {
        *self.stations.last().unwrap()
    }

    pub fn min_width(&self) -> f64 {
        self.widths.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_width(&self) -> f64 {
        self.widths.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_abs_curvature(&self) -> f64 {
        self.curvature.iter().fold(0.0, |m, k| m.max(k.abs()))
    }

    /// Nearest-point projection. Ties between segments go to the earlier one.
    pub fn project(&self, p: Point) -> Frenet {
        let last = self.points.len() - 2;
        let mut best: Option<(f64, usize, f64)> = None;
        for i in 0..=last {
            let a = self.points[i];
            let seg = sub(self.points[i + 1], a);
            let len = self.stations[i + 1] - self.stations[i];
            let t = (dot(sub(p, a), seg) / (len * len)).clamp(0.0, 1.0);
            let foot = [a[0] + t * seg[0], a[1] + t * seg[1]];
            let dist = sub(p, foot).iter().map(|v| v * v).sum::<f64>();
            if best.is_none_or(|(d, _, _)| dist < d) {
                best = Some((dist, i, t));
            }
        }
        let (_, i, t) = best.unwrap();
        let a = self.points[i];
        let seg = sub(self.points[i + 1], a);
        let len = self.stations[i + 1] - self.stations[i];
        let tangent = [seg[0] / len, seg[1] / len];
        let rel = sub(p, a);
        let along = dot(rel, tangent);
        let overshoot = if i == 0 && along < 0.0 {
            -along
        } else if i == last && along > len {
            along - len
        } else {
            0.0
        };
        let lateral = cross(tangent, rel);
        let lerp = |v: &[f64]| v[i] + t * (v[i + 1] - v[i]);
        Frenet {
            s: self.stations[i] + t * len,
            d: if overshoot > 0.0 {
                lateral
            } else {
                // distance to the foot point, which differs from the segment
                // offset on the outside of a vertex
                let foot = [a[0] + t * seg[0], a[1] + t * seg[1]];
                sub(p, foot).iter().map(|v| v * v).sum::<f64>().sqrt().copysign(lateral)
            },
            tangent,
            width: lerp(&self.widths),
            curvature: lerp(&self.curvature),
            overshoot,
        }
    }
}

/// Even-odd point-in-polygon test; points on an edge may fall either way.
pub fn point_in_polygon(p: Point, polygon: &[Point]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
