//! Closed-form spatial math: head-position prior, gaze-cone decomposition,
//! soft cone masks and angular error.
//!
//! Coordinates are normalized image coordinates in `[0,1]²`, `x` to the right and
//! `y` down. Grid cell `(u, v)` (column `u`, row `v`) is sampled at its center
//! `((u+0.5)/W, (v+0.5)/H)`; tokens are laid out row-major, index `v·W + u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_CONE_ANGLE_DEG: f64 = 60.0;
pub const DEFAULT_CONE_SHARPNESS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }

    /// Rotation about the origin.
    pub fn rotate(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Axis-aligned box in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl HeadBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let raw = [x_min, y_min, x_max, y_max];
        let ok = raw.iter().all(|v| v.is_finite())
            && x_min < x_max
            && y_min < y_max
            && x_max > 0.0
            && y_max > 0.0
            && x_min < 1.0
            && y_min < 1.0;
        if !ok {
            return Err(Error::InvalidBox(raw));
        }
        Ok(HeadBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_array(b: [f64; 4]) -> Result<Self> {
        HeadBox::new(b[0], b[1], b[2], b[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn center(self) -> Point {
        Point::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn half_extent(self) -> (f64, f64) {
        (
            0.5 * (self.x_max - self.x_min),
            0.5 * (self.y_max - self.y_min),
        )
    }

    /// Closed-box membership.
    pub fn contains(self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// True when the interiors intersect, or when the gap between them is below `margin`.
    pub fn overlaps(self, o: HeadBox, margin: f64) -> bool {
        self.x_min < o.x_max + margin
            && o.x_min < self.x_max + margin
            && self.y_min < o.y_max + margin
            && o.y_min < self.y_max + margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
}

impl GridSpec {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 2x2, got {height}x{width}"
            )));
        }
        Ok(GridSpec { height, width })
    }

    pub fn square(n: usize) -> Result<Self> {
        GridSpec::new(n, n)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell_center(&self, index: usize) -> Point {
        let (u, v) = (index % self.width, index / self.width);
        Point::new(
            (u as f64 + 0.5) / self.width as f64,
            (v as f64 + 0.5) / self.height as f64,
        )
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.cells()).map(|i| self.cell_center(i))
    }

    /// Row-major index of the cell containing `p` (clamped to the grid).
    pub fn cell_of(&self, p: Point) -> usize {
        let u = ((p.x * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let v = ((p.y * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        v * self.width + u
    }
}

#[derive(Debug, Clone)]
pub struct HeadPrior {
    pub values: Tensor,
    /// Box center in grid-cell units, on the same axis as cell indices.
    pub center: (f64, f64),
    /// Box half-extent in grid-cell units.
    pub scale: (f64, f64),
}

/// Gaussian head-position prior `H(u,v)` on the token grid.
///
/// Center and scale are measured in cell units, with cell `u` located at `u`
/// (so the prior peaks exactly at a cell whose center is the box center).
pub fn head_prior(b: HeadBox, grid: GridSpec, eps: f64) -> HeadPrior {
    let c = b.center();
    let (hx, hy) = b.half_extent();
    let cx = c.x * grid.width as f64 - 0.5;
    let cy = c.y * grid.height as f64 - 0.5;
    let sx = hx * grid.width as f64;
    let sy = hy * grid.height as f64;
    let mut values = Tensor::zeros(&[grid.height, grid.width]);
    for v in 0..grid.height {
        for u in 0..grid.width {
            values.set(v, u, head_prior_at(u as f64, v as f64, (cx, cy), (sx, sy), eps));
        }
    }
    HeadPrior {
        values,
        center: (cx, cy),
        scale: (sx, sy),
    }
}

pub fn head_prior_at(u: f64, v: f64, center: (f64, f64), scale: (f64, f64), eps: f64) -> f64 {
    (-(u - center.0).powi(2) / (2.0 * scale.0 * scale.0 + eps)
        - (v - center.1).powi(2) / (2.0 * scale.1 * scale.1 + eps))
        .exp()
}

/// Signed projection `t` of `p - h` on the unit ray `d`, and the distance to the ray line.
pub fn cone_geometry(h: Point, d: Point, p: Point) -> (f64, f64) {
    let rel = p.sub(h);
    let t = rel.dot(d);
    let perp = Point::new(rel.x - t * d.x, rel.y - t * d.y);
    (t, perp.norm())
}

/// Parameters of the soft gaze cone around the ray from `origin` toward `target`.
#[derive(Debug, Clone, Copy)]
pub struct Cone {
    pub origin: Point,
    pub direction: Point,
    pub angle: f64,
    pub sharpness: f64,
}

impl Cone {
    pub fn new(origin: Point, target: Point, angle: f64, sharpness: f64, eps: f64) -> Result<Self> {
        let span = target.sub(origin);
        let len = span.norm();
        if len <= eps {
            return Err(Error::UndefinedDirection);
        }
        if !(angle > 0.0 && angle < std::f64::consts::PI) || sharpness.is_nan() || sharpness <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cone angle {angle} must be in (0, pi) and sharpness {sharpness} positive"
            )));
        }
        let direction = Point::new(span.x / (len + eps), span.y / (len + eps));
        Ok(Cone {
            origin,
            direction,
            angle,
            sharpness,
        })
    }

    /// Soft membership `σ(α(max(t,0)·tan(θ/2) − d⊥)) · σ(α t)`.
    pub fn membership(&self, p: Point) -> f64 {
        let (t, perp) = cone_geometry(self.origin, self.direction, p);
        let a = self.sharpness;
        sigmoid_scalar(a * (t.max(0.0) * (0.5 * self.angle).tan() - perp)) * sigmoid_scalar(a * t)
    }
}

#[derive(Debug, Clone)]
pub struct ConeMask {
    pub values: Tensor,
    pub cone: Cone,
}

pub fn cone_mask(
    h: Point,
    g: Point,
    angle: f64,
    sharpness: f64,
    grid: GridSpec,
    eps: f64,
) -> Result<ConeMask> {
    let cone = Cone::new(h, g, angle, sharpness, eps)?;
    let data = grid.centers().map(|p| cone.membership(p)).collect();
    Ok(ConeMask {
        values: Tensor::new(&[grid.height, grid.width], data)?,
        cone,
    })
}

/// Angle in degrees between rays `h→pred` and `h→gt`.
pub fn angular_error(h: Point, pred: Point, gt: Point) -> Result<f64> {
    let a = pred.sub(h);
    let b = gt.sub(h);
    let (na, nb) = (a.norm(), b.norm());
    if na <= 1e-9 {
        return Err(Error::UndefinedAngle(na));
    }
    if nb <= 1e-9 {
        return Err(Error::UndefinedAngle(nb));
    }
    let cos = (a.dot(b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn head_box_rejects_degenerate() {
        assert!(HeadBox::new(0.2, 0.2, 0.2, 0.4).is_err());
        assert!(HeadBox::new(0.5, 0.2, 0.4, 0.4).is_err());
        assert!(HeadBox::new(1.2, 0.2, 1.4, 0.4).is_err());
        assert!(HeadBox::new(0.1, 0.2, 0.3, 0.4).is_ok());
    }

    #[test]
    fn prior_is_one_at_center() {
        assert_eq!(head_prior_at(8.0, 8.0, (8.0, 8.0), (2.0, 2.0), 1e-6), 1.0);
    }

    #[test]
    fn prior_scalar_value() {
        let v = head_prior_at(10.0, 8.0, (8.0, 8.0), (2.0, 2.0), 1e-6);
        let expected = (-4.0f64 / (8.0 + 1e-6)).exp();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn prior_is_monotone_away_from_center() {
        let at = |u| head_prior_at(u, 8.0, (8.0, 8.0), (2.0, 2.0), 1e-6);
        assert!(at(9.0) > at(11.0));
    }

    #[test]
    fn prior_grid_peaks_at_box_cell_and_is_symmetric() {
        let grid = GridSpec::square(16).unwrap();
        // Box covering cells 7..9 in both axes; center cell (8, 8).
        let b = HeadBox::new(7.0 / 16.0, 7.0 / 16.0, 10.0 / 16.0, 10.0 / 16.0).unwrap();
        let hp = head_prior(b, grid, DEFAULT_EPS);
        assert!((hp.center.0 - 8.0).abs() < 1e-12 && (hp.center.1 - 8.0).abs() < 1e-12);
        assert_eq!(hp.values.argmax(), 8 * 16 + 8);
        assert!((hp.values.get(8, 8) - 1.0).abs() < 1e-15);
        for d in 1..8 {
            assert!((hp.values.get(8, 8 - d) - hp.values.get(8, 8 + d)).abs() < 1e-15);
            assert!((hp.values.get(8 - d, 8) - hp.values.get(8 + d, 8)).abs() < 1e-15);
        }
    }

    #[test]
    fn cone_geometry_basic() {
        let h = Point::new(0.0, 0.0);
        let d = Point::new(1.0, 0.0);
        assert_eq!(cone_geometry(h, d, h), (0.0, 0.0));
        let (t, perp) = cone_geometry(h, d, Point::new(0.3, 0.4));
        assert!((t - 0.3).abs() < 1e-15 && (perp - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cone_on_axis_ahead() {
        let cone = Cone::new(
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            60f64.to_radians(),
            50.0,
            0.0,
        )
        .unwrap();
        let c = cone.membership(Point::new(0.3, 0.0));
        let expected = sigmoid(50.0 * 0.3 * 30f64.to_radians().tan()) * sigmoid(15.0);
        assert!((c - expected).abs() < 1e-12);
        assert!((c - 0.9998).abs() < 1e-4);
    }

    #[test]
    fn cone_far_behind_is_tiny() {
        let cone = Cone::new(
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            60f64.to_radians(),
            50.0,
            0.0,
        )
        .unwrap();
        let c = cone.membership(Point::new(-0.5, 0.0));
        assert!(c < sigmoid(-25.0));
        assert!(sigmoid(-25.0) < 1.4e-11);
    }

    #[test]
    fn cone_boundary_is_half() {
        let cone = Cone::new(
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            60f64.to_radians(),
            50.0,
            0.0,
        )
        .unwrap();
        let t = 0.5;
        let c = cone.membership(Point::new(t, t * 30f64.to_radians().tan()));
        assert!((c - 0.5 * sigmoid(50.0 * t)).abs() < 1e-9);
    }

    #[test]
    fn cone_rejects_coincident_target() {
        let h = Point::new(0.3, 0.3);
        let grid = GridSpec::square(4).unwrap();
        assert!(matches!(
            cone_mask(h, h, 1.0, 50.0, grid, 1e-6),
            Err(Error::UndefinedDirection)
        ));
    }

    #[test]
    fn angular_error_cases() {
        let h = Point::new(0.5, 0.5);
        let g = Point::new(0.9, 0.5);
        assert_eq!(angular_error(h, g, g).unwrap(), 0.0);
        assert!((angular_error(h, Point::new(0.5, 0.1), g).unwrap() - 90.0).abs() < 1e-12);
        assert!((angular_error(h, Point::new(0.1, 0.5), g).unwrap() - 180.0).abs() < 1e-12);
        assert!(angular_error(h, h, g).is_err());
    }

    fn pt() -> impl Strategy<Value = Point> {
        (-1.0f64..2.0, -1.0f64..2.0).prop_map(|(x, y)| Point::new(x, y))
    }

    proptest! {
        #[test]
        fn pythagorean_identity(h in pt(), p in pt(), a in 0.0f64..std::f64::consts::TAU) {
            let d = Point::new(a.cos(), a.sin());
            let (t, perp) = cone_geometry(h, d, p);
            let r = p.sub(h).norm();
            prop_assert!((t * t + perp * perp - r * r).abs() < 1e-12);
        }

        #[test]
        fn cone_non_increasing_in_perp(t in 0.01f64..1.0, p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
            let cone = Cone::new(Point::new(0.0, 0.0), Point::new(1.0, 0.0), 1.0, 50.0, 0.0).unwrap();
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(cone.membership(Point::new(t, lo)) >= cone.membership(Point::new(t, hi)));
        }

        #[test]
        fn angular_error_scale_invariant_and_symmetric(
            h in pt(), a in pt(), b in pt(), s1 in 0.1f64..10.0, s2 in 0.1f64..10.0
        ) {
            prop_assume!(a.dist(h) > 1e-3 && b.dist(h) > 1e-3);
            let e = angular_error(h, a, b).unwrap();
            let a2 = Point::new(h.x + s1 * (a.x - h.x), h.y + s1 * (a.y - h.y));
            let b2 = Point::new(h.x + s2 * (b.x - h.x), h.y + s2 * (b.y - h.y));
            prop_assert!((angular_error(h, a2, b2).unwrap() - e).abs() < 1e-6);
            prop_assert!((angular_error(h, b, a).unwrap() - e).abs() < 1e-12);
            prop_assert!((0.0..=180.0).contains(&e));
        }
    }
}
