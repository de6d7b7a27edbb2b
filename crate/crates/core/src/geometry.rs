//! Slab/torus arithmetic on `[0,1] x T^2`.
//!
//! The first coordinate is bounded by the two walls, the other two are periodic
//! with period one. Positions are always kept in the fundamental domain.

use serde::{Deserialize, Serialize};

use crate::Vec3;

/// Distance to a wall below which a point counts as touching it.
pub const WALL_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("free flight leaves the slab: x1 = {x1}")]
    LeftSlab { x1: f64 },
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Reduce a torus coordinate to `[0, 1)`.
#[inline]
pub fn wrap_unit(a: f64) -> f64 {
    let r = a.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Representative of `d` modulo one in `(-1/2, 1/2]`.
#[inline]
pub fn wrap_half(d: f64) -> f64 {
    d - (d - 0.5).ceil()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl Position {
    /// Builds a normalized position. `x1` is clamped into `[0,1]` when it lies
    /// within [`WALL_TOL`] of the slab, and rejected otherwise.
    pub fn new(x1: f64, x2: f64, x3: f64) -> Result<Self, GeometryError> {
        if !(x1.is_finite() && x2.is_finite() && x3.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(-WALL_TOL..=1.0 + WALL_TOL).contains(&x1) {
            return Err(GeometryError::LeftSlab { x1 });
        }
        Ok(Self {
            x1: x1.clamp(0.0, 1.0),
            x2: wrap_unit(x2),
            x3: wrap_unit(x3),
        })
    }

    pub fn from_vec(p: &Vec3) -> Result<Self, GeometryError> {
        Self::new(p.x, p.y, p.z)
    }

    pub fn to_vec(&self) -> Vec3 {
        Vec3::new(self.x1, self.x2, self.x3)
    }

    /// Which wall the point touches, if any.
    pub fn on_wall(&self) -> Option<Wall> {
        if self.x1 <= WALL_TOL {
            Some(Wall::X1Zero)
        } else if self.x1 >= 1.0 - WALL_TOL {
            Some(Wall::X1One)
        } else {
            None
        }
    }

    /// Distance of the slab coordinate to the nearer wall.
    pub fn wall_distance(&self) -> f64 {
        self.x1.min(1.0 - self.x1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Wall {
    X1Zero,
    X1One,
}

impl Wall {
    /// The sign function on the boundary: `+1` at `x1 = 0`, `-1` at `x1 = 1`.
    /// It is also the sign of the inward normal's first component.
    pub fn gamma(self) -> i32 {
        match self {
            Wall::X1Zero => 1,
            Wall::X1One => -1,
        }
    }

    pub fn x1(self) -> f64 {
        match self {
            Wall::X1Zero => 0.0,
            Wall::X1One => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallHit {
    pub time: f64,
    pub wall: Wall,
    pub gamma: i32,
}

impl WallHit {
    fn new(time: f64, wall: Wall) -> Self {
        Self {
            time: time.max(0.0),
            wall,
            gamma: wall.gamma(),
        }
    }
}

/// First time the straight line `x + t v` meets a wall. A point already on a
/// wall and moving outward hits it at `t = 0`.
pub fn wall_hit_time(x: &Position, v: &Vec3) -> Option<WallHit> {
    let v1 = v.x;
    if v1 > 0.0 {
        Some(WallHit::new((1.0 - x.x1) / v1, Wall::X1One))
    } else if v1 < 0.0 {
        Some(WallHit::new(x.x1 / -v1, Wall::X1Zero))
    } else {
        None
    }
}

/// Free flight for time `t`; the caller guarantees no wall is crossed.
pub fn advect(x: &Position, v: &Vec3, t: f64) -> Result<Position, GeometryError> {
    if t == 0.0 {
        return Ok(*x);
    }
    Position::new(x.x1 + t * v.x, x.x2 + t * v.y, x.x3 + t * v.z)
}

/// Displacement `b - a` with torus components in `(-1/2, 1/2]`.
pub fn minimum_image_displacement(a: &Position, b: &Position) -> Vec3 {
    Vec3::new(b.x1 - a.x1, wrap_half(b.x2 - a.x2), wrap_half(b.x3 - a.x3))
}

/// Slab-torus distance between two points.
pub fn distance(a: &Position, b: &Position) -> f64 {
    minimum_image_displacement(a, b).norm()
}

/// Translates of `b` in the covering `[0,1] x R^2` by integer vectors `k`
/// with `|k| <= ceil(radius)`.
pub fn unfold_images(b: &Position, radius: f64) -> Vec<Vec3> {
    assert!(radius >= 0.0, "radius must be non-negative");
    let kmax = radius.ceil() as i64;
    let r2 = kmax * kmax;
    let mut out = Vec::new();
    for k2 in -kmax..=kmax {
        for k3 in -kmax..=kmax {
            if k2 * k2 + k3 * k3 <= r2 {
                out.push(Vec3::new(b.x1, b.x2 + k2 as f64, b.x3 + k3 as f64));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(a: f64, b: f64, c: f64) -> Position {
        Position::new(a, b, c).unwrap()
    }

    #[test]
    fn wall_hit_examples() {
        let h = wall_hit_time(&p(0.25, 0.0, 0.0), &Vec3::new(0.5, 0.0, 0.0)).unwrap();
        assert_eq!(h.time, 1.5);
        assert_eq!(h.wall, Wall::X1One);
        assert_eq!(h.gamma, -1);
        assert!(wall_hit_time(&p(0.25, 0.0, 0.0), &Vec3::new(0.0, 1.0, 0.0)).is_none());
        let h = wall_hit_time(&p(0.25, 0.0, 0.0), &Vec3::new(-0.5, 0.0, 0.0)).unwrap();
        assert_eq!(h.time, 0.5);
        assert_eq!(h.wall, Wall::X1Zero);
        assert_eq!(h.gamma, 1);
    }

    #[test]
    fn advect_examples() {
        let x = advect(&p(0.5, 0.9, 0.0), &Vec3::new(0.0, 0.2, 0.0), 1.0).unwrap();
        assert_eq!(x.x1, 0.5);
        assert!((x.x2 - 0.1).abs() < 1e-15);
        assert_eq!(x.x3, 0.0);
        let x0 = p(0.3, 0.7, 0.2);
        assert_eq!(advect(&x0, &Vec3::new(3.0, 1.0, 2.0), 0.0).unwrap(), x0);
        let x = advect(&p(0.2, 0.0, 0.0), &Vec3::new(0.1, 0.0, 0.0), 2.0).unwrap();
        assert!((x.x1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn advect_rejects_leaving() {
        assert!(matches!(
            advect(&p(0.9, 0.0, 0.0), &Vec3::new(1.0, 0.0, 0.0), 0.2),
            Err(GeometryError::LeftSlab { .. })
        ));
    }

    #[test]
    fn minimum_image_examples() {
        let d = minimum_image_displacement(&p(0.0, 0.95, 0.0), &p(0.0, 0.05, 0.0));
        assert!((d - Vec3::new(0.0, 0.1, 0.0)).norm() < 1e-15);
        let a = p(0.4, 0.2, 0.7);
        assert_eq!(minimum_image_displacement(&a, &a), Vec3::zeros());
        let d = minimum_image_displacement(&p(0.1, 0.3, 0.3), &p(0.9, 0.3, 0.3));
        assert!((d - Vec3::new(0.8, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn half_tie_goes_positive() {
        assert_eq!(wrap_half(0.5), 0.5);
        assert_eq!(wrap_half(-0.5), 0.5);
    }

    #[test]
    fn unfold_counts() {
        let b = p(0.5, 0.5, 0.5);
        assert_eq!(unfold_images(&b, 0.0).len(), 1);
        assert_eq!(unfold_images(&b, 1.0).len(), 5);
        // independent count: lattice points of Z^2 in the closed disk of radius 3
        let mut n = 0;
        for i in -10i64..=10 {
            for j in -10i64..=10 {
                if ((i * i + j * j) as f64).sqrt() <= 3.0 {
                    n += 1;
                }
            }
        }
        assert_eq!(unfold_images(&b, 2.5).len(), n);
        assert_eq!(n, 29);
    }

    #[test]
    fn wrap_unit_never_returns_one() {
        assert_eq!(wrap_unit(-1e-18), 0.0);
        assert_eq!(wrap_unit(1.0), 0.0);
        assert!(wrap_unit(-0.25) == 0.75);
    }

    proptest! {
        #[test]
        fn normalized_ranges(x1 in 0.0f64..=1.0, x2 in -50.0f64..50.0, x3 in -50.0f64..50.0) {
            let q = p(x1, x2, x3);
            prop_assert!((0.0..=1.0).contains(&q.x1));
            prop_assert!((0.0..1.0).contains(&q.x2));
            prop_assert!((0.0..1.0).contains(&q.x3));
        }

        #[test]
        fn advect_composes(x1 in 0.3f64..0.7, x2 in 0.0f64..1.0, x3 in 0.0f64..1.0,
                           v in prop::array::uniform3(-1.0f64..1.0),
                           s in 0.0f64..0.1, t in 0.0f64..0.1) {
            let x = p(x1, x2, x3);
            let v = Vec3::new(v[0], v[1], v[2]);
            let a = advect(&advect(&x, &v, s).unwrap(), &v, t).unwrap();
            let b = advect(&x, &v, s + t).unwrap();
            prop_assert!(minimum_image_displacement(&a, &b).norm() < 1e-14);
        }

        #[test]
        fn displacement_antisymmetric(a in prop::array::uniform3(0.0f64..1.0),
                                      b in prop::array::uniform3(0.0f64..1.0)) {
            let a = p(a[0], a[1], a[2]);
            let b = p(b[0], b[1], b[2]);
            let d1 = minimum_image_displacement(&a, &b);
            let d2 = minimum_image_displacement(&b, &a);
            prop_assert_eq!(d1.x, -d2.x);
            for k in 1..3 {
                prop_assert!(wrap_half(d1[k] + d2[k]).abs() < 1e-15);
                prop_assert!(d1[k] > -0.5 && d1[k] <= 0.5);
            }
        }

        #[test]
        fn wall_hit_time_reversal(x1 in 0.01f64..0.99, v1 in prop::num::f64::NORMAL.prop_filter("nonzero", |v| v.abs() > 1e-3 && v.abs() < 1e3)) {
            // forward hit time + backward hit time = full crossing time 1/|v1|
            let x = p(x1, 0.0, 0.0);
            let v = Vec3::new(v1, 0.0, 0.0);
            let f = wall_hit_time(&x, &v).unwrap();
            let b = wall_hit_time(&x, &(-v)).unwrap();
            prop_assert!(f.wall != b.wall);
            prop_assert!(((f.time + b.time) * v1.abs() - 1.0).abs() < 1e-12);
        }
    }
}
