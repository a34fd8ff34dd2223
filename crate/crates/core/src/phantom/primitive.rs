use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Largest per-axis gap between the boxes (negative when they overlap on every axis).
    pub fn separation(&self, o: &Aabb) -> f64 {
        (0..3)
            .map(|i| (o.min[i] - self.max[i]).max(self.min[i] - o.max[i]))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn corners(&self) -> [Point3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Point3::new(a.x, a.y, a.z),
            Point3::new(b.x, a.y, a.z),
            Point3::new(a.x, b.y, a.z),
            Point3::new(b.x, b.y, a.z),
            Point3::new(a.x, a.y, b.z),
            Point3::new(b.x, a.y, b.z),
            Point3::new(a.x, b.y, b.z),
            Point3::new(b.x, b.y, b.z),
        ]
    }

    pub fn volume(&self) -> f64 {
        let d = self.max - self.min;
        d.x.max(0.0) * d.y.max(0.0) * d.z.max(0.0)
    }
}

/// Closed solid with an exact inside test. Coordinates are world units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Points within `radius` of the segment `a`-`b`.
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
    /// `|x/(a s)|^e + |y/(b s)|^e + |z/c|^e <= 1` in local coordinates with the
    /// cross-section scale `s = 1 + taper * z / c` varying along the vertical axis.
    SuperEllipsoid { center: [f64; 3], radii: [f64; 3], exponent: f64, taper: f64 },
    /// Axis-aligned box.
    Cuboid { center: [f64; 3], half: [f64; 3] },
}

fn p3(a: [f64; 3]) -> Point3 {
    Point3::new(a[0], a[1], a[2])
}

impl Primitive {
    pub fn contains(&self, p: &Point3) -> bool {
        match self {
            Primitive::Capsule { a, b, radius } => {
                let (a, b) = (p3(*a), p3(*b));
                let ab = b - a;
                let len2 = ab.norm_squared();
                let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                (p - (a + t * ab)).norm_squared() <= radius * radius
            }
            Primitive::Ellipsoid { center, radii } => {
                let q = p - p3(*center);
                (q.x / radii[0]).powi(2) + (q.y / radii[1]).powi(2) + (q.z / radii[2]).powi(2) <= 1.0
            }
            Primitive::SuperEllipsoid { center, radii, exponent, taper } => {
                let q = p - p3(*center);
                let zn = q.z / radii[2];
                if zn.abs() > 1.0 {
                    return false;
                }
                let s = 1.0 + taper * zn;
                if s <= 0.0 {
                    return false;
                }
                let e = *exponent;
                (q.x / (radii[0] * s)).abs().powf(e) + (q.y / (radii[1] * s)).abs().powf(e) + zn.abs().powf(e) <= 1.0
            }
            Primitive::Cuboid { center, half } => (0..3).all(|i| (p[i] - center[i]).abs() <= half[i]),
        }
    }

    pub fn aabb(&self) -> Aabb {
        match self {
            Primitive::Capsule { a, b, radius } => {
                let r = Vec3::repeat(*radius);
                Aabb { min: p3(*a).inf(&p3(*b)) - r, max: p3(*a).sup(&p3(*b)) + r }
            }
            Primitive::Ellipsoid { center, radii } => {
                let r = Vec3::from(*radii);
                Aabb { min: p3(*center) - r, max: p3(*center) + r }
            }
            Primitive::SuperEllipsoid { center, radii, taper, .. } => {
                let s = 1.0 + taper.abs();
                let r = Vec3::new(radii[0] * s, radii[1] * s, radii[2]);
                Aabb { min: p3(*center) - r, max: p3(*center) + r }
            }
            Primitive::Cuboid { center, half } => {
                let r = Vec3::from(*half);
                Aabb { min: p3(*center) - r, max: p3(*center) + r }
            }
        }
    }

    /// Applies `p -> scale * p + shift` (uniform scale about the origin).
    pub fn scaled_shifted(&self, scale: f64, shift: [f64; 3]) -> Primitive {
        let m = |p: [f64; 3]| [scale * p[0] + shift[0], scale * p[1] + shift[1], scale * p[2] + shift[2]];
        let r = |v: [f64; 3]| v.map(|x| x * scale);
        match self {
            Primitive::Capsule { a, b, radius } => Primitive::Capsule { a: m(*a), b: m(*b), radius: radius * scale },
            Primitive::Ellipsoid { center, radii } => Primitive::Ellipsoid { center: m(*center), radii: r(*radii) },
            Primitive::SuperEllipsoid { center, radii, exponent, taper } => Primitive::SuperEllipsoid {
                center: m(*center),
                radii: r(*radii),
                exponent: *exponent,
                taper: *taper,
            },
            Primitive::Cuboid { center, half } => Primitive::Cuboid { center: m(*center), half: r(*half) },
        }
    }

    /// Reflection through the `x = 0` plane (left/right leg).
    pub fn mirrored_x(&self) -> Primitive {
        let f = |p: [f64; 3]| [-p[0], p[1], p[2]];
        match self {
            Primitive::Capsule { a, b, radius } => Primitive::Capsule { a: f(*a), b: f(*b), radius: *radius },
            Primitive::Ellipsoid { center, radii } => Primitive::Ellipsoid { center: f(*center), radii: *radii },
            Primitive::SuperEllipsoid { center, radii, exponent, taper } => Primitive::SuperEllipsoid {
                center: f(*center),
                radii: *radii,
                exponent: *exponent,
                taper: *taper,
            },
            Primitive::Cuboid { center, half } => Primitive::Cuboid { center: f(*center), half: *half },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capsule_caps() {
        let c = Primitive::Capsule { a: [0.0, 0.0, 0.0], b: [0.0, 0.0, 1.0], radius: 0.1 };
        assert!(c.contains(&Point3::new(0.0, 0.0, 1.09)));
        assert!(!c.contains(&Point3::new(0.0, 0.0, 1.11)));
        assert!(c.contains(&Point3::new(0.099, 0.0, 0.5)));
        assert!(!c.contains(&Point3::new(0.08, 0.08, 0.5)));
    }

    #[test]
    fn superellipsoid_taper_narrows_top() {
        let s = Primitive::SuperEllipsoid { center: [0.0; 3], radii: [1.0, 1.0, 1.0], exponent: 2.0, taper: -0.5 };
        // Cross-section scale is 0.75 at z = 0.5.
        assert!(s.contains(&Point3::new(0.6, 0.0, 0.5)));
        assert!(!s.contains(&Point3::new(0.7, 0.0, 0.5)));
        assert!(s.contains(&Point3::new(0.8, 0.0, -0.5)));
    }

    #[test]
    fn aabb_bounds_samples() {
        let prims = [
            Primitive::Capsule { a: [0.1, -0.2, 0.3], b: [-0.3, 0.2, -0.1], radius: 0.15 },
            Primitive::Ellipsoid { center: [0.2, 0.0, -0.1], radii: [0.3, 0.1, 0.2] },
            Primitive::SuperEllipsoid { center: [0.0, 0.1, 0.0], radii: [0.3, 0.2, 0.1], exponent: 3.0, taper: 0.4 },
        ];
        let n = 40;
        for p in &prims {
            let bb = p.aabb();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let q = Point3::new(
                            -1.0 + 2.0 * i as f64 / n as f64,
                            -1.0 + 2.0 * j as f64 / n as f64,
                            -1.0 + 2.0 * k as f64 / n as f64,
                        );
                        if p.contains(&q) {
                            assert!(bb.contains(&q));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn separation_sign() {
        let a = Aabb { min: Point3::new(0.0, 0.0, 0.0), max: Point3::new(1.0, 1.0, 1.0) };
        let b = Aabb { min: Point3::new(1.5, 0.2, 0.2), max: Point3::new(2.0, 0.5, 0.5) };
        assert!((a.separation(&b) - 0.5).abs() < 1e-15);
        assert!(a.separation(&a) < 0.0);
    }
}
