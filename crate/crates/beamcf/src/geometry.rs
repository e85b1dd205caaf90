//! Minimal 3D vector and segment/box intersection helpers.

use serde::{Deserialize, Serialize};

/// A point or direction in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector; `None` when the norm is (near) zero.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Number of axis-aligned box faces crossed by the open segment `origin → target`.
///
/// Returns 0 (miss or both endpoints inside), 1 (exactly one endpoint inside)
/// or 2 (full transit). Tangential grazing along a face, edge or corner counts
/// as 0: all comparisons are strict, so the measure-zero touch cases resolve
/// deterministically to "no crossing".
pub fn segment_box_crossings(origin: Vec3, target: Vec3, min: Vec3, max: Vec3) -> u32 {
    let dir = target - origin;
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for axis in 0..3 {
        let o = origin.component(axis);
        let d = dir.component(axis);
        let lo = min.component(axis);
        let hi = max.component(axis);
        if d == 0.0 {
            // Parallel to this slab: must be strictly inside it to ever hit the box.
            if !(lo < o && o < hi) {
                return 0;
            }
        } else {
            let mut t1 = (lo - o) / d;
            let mut t2 = (hi - o) / d;
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            t_min = t_min.max(t1);
            t_max = t_max.min(t2);
        }
    }
    if t_min >= t_max {
        return 0;
    }
    let mut crossings = 0;
    if 0.0 < t_min && t_min < 1.0 {
        crossings += 1;
    }
    if 0.0 < t_max && t_max < 1.0 {
        crossings += 1;
    }
    crossings
}
