//! Points and axis-aligned boxes, generic over the scalar type.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            self.scale(T::one() / n)
        } else {
            self
        }
    }

    pub fn get(self, axis: usize) -> T {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with(mut self, axis: usize, v: T) -> Self {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
        self
    }

    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self).scale(t)
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Closed axis-aligned box `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Self {
        Self { min, max }
    }

    /// Cube of edge `edge` centered at `center`.
    pub fn cube(center: Vec3<T>, edge: T) -> Self {
        let h = Vec3::splat(edge / T::lit(2.0));
        Self::new(center - h, center + h)
    }

    pub fn unit() -> Self {
        Self::new(Vec3::zero(), Vec3::splat(T::one()))
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max).scale(T::lit(0.5))
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn volume(&self) -> T {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn inflate(&self, margin: T) -> Self {
        let m = Vec3::splat(margin);
        Self::new(self.min - m, self.max + m)
    }

    /// Grows the box by a per-axis half extent (Minkowski sum with a centered box).
    pub fn inflate_by(&self, half: Vec3<T>) -> Self {
        Self::new(self.min - half, self.max + half)
    }

    pub fn translate(&self, d: Vec3<T>) -> Self {
        Self::new(self.min + d, self.max + d)
    }

    /// Closed point containment.
    pub fn contains_point(&self, p: Vec3<T>) -> bool {
        (0..3).all(|a| p.get(a) >= self.min.get(a) && p.get(a) <= self.max.get(a))
    }

    /// Open point containment.
    pub fn strictly_contains_point(&self, p: Vec3<T>) -> bool {
        (0..3).all(|a| p.get(a) > self.min.get(a) && p.get(a) < self.max.get(a))
    }

    /// `other ⊆ self` with slack `tol`.
    pub fn contains_box(&self, other: &Self, tol: T) -> bool {
        (0..3).all(|a| {
            other.min.get(a) >= self.min.get(a) - tol && other.max.get(a) <= self.max.get(a) + tol
        })
    }

    /// Overlap length along each axis (negative when separated on that axis).
    pub fn overlap_extent(&self, other: &Self) -> Vec3<T> {
        let f = |a: usize| {
            self.max.get(a).min(other.max.get(a)) - self.min.get(a).max(other.min.get(a))
        };
        Vec3::new(f(0), f(1), f(2))
    }

    /// Minimum translation distance that separates the boxes; zero when they
    /// only touch or are apart.
    pub fn penetration_depth(&self, other: &Self) -> T {
        let o = self.overlap_extent(other);
        let d = o.x.min(o.y).min(o.z);
        if d > T::zero() {
            d
        } else {
            T::zero()
        }
    }

    /// Euclidean distance from a point to the box (zero inside).
    pub fn distance_to_point(&self, p: Vec3<T>) -> T {
        let f = |a: usize| {
            let v = p.get(a);
            if v < self.min.get(a) {
                self.min.get(a) - v
            } else if v > self.max.get(a) {
                v - self.max.get(a)
            } else {
                T::zero()
            }
        };
        Vec3::new(f(0), f(1), f(2)).norm()
    }

    /// Gap between two boxes (zero when touching or overlapping).
    pub fn gap(&self, other: &Self) -> T {
        let o = self.overlap_extent(other);
        let f = |v: T| if v < T::zero() { -v } else { T::zero() };
        Vec3::new(f(o.x), f(o.y), f(o.z)).norm()
    }

    /// Whether the closed segment `a`–`b` meets the closed box (slab test).
    pub fn intersects_segment(&self, a: Vec3<T>, b: Vec3<T>) -> bool {
        let d = b - a;
        let mut t0 = T::zero();
        let mut t1 = T::one();
        for axis in 0..3 {
            let (o, v) = (a.get(axis), d.get(axis));
            let (lo, hi) = (self.min.get(axis), self.max.get(axis));
            if v == T::zero() {
                if o < lo || o > hi {
                    return false;
                }
            } else {
                let inv = T::one() / v;
                let mut ta = (lo - o) * inv;
                let mut tb = (hi - o) * inv;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }

    /// The six faces as (outward normal, face area), in a fixed order:
    /// -x, +x, -y, +y, -z, +z.
    pub fn faces(&self) -> [(Vec3<T>, T); 6] {
        let e = self.extent();
        let (o, l) = (T::zero(), T::one());
        [
            (Vec3::new(-l, o, o), e.y * e.z),
            (Vec3::new(l, o, o), e.y * e.z),
            (Vec3::new(o, -l, o), e.x * e.z),
            (Vec3::new(o, l, o), e.x * e.z),
            (Vec3::new(o, o, -l), e.x * e.y),
            (Vec3::new(o, o, l), e.x * e.y),
        ]
    }

    /// Point on face `face` (index into [`Aabb::faces`]) at in-face coordinates
    /// `(u, v) ∈ [0,1]²`.
    pub fn face_point(&self, face: usize, u: T, v: T) -> Vec3<T> {
        let axis = face / 2;
        let fixed = if face.is_multiple_of(2) { self.min.get(axis) } else { self.max.get(axis) };
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        Vec3::zero()
            .with(axis, fixed)
            .with(a1, self.min.get(a1) + u * (self.max.get(a1) - self.min.get(a1)))
            .with(a2, self.min.get(a2) + v * (self.max.get(a2) - self.min.get(a2)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type B = Aabb<f64>;
    type V = Vec3<f64>;

    #[test]
    fn cube_extent_and_center() {
        let b = B::cube(V::new(0.5, 0.5, 0.1), 0.2);
        assert!((b.extent().x - 0.2).abs() < 1e-15);
        assert_eq!(b.center(), V::new(0.5, 0.5, 0.1));
    }

    #[test]
    fn penetration_of_touching_boxes_is_zero() {
        let a = B::new(V::zero(), V::splat(1.0));
        let b = B::new(V::new(1.0, 0.0, 0.0), V::new(2.0, 1.0, 1.0));
        assert_eq!(a.penetration_depth(&b), 0.0);
        let c = b.translate(V::new(-0.25, 0.0, 0.0));
        assert!((a.penetration_depth(&c) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn segment_slab_test() {
        let b = B::new(V::new(0.4, 0.4, 0.4), V::new(0.6, 0.6, 0.6));
        assert!(b.intersects_segment(V::new(0.0, 0.5, 0.5), V::new(1.0, 0.5, 0.5)));
        assert!(!b.intersects_segment(V::new(0.0, 0.7, 0.5), V::new(1.0, 0.7, 0.5)));
        assert!(!b.intersects_segment(V::new(0.0, 0.0, 0.0), V::new(0.3, 0.3, 0.3)));
        // axis-parallel segment inside the slab
        assert!(b.intersects_segment(V::new(0.5, 0.5, 0.0), V::new(0.5, 0.5, 1.0)));
    }

    #[test]
    fn face_points_lie_on_faces() {
        let b = B::cube(V::new(1.0, 2.0, 3.0), 0.5);
        for f in 0..6 {
            let p = b.face_point(f, 0.3, 0.7);
            assert!(b.distance_to_point(p) == 0.0);
            let n = b.faces()[f].0;
            // stepping outward leaves the box
            assert!(b.distance_to_point(p + n * 0.01) > 0.0);
        }
    }

    #[test]
    fn gap_between_separated_boxes() {
        let a = B::new(V::zero(), V::splat(1.0));
        let b = a.translate(V::new(1.5, 0.0, 0.0));
        assert!((a.gap(&b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Aabb::<f32>::cube(Vec3::new(0.0, 0.0, 0.0), 1.0);
        assert!(a.contains_point(Vec3::new(0.5, -0.5, 0.0)));
        assert!(!a.strictly_contains_point(Vec3::new(0.5, -0.5, 0.0)));
    }
}
