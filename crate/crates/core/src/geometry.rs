//! Axis-aligned rectangles in continuous pixel coordinates.
//!
//! A rectangle covers the half-open region `[u_tl, u_br) x [v_tl, v_br)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub u_tl: f64,
    pub v_tl: f64,
    pub u_br: f64,
    pub v_br: f64,
}

impl Rect {
    pub const fn new(u_tl: f64, v_tl: f64, u_br: f64, v_br: f64) -> Self {
        Rect {
            u_tl,
            v_tl,
            u_br,
            v_br,
        }
    }

    pub fn width(&self) -> f64 {
        (self.u_br - self.u_tl).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.v_br - self.v_tl).max(0.0)
    }

    /// Area in pixels². Degenerate rectangles have zero area.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.u_tl + self.u_br),
            0.5 * (self.v_tl + self.v_br),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.u_tl < self.u_br && self.v_tl < self.v_br
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            u_tl: self.u_tl.max(other.u_tl),
            v_tl: self.v_tl.max(other.v_tl),
            u_br: self.u_br.min(other.u_br),
            v_br: self.v_br.min(other.v_br),
        };
        r.is_valid().then_some(r)
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.u_br.min(other.u_br) - self.u_tl.max(other.u_tl);
        let h = self.v_br.min(other.v_br) - self.v_tl.max(other.v_tl);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, du: f64, dv: f64) -> Rect {
        Rect::new(self.u_tl + du, self.v_tl + dv, self.u_br + du, self.v_br + dv)
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Rect {
        Rect::new(
            self.u_tl.clamp(0.0, width),
            self.v_tl.clamp(0.0, height),
            self.u_br.clamp(0.0, width),
            self.v_br.clamp(0.0, height),
        )
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.u_tl >= self.u_tl
            && other.v_tl >= self.v_tl
            && other.u_br <= self.u_br
            && other.v_br <= self.v_br
    }

    /// Integer pixel range covered on the pixel grid: pixel `p` is inside when
    /// its center `p + 0.5` lies in the half-open interval. For integer
    /// coordinates this is exactly `[u_tl, u_br) x [v_tl, v_br)`.
    pub fn pixel_bounds(&self, width: usize, height: usize) -> PixelRange {
        fn lo(a: f64) -> f64 {
            (a - 0.5).ceil()
        }
        let clampu = |x: f64, max: usize| x.clamp(0.0, max as f64) as usize;
        PixelRange {
            u0: clampu(lo(self.u_tl), width),
            v0: clampu(lo(self.v_tl), height),
            u1: clampu(lo(self.u_br), width),
            v1: clampu(lo(self.v_br), height),
        }
    }
}

/// Half-open integer pixel range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRange {
    pub u0: usize,
    pub v0: usize,
    pub u1: usize,
    pub v1: usize,
}

impl PixelRange {
    pub fn count(&self) -> usize {
        self.u1.saturating_sub(self.u0) * self.v1.saturating_sub(self.v0)
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Area of the union of a set of rectangles, computed exactly by coordinate
/// compression.
pub fn union_area(rects: &[Rect]) -> f64 {
    let grid = CompressedGrid::new(rects.iter());
    let cover = grid.coverage(rects);
    grid.sum_where(|i| cover[i])
}

/// Intersection and union areas of two rectangle unions `A = ∪a`, `B = ∪b`.
pub fn union_overlap(a: &[Rect], b: &[Rect]) -> (f64, f64) {
    let grid = CompressedGrid::new(a.iter().chain(b.iter()));
    let ca = grid.coverage(a);
    let cb = grid.coverage(b);
    let inter = grid.sum_where(|i| ca[i] && cb[i]);
    let uni = grid.sum_where(|i| ca[i] || cb[i]);
    (inter, uni)
}

struct CompressedGrid {
    us: Vec<f64>,
    vs: Vec<f64>,
}

impl CompressedGrid {
    fn new<'a>(rects: impl Iterator<Item = &'a Rect>) -> Self {
        let mut us = Vec::new();
        let mut vs = Vec::new();
        for r in rects.filter(|r| r.is_valid()) {
            us.extend([r.u_tl, r.u_br]);
            vs.extend([r.v_tl, r.v_br]);
        }
        us.sort_by(f64::total_cmp);
        us.dedup();
        vs.sort_by(f64::total_cmp);
        vs.dedup();
        CompressedGrid { us, vs }
    }

    fn cols(&self) -> usize {
        self.us.len().saturating_sub(1)
    }

    fn coverage(&self, rects: &[Rect]) -> Vec<bool> {
        let cols = self.cols();
        let rows = self.vs.len().saturating_sub(1);
        let mut cover = vec![false; cols * rows];
        let find = |xs: &[f64], x: f64| xs.partition_point(|&y| y < x);
        for r in rects.iter().filter(|r| r.is_valid()) {
            let (i0, i1) = (find(&self.us, r.u_tl), find(&self.us, r.u_br));
            let (j0, j1) = (find(&self.vs, r.v_tl), find(&self.vs, r.v_br));
            for j in j0..j1 {
                cover[j * cols + i0..j * cols + i1].fill(true);
            }
        }
        cover
    }

    fn sum_where(&self, pred: impl Fn(usize) -> bool) -> f64 {
        let cols = self.cols();
        let mut total = 0.0;
        for j in 0..self.vs.len().saturating_sub(1) {
            let h = self.vs[j + 1] - self.vs[j];
            let mut row = 0.0;
            for i in 0..cols {
                if pred(j * cols + i) {
                    row += self.us[i + 1] - self.us[i];
                }
            }
            total += row * h;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn area_examples() {
        assert_eq!(Rect::new(0.0, 0.0, 10.0, 20.0).area(), 200.0);
        assert_eq!(Rect::new(5.0, 5.0, 5.0, 9.0).area(), 0.0);
        assert_eq!(Rect::new(3.0, 2.0, 8.0, 11.0).area(), 45.0);
    }

    #[test]
    fn intersection_examples() {
        let a = Rect::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.intersection_area(&a), 100.0);
        assert_eq!(a.intersection_area(&Rect::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(a.intersection_area(&Rect::new(5.0, 5.0, 15.0, 15.0)), 25.0);
    }

    #[test]
    fn union_counts_overlap_once() {
        let rs = [
            Rect::new(0.0, 0.0, 10.0, 10.0),
            Rect::new(5.0, 5.0, 15.0, 15.0),
        ];
        assert_eq!(union_area(&rs), 175.0);
        assert_eq!(union_area(&[]), 0.0);
        let (i, u) = union_overlap(&rs[..1], &rs[1..]);
        assert_eq!((i, u), (25.0, 175.0));
    }

    #[test]
    fn pixel_bounds_integer_rect() {
        let r = Rect::new(2.0, 3.0, 5.0, 7.0).pixel_bounds(100, 100);
        assert_eq!((r.u0, r.v0, r.u1, r.v1), (2, 3, 5, 7));
        assert_eq!(r.count(), 12);
        let clipped = Rect::new(-4.0, 98.0, 3.0, 120.0).pixel_bounds(100, 100);
        assert_eq!((clipped.u0, clipped.v0, clipped.u1, clipped.v1), (0, 98, 3, 100));
    }

    fn rect() -> impl Strategy<Value = Rect> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..40.0f64, 0.0..40.0f64)
            .prop_map(|(u, v, w, h)| Rect::new(u, v, u + w, v + h))
    }

    proptest! {
        #[test]
        fn intersection_laws(a in rect(), b in rect()) {
            prop_assert_eq!(a.intersection_area(&b), b.intersection_area(&a));
            prop_assert!(a.intersection_area(&b) <= a.area().min(b.area()));
            prop_assert_eq!(a.intersection_area(&a), a.area());
        }

        #[test]
        fn union_bounds(a in rect(), b in rect()) {
            let u = union_area(&[a, b]);
            let expect = a.area() + b.area() - a.intersection_area(&b);
            prop_assert!((u - expect).abs() <= 1e-9 * (1.0 + expect));
        }
    }
}
