//! Convex hull and minimum-area enclosing rectangle in the ground plane.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::geometry::{polygon_area, Vec2};

/// Andrew's monotone chain. Counterclockwise, collinear points dropped.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Vec2, a: Vec2, b: Vec2| a.sub(o).cross(b.sub(o));
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    /// Extent along `yaw`; always >= `width`.
    pub length: f64,
    pub width: f64,
    /// Direction of the long side, in (-pi/2, pi/2].
    pub yaw: f64,
}

/// Rotating calipers over the hull edges: the minimum-area rectangle has a
/// side collinear with some hull edge. `None` for hulls without area.
pub fn min_area_rect(hull: &[Vec2]) -> Option<OrientedRect> {
    if hull.len() < 3 || polygon_area(hull) < 1e-12 {
        return None;
    }
    let mut best: Option<(f64, OrientedRect)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()].sub(hull[i]);
        let len = edge.x.hypot(edge.y);
        if len < 1e-12 {
            continue;
        }
        let u = Vec2::new(edge.x / len, edge.y / len);
        let v = Vec2::new(-u.y, u.x);
        let (mut u_lo, mut u_hi, mut v_lo, mut v_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in hull {
            let pu = p.dot(u);
            let pv = p.dot(v);
            u_lo = u_lo.min(pu);
            u_hi = u_hi.max(pu);
            v_lo = v_lo.min(pv);
            v_hi = v_hi.max(pv);
        }
        let area = (u_hi - u_lo) * (v_hi - v_lo);
        if best.as_ref().is_some_and(|(a, _)| *a <= area) {
            continue;
        }
        let mu = 0.5 * (u_lo + u_hi);
        let mv = 0.5 * (v_lo + v_hi);
        let center = Vec2::new(mu * u.x + mv * v.x, mu * u.y + mv * v.y);
        let (ext_u, ext_v) = (u_hi - u_lo, v_hi - v_lo);
        let (length, width, axis) = if ext_u >= ext_v {
            (ext_u, ext_v, u)
        } else {
            (ext_v, ext_u, v)
        };
        let rect = OrientedRect {
            center,
            length,
            width,
            yaw: half_turn(axis.y.atan2(axis.x)),
        };
        best = Some((area, rect));
    }
    best.map(|(_, r)| r)
}

/// A rectangle's axis is only defined up to a half turn; fold into (-pi/2, pi/2].
fn half_turn(angle: f64) -> f64 {
    let mut a = angle;
    while a <= -FRAC_PI_2 {
        a += PI;
    }
    while a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_drops_interior_and_collinear() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(1.0, 1.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!((polygon_area(&hull) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_has_no_rect() {
        let pts: Vec<Vec2> = (0..5).map(|i| Vec2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(min_area_rect(&convex_hull(&pts)).is_none());
    }

    #[test]
    fn rotated_rectangle_recovered() {
        let yaw = 0.4f64;
        let (s, c) = yaw.sin_cos();
        let corners: Vec<Vec2> = [(2.0, 1.0), (-2.0, 1.0), (-2.0, -1.0), (2.0, -1.0), (0.5, 0.2)]
            .iter()
            .map(|&(x, y)| Vec2::new(5.0 + c * x - s * y, -1.0 + s * x + c * y))
            .collect();
        let rect = min_area_rect(&convex_hull(&corners)).unwrap();
        assert!((rect.length - 4.0).abs() < 1e-9);
        assert!((rect.width - 2.0).abs() < 1e-9);
        assert!((rect.yaw - yaw).abs() < 1e-9);
        assert!((rect.center.x - 5.0).abs() < 1e-9 && (rect.center.y + 1.0).abs() < 1e-9);
    }
}
