//! Planar polygon geometry for capture-rate style comparisons: ray-cast
//! containment, segment distances, and buffered intersection tests.

/// Simple polygon as a closed ring of `(x, y)` vertices (closure
/// implicit). Degenerate rings of one or two points behave as points or
/// segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    ring: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(ring: Vec<(f64, f64)>) -> Self {
        assert!(!ring.is_empty(), "polygon needs at least one vertex");
        Self { ring }
    }

    pub fn ring(&self) -> &[(f64, f64)] {
        &self.ring
    }

    fn edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        let n = self.ring.len();
        (0..n).map(move |i| (self.ring[i], self.ring[(i + 1) % n]))
    }

    /// Even-odd ray casting; boundary points may land on either side.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        if self.ring.len() < 3 {
            return false;
        }
        let mut inside = false;
        for ((x1, y1), (x2, y2)) in self.edges() {
            if (y1 > p.1) != (y2 > p.1) {
                let x_cross = x1 + (p.1 - y1) / (y2 - y1) * (x2 - x1);
                if p.0 < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Minimum Euclidean distance between the two polygons; zero when
    /// they intersect or one contains the other.
    pub fn distance(&self, other: &Polygon) -> f64 {
        if self.ring.len() >= 3 && other.ring.iter().any(|&p| self.contains(p))
            || other.ring.len() >= 3 && self.ring.iter().any(|&p| other.contains(p))
        {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for ea in self.edges() {
            for eb in other.edges() {
                if segments_intersect(ea.0, ea.1, eb.0, eb.1) {
                    return 0.0;
                }
                best = best.min(segment_distance(ea.0, ea.1, eb.0, eb.1));
            }
        }
        best
    }

    /// True when the other polygon comes within `buffer` of this one.
    pub fn intersects_buffered(&self, other: &Polygon, buffer: f64) -> bool {
        self.distance(other) <= buffer
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn segments_intersect(a1: (f64, f64), a2: (f64, f64), b1: (f64, f64), b2: (f64, f64)) -> bool {
    let d1 = cross(b1, b2, a1);
    let d2 = cross(b1, b2, a2);
    let d3 = cross(a1, a2, b1);
    let d4 = cross(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        cross(p, q, r) == 0.0
            && r.0 >= p.0.min(q.0)
            && r.0 <= p.0.max(q.0)
            && r.1 >= p.1.min(q.1)
            && r.1 <= p.1.max(q.1)
    };
    on_segment(b1, b2, a1) || on_segment(b1, b2, a2) || on_segment(a1, a2, b1) || on_segment(a1, a2, b2)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * ab.0 + (p.1 - a.1) * ab.1) / len2).clamp(0.0, 1.0)
    };
    let proj = (a.0 + t * ab.0, a.1 + t * ab.1);
    ((p.0 - proj.0).powi(2) + (p.1 - proj.1).powi(2)).sqrt()
}

fn segment_distance(a1: (f64, f64), a2: (f64, f64), b1: (f64, f64), b2: (f64, f64)) -> f64 {
    point_segment_distance(a1, b1, b2)
        .min(point_segment_distance(a2, b1, b2))
        .min(point_segment_distance(b1, a1, a2))
        .min(point_segment_distance(b2, a1, a2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square(x0: f64, y0: f64, side: f64) -> Polygon {
        Polygon::new(vec![
            (x0, y0),
            (x0 + side, y0),
            (x0 + side, y0 + side),
            (x0, y0 + side),
        ])
    }

    #[test]
    fn containment() {
        let sq = square(0.0, 0.0, 2.0);
        assert!(sq.contains((1.0, 1.0)));
        assert!(!sq.contains((3.0, 1.0)));
        assert!(!sq.contains((-0.1, 1.0)));
    }

    #[test]
    fn distance_between_squares() {
        let a = square(0.0, 0.0, 1.0);
        let b = square(3.0, 0.0, 1.0);
        assert_relative_eq!(a.distance(&b), 2.0, epsilon = 1e-12);

        // Overlapping squares touch at distance zero.
        let c = square(0.5, 0.5, 1.0);
        assert_eq!(a.distance(&c), 0.0);

        // Nested: inner polygon's vertices are inside the outer.
        let outer = square(-1.0, -1.0, 4.0);
        let inner = square(0.0, 0.0, 1.0);
        assert_eq!(outer.distance(&inner), 0.0);

        // Diagonal offset: corner-to-corner distance.
        let d = square(2.0, 2.0, 1.0);
        assert_relative_eq!(a.distance(&d), 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn distance_matches_sampled_oracle() {
        let a = Polygon::new(vec![(0.0, 0.0), (2.0, 0.5), (1.0, 2.0)]);
        let b = Polygon::new(vec![(4.0, 1.0), (6.0, 0.0), (5.5, 3.0)]);
        let got = a.distance(&b);
        // Dense sampling of both boundaries.
        let sample = |p: &Polygon| -> Vec<(f64, f64)> {
            let mut pts = Vec::new();
            let n = p.ring().len();
            for i in 0..n {
                let (x1, y1) = p.ring()[i];
                let (x2, y2) = p.ring()[(i + 1) % n];
                for k in 0..200 {
                    let t = k as f64 / 200.0;
                    pts.push((x1 + t * (x2 - x1), y1 + t * (y2 - y1)));
                }
            }
            pts
        };
        let mut best = f64::INFINITY;
        for pa in sample(&a) {
            for pb in sample(&b) {
                let d = ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
                best = best.min(d);
            }
        }
        assert_relative_eq!(got, best, max_relative = 1e-2);
        assert!(got <= best + 1e-12);
    }

    #[test]
    fn buffered_intersection() {
        let a = square(0.0, 0.0, 1.0);
        let b = square(2.0, 0.0, 1.0); // gap of 1.0
        assert!(!a.intersects_buffered(&b, 0.9));
        assert!(a.intersects_buffered(&b, 1.0));
        assert!(a.intersects_buffered(&b, 1.1));
    }
}
