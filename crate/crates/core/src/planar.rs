//! Small planar polygon kernels shared by box IoU and grid generation.

pub type Pt = (f64, f64);

/// Signed shoelace area; positive for counterclockwise vertex order.
pub fn signed_area(poly: &[Pt]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

pub fn area(poly: &[Pt]) -> f64 {
    signed_area(poly).abs()
}

fn ccw(poly: &[Pt]) -> Vec<Pt> {
    let mut v = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Clips `subject` (any simple polygon) against the convex polygon `clip`
/// with successive half-plane cuts. Both may be in either orientation.
pub fn clip_to_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let clip = ccw(clip);
    let mut out: Vec<Pt> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: Pt| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: Pt, q: Pt, sp: f64, sq: f64) -> Pt {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Area of the intersection of two convex polygons.
pub fn convex_intersection_area(a: &[Pt], b: &[Pt]) -> f64 {
    let clipped = clip_to_convex(&ccw(a), b);
    area(&clipped)
}

pub fn bounds(poly: &[Pt]) -> [f64; 4] {
    poly.iter()
        .fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |b, p| {
            [b[0].min(p.0), b[1].min(p.1), b[2].max(p.0), b[3].max(p.1)]
        })
}

/// Euclidean distance from `p` to segment `a`–`b`.
pub fn point_segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    crate::geo::planar_segment_distance((a.0 - p.0, a.1 - p.1), (b.0 - p.0, b.1 - p.1)).0
}

fn orient(a: Pt, b: Pt, c: Pt) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Closed-segment intersection test, touching endpoints included.
pub fn segments_intersect(p1: Pt, p2: Pt, q1: Pt, q2: Pt) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on =
        |a: Pt, b: Pt, c: Pt, d: f64| d == 0.0 && c.0 >= a.0.min(b.0) && c.0 <= a.0.max(b.0) && c.1 >= a.1.min(b.1) && c.1 <= a.1.max(b.1);
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// Even-odd containment; `ring` may be open or closed.
pub fn point_in_polygon(p: Pt, ring: &[Pt]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) / (b.1 - a.1) * (b.0 - a.0);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}
