//! Gauss–Legendre rules on [-1,1], Duffy-collapsed tensor rules on reference
//! simplices, and composite geometric refinement toward a singularity line.

use crate::orthopoly::{duffy_jacobian, duffy_map, legendre_with_derivative, ReferenceSimplex};

/// A quadrature rule on a reference domain (interval, triangle, tetrahedron)
/// or, for rules produced by [`refined_triangle_rule`], on a physical
/// triangle. Weights include all geometric factors, so integration is a plain
/// weighted sum of point values.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub dim: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Degree up to which polynomials are integrated exactly.
    pub exactness: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Integrate a function of the rule's points.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(&p[..self.dim]))
            .sum()
    }
}

/// n-point Gauss–Legendre rule on [-1,1], exact for degree 2n-1.
///
/// Nodes are Newton-refined roots of L_n to 1e-15; convergence failure cannot
/// occur for n <= 200 and is treated as an internal fault.
pub fn gauss_legendre(n: usize) -> QuadRule {
    assert!((1..=200).contains(&n), "point count {n} out of range");
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    for i in 0..n.div_ceil(2) {
        // Standard initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut converged = false;
        for _ in 0..100 {
            let (v, d) = legendre_with_derivative(n, x);
            let dx = v / d;
            x -= dx;
            if dx.abs() <= 1e-15 {
                converged = true;
                break;
            }
        }
        assert!(
            converged,
            "Gauss-Legendre Newton iteration stalled at n={n}"
        );
        let (_, dv) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dv * dv);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_with_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    QuadRule {
        dim: 1,
        points: nodes.iter().map(|&x| [x, 0.0, 0.0]).collect(),
        weights,
        exactness: 2 * n - 1,
    }
}

/// Points per tensor direction needed for exactness `d` on a `dim`-simplex
/// once the Duffy Jacobian (degree dim-1 per direction) is folded in.
fn points_per_direction(dim: usize, d: usize) -> usize {
    (d + dim).div_ceil(2) + 1
}

/// Quadrature on the reference `dim`-simplex, exact for total degree `d`:
/// a tensor Gauss–Legendre rule on the Duffy cube with the Duffy Jacobian
/// folded into the weights.
pub fn simplex_rule(dim: usize, d: usize) -> QuadRule {
    let n = points_per_direction(dim, d);
    let line = gauss_legendre(n);
    match dim {
        1 => QuadRule {
            exactness: d,
            ..line
        },
        2 => {
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for (p2, w2) in line.points.iter().zip(&line.weights) {
                for (p1, w1) in line.points.iter().zip(&line.weights) {
                    let z = [p1[0], p2[0]];
                    points.push(duffy_map(2, &z));
                    weights.push(w1 * w2 * duffy_jacobian(2, &z));
                }
            }
            QuadRule {
                dim: 2,
                points,
                weights,
                exactness: d,
            }
        }
        3 => {
            let mut points = Vec::with_capacity(n * n * n);
            let mut weights = Vec::with_capacity(n * n * n);
            for (p3, w3) in line.points.iter().zip(&line.weights) {
                for (p2, w2) in line.points.iter().zip(&line.weights) {
                    for (p1, w1) in line.points.iter().zip(&line.weights) {
                        let z = [p1[0], p2[0], p3[0]];
                        points.push(duffy_map(3, &z));
                        weights.push(w1 * w2 * w3 * duffy_jacobian(3, &z));
                    }
                }
            }
            QuadRule {
                dim: 3,
                points,
                weights,
                exactness: d,
            }
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// 1D composite rule on [a,b]: `n`-point Gauss on subintervals geometrically
/// bisected `levels` times toward each point of `singular` (interior points
/// are approached from both sides, endpoints from inside).
///
/// Returns (nodes, weights); the weights sum to b-a.
pub fn composite_interval(
    a: f64,
    b: f64,
    singular: &[f64],
    levels: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    assert!(b > a);
    let mut cuts = vec![a, b];
    for &s in singular {
        if s < a || s > b {
            continue;
        }
        if s > a && s < b {
            cuts.push(s);
        }
        for k in 1..=levels {
            let f = 0.5f64.powi(k as i32);
            let right = s + (b - s) * f;
            if right > a && right < b {
                cuts.push(right);
            }
            let left = s - (s - a) * f;
            if left > a && left < b {
                cuts.push(left);
            }
        }
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-300);
    let line = gauss_legendre(n);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo <= 0.0 {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (p, wq) in line.points.iter().zip(&line.weights) {
            nodes.push(mid + half * p[0]);
            weights.push(half * wq);
        }
    }
    (nodes, weights)
}

/// Intersections of the vertical line x = `x0` with a triangle's edges,
/// returned as the y-interval of the cross-section (None if empty).
fn cross_section(verts: &[[f64; 2]; 3], x0: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..3 {
        let (p, q) = (verts[i], verts[(i + 1) % 3]);
        let (dx0, dx1) = (p[0] - x0, q[0] - x0);
        if dx0 == 0.0 && dx1 == 0.0 {
            lo = lo.min(p[1].min(q[1]));
            hi = hi.max(p[1].max(q[1]));
        } else if dx0 * dx1 <= 0.0 && p[0] != q[0] {
            let t = (x0 - p[0]) / (q[0] - p[0]);
            let y = p[1] + t * (q[1] - p[1]);
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if lo.is_finite() && hi >= lo {
        Some((lo, hi))
    } else {
        None
    }
}

/// Composite rule on an arbitrary (physical) triangle, graded toward the
/// vertical line x = `line_x`, with `n` Gauss points per direction per strip.
///
/// The triangle is sliced into x-strips whose breakpoints include the vertex
/// abscissae and a geometric sequence approaching `line_x`; within a strip the
/// cross-section bounds are linear in x, so the tensor rule keeps the same
/// polynomial exactness as a plain rule with the same `n`.
pub fn refined_triangle_rule(
    verts: &[[f64; 2]; 3],
    line_x: f64,
    levels: usize,
    n: usize,
    exactness: usize,
) -> QuadRule {
    let xmin = verts.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let xmax = verts.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
    let mut cuts: Vec<f64> = verts.iter().map(|v| v[0]).collect();
    if line_x > xmin && line_x < xmax {
        cuts.push(line_x);
    }
    if line_x >= xmin && line_x <= xmax {
        for k in 1..=levels {
            let f = 0.5f64.powi(k as i32);
            for cand in [line_x + (xmax - line_x) * f, line_x - (line_x - xmin) * f] {
                if cand > xmin && cand < xmax {
                    cuts.push(cand);
                }
            }
        }
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-300);

    let line = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let midx = 0.5 * (a + b);
        let halfx = 0.5 * (b - a);
        for (px, wx) in line.points.iter().zip(&line.weights) {
            let x = midx + halfx * px[0];
            let Some((ylo, yhi)) = cross_section(verts, x) else {
                continue;
            };
            if yhi - ylo <= 0.0 {
                continue;
            }
            let midy = 0.5 * (ylo + yhi);
            let halfy = 0.5 * (yhi - ylo);
            for (py, wy) in line.points.iter().zip(&line.weights) {
                points.push([x, midy + halfy * py[0], 0.0]);
                weights.push(halfx * wx * halfy * wy);
            }
        }
    }
    QuadRule {
        dim: 2,
        points,
        weights,
        exactness,
    }
}

/// Composite refinement of a 2D reference-simplex rule toward the vertical
/// line x = `axis_value` (reference coordinates). If the line does not cross
/// the element, or `levels` is zero, the rule is returned unchanged.
pub fn composite_refine(rule: &QuadRule, axis_value: f64, levels: usize) -> QuadRule {
    if rule.dim != 2 || levels == 0 || axis_value.abs() >= 1.0 {
        return rule.clone();
    }
    let tri = ReferenceSimplex::new(2);
    let verts = tri.vertices();
    let v2: [[f64; 2]; 3] = [
        [verts[0][0], verts[0][1]],
        [verts[1][0], verts[1][1]],
        [verts[2][0], verts[2][1]],
    ];
    let n = points_per_direction(2, rule.exactness);
    refined_triangle_rule(&v2, axis_value, levels, n, rule.exactness)
}
