//! Orthogonal polynomial families on reference simplices.
//!
//! Legendre polynomials L_j on [-1,1] satisfy (L_i, L_j) = 2/(2j+1) δ_ij.
//! Jacobi polynomials J_j^ℓ (weight parameters (ℓ,0)) satisfy
//! ∫ (1-x)^ℓ J_i^ℓ J_j^ℓ dx = 2^{ℓ+1}/(2j+ℓ+1) δ_ij.
//! Products of these families, collapsed onto simplices through the Duffy
//! transformation, give the Koornwinder basis; normalizing each member by its
//! L² norm yields the orthonormal modal basis used everywhere else.

/// Threshold below which a collapsed coordinate denominator is treated as the
/// degenerate vertex of the Duffy map and the limiting value is returned.
const COLLAPSE_TOL: f64 = 1e-14;

/// Evaluate the Legendre polynomial L_j(x) by the three-term recurrence.
pub fn legendre_eval(j: usize, x: f64) -> f64 {
    if j == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut curr = x;
    for k in 1..j {
        let next = ((2 * k + 1) as f64 * x * curr - k as f64 * prev) / (k + 1) as f64;
        prev = curr;
        curr = next;
    }
    curr
}

/// Evaluate L_j(x) together with its derivative.
///
/// The derivative recurrence is obtained by differentiating the three-term
/// recurrence, which stays stable on the closed interval.
pub fn legendre_with_derivative(j: usize, x: f64) -> (f64, f64) {
    if j == 0 {
        return (1.0, 0.0);
    }
    let mut prev = (1.0, 0.0);
    let mut curr = (x, 1.0);
    for k in 1..j {
        let a = (2 * k + 1) as f64 / (k + 1) as f64;
        let b = k as f64 / (k + 1) as f64;
        let next = (
            a * x * curr.0 - b * prev.0,
            a * (curr.0 + x * curr.1) - b * prev.1,
        );
        prev = curr;
        curr = next;
    }
    curr
}

/// Evaluate the Jacobi polynomial J_j^ℓ(x) with weight parameters (ℓ, 0).
pub fn jacobi_eval(ell: usize, j: usize, x: f64) -> f64 {
    jacobi_with_derivative(ell, j, x).0
}

/// Evaluate J_j^ℓ(x) and its derivative via the (ℓ,0) three-term recurrence.
pub fn jacobi_with_derivative(ell: usize, j: usize, x: f64) -> (f64, f64) {
    let l = ell as f64;
    if j == 0 {
        return (1.0, 0.0);
    }
    // J_1^ℓ(x) = (ℓ+2)/2 x + ℓ/2
    let mut prev = (1.0, 0.0);
    let mut curr = ((l + 2.0) / 2.0 * x + l / 2.0, (l + 2.0) / 2.0);
    for n in 2..=j {
        let nf = n as f64;
        let a = 2.0 * nf * (nf + l) * (2.0 * nf + l - 2.0);
        let b = (2.0 * nf + l - 1.0) * (2.0 * nf + l) * (2.0 * nf + l - 2.0);
        let c = (2.0 * nf + l - 1.0) * l * l;
        let d = 2.0 * (nf + l - 1.0) * (nf - 1.0) * (2.0 * nf + l);
        let next = (
            ((b * x + c) * curr.0 - d * prev.0) / a,
            (b * curr.0 + (b * x + c) * curr.1 - d * prev.1) / a,
        );
        prev = curr;
        curr = next;
    }
    curr
}

/// Fill `out[j] = L_j(x)` for j = 0..out.len().
fn legendre_row(p: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if p >= 1 {
        out[1] = x;
    }
    for k in 1..p {
        out[k + 1] = ((2 * k + 1) as f64 * x * out[k] - k as f64 * out[k - 1]) / (k + 1) as f64;
    }
}

/// (values, derivatives) of L_0..L_p at x.
fn legendre_row_with_derivative(p: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; p + 1];
    let mut d = vec![0.0; p + 1];
    v[0] = 1.0;
    if p >= 1 {
        v[1] = x;
        d[1] = 1.0;
    }
    for k in 1..p {
        let a = (2 * k + 1) as f64 / (k + 1) as f64;
        let b = k as f64 / (k + 1) as f64;
        v[k + 1] = a * x * v[k] - b * v[k - 1];
        d[k + 1] = a * (v[k] + x * d[k]) - b * d[k - 1];
    }
    (v, d)
}

/// Values J_0^ℓ(x) .. J_jmax^ℓ(x).
fn jacobi_row(ell: usize, jmax: usize, x: f64) -> Vec<f64> {
    let l = ell as f64;
    let mut v = vec![0.0; jmax + 1];
    v[0] = 1.0;
    if jmax >= 1 {
        v[1] = (l + 2.0) / 2.0 * x + l / 2.0;
    }
    for n in 2..=jmax {
        let nf = n as f64;
        let a = 2.0 * nf * (nf + l) * (2.0 * nf + l - 2.0);
        let b = (2.0 * nf + l - 1.0) * (2.0 * nf + l) * (2.0 * nf + l - 2.0);
        let c = (2.0 * nf + l - 1.0) * l * l;
        let d = 2.0 * (nf + l - 1.0) * (nf - 1.0) * (2.0 * nf + l);
        v[n] = ((b * x + c) * v[n - 1] - d * v[n - 2]) / a;
    }
    v
}

/// (values, derivatives) of J_0^ℓ .. J_jmax^ℓ at x.
fn jacobi_row_with_derivative(ell: usize, jmax: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let l = ell as f64;
    let mut v = vec![0.0; jmax + 1];
    let mut dv = vec![0.0; jmax + 1];
    v[0] = 1.0;
    if jmax >= 1 {
        v[1] = (l + 2.0) / 2.0 * x + l / 2.0;
        dv[1] = (l + 2.0) / 2.0;
    }
    for n in 2..=jmax {
        let nf = n as f64;
        let a = 2.0 * nf * (nf + l) * (2.0 * nf + l - 2.0);
        let b = (2.0 * nf + l - 1.0) * (2.0 * nf + l) * (2.0 * nf + l - 2.0);
        let c = (2.0 * nf + l - 1.0) * l * l;
        let d = 2.0 * (nf + l - 1.0) * (nf - 1.0) * (2.0 * nf + l);
        v[n] = ((b * x + c) * v[n - 1] - d * v[n - 2]) / a;
        dv[n] = (b * v[n - 1] + (b * x + c) * dv[n - 1] - d * dv[n - 2]) / a;
    }
    (v, dv)
}

/// Multi-index of a modal basis function: (j), (j,ℓ), or (j1,j2,j3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolyIndex {
    pub dim: usize,
    pub indices: [usize; 3],
}

impl PolyIndex {
    pub fn new(dim: usize, indices: [usize; 3]) -> Self {
        assert!((1..=3).contains(&dim), "dimension must be 1, 2, or 3");
        let mut idx = indices;
        idx[dim..].iter_mut().for_each(|v| *v = 0);
        PolyIndex { dim, indices: idx }
    }

    pub fn total_degree(&self) -> usize {
        self.indices[..self.dim].iter().sum()
    }
}

/// Dimension of the polynomial space P_p on a `dim`-simplex.
pub fn poly_space_dim(dim: usize, p: usize) -> usize {
    match dim {
        1 => p + 1,
        2 => (p + 1) * (p + 2) / 2,
        3 => (p + 1) * (p + 2) * (p + 3) / 6,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Reference simplex with a distinguished outflow facet.
///
/// 1D: the interval [-1,1], outflow at -1.
/// 2D: the triangle (-1,-1), (1,-1), (0,1); outflow facet [-1,1] x {-1}.
/// 3D: the tetrahedron (-1,-1,-1), (1,-1,-1), (0,1,-1), (0,0,1);
///     outflow facet is the z = -1 face.
///
/// Facet i is the facet opposite vertex i, so the outflow facet id is `dim`.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceSimplex {
    pub dim: usize,
}

impl ReferenceSimplex {
    pub fn new(dim: usize) -> Self {
        assert!((1..=3).contains(&dim));
        ReferenceSimplex { dim }
    }

    pub fn vertices(&self) -> Vec<[f64; 3]> {
        match self.dim {
            1 => vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            2 => vec![[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]],
            3 => vec![
                [-1.0, -1.0, -1.0],
                [1.0, -1.0, -1.0],
                [0.0, 1.0, -1.0],
                [0.0, 0.0, 1.0],
            ],
            _ => unreachable!(),
        }
    }

    pub fn measure(&self) -> f64 {
        match self.dim {
            1 => 2.0,
            2 => 2.0,
            3 => 4.0 / 3.0,
            _ => unreachable!(),
        }
    }

    pub fn outflow_facet_id(&self) -> usize {
        self.dim
    }

    /// Local vertex ids of facet `fid` (the facet opposite vertex `fid`).
    pub fn facet_vertices(&self, fid: usize) -> Vec<usize> {
        (0..=self.dim).filter(|&v| v != fid).collect()
    }

    /// Measure of facet `fid` (length in 2D, area in 3D, 1 for points).
    pub fn facet_measure(&self, fid: usize) -> f64 {
        let verts = self.vertices();
        let ids = self.facet_vertices(fid);
        match self.dim {
            1 => 1.0,
            2 => {
                let a = verts[ids[0]];
                let b = verts[ids[1]];
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            }
            3 => {
                let a = verts[ids[0]];
                let b = verts[ids[1]];
                let c = verts[ids[2]];
                let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let cx = u[1] * v[2] - u[2] * v[1];
                let cy = u[2] * v[0] - u[0] * v[2];
                let cz = u[0] * v[1] - u[1] * v[0];
                0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
            }
            _ => unreachable!(),
        }
    }

    /// True if `x` lies in the closed simplex up to tolerance `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self.dim {
            1 => x[0] >= -1.0 - tol && x[0] <= 1.0 + tol,
            2 => x[1] >= -1.0 - tol && x[1] <= 1.0 + tol && 2.0 * x[0].abs() <= (1.0 - x[1]) + tol,
            3 => {
                x[2] >= -1.0 - tol
                    && x[2] <= 1.0 + tol
                    && 2.0 * x[1] <= (1.0 - x[2]) + tol
                    && x[1] >= -1.0 - tol
                    && 4.0 * x[0].abs() <= (1.0 - 2.0 * x[1] - x[2]).max(0.0) + tol
            }
            _ => unreachable!(),
        }
    }
}

/// Duffy transformation from the reference cube [-1,1]^dim onto the
/// reference simplex.
///
/// 2D: (z1, z2) -> (z1 (1-z2)/2, z2)
/// 3D: (z1, z2, z3) -> (z1 (1-z2)/2 (1-z3)/2, z2 (1-z3)/2, z3)
pub fn duffy_map(dim: usize, z: &[f64]) -> [f64; 3] {
    match dim {
        1 => [z[0], 0.0, 0.0],
        2 => [z[0] * (1.0 - z[1]) / 2.0, z[1], 0.0],
        3 => {
            let s3 = (1.0 - z[2]) / 2.0;
            let s2 = (1.0 - z[1]) / 2.0;
            [z[0] * s2 * s3, z[1] * s3, z[2]]
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Jacobian determinant of the Duffy transformation at `z`.
pub fn duffy_jacobian(dim: usize, z: &[f64]) -> f64 {
    match dim {
        1 => 1.0,
        2 => (1.0 - z[1]) / 2.0,
        3 => {
            let s3 = (1.0 - z[2]) / 2.0;
            (1.0 - z[1]) / 2.0 * s3 * s3
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Evaluate the (unnormalized) Koornwinder polynomial Φ_index at a point of
/// the closed reference simplex.
///
/// 1D: L_j(x).
/// 2D: L_j(2x/(1-y)) J_ℓ^{2j+1}(y) ((1-y)/2)^j.
/// 3D: L_{j1}(z1) J_{j2}^{2j1+1}(z2) s2^{j1} J_{j3}^{2j1+2j2+2}(z3) s3^{j1+j2},
///     with z the Duffy preimage of the point and s_k = (1-z_k)/2.
///
/// At the collapse vertices the limiting value is used: every factor carrying
/// a positive power of the vanishing s kills its (bounded) collapsed
/// coordinate, and the j = 0 members are constant in that coordinate.
pub fn koornwinder_eval(index: &PolyIndex, x: &[f64]) -> f64 {
    match index.dim {
        1 => legendre_eval(index.indices[0], x[0]),
        2 => {
            let (j, l) = (index.indices[0], index.indices[1]);
            let s = (1.0 - x[1]) / 2.0;
            if s.abs() < COLLAPSE_TOL {
                if j == 0 {
                    jacobi_eval(1, l, x[1])
                } else {
                    0.0
                }
            } else {
                let xi = x[0] / s;
                legendre_eval(j, xi) * jacobi_eval(2 * j + 1, l, x[1]) * s.powi(j as i32)
            }
        }
        3 => {
            let [j1, j2, j3] = index.indices;
            let s3 = (1.0 - x[2]) / 2.0;
            if s3.abs() < COLLAPSE_TOL {
                return if j1 == 0 && j2 == 0 {
                    jacobi_eval(2, j3, x[2])
                } else {
                    0.0
                };
            }
            let z2 = x[1] / s3;
            let s2 = (1.0 - z2) / 2.0;
            let f3 = jacobi_eval(2 * (j1 + j2) + 2, j3, x[2]) * s3.powi((j1 + j2) as i32);
            if s2.abs() < COLLAPSE_TOL {
                if j1 == 0 {
                    jacobi_eval(1, j2, z2) * f3
                } else {
                    0.0
                }
            } else {
                let z1 = x[0] / (s2 * s3);
                legendre_eval(j1, z1) * jacobi_eval(2 * j1 + 1, j2, z2) * s2.powi(j1 as i32) * f3
            }
        }
        _ => unreachable!(),
    }
}

/// Squared L² norm of Φ_index on the reference simplex.
///
/// 1D: 2/(2j+1).
/// 2D: 2/((2j+1)(j+ℓ+1)).
/// 3D: 2/(2j1+1) · 2/(2j1+2j2+2) · 2/(2j1+2j2+2j3+3).
///
/// The last 3D factor follows from the (ℓ,0)-Jacobi orthogonality with
/// ℓ = 2j1+2j2+2; the (0,0,0) member then integrates to the tetrahedron
/// volume 4/3 as it must.
pub fn koornwinder_norm_sq(index: &PolyIndex) -> f64 {
    match index.dim {
        1 => {
            let j = index.indices[0] as f64;
            2.0 / (2.0 * j + 1.0)
        }
        2 => {
            let j = index.indices[0] as f64;
            let l = index.indices[1] as f64;
            2.0 / ((2.0 * j + 1.0) * (j + l + 1.0))
        }
        3 => {
            let j1 = index.indices[0] as f64;
            let j2 = index.indices[1] as f64;
            let j3 = index.indices[2] as f64;
            (2.0 / (2.0 * j1 + 1.0))
                * (2.0 / (2.0 * j1 + 2.0 * j2 + 2.0))
                * (2.0 / (2.0 * j1 + 2.0 * j2 + 2.0 * j3 + 3.0))
        }
        _ => unreachable!(),
    }
}

/// Evaluate Φ_index and its gradient at a point strictly inside the simplex
/// (collapsed denominators must not vanish; quadrature points satisfy this).
pub fn koornwinder_eval_with_grad(index: &PolyIndex, x: &[f64]) -> (f64, [f64; 3]) {
    match index.dim {
        1 => {
            let (v, d) = legendre_with_derivative(index.indices[0], x[0]);
            (v, [d, 0.0, 0.0])
        }
        2 => {
            let (j, l) = (index.indices[0], index.indices[1]);
            let s = (1.0 - x[1]) / 2.0;
            debug_assert!(s.abs() >= COLLAPSE_TOL, "gradient at collapse vertex");
            let xi = x[0] / s;
            let (lv, ld) = legendre_with_derivative(j, xi);
            let (jv, jd) = jacobi_with_derivative(2 * j + 1, l, x[1]);
            let sj = s.powi(j as i32);
            let val = lv * jv * sj;
            let dx;
            let mut dy = lv * jd * sj;
            if j == 0 {
                dx = 0.0;
            } else {
                let sjm1 = s.powi(j as i32 - 1);
                dx = ld * jv * sjm1;
                dy += 0.5 * xi * ld * jv * sjm1 - 0.5 * j as f64 * lv * jv * sjm1;
            }
            (val, [dx, dy, 0.0])
        }
        3 => {
            let [j1, j2, j3] = index.indices;
            let s3 = (1.0 - x[2]) / 2.0;
            debug_assert!(s3.abs() >= COLLAPSE_TOL, "gradient at collapse vertex");
            let z2 = x[1] / s3;
            let s2 = (1.0 - z2) / 2.0;
            debug_assert!(s2.abs() >= COLLAPSE_TOL, "gradient at collapse edge");
            let z1 = x[0] / (s2 * s3);

            let (lv, ld) = legendre_with_derivative(j1, z1);
            let (av, ad) = jacobi_with_derivative(2 * j1 + 1, j2, z2);
            let (bv, bd) = jacobi_with_derivative(2 * (j1 + j2) + 2, j3, x[2]);

            let s2j = s2.powi(j1 as i32);
            let s3j = s3.powi((j1 + j2) as i32);

            // Partials with respect to the cube coordinates z.
            let phi_z1 = ld * av * s2j * bv * s3j;
            let da = if j1 == 0 {
                ad * s2j
            } else {
                ad * s2j - 0.5 * j1 as f64 * av * s2.powi(j1 as i32 - 1)
            };
            let phi_z2 = lv * da * bv * s3j;
            let db = if j1 + j2 == 0 {
                bd * s3j
            } else {
                bd * s3j - 0.5 * (j1 + j2) as f64 * bv * s3.powi((j1 + j2) as i32 - 1)
            };
            let phi_z3 = lv * av * s2j * db;

            // Chain rule through the inverse Duffy map.
            let dx1 = phi_z1 / (s2 * s3);
            let dx2 = phi_z1 * z1 / (2.0 * s2 * s3) + phi_z2 / s3;
            let dx3 = phi_z1 * z1 / (4.0 * s2 * s3) + phi_z2 * z2 / (2.0 * s3) + phi_z3;

            (lv * av * s2j * bv * s3j, [dx1, dx2, dx3])
        }
        _ => unreachable!(),
    }
}

/// Graded, L²-orthonormal modal basis of P_p on the reference simplex.
///
/// Indices are ordered by total degree, lexicographically within each grade,
/// so that P_{p-1} occupies a contiguous leading block.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    pub dim: usize,
    pub degree: usize,
    pub indices: Vec<PolyIndex>,
    /// Per-index multiplier 1/‖Φ‖ turning Φ into a unit-norm function.
    pub normalizers: Vec<f64>,
}

impl ModalBasis {
    /// Build the basis of P_p on the `dim`-simplex.
    pub fn new(dim: usize, p: usize) -> Self {
        let mut indices = Vec::with_capacity(poly_space_dim(dim, p));
        for d in 0..=p {
            match dim {
                1 => indices.push(PolyIndex::new(1, [d, 0, 0])),
                2 => {
                    for j in 0..=d {
                        indices.push(PolyIndex::new(2, [j, d - j, 0]));
                    }
                }
                3 => {
                    for j1 in 0..=d {
                        for j2 in 0..=(d - j1) {
                            indices.push(PolyIndex::new(3, [j1, j2, d - j1 - j2]));
                        }
                    }
                }
                _ => panic!("unsupported dimension {dim}"),
            }
        }
        let normalizers = indices
            .iter()
            .map(|ix| 1.0 / koornwinder_norm_sq(ix).sqrt())
            .collect();
        ModalBasis {
            dim,
            degree: p,
            indices,
            normalizers,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of basis functions of total degree <= q.
    pub fn block_len(&self, q: usize) -> usize {
        poly_space_dim(self.dim, q.min(self.degree))
    }

    /// Normalized values of all basis functions at `x`.
    ///
    /// Shares the per-direction recurrences across indices, so the cost is
    /// O(len) per point rather than O(len · p).
    pub fn eval_all(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        let p = self.degree;
        match self.dim {
            1 => {
                legendre_row(p, x[0], out);
                for (v, n) in out.iter_mut().zip(&self.normalizers) {
                    *v *= n;
                }
            }
            2 => {
                let s = (1.0 - x[1]) / 2.0;
                if s.abs() < COLLAPSE_TOL {
                    for (k, ix) in self.indices.iter().enumerate() {
                        out[k] = koornwinder_eval(ix, x) * self.normalizers[k];
                    }
                    return;
                }
                let xi = x[0] / s;
                let mut lvals = vec![0.0; p + 1];
                legendre_row(p, xi, &mut lvals);
                let mut spow = vec![1.0; p + 1];
                for j in 1..=p {
                    spow[j] = spow[j - 1] * s;
                }
                let mut jtab: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
                for j in 0..=p {
                    jtab.push(jacobi_row(2 * j + 1, p - j, x[1]));
                }
                let mut k = 0;
                for d in 0..=p {
                    for j in 0..=d {
                        out[k] = lvals[j] * jtab[j][d - j] * spow[j] * self.normalizers[k];
                        k += 1;
                    }
                }
            }
            3 => {
                let s3 = (1.0 - x[2]) / 2.0;
                if s3.abs() < COLLAPSE_TOL {
                    for (k, ix) in self.indices.iter().enumerate() {
                        out[k] = koornwinder_eval(ix, x) * self.normalizers[k];
                    }
                    return;
                }
                let z2 = x[1] / s3;
                let s2 = (1.0 - z2) / 2.0;
                if s2.abs() < COLLAPSE_TOL {
                    for (k, ix) in self.indices.iter().enumerate() {
                        out[k] = koornwinder_eval(ix, x) * self.normalizers[k];
                    }
                    return;
                }
                let z1 = x[0] / (s2 * s3);
                let mut lvals = vec![0.0; p + 1];
                legendre_row(p, z1, &mut lvals);
                let mut s2pow = vec![1.0; p + 1];
                let mut s3pow = vec![1.0; p + 1];
                for j in 1..=p {
                    s2pow[j] = s2pow[j - 1] * s2;
                    s3pow[j] = s3pow[j - 1] * s3;
                }
                // atab[j1][j2] = J_{j2}^{2j1+1}(z2); btab[m][j3] with m = j1+j2.
                let mut atab: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
                let mut btab: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
                for m in 0..=p {
                    atab.push(jacobi_row(2 * m + 1, p - m, z2));
                    btab.push(jacobi_row(2 * m + 2, p - m, x[2]));
                }
                let mut k = 0;
                for d in 0..=p {
                    for j1 in 0..=d {
                        for j2 in 0..=(d - j1) {
                            let j3 = d - j1 - j2;
                            let m = j1 + j2;
                            out[k] = lvals[j1]
                                * atab[j1][j2]
                                * s2pow[j1]
                                * btab[m][j3]
                                * s3pow[m]
                                * self.normalizers[k];
                            k += 1;
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    /// Normalized values and gradients of all basis functions at `x`, with
    /// the same shared-recurrence layout as [`ModalBasis::eval_all`].
    pub fn eval_all_with_grad(&self, x: &[f64], vals: &mut [f64], grads: &mut [[f64; 3]]) {
        debug_assert_eq!(vals.len(), self.len());
        debug_assert_eq!(grads.len(), self.len());
        let p = self.degree;
        match self.dim {
            1 => {
                for (k, ix) in self.indices.iter().enumerate() {
                    let (v, d) = legendre_with_derivative(ix.indices[0], x[0]);
                    let n = self.normalizers[k];
                    vals[k] = v * n;
                    grads[k] = [d * n, 0.0, 0.0];
                }
            }
            2 => {
                let s = (1.0 - x[1]) / 2.0;
                debug_assert!(s.abs() >= COLLAPSE_TOL, "gradient at collapse vertex");
                let xi = x[0] / s;
                let (lv, ld) = legendre_row_with_derivative(p, xi);
                let mut spow = vec![1.0; p + 1];
                for j in 1..=p {
                    spow[j] = spow[j - 1] * s;
                }
                let mut jtab: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(p + 1);
                for j in 0..=p {
                    jtab.push(jacobi_row_with_derivative(2 * j + 1, p - j, x[1]));
                }
                let mut k = 0;
                for d in 0..=p {
                    for j in 0..=d {
                        let l = d - j;
                        let n = self.normalizers[k];
                        let (jv, jd) = (jtab[j].0[l], jtab[j].1[l]);
                        let sj = spow[j];
                        vals[k] = lv[j] * jv * sj * n;
                        let mut gy = lv[j] * jd * sj;
                        let gx;
                        if j == 0 {
                            gx = 0.0;
                        } else {
                            let sjm1 = spow[j - 1];
                            gx = ld[j] * jv * sjm1;
                            gy += 0.5 * xi * ld[j] * jv * sjm1 - 0.5 * j as f64 * lv[j] * jv * sjm1;
                        }
                        grads[k] = [gx * n, gy * n, 0.0];
                        k += 1;
                    }
                }
            }
            3 => {
                for (k, ix) in self.indices.iter().enumerate() {
                    let (v, g) = koornwinder_eval_with_grad(ix, x);
                    let n = self.normalizers[k];
                    vals[k] = v * n;
                    grads[k] = [g[0] * n, g[1] * n, g[2] * n];
                }
            }
            _ => unreachable!(),
        }
    }

    /// Value of a single normalized basis function.
    pub fn eval_one(&self, k: usize, x: &[f64]) -> f64 {
        koornwinder_eval(&self.indices[k], x) * self.normalizers[k]
    }
}
