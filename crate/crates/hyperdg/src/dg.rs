//! Assembly and solution of the upwind DG discretization of
//! β·∇u + c u = f with weakly imposed inflow data.
//!
//! Two solution paths are provided: an element sweep in upwind order for
//! admissible meshes with constant β, and a global block solve with pointwise
//! upwinding that also covers variable convection fields and inadmissible
//! meshes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{
    check_admissible, classify_facets, AdmissibilityReport, ElementMap, FacetClass,
    FacetClassification, Mesh, Verdict, CHARACTERISTIC_TOL,
};
use crate::orthopoly::ModalBasis;
use crate::projectors::ModalCoeffs;
use crate::quadrature::{
    composite_interval, gauss_legendre, refined_triangle_rule, simplex_rule, QuadRule,
};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> [f64; 2] + Send + Sync>;

/// Scalar coefficient field (reaction, source, boundary data).
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    Variable(ScalarFn),
}

impl ScalarField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant(v) => *v,
            ScalarField::Variable(f) => f(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ScalarField::Constant(_))
    }
}

/// Convection field with its divergence (needed for c̄ = c - ½ ∇·β).
#[derive(Clone)]
pub enum VectorField {
    Constant([f64; 2]),
    Variable {
        eval: VectorFn,
        divergence: ScalarFn,
    },
}

impl VectorField {
    pub fn eval(&self, x: &[f64]) -> [f64; 2] {
        match self {
            VectorField::Constant(b) => *b,
            VectorField::Variable { eval, .. } => eval(x),
        }
    }

    pub fn divergence(&self, x: &[f64]) -> f64 {
        match self {
            VectorField::Constant(_) => 0.0,
            VectorField::Variable { divergence, .. } => divergence(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, VectorField::Constant(_))
    }
}

/// Problem data for the steady advection–reaction equation on (-1,1)²-like
/// domains: β·∇u + c u = f in Ω, u = g on the inflow boundary.
#[derive(Clone)]
pub struct ProblemSpec {
    pub beta: VectorField,
    pub c: ScalarField,
    pub f: ScalarFn,
    pub g: ScalarFn,
    /// Positive lower bound witness for c̄ = c - ½ ∇·β.
    pub c_bar_lower: f64,
}

impl ProblemSpec {
    pub fn new(
        beta: VectorField,
        c: ScalarField,
        f: ScalarFn,
        g: ScalarFn,
        c_bar_lower: f64,
    ) -> Result<Self> {
        if !(c_bar_lower > 0.0) {
            return Err(Error::InvalidArgument(
                "well-posedness requires a positive lower bound for c - ½ div β".into(),
            ));
        }
        Ok(ProblemSpec {
            beta,
            c,
            f,
            g,
            c_bar_lower,
        })
    }

    /// c̄(x) = c(x) - ½ ∇·β(x).
    pub fn c_bar(&self, x: &[f64]) -> f64 {
        self.c.eval(x) - 0.5 * self.beta.divergence(x)
    }
}

/// Quadrature policy: exactness margin over 2p, and composite refinement
/// toward a vertical singularity line for data that demand it.
#[derive(Debug, Clone, Copy)]
pub struct QuadPolicy {
    pub exactness_margin: usize,
    pub singular_line_x: Option<f64>,
    /// Base refinement depth; the effective depth is max(levels, p).
    pub refine_levels: usize,
}

impl Default for QuadPolicy {
    fn default() -> Self {
        QuadPolicy {
            exactness_margin: 4,
            singular_line_x: None,
            refine_levels: 8,
        }
    }
}

impl QuadPolicy {
    pub fn smooth() -> Self {
        Self::default()
    }

    pub fn with_singular_line(line_x: f64) -> Self {
        QuadPolicy {
            singular_line_x: Some(line_x),
            ..Self::default()
        }
    }

    pub fn effective_levels(&self, p: usize) -> usize {
        self.refine_levels.max(p)
    }

    /// True if integrals over an element spanning `(xmin, xmax)` need the
    /// composite rule (the element meets the line with mass on its right,
    /// where the singular branch lives).
    pub fn element_is_singular(&self, xmin: f64, xmax: f64) -> bool {
        match self.singular_line_x {
            Some(line) => xmin <= line && xmax > line,
            None => false,
        }
    }
}

/// Parameters and weights (in [-1,1], weights summing to 2) for integrating
/// along the segment a-b, composite-refined toward the policy's singular
/// line when the segment meets it transversally.
pub(crate) fn facet_params(
    a: [f64; 2],
    b: [f64; 2],
    policy: &QuadPolicy,
    p: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    if let Some(line) = policy.singular_line_x {
        let (xa, xb) = (a[0], b[0]);
        let (lo, hi) = (xa.min(xb), xa.max(xb));
        if lo <= line && hi >= line && hi > lo {
            let u = (line - xa) / (xb - xa);
            let t_star = (2.0 * u - 1.0).clamp(-1.0, 1.0);
            return composite_interval(-1.0, 1.0, &[t_star], policy.effective_levels(p), n);
        }
    }
    let rule = gauss_legendre(n);
    (rule.points.iter().map(|p| p[0]).collect(), rule.weights)
}

/// Per-element modal coefficients of the discrete solution.
#[derive(Debug, Clone)]
pub struct DGSolution {
    pub p: usize,
    pub elements: Vec<ModalCoeffs>,
}

impl DGSolution {
    /// Global L² norm (the element bases are orthonormal).
    pub fn l2_norm(&self) -> f64 {
        self.elements
            .iter()
            .map(|c| c.values.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Sweep,
    GaussSeidel,
    Direct,
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub method: SolveMethod,
    pub iterations: usize,
    /// Relative residual ‖b - A u‖ / ‖b‖ of the returned solution.
    pub residual: f64,
}

/// Shared tables for one (mesh, spec, degree, policy) combination.
pub struct Assembler<'a> {
    pub mesh: &'a Mesh,
    pub spec: &'a ProblemSpec,
    pub p: usize,
    pub policy: QuadPolicy,
    pub basis: ModalBasis,
    pub maps: Vec<ElementMap>,
    pub class: FacetClassification,
    vol_rule: QuadRule,
    vol_vals: DMatrix<f64>,
    /// Reference-gradient tables per direction.
    vol_gx: DMatrix<f64>,
    vol_gy: DMatrix<f64>,
    /// S_d[i][j] = ∫ ∂̂_d φ̂_j φ̂_i over the reference triangle.
    sx: DMatrix<f64>,
    sy: DMatrix<f64>,
    /// ∫_{F̂_k} φ̂_j φ̂_i over reference facet k.
    ref_facet_mass: [DMatrix<f64>; 3],
    n_1d: usize,
}

impl<'a> Assembler<'a> {
    pub fn new(mesh: &'a Mesh, spec: &'a ProblemSpec, p: usize, policy: QuadPolicy) -> Self {
        let basis = ModalBasis::new(2, p);
        let n = basis.len();
        let exactness = 2 * p + policy.exactness_margin;
        let vol_rule = simplex_rule(2, exactness);
        let nq = vol_rule.len();
        let mut vol_vals = DMatrix::zeros(nq, n);
        let mut vol_gx = DMatrix::zeros(nq, n);
        let mut vol_gy = DMatrix::zeros(nq, n);
        let mut vals = vec![0.0; n];
        let mut grads = vec![[0.0; 3]; n];
        for (q, pt) in vol_rule.points.iter().enumerate() {
            basis.eval_all_with_grad(&pt[..2], &mut vals, &mut grads);
            for k in 0..n {
                vol_vals[(q, k)] = vals[k];
                vol_gx[(q, k)] = grads[k][0];
                vol_gy[(q, k)] = grads[k][1];
            }
        }
        let w = DVector::from_iterator(nq, vol_rule.weights.iter().copied());
        let wvals = {
            let mut m = vol_vals.clone();
            for (q, mut row) in m.row_iter_mut().enumerate() {
                row *= w[q];
            }
            m
        };
        let sx = wvals.transpose() * &vol_gx;
        let sy = wvals.transpose() * &vol_gy;

        let n_1d = (exactness + 2).div_ceil(2);
        let line = gauss_legendre(n_1d);
        let refsx = crate::orthopoly::ReferenceSimplex::new(2);
        let ref_verts = refsx.vertices();
        let mut ref_facet_mass = [
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
        ];
        for fid in 0..3 {
            let ids = refsx.facet_vertices(fid);
            let (a, b) = (ref_verts[ids[0]], ref_verts[ids[1]]);
            let half_len = refsx.facet_measure(fid) / 2.0;
            let mut table = DMatrix::zeros(line.len(), n);
            let mut row = vec![0.0; n];
            for (q, t) in line.points.iter().enumerate() {
                let u = (t[0] + 1.0) / 2.0;
                let pt = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
                basis.eval_all(&pt, &mut row);
                for k in 0..n {
                    table[(q, k)] = row[k];
                }
            }
            let mut wt = table.clone();
            for (q, mut r) in wt.row_iter_mut().enumerate() {
                r *= line.weights[q] * half_len;
            }
            ref_facet_mass[fid] = wt.transpose() * &table;
        }

        let maps = (0..mesh.n_elements())
            .map(|e| ElementMap::natural(mesh, e))
            .collect();
        let class = classify_facets(mesh, &spec.beta);
        Assembler {
            mesh,
            spec,
            p,
            policy,
            basis,
            maps,
            class,
            vol_rule,
            vol_vals,
            vol_gx,
            vol_gy,
            sx,
            sy,
            ref_facet_mass,
            n_1d,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_elements() * self.basis.len()
    }

    /// Values of the element-e basis (physical normalization) at physical
    /// points, as an (n_points x N) matrix.
    fn basis_at(&self, e: usize, points: &[[f64; 2]]) -> DMatrix<f64> {
        let n = self.basis.len();
        let map = &self.maps[e];
        let scale = map.det.sqrt().recip();
        let mut out = DMatrix::zeros(points.len(), n);
        let mut row = vec![0.0; n];
        for (q, x) in points.iter().enumerate() {
            let xr = map.to_reference(x);
            self.basis.eval_all(&xr[..2], &mut row);
            for k in 0..n {
                out[(q, k)] = row[k] * scale;
            }
        }
        out
    }

    /// Solution values of element `e` at physical points.
    pub fn eval_element(&self, coeffs: &ModalCoeffs, e: usize, points: &[[f64; 2]]) -> Vec<f64> {
        let table = self.basis_at(e, points);
        points
            .iter()
            .enumerate()
            .map(|(q, _)| {
                coeffs
                    .values
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * table[(q, k)])
                    .sum()
            })
            .collect()
    }

    /// Volume part of the local operator:
    /// M_ij = ∫_T (β·∇φ_j + c φ_j) φ_i, in reference form.
    fn volume_matrix(&self, e: usize) -> DMatrix<f64> {
        let n = self.basis.len();
        let map = &self.maps[e];
        match (&self.spec.beta, &self.spec.c) {
            (VectorField::Constant(b), ScalarField::Constant(c)) => {
                let bh = map.pull_vector(b);
                let mut m = &self.sx * bh[0] + &self.sy * bh[1];
                for i in 0..n {
                    m[(i, i)] += c;
                }
                m
            }
            _ => {
                let nq = self.vol_rule.len();
                // Rows of C carry w_q (β̂·∇̂φ_j + c φ_j) at point q.
                let mut cmat = DMatrix::zeros(nq, n);
                for q in 0..nq {
                    let pt = self.vol_rule.points[q];
                    let phys = map.to_physical(&pt[..2]);
                    let b = self.spec.beta.eval(&phys[..2]);
                    let bh = map.pull_vector(&b);
                    let cv = self.spec.c.eval(&phys[..2]);
                    let w = self.vol_rule.weights[q];
                    for j in 0..n {
                        cmat[(q, j)] = w
                            * (bh[0] * self.vol_gx[(q, j)]
                                + bh[1] * self.vol_gy[(q, j)]
                                + cv * self.vol_vals[(q, j)]);
                    }
                }
                self.vol_vals.transpose() * cmat
            }
        }
    }

    /// Volume load vector ∫_T f φ_i, with composite refinement on elements
    /// meeting the singular line.
    fn volume_rhs(&self, e: usize) -> DVector<f64> {
        let n = self.basis.len();
        let map = &self.maps[e];
        let (xmin, xmax) = self.mesh.x_range(e);
        if self.policy.element_is_singular(xmin, xmax) {
            let line = self.policy.singular_line_x.unwrap();
            let rule = refined_triangle_rule(
                &self.mesh.coords(e),
                line,
                self.policy.effective_levels(self.p),
                self.n_1d,
                self.vol_rule.exactness,
            );
            let scale = map.det.sqrt().recip();
            let mut out = DVector::zeros(n);
            let mut row = vec![0.0; n];
            for (pt, w) in rule.points.iter().zip(&rule.weights) {
                let fx = (self.spec.f)(&pt[..2]);
                let xr = map.to_reference(&pt[..2]);
                self.basis.eval_all(&xr[..2], &mut row);
                for k in 0..n {
                    out[k] += w * fx * row[k] * scale;
                }
            }
            out
        } else {
            let scale = map.det.sqrt();
            let mut out = DVector::zeros(n);
            for (q, pt) in self.vol_rule.points.iter().enumerate() {
                let phys = map.to_physical(&pt[..2]);
                let fx = (self.spec.f)(&phys[..2]);
                let w = self.vol_rule.weights[q] * fx * scale;
                for k in 0..self.basis.len() {
                    out[k] += w * self.vol_vals[(q, k)];
                }
            }
            out
        }
    }

    /// Canonical quadrature for a facet: physical points, physical weights
    /// (including the length factor), and n·β at the points with the outward
    /// normal of `e`.
    fn facet_quadrature(
        &self,
        e: usize,
        local: usize,
        refine: bool,
    ) -> (Vec<[f64; 2]>, Vec<f64>, Vec<f64>) {
        let fid = self.mesh.element_facets[e][local];
        let f = &self.mesh.facets[fid];
        let a = self.mesh.vertices[f.vertices[0]];
        let b = self.mesh.vertices[f.vertices[1]];
        let (params, wparams) = if refine {
            facet_params(a, b, &self.policy, self.p, self.n_1d)
        } else {
            let rule = gauss_legendre(self.n_1d);
            (
                rule.points.iter().map(|p| p[0]).collect(),
                rule.weights.clone(),
            )
        };
        let points = self.mesh.facet_points(f, &params);
        let half_len = self.mesh.facet_length(f) / 2.0;
        let weights: Vec<f64> = wparams.iter().map(|w| w * half_len).collect();
        let normal = self.mesh.outward_normal(e, local);
        let nbeta = points
            .iter()
            .map(|x| {
                let bv = self.spec.beta.eval(x);
                normal[0] * bv[0] + normal[1] * bv[1]
            })
            .collect();
        (points, weights, nbeta)
    }

    /// Local system for one element: volume terms plus inflow-facet upwind
    /// terms. `upwind` supplies the trace of the upwind state at the given
    /// physical points of a local inflow facet (neighbor solution, or g on
    /// the inflow boundary); a missing trace is a hard error.
    pub fn local_system(
        &self,
        e: usize,
        upwind: &mut dyn FnMut(usize, &[[f64; 2]]) -> Option<Vec<f64>>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.basis.len();
        let map = &self.maps[e];
        let mut a = self.volume_matrix(e);
        let mut b = self.volume_rhs(e);
        for local in 0..3 {
            if self.class.classes[e][local] != FacetClass::Inflow {
                continue;
            }
            let fid = self.mesh.element_facets[e][local];
            let is_boundary = self.mesh.facets[fid].is_boundary();
            let (points, weights, nbeta) = self.facet_quadrature(e, local, is_boundary);
            // Self term: + |n·β| u v on the inflow facet. With constant β the
            // reference facet mass gives it exactly; variable β goes through
            // quadrature below.
            if self.spec.beta.is_constant() {
                let s = -nbeta[0]; // positive on inflow facets
                let scale = s * map.facet_scale[local] / map.det;
                a += &self.ref_facet_mass[local] * scale;
            } else {
                let table = self.basis_at(e, &points);
                let mut wt = table.clone();
                for (q, mut row) in wt.row_iter_mut().enumerate() {
                    row *= weights[q] * (-nbeta[q]).max(0.0);
                }
                a += wt.transpose() * &table;
            }
            let traces = upwind(local, &points).ok_or(Error::MissingUpwindTrace {
                element: e,
                facet: local,
            })?;
            let table = self.basis_at(e, &points);
            for q in 0..points.len() {
                let w = weights[q] * (-nbeta[q]).max(0.0) * traces[q];
                for i in 0..n {
                    b[i] += w * table[(q, i)];
                }
            }
        }
        Ok((a, b))
    }

    /// Element sweep in upwind order. The report must carry a verdict of
    /// `Admissible` and an upwind order.
    pub fn solve_sweep(&self, report: &AdmissibilityReport) -> Result<DGSolution> {
        if report.verdict != Verdict::Admissible {
            return Err(Error::NotAdmissible(match report.verdict {
                Verdict::NotApplicable => "variable convection field; use the global solver".into(),
                _ => match &report.cycle {
                    Some(cyc) => format!("upwind ordering has a cycle through elements {cyc:?}"),
                    None => "assumptions (A1)/(A2) fail".into(),
                },
            }));
        }
        let order = report
            .upwind_order
            .as_ref()
            .ok_or_else(|| Error::NotAdmissible("no upwind order".into()))?;
        let mut solution: Vec<Option<ModalCoeffs>> = vec![None; self.mesh.n_elements()];
        for &e in order {
            let (a, b) = self.local_system(e, &mut |local, points| {
                let fid = self.mesh.element_facets[e][local];
                let f = &self.mesh.facets[fid];
                match f.neighbor {
                    None => Some(points.iter().map(|x| (self.spec.g)(x)).collect()),
                    Some(_) => {
                        let (nbr, _) = other_side(f, e);
                        solution[nbr]
                            .as_ref()
                            .map(|c| self.eval_element(c, nbr, points))
                    }
                }
            })?;
            let sol = a
                .lu()
                .solve(&b)
                .ok_or(Error::SingularLocalSystem { element: e })?;
            solution[e] = Some(ModalCoeffs {
                dim: 2,
                degree: self.p,
                values: sol.iter().copied().collect(),
            });
        }
        Ok(DGSolution {
            p: self.p,
            elements: solution
                .into_iter()
                .map(|c| c.expect("sweep visits every element"))
                .collect(),
        })
    }

    /// Assemble the global block system with pointwise upwind fluxes.
    fn global_system(&self) -> BlockSystem {
        let ne = self.mesh.n_elements();
        let n = self.basis.len();
        let mut diag: Vec<DMatrix<f64>> = (0..ne).map(|e| self.volume_matrix(e)).collect();
        let mut off: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); ne];
        let mut rhs: Vec<DVector<f64>> = (0..ne).map(|e| self.volume_rhs(e)).collect();

        for f in &self.mesh.facets {
            let o = f.owner;
            let (points, weights, nbeta) = self.facet_quadrature(o, f.owner_local, f.is_boundary());
            let beta_scale: Vec<f64> = points
                .iter()
                .map(|x| {
                    let b = self.spec.beta.eval(x);
                    (b[0] * b[0] + b[1] * b[1]).sqrt()
                })
                .collect();
            match f.neighbor {
                None => {
                    // Boundary: inflow points add |n·β| (u, v) and the g load.
                    let table = self.basis_at(o, &points);
                    let mut wt = table.clone();
                    let mut any = false;
                    for (q, mut row) in wt.row_iter_mut().enumerate() {
                        let s = if nbeta[q] < -CHARACTERISTIC_TOL * beta_scale[q] {
                            any = true;
                            -nbeta[q]
                        } else {
                            0.0
                        };
                        row *= weights[q] * s;
                    }
                    if any {
                        diag[o] += wt.transpose() * &table;
                        for q in 0..points.len() {
                            let s = if nbeta[q] < -CHARACTERISTIC_TOL * beta_scale[q] {
                                -nbeta[q]
                            } else {
                                continue;
                            };
                            let g = (self.spec.g)(&points[q]);
                            let w = weights[q] * s * g;
                            for i in 0..n {
                                rhs[o][i] += w * table[(q, i)];
                            }
                        }
                    }
                }
                Some((nb, _)) => {
                    let to = self.basis_at(o, &points);
                    let tn = self.basis_at(nb, &points);
                    // Owner-inflow points couple owner rows; neighbor-inflow
                    // points couple neighbor rows.
                    let mut w_owner = vec![0.0; points.len()];
                    let mut w_nbr = vec![0.0; points.len()];
                    let mut any_o = false;
                    let mut any_n = false;
                    for q in 0..points.len() {
                        let tol = CHARACTERISTIC_TOL * beta_scale[q];
                        if nbeta[q] < -tol {
                            w_owner[q] = weights[q] * (-nbeta[q]);
                            any_o = true;
                        } else if nbeta[q] > tol {
                            w_nbr[q] = weights[q] * nbeta[q];
                            any_n = true;
                        }
                    }
                    if any_o {
                        let mut wt = to.clone();
                        for (q, mut row) in wt.row_iter_mut().enumerate() {
                            row *= w_owner[q];
                        }
                        diag[o] += wt.transpose() * &to;
                        off[o].push((nb, -(wt.transpose() * &tn)));
                    }
                    if any_n {
                        let mut wt = tn.clone();
                        for (q, mut row) in wt.row_iter_mut().enumerate() {
                            row *= w_nbr[q];
                        }
                        diag[nb] += wt.transpose() * &tn;
                        off[nb].push((o, -(wt.transpose() * &to)));
                    }
                }
            }
        }
        // Merge duplicate off-diagonal blocks (an element pair can share at
        // most one facet on conforming meshes, but keep this robust).
        for row in &mut off {
            row.sort_by_key(|(j, _)| *j);
            let mut merged: Vec<(usize, DMatrix<f64>)> = Vec::new();
            for (j, m) in row.drain(..) {
                match merged.last_mut() {
                    Some((jj, mm)) if *jj == j => *mm += m,
                    _ => merged.push((j, m)),
                }
            }
            *row = merged;
        }
        BlockSystem { diag, off, rhs }
    }

    /// Global solve: block Gauss–Seidel in an approximate upwind order with a
    /// direct block-sparse LU fallback.
    pub fn solve_global(&self) -> Result<(DGSolution, SolveStats)> {
        let system = self.global_system();
        let ne = self.mesh.n_elements();
        // Approximate upwind order: barycenters sorted along the mean of β
        // over the elements.
        let mut mean_beta = [0.0f64; 2];
        for e in 0..ne {
            let b = self.spec.beta.eval(&self.mesh.barycenter(e));
            mean_beta[0] += b[0];
            mean_beta[1] += b[1];
        }
        let mut order: Vec<usize> = (0..ne).collect();
        let key = |e: usize| {
            let bc = self.mesh.barycenter(e);
            bc[0] * mean_beta[0] + bc[1] * mean_beta[1]
        };
        order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());

        let (x, stats) = system.solve(&order)?;
        let n = self.basis.len();
        let elements = (0..ne)
            .map(|e| ModalCoeffs {
                dim: 2,
                degree: self.p,
                values: x[e * n..(e + 1) * n].to_vec(),
            })
            .collect();
        Ok((
            DGSolution {
                p: self.p,
                elements,
            },
            stats,
        ))
    }

    /// Residual vector b - A u of the global discrete system, evaluated
    /// matrix-free (facet couplings act through point values of u).
    pub fn residual_vector(&self, sol: &DGSolution) -> Vec<f64> {
        let ne = self.mesh.n_elements();
        let n = self.basis.len();
        let mut r = vec![0.0; ne * n];
        for e in 0..ne {
            let m = self.volume_matrix(e);
            let b = self.volume_rhs(e);
            let c = DVector::from_iterator(n, sol.elements[e].values.iter().copied());
            let au = m * c;
            for i in 0..n {
                r[e * n + i] = b[i] - au[i];
            }
        }
        for f in &self.mesh.facets {
            let o = f.owner;
            let (points, weights, nbeta) = self.facet_quadrature(o, f.owner_local, f.is_boundary());
            let beta_scale: Vec<f64> = points
                .iter()
                .map(|x| {
                    let b = self.spec.beta.eval(x);
                    (b[0] * b[0] + b[1] * b[1]).sqrt()
                })
                .collect();
            let uo = self.eval_element(&sol.elements[o], o, &points);
            match f.neighbor {
                None => {
                    let table = self.basis_at(o, &points);
                    for q in 0..points.len() {
                        if nbeta[q] < -CHARACTERISTIC_TOL * beta_scale[q] {
                            let g = (self.spec.g)(&points[q]);
                            let w = weights[q] * (-nbeta[q]) * (g - uo[q]);
                            for i in 0..n {
                                r[o * n + i] += w * table[(q, i)];
                            }
                        }
                    }
                }
                Some(_) => {
                    let (nb, _) = other_side(f, o);
                    let un = self.eval_element(&sol.elements[nb], nb, &points);
                    let to = self.basis_at(o, &points);
                    let tn = self.basis_at(nb, &points);
                    for q in 0..points.len() {
                        let tol = CHARACTERISTIC_TOL * beta_scale[q];
                        if nbeta[q] < -tol {
                            let w = weights[q] * (-nbeta[q]) * (un[q] - uo[q]);
                            for i in 0..n {
                                r[o * n + i] += w * to[(q, i)];
                            }
                        } else if nbeta[q] > tol {
                            let w = weights[q] * nbeta[q] * (uo[q] - un[q]);
                            for i in 0..n {
                                r[nb * n + i] += w * tn[(q, i)];
                            }
                        }
                    }
                }
            }
        }
        r
    }

    /// Relative residual ‖b - A u‖ / ‖b‖.
    pub fn relative_residual(&self, sol: &DGSolution) -> f64 {
        let r = self.residual_vector(sol);
        let mut bnorm = 0.0;
        for e in 0..self.mesh.n_elements() {
            let b = self.volume_rhs(e);
            bnorm += b.iter().map(|v| v * v).sum::<f64>();
        }
        // Include boundary loads in the reference norm.
        for f in &self.mesh.facets {
            if !f.is_boundary() {
                continue;
            }
            let o = f.owner;
            let (points, weights, nbeta) = self.facet_quadrature(o, f.owner_local, true);
            let table = self.basis_at(o, &points);
            let n = self.basis.len();
            let mut load = vec![0.0; n];
            for q in 0..points.len() {
                if nbeta[q] < 0.0 {
                    let w = weights[q] * (-nbeta[q]) * (self.spec.g)(&points[q]);
                    for i in 0..n {
                        load[i] += w * table[(q, i)];
                    }
                }
            }
            bnorm += load.iter().map(|v| v * v).sum::<f64>();
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        rnorm / bnorm.sqrt().max(f64::MIN_POSITIVE)
    }

    /// The stability triple (c̄₀ ‖u‖², Σ_T ‖|n·β|^{1/2} jump‖², ‖|n·β|^{1/2} u‖²_Γ).
    pub fn stability_functional(&self, sol: &DGSolution) -> (f64, f64, f64) {
        let l2 = sol.l2_norm();
        let part1 = self.spec.c_bar_lower * l2 * l2;
        let mut jumps = 0.0;
        let mut boundary = 0.0;
        for f in &self.mesh.facets {
            let o = f.owner;
            let (points, weights, nbeta) = self.facet_quadrature(o, f.owner_local, false);
            let uo = self.eval_element(&sol.elements[o], o, &points);
            match f.neighbor {
                None => {
                    for q in 0..points.len() {
                        boundary += weights[q] * nbeta[q].abs() * uo[q] * uo[q];
                    }
                }
                Some(_) => {
                    let (nb, _) = other_side(f, o);
                    let un = self.eval_element(&sol.elements[nb], nb, &points);
                    for q in 0..points.len() {
                        let jump = uo[q] - un[q];
                        jumps += weights[q] * nbeta[q].abs() * jump * jump;
                    }
                }
            }
        }
        (part1, jumps, boundary)
    }

    /// |B(v,v) - (‖c̄^{1/2} v‖² + ½ Σ jumps + ½ boundary)| for a discrete
    /// function v. Requires constant β.
    pub fn energy_identity_check(&self, v: &DGSolution) -> Result<f64> {
        if !self.spec.beta.is_constant() {
            return Err(Error::InvalidArgument(
                "the energy identity requires a constant convection field".into(),
            ));
        }
        let system = self.global_system();
        let n = self.basis.len();
        let ne = self.mesh.n_elements();
        let x: Vec<DVector<f64>> = (0..ne)
            .map(|e| DVector::from_iterator(n, v.elements[e].values.iter().copied()))
            .collect();
        let mut bvv = 0.0;
        for e in 0..ne {
            let mut ax = &system.diag[e] * &x[e];
            for (j, blk) in &system.off[e] {
                ax += blk * &x[*j];
            }
            bvv += x[e].dot(&ax);
        }
        // Reaction part through quadrature (c̄ = c for constant β).
        let mut reaction = 0.0;
        for e in 0..ne {
            let map = &self.maps[e];
            match &self.spec.c {
                ScalarField::Constant(c) => {
                    let norm2: f64 = v.elements[e].values.iter().map(|v| v * v).sum();
                    reaction += c * norm2;
                }
                ScalarField::Variable(_) => {
                    // ∫ c̄ v²: the det from dx cancels the two det^{-1/2}
                    // normalizations.
                    for (q, pt) in self.vol_rule.points.iter().enumerate() {
                        let phys = map.to_physical(&pt[..2]);
                        let cb = self.spec.c_bar(&phys[..2]);
                        let mut uv = 0.0;
                        for k in 0..n {
                            uv += v.elements[e].values[k] * self.vol_vals[(q, k)];
                        }
                        reaction += self.vol_rule.weights[q] * cb * uv * uv;
                    }
                }
            }
        }
        let (_, jumps, boundary) = self.stability_functional(v);
        let energy = reaction + 0.5 * jumps + 0.5 * boundary;
        Ok((bvv - energy).abs())
    }
}

fn other_side(f: &crate::mesh::Facet, e: usize) -> (usize, usize) {
    if f.owner == e {
        f.neighbor.expect("interior facet")
    } else {
        (f.owner, f.owner_local)
    }
}

/// Block-sparse linear system with per-element blocks.
struct BlockSystem {
    diag: Vec<DMatrix<f64>>,
    off: Vec<Vec<(usize, DMatrix<f64>)>>,
    rhs: Vec<DVector<f64>>,
}

impl BlockSystem {
    fn rhs_norm(&self) -> f64 {
        self.rhs
            .iter()
            .map(|b| b.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    fn residual_norm(&self, x: &[DVector<f64>]) -> f64 {
        let mut acc = 0.0;
        for e in 0..self.diag.len() {
            let mut r = self.rhs[e].clone();
            r -= &self.diag[e] * &x[e];
            for (j, blk) in &self.off[e] {
                r -= blk * &x[*j];
            }
            acc += r.iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    /// Gauss–Seidel in the given order, falling back to a direct block
    /// LU after 500 sweeps without a relative residual below 1e-10.
    fn solve(&self, order: &[usize]) -> Result<(Vec<f64>, SolveStats)> {
        let ne = self.diag.len();
        let n = if ne > 0 { self.diag[0].nrows() } else { 0 };
        let lus: Vec<_> = self.diag.iter().map(|d| d.clone().lu()).collect();
        let bnorm = self.rhs_norm().max(f64::MIN_POSITIVE);
        let mut x: Vec<DVector<f64>> = (0..ne).map(|_| DVector::zeros(n)).collect();
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut rel = f64::INFINITY;
        for it in 1..=500 {
            for &e in order {
                let mut b = self.rhs[e].clone();
                for (j, blk) in &self.off[e] {
                    b -= blk * &x[*j];
                }
                x[e] = lus[e]
                    .solve(&b)
                    .ok_or(Error::SingularLocalSystem { element: e })?;
            }
            iterations = it;
            rel = self.residual_norm(&x) / bnorm;
            history.push(rel);
            if rel < 1e-12 {
                break;
            }
            if it == 500 && rel >= 1e-10 {
                // Direct fallback.
                let xd = self.solve_direct(order)?;
                let reld = self.residual_norm(&xd) / bnorm;
                if reld >= 1e-10 {
                    history.push(reld);
                    return Err(Error::SolverDiverged {
                        residual: reld,
                        iterations: it,
                        history,
                    });
                }
                let flat = flatten(&xd, order.len(), n);
                return Ok((
                    flat,
                    SolveStats {
                        method: SolveMethod::Direct,
                        iterations: it,
                        residual: reld,
                    },
                ));
            }
        }
        let flat = flatten(&x, ne, n);
        Ok((
            flat,
            SolveStats {
                method: SolveMethod::GaussSeidel,
                iterations,
                residual: rel,
            },
        ))
    }

    /// Block-sparse LU with fill-in, eliminating in the given order.
    fn solve_direct(&self, order: &[usize]) -> Result<Vec<DVector<f64>>> {
        use std::collections::BTreeMap;
        let ne = self.diag.len();
        let mut pos = vec![0usize; ne];
        for (k, &e) in order.iter().enumerate() {
            pos[e] = k;
        }
        // Rows in elimination order, columns indexed by elimination position.
        let mut rows: Vec<BTreeMap<usize, DMatrix<f64>>> = vec![BTreeMap::new(); ne];
        let mut rhs: Vec<DVector<f64>> = order.iter().map(|&e| self.rhs[e].clone()).collect();
        for (k, &e) in order.iter().enumerate() {
            rows[k].insert(k, self.diag[e].clone());
            for (j, blk) in &self.off[e] {
                rows[k].insert(pos[*j], blk.clone());
            }
        }
        for k in 0..ne {
            let pivot = rows[k]
                .get(&k)
                .cloned()
                .ok_or(Error::SingularLocalSystem { element: order[k] })?;
            let inv = pivot
                .lu()
                .try_inverse()
                .ok_or(Error::SingularLocalSystem { element: order[k] })?;
            let row_k: Vec<(usize, DMatrix<f64>)> = rows[k]
                .range((k + 1)..)
                .map(|(j, m)| (*j, m.clone()))
                .collect();
            let rhs_k = rhs[k].clone();
            for i in (k + 1)..ne {
                let Some(aik) = rows[i].remove(&k) else {
                    continue;
                };
                let l = &aik * &inv;
                let lb = &l * &rhs_k;
                rhs[i] -= lb;
                for (j, bkj) in &row_k {
                    let update = &l * bkj;
                    rows[i]
                        .entry(*j)
                        .and_modify(|m| *m -= &update)
                        .or_insert_with(|| -update);
                }
            }
        }
        // Back substitution.
        let n = if ne > 0 { self.rhs[0].len() } else { 0 };
        let mut y: Vec<DVector<f64>> = vec![DVector::zeros(n); ne];
        for k in (0..ne).rev() {
            let mut b = rhs[k].clone();
            for (j, m) in rows[k].range((k + 1)..) {
                b -= m * &y[*j];
            }
            let pivot = rows[k].get(&k).unwrap();
            y[k] = pivot
                .clone()
                .lu()
                .solve(&b)
                .ok_or(Error::SingularLocalSystem { element: order[k] })?;
        }
        // Undo the permutation.
        let mut x: Vec<DVector<f64>> = vec![DVector::zeros(n); ne];
        for (k, &e) in order.iter().enumerate() {
            x[e] = y[k].clone();
        }
        Ok(x)
    }
}

fn flatten(x: &[DVector<f64>], ne: usize, n: usize) -> Vec<f64> {
    let mut flat = vec![0.0; ne * n];
    for e in 0..ne {
        for i in 0..n {
            flat[e * n + i] = x[e][i];
        }
    }
    flat
}

/// Report comparing the stability triple against the a-priori bound, in both
/// the squared form c̄₀^{-1}‖f‖² + 2‖g‖² and the printed unsquared-‖f‖ form.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub parts: (f64, f64, f64),
    pub lhs_total: f64,
    pub f_l2: f64,
    pub g_l2: f64,
    pub rhs_squared: f64,
    pub rhs_printed: f64,
    pub ok_squared: bool,
    pub ok_printed: bool,
}

/// Evaluate the stability bound for a computed solution, with `margin` slack
/// on the comparisons.
pub fn stability_report(asm: &Assembler, sol: &DGSolution, margin: f64) -> StabilityReport {
    let parts = asm.stability_functional(sol);
    let lhs_total = parts.0 + parts.1 + parts.2;
    // ‖f‖ over the domain and ‖g‖ over the inflow boundary by quadrature.
    let mut f_sq = 0.0;
    for e in 0..asm.mesh.n_elements() {
        let map = &asm.maps[e];
        for (pt, w) in asm.vol_rule.points.iter().zip(&asm.vol_rule.weights) {
            let phys = map.to_physical(&pt[..2]);
            let v = (asm.spec.f)(&phys[..2]);
            f_sq += w * map.det * v * v;
        }
    }
    let mut g_sq = 0.0;
    for f in &asm.mesh.facets {
        if !f.is_boundary() {
            continue;
        }
        let o = f.owner;
        let (points, weights, nbeta) = asm.facet_quadrature(o, f.owner_local, false);
        for q in 0..points.len() {
            if nbeta[q] < 0.0 {
                let g = (asm.spec.g)(&points[q]);
                g_sq += weights[q] * g * g;
            }
        }
    }
    let cb = asm.spec.c_bar_lower;
    let rhs_squared = f_sq / cb + 2.0 * g_sq;
    let rhs_printed = f_sq.sqrt() / cb + 2.0 * g_sq;
    StabilityReport {
        parts,
        lhs_total,
        f_l2: f_sq.sqrt(),
        g_l2: g_sq.sqrt(),
        rhs_squared,
        rhs_printed,
        ok_squared: lhs_total <= rhs_squared + margin,
        ok_printed: lhs_total <= rhs_printed + margin,
    }
}

/// Element sweep entry point (see [`Assembler::solve_sweep`]).
pub fn solve_sweep(
    mesh: &Mesh,
    p: usize,
    spec: &ProblemSpec,
    report: &AdmissibilityReport,
    policy: QuadPolicy,
) -> Result<DGSolution> {
    Assembler::new(mesh, spec, p, policy).solve_sweep(report)
}

/// Global solve entry point (see [`Assembler::solve_global`]).
pub fn solve_global(
    mesh: &Mesh,
    p: usize,
    spec: &ProblemSpec,
    policy: QuadPolicy,
) -> Result<(DGSolution, SolveStats)> {
    Assembler::new(mesh, spec, p, policy).solve_global()
}

/// Stability triple entry point (see [`Assembler::stability_functional`]).
pub fn stability_functional(
    mesh: &Mesh,
    sol: &DGSolution,
    spec: &ProblemSpec,
    policy: QuadPolicy,
) -> (f64, f64, f64) {
    Assembler::new(mesh, spec, sol.p, policy).stability_functional(sol)
}

/// Energy identity residual entry point (constant β only).
pub fn energy_identity_check(
    mesh: &Mesh,
    v: &DGSolution,
    spec: &ProblemSpec,
    policy: QuadPolicy,
) -> Result<f64> {
    Assembler::new(mesh, spec, v.p, policy).energy_identity_check(v)
}

/// Convenience: admissibility report for a problem's convection field.
pub fn admissibility(mesh: &Mesh, spec: &ProblemSpec) -> AdmissibilityReport {
    check_admissible(mesh, &spec.beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{gen_structured, Diagonal};

    fn constant_spec(beta: [f64; 2], c: f64, f: ScalarFn, g: ScalarFn) -> ProblemSpec {
        ProblemSpec::new(
            VectorField::Constant(beta),
            ScalarField::Constant(c),
            f,
            g,
            c,
        )
        .unwrap()
    }

    fn reference_triangle_mesh() -> Mesh {
        crate::mesh::parse_mesh("simplexmesh 2\n3 1\n-1 -1\n1 -1\n0 1\n0 1 2\n").unwrap()
    }

    #[test]
    fn p0_local_matrix_is_reaction_plus_outflow_mass() {
        // Hand integration on the reference triangle with β = (1,1), c = 1:
        // the single entry is 1 (reaction) + 3/2 (outflow flux mass) = 5/2.
        let mesh = reference_triangle_mesh();
        let spec = constant_spec(
            [1.0, 1.0],
            1.0,
            Arc::new(|_: &[f64]| 1.0),
            Arc::new(|_: &[f64]| 1.0),
        );
        let asm = Assembler::new(&mesh, &spec, 0, QuadPolicy::smooth());
        let (a, _) = asm
            .local_system(0, &mut |_, points| Some(vec![1.0; points.len()]))
            .unwrap();
        assert!((a[(0, 0)] - 2.5).abs() < 1e-12, "got {}", a[(0, 0)]);
        // Zero data zeroes the load.
        let zero = constant_spec(
            [1.0, 1.0],
            1.0,
            Arc::new(|_: &[f64]| 0.0),
            Arc::new(|_: &[f64]| 0.0),
        );
        let asm0 = Assembler::new(&mesh, &zero, 2, QuadPolicy::smooth());
        let (_, b) = asm0
            .local_system(0, &mut |_, points| Some(vec![0.0; points.len()]))
            .unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn problem_spec_requires_positive_reaction_bound() {
        let zero: ScalarFn = Arc::new(|_: &[f64]| 0.0);
        assert!(ProblemSpec::new(
            VectorField::Constant([1.0, 1.0]),
            ScalarField::Constant(1.0),
            zero.clone(),
            zero,
            0.0,
        )
        .is_err());
    }

    #[test]
    fn stability_functional_edge_cases() {
        let mesh = gen_structured(4, 4, Diagonal::AgainstFlow);
        let p = 2;
        let zero_sol = DGSolution {
            p,
            elements: (0..mesh.n_elements())
                .map(|_| ModalCoeffs::zeros(2, p))
                .collect(),
        };
        let spec = constant_spec(
            [1.0, 1.0],
            1.0,
            Arc::new(|_: &[f64]| 0.0),
            Arc::new(|_: &[f64]| 0.0),
        );
        let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
        let (a, b, c) = asm.stability_functional(&zero_sol);
        assert_eq!((a, b, c), (0.0, 0.0, 0.0));

        // Boundary data only: triple bounded by 2‖g‖² with margin.
        let g: ScalarFn = Arc::new(|x: &[f64]| 1.0 + 0.3 * x[0] - 0.2 * x[1]);
        let spec_g = constant_spec([1.0, 1.0], 1.0, Arc::new(|_: &[f64]| 0.0), g);
        let report = admissibility(&mesh, &spec_g);
        let asm = Assembler::new(&mesh, &spec_g, 3, QuadPolicy::smooth());
        let sol = asm.solve_sweep(&report).unwrap();
        let rep = stability_report(&asm, &sol, 1e-8);
        assert!(rep.f_l2 < 1e-14);
        assert!(
            rep.ok_squared,
            "triple {} vs 2‖g‖² {}",
            rep.lhs_total, rep.rhs_squared
        );

        // Source only: triple bounded by ‖f‖²/c̄₀ with margin.
        let f: ScalarFn = Arc::new(|x: &[f64]| (x[0] - 0.3) * (x[1] + 0.6) + 0.5);
        let spec_f = constant_spec([1.0, 1.0], 1.0, f, Arc::new(|_: &[f64]| 0.0));
        let asm = Assembler::new(&mesh, &spec_f, 3, QuadPolicy::smooth());
        let sol = asm.solve_sweep(&report).unwrap();
        let rep = stability_report(&asm, &sol, 1e-8);
        assert!(rep.g_l2 < 1e-14);
        assert!(rep.ok_squared);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mesh = gen_structured(3, 3, Diagonal::AgainstFlow);
        let spec = constant_spec(
            [1.0, 1.0],
            1.0,
            Arc::new(|_: &[f64]| 0.0),
            Arc::new(|_: &[f64]| 0.0),
        );
        let report = admissibility(&mesh, &spec);
        let sol = solve_sweep(&mesh, 3, &spec, &report, QuadPolicy::smooth()).unwrap();
        assert!(sol.l2_norm() < 1e-14);
        let (gsol, stats) = solve_global(&mesh, 3, &spec, QuadPolicy::smooth()).unwrap();
        assert!(gsol.l2_norm() < 1e-12);
        assert!(stats.residual < 1e-10);
    }

    fn manufactured_poly(deg: usize) -> (ProblemSpec, ScalarFn) {
        let u: ScalarFn =
            Arc::new(move |x: &[f64]| (0.3 + 0.5 * x[0] + 0.35 * x[1]).powi(deg as i32));
        let du = move |x: &[f64]| {
            let base = (0.3 + 0.5 * x[0] + 0.35 * x[1]).powi(deg as i32 - 1) * deg as f64;
            [0.5 * base, 0.35 * base]
        };
        let f: ScalarFn = {
            let u = u.clone();
            Arc::new(move |x: &[f64]| {
                let g = du(x);
                g[0] + g[1] + u(x)
            })
        };
        let spec = constant_spec([1.0, 1.0], 1.0, f, u.clone());
        (spec, u)
    }

    #[test]
    fn sweep_reproduces_polynomial_solution() {
        let mesh = gen_structured(4, 4, Diagonal::AgainstFlow);
        for p in 1..=4usize {
            let (spec, u) = manufactured_poly(p);
            let report = admissibility(&mesh, &spec);
            let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
            let sol = asm.solve_sweep(&report).unwrap();
            // Compare against the exact solution at quadrature points.
            let mut err = 0.0;
            for e in 0..mesh.n_elements() {
                let pts: Vec<[f64; 2]> = asm
                    .vol_rule
                    .points
                    .iter()
                    .map(|pt| {
                        let q = asm.maps[e].to_physical(&pt[..2]);
                        [q[0], q[1]]
                    })
                    .collect();
                let uh = asm.eval_element(&sol.elements[e], e, &pts);
                for (q, w) in asm.vol_rule.weights.iter().enumerate() {
                    let d = uh[q] - u(&pts[q]);
                    err += w * asm.maps[e].det * d * d;
                }
            }
            assert!(err.sqrt() < 1e-10, "p={p}: {}", err.sqrt());
            // Residual of the discrete system is tiny.
            assert!(asm.relative_residual(&sol) < 1e-12);
        }
    }

    #[test]
    fn sweep_and_global_agree() {
        for (nx, p) in [(4usize, 3usize), (10, 8)] {
            let mesh = gen_structured(nx, nx, Diagonal::AgainstFlow);
            let (spec, _) = manufactured_poly(3.min(p));
            let report = admissibility(&mesh, &spec);
            let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
            let sweep = asm.solve_sweep(&report).unwrap();
            let (global, stats) = asm.solve_global().unwrap();
            assert!(stats.residual < 1e-10);
            for e in 0..mesh.n_elements() {
                for (a, b) in sweep.elements[e]
                    .values
                    .iter()
                    .zip(&global.elements[e].values)
                {
                    assert!((a - b).abs() < 1e-9, "{nx}x{nx} p={p}");
                }
            }
        }
    }

    #[test]
    fn direct_fallback_matches_gauss_seidel() {
        let mesh = gen_structured(3, 3, Diagonal::AgainstFlow);
        let (spec, _) = manufactured_poly(2);
        let asm = Assembler::new(&mesh, &spec, 2, QuadPolicy::smooth());
        let system = asm.global_system();
        let order: Vec<usize> = (0..mesh.n_elements()).collect();
        let (x_gs, _) = system.solve(&order).unwrap();
        let xd = system.solve_direct(&order).unwrap();
        let n = asm.basis.len();
        for e in 0..mesh.n_elements() {
            for i in 0..n {
                assert!((x_gs[e * n + i] - xd[e][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn solver_linearity() {
        let mesh = gen_structured(3, 3, Diagonal::AgainstFlow);
        let (spec1, _) = manufactured_poly(2);
        let f2: ScalarFn = Arc::new(|x: &[f64]| (x[0] * 1.7).sin() + x[1]);
        let g2: ScalarFn = Arc::new(|x: &[f64]| x[0] - x[1] * 0.5);
        let spec2 = constant_spec([1.0, 1.0], 1.0, f2.clone(), g2.clone());
        let (a, b) = (0.7, -1.3);
        let f12: ScalarFn = {
            let f1 = spec1.f.clone();
            Arc::new(move |x: &[f64]| a * f1(x) + b * f2(x))
        };
        let g12: ScalarFn = {
            let g1 = spec1.g.clone();
            Arc::new(move |x: &[f64]| a * g1(x) + b * g2(x))
        };
        let spec12 = constant_spec([1.0, 1.0], 1.0, f12, g12);
        let p = 3;
        let report = admissibility(&mesh, &spec1);
        let policy = QuadPolicy::smooth();
        let s1 = solve_sweep(&mesh, p, &spec1, &report, policy).unwrap();
        let s2 = solve_sweep(&mesh, p, &spec2, &report, policy).unwrap();
        let s12 = solve_sweep(&mesh, p, &spec12, &report, policy).unwrap();
        for e in 0..mesh.n_elements() {
            for k in 0..s1.elements[e].values.len() {
                let combo = a * s1.elements[e].values[k] + b * s2.elements[e].values[k];
                assert!((combo - s12.elements[e].values[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn galerkin_orthogonality_on_polynomials() {
        // With u in V_h, the residual of u's own coefficients vanishes.
        let mesh = gen_structured(3, 3, Diagonal::AgainstFlow);
        let p = 3;
        let (spec, u) = manufactured_poly(p);
        let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
        let basis = ModalBasis::new(2, p);
        let rule = simplex_rule(2, 2 * p + 4);
        let coeffs: Vec<ModalCoeffs> = (0..mesh.n_elements())
            .map(|e| crate::projectors::l2_project(&|x: &[f64]| u(x), &asm.maps[e], &basis, &rule))
            .collect();
        let sol = DGSolution {
            p,
            elements: coeffs,
        };
        let r = asm.residual_vector(&sol);
        for v in &r {
            assert!(v.abs() < 1e-9, "residual entry {v}");
        }
    }

    #[test]
    fn energy_identity_on_random_functions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mesh = gen_structured(3, 3, Diagonal::AgainstFlow);
        let spec = constant_spec(
            [1.0, 1.0],
            1.0,
            Arc::new(|_: &[f64]| 0.0),
            Arc::new(|_: &[f64]| 0.0),
        );
        for p in 0..=4usize {
            let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
            let n = asm.basis.len();
            let mut v = DGSolution {
                p,
                elements: Vec::new(),
            };
            let mut total = 0.0;
            for _ in 0..mesh.n_elements() {
                let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                total += vals.iter().map(|v| v * v).sum::<f64>();
                v.elements.push(ModalCoeffs {
                    dim: 2,
                    degree: p,
                    values: vals,
                });
            }
            let scale = total.sqrt();
            for c in &mut v.elements {
                for val in &mut c.values {
                    *val /= scale;
                }
            }
            let resid = asm.energy_identity_check(&v).unwrap();
            assert!(resid < 1e-10, "p={p}: {resid}");
        }
    }

    #[test]
    fn energy_identity_zero_and_continuous() {
        let mesh = gen_structured(2, 2, Diagonal::AgainstFlow);
        let spec = constant_spec(
            [1.0, 1.0],
            1.0,
            Arc::new(|_: &[f64]| 0.0),
            Arc::new(|_: &[f64]| 0.0),
        );
        let p = 2;
        let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
        let zero = DGSolution {
            p,
            elements: (0..mesh.n_elements())
                .map(|_| ModalCoeffs::zeros(2, p))
                .collect(),
        };
        assert!(asm.energy_identity_check(&zero).unwrap() < 1e-15);
        // A globally continuous function has no jump contribution.
        let basis = ModalBasis::new(2, p);
        let rule = simplex_rule(2, 2 * p + 4);
        let u = |x: &[f64]| 0.2 + x[0] - 0.7 * x[1] + 0.1 * x[0] * x[1];
        let v = DGSolution {
            p,
            elements: (0..mesh.n_elements())
                .map(|e| crate::projectors::l2_project(&u, &asm.maps[e], &basis, &rule))
                .collect(),
        };
        let (_, jumps, _) = asm.stability_functional(&v);
        assert!(jumps < 1e-20);
    }

    #[test]
    fn stability_bound_on_random_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mesh = gen_structured(4, 4, Diagonal::AgainstFlow);
        for trial in 0..6 {
            let p = 1 + (trial % 3);
            let (a, b, c0, d) = (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let f: ScalarFn = Arc::new(move |x: &[f64]| a + b * x[0] + c0 * x[1] + d * x[0] * x[1]);
            let (e0, e1) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let g: ScalarFn = Arc::new(move |x: &[f64]| e0 + e1 * (x[0] + x[1]));
            let spec = constant_spec([1.0, 1.0], 1.0, f, g);
            let report = admissibility(&mesh, &spec);
            let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
            let sol = asm.solve_sweep(&report).unwrap();
            let rep = stability_report(&asm, &sol, 1e-8);
            assert!(
                rep.ok_squared,
                "triple {} exceeds bound {}",
                rep.lhs_total, rep.rhs_squared
            );
        }
    }

    #[test]
    fn sweep_rejects_inadmissible_mesh() {
        let mesh = gen_structured(3, 3, Diagonal::WithFlow);
        let (spec, _) = manufactured_poly(1);
        let report = admissibility(&mesh, &spec);
        assert!(matches!(
            solve_sweep(&mesh, 1, &spec, &report, QuadPolicy::smooth()),
            Err(Error::NotAdmissible(_))
        ));
    }

    #[test]
    fn solution_invariant_under_element_reordering() {
        // Square cells keep the hypotenuses characteristic for β = (1,1).
        let mesh = gen_structured(3, 3, Diagonal::AgainstFlow);
        let text = crate::mesh::write_mesh(&mesh);
        // Reverse the element block.
        let mut lines: Vec<&str> = text.lines().collect();
        let nv = mesh.vertices.len();
        lines[2 + nv..].reverse();
        let permuted = crate::mesh::parse_mesh(&(lines.join("\n") + "\n")).unwrap();
        let (spec, _) = manufactured_poly(2);
        let p = 2;
        let policy = QuadPolicy::smooth();
        let s1 = solve_sweep(&mesh, p, &spec, &admissibility(&mesh, &spec), policy).unwrap();
        let s2 = solve_sweep(
            &permuted,
            p,
            &spec,
            &admissibility(&permuted, &spec),
            policy,
        )
        .unwrap();
        // Match elements by vertex sets.
        for e1 in 0..mesh.n_elements() {
            let mut key1: Vec<usize> = mesh.elements[e1].to_vec();
            key1.sort_unstable();
            let coords1: Vec<[f64; 2]> = key1.iter().map(|&v| mesh.vertices[v]).collect();
            let e2 = (0..permuted.n_elements())
                .find(|&e| {
                    let mut key2: Vec<usize> = permuted.elements[e].to_vec();
                    key2.sort_unstable();
                    let coords2: Vec<[f64; 2]> =
                        key2.iter().map(|&v| permuted.vertices[v]).collect();
                    coords1 == coords2
                })
                .unwrap();
            // Compare as functions at the barycenter.
            let asm1 = Assembler::new(&mesh, &spec, p, policy);
            let asm2 = Assembler::new(&permuted, &spec, p, policy);
            let bc = mesh.barycenter(e1);
            let v1 = asm1.eval_element(&s1.elements[e1], e1, &[bc])[0];
            let v2 = asm2.eval_element(&s2.elements[e2], e2, &[bc])[0];
            assert!((v1 - v2).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_upwind_trace_is_reported() {
        let mesh = gen_structured(2, 2, Diagonal::AgainstFlow);
        let (spec, _) = manufactured_poly(1);
        let asm = Assembler::new(&mesh, &spec, 1, QuadPolicy::smooth());
        // Find an element with an interior inflow facet and refuse to supply it.
        let mut hit = false;
        for e in 0..mesh.n_elements() {
            let result = asm.local_system(e, &mut |local, points| {
                let fid = asm.mesh.element_facets[e][local];
                if asm.mesh.facets[fid].is_boundary() {
                    Some(points.iter().map(|x| (asm.spec.g)(x)).collect())
                } else {
                    None
                }
            });
            if let Err(Error::MissingUpwindTrace { .. }) = result {
                hit = true;
            }
        }
        assert!(hit);
    }
}
