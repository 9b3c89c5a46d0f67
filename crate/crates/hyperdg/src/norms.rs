//! Error measurement: the L² norm and the full DG norm with its β-weighted
//! facet terms and interior jumps.

use crate::dg::{facet_params, DGSolution, ProblemSpec, QuadPolicy};
use crate::mesh::{ElementMap, Mesh, CHARACTERISTIC_TOL};
use crate::orthopoly::ModalBasis;
use crate::projectors::ModalCoeffs;
use crate::quadrature::{gauss_legendre, refined_triangle_rule, simplex_rule};

/// L² and DG error of a discrete solution, with the DG norm's component
/// breakdown: dg_error² is exactly the sum of the four component squares.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub l2_error: f64,
    pub dg_error: f64,
    /// ‖c (u - u_h)‖ over the elements.
    pub volume_part: f64,
    /// |n·β|^{1/2}-weighted trace error on the inflow boundary.
    pub inflow_boundary_part: f64,
    /// |n·β|^{1/2}-weighted trace error on the outflow boundary.
    pub outflow_boundary_part: f64,
    /// |n·β|^{1/2}-weighted jumps of u_h on interior facets.
    pub interior_jump_part: f64,
}

fn eval_at(
    coeffs: &ModalCoeffs,
    basis: &ModalBasis,
    map: &ElementMap,
    points: &[[f64; 2]],
) -> Vec<f64> {
    let scale = map.det.sqrt().recip();
    let mut row = vec![0.0; basis.len()];
    points
        .iter()
        .map(|x| {
            let xr = map.to_reference(x);
            basis.eval_all(&xr[..2], &mut row);
            coeffs
                .values
                .iter()
                .zip(&row)
                .map(|(c, v)| c * v)
                .sum::<f64>()
                * scale
        })
        .collect()
}

/// Squared volume integral of `integrand(x, u - u_h)` accumulated over all
/// elements, with composite-refined rules on elements meeting the policy's
/// singular line.
fn volume_accumulate(
    mesh: &Mesh,
    sol: &DGSolution,
    exact: &dyn Fn(&[f64]) -> f64,
    policy: &QuadPolicy,
    weight: &dyn Fn(&[f64]) -> f64,
) -> f64 {
    let p = sol.p;
    let basis = ModalBasis::new(2, p);
    let exactness = 2 * p + policy.exactness_margin;
    let rule = simplex_rule(2, exactness);
    let n_1d = (exactness + 2).div_ceil(2);
    let mut acc = 0.0;
    for e in 0..mesh.n_elements() {
        let map = ElementMap::natural(mesh, e);
        let (xmin, xmax) = mesh.x_range(e);
        let local_rule;
        let physical;
        if policy.element_is_singular(xmin, xmax) {
            local_rule = refined_triangle_rule(
                &mesh.coords(e),
                policy.singular_line_x.unwrap(),
                policy.effective_levels(p),
                n_1d,
                exactness,
            );
            physical = true;
        } else {
            local_rule = rule.clone();
            physical = false;
        }
        let points: Vec<[f64; 2]> = local_rule
            .points
            .iter()
            .map(|pt| {
                if physical {
                    [pt[0], pt[1]]
                } else {
                    let q = map.to_physical(&pt[..2]);
                    [q[0], q[1]]
                }
            })
            .collect();
        let uh = eval_at(&sol.elements[e], &basis, &map, &points);
        let jac = if physical { 1.0 } else { map.det };
        for (q, w) in local_rule.weights.iter().enumerate() {
            let d = exact(&points[q]) - uh[q];
            let wv = weight(&points[q]) * d;
            acc += w * jac * wv * wv;
        }
    }
    acc
}

/// Global L² error ‖u - u_h‖ over the mesh.
pub fn l2_error(
    mesh: &Mesh,
    sol: &DGSolution,
    exact: &dyn Fn(&[f64]) -> f64,
    policy: &QuadPolicy,
) -> f64 {
    volume_accumulate(mesh, sol, exact, policy, &|_| 1.0).sqrt()
}

/// Full DG-norm error of u - u_h with its component breakdown.
///
/// The exact solution is continuous across facets here, so the interior-jump
/// component reduces to the jumps of u_h itself.
pub fn dg_error(
    mesh: &Mesh,
    sol: &DGSolution,
    exact: &dyn Fn(&[f64]) -> f64,
    spec: &ProblemSpec,
    policy: &QuadPolicy,
) -> ErrorReport {
    let p = sol.p;
    let basis = ModalBasis::new(2, p);
    let maps: Vec<ElementMap> = (0..mesh.n_elements())
        .map(|e| ElementMap::natural(mesh, e))
        .collect();
    let volume_sq = volume_accumulate(mesh, sol, exact, policy, &|x| spec.c.eval(x));

    let exactness = 2 * p + policy.exactness_margin;
    let n_1d = (exactness + 2).div_ceil(2);
    let plain = gauss_legendre(n_1d);
    let plain_params: Vec<f64> = plain.points.iter().map(|p| p[0]).collect();

    let mut inflow_sq = 0.0;
    let mut outflow_sq = 0.0;
    let mut jump_sq = 0.0;
    for f in &mesh.facets {
        let o = f.owner;
        let a = mesh.vertices[f.vertices[0]];
        let b = mesh.vertices[f.vertices[1]];
        let (params, wparams) = if f.is_boundary() {
            facet_params(a, b, policy, p, n_1d)
        } else {
            (plain_params.clone(), plain.weights.clone())
        };
        let points = mesh.facet_points(f, &params);
        let half_len = mesh.facet_length(f) / 2.0;
        let normal = mesh.outward_normal(o, f.owner_local);
        let uo = eval_at(&sol.elements[o], &basis, &maps[o], &points);
        match f.neighbor {
            None => {
                for (q, x) in points.iter().enumerate() {
                    let bv = spec.beta.eval(x);
                    let nb = normal[0] * bv[0] + normal[1] * bv[1];
                    let mag = (bv[0] * bv[0] + bv[1] * bv[1]).sqrt();
                    let w = wparams[q] * half_len * nb.abs();
                    let d = exact(x) - uo[q];
                    if nb < -CHARACTERISTIC_TOL * mag {
                        inflow_sq += w * d * d;
                    } else if nb > CHARACTERISTIC_TOL * mag {
                        outflow_sq += w * d * d;
                    }
                }
            }
            Some((nb_e, _)) => {
                let un = eval_at(&sol.elements[nb_e], &basis, &maps[nb_e], &points);
                for (q, x) in points.iter().enumerate() {
                    let bv = spec.beta.eval(x);
                    let nbv = normal[0] * bv[0] + normal[1] * bv[1];
                    let w = wparams[q] * half_len * nbv.abs();
                    let jump = uo[q] - un[q];
                    jump_sq += w * jump * jump;
                }
            }
        }
    }
    let dg_sq = volume_sq + inflow_sq + outflow_sq + jump_sq;
    ErrorReport {
        l2_error: l2_error(mesh, sol, exact, policy),
        dg_error: dg_sq.sqrt(),
        volume_part: volume_sq.sqrt(),
        inflow_boundary_part: inflow_sq.sqrt(),
        outflow_boundary_part: outflow_sq.sqrt(),
        interior_jump_part: jump_sq.sqrt(),
    }
}
