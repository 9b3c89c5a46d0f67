//! L², H¹, and CDG projections onto P_p of an element.
//!
//! The CDG projection matches all interior moments up to degree p-1 and all
//! outflow-facet moments up to degree p. Two independent routes are provided:
//! a quadrature/moment path (`CdgProjector::project`) for arbitrary fields,
//! and the closed-form modal-tail path (`cdg_from_modal`) for inputs already
//! expanded in the modal basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::ElementMap;
use crate::orthopoly::{koornwinder_norm_sq, legendre_eval, poly_space_dim, ModalBasis};
use crate::quadrature::{gauss_legendre, simplex_rule, QuadRule};

/// Coefficients of a polynomial in the orthonormal modal basis of degree p.
///
/// The represented polynomial on an element with map bundle `F` is
/// u(x) = Σ_k values[k] · det^{-1/2} · φ̂_k(F^{-1}x), so its L² norm over the
/// element equals the Euclidean norm of `values`.
#[derive(Debug, Clone)]
pub struct ModalCoeffs {
    pub dim: usize,
    pub degree: usize,
    pub values: Vec<f64>,
}

impl ModalCoeffs {
    pub fn zeros(dim: usize, degree: usize) -> Self {
        ModalCoeffs {
            dim,
            degree,
            values: vec![0.0; poly_space_dim(dim, degree)],
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Evaluate the polynomial represented by `coeffs` at a physical point.
pub fn eval_modal(coeffs: &ModalCoeffs, basis: &ModalBasis, map: &ElementMap, x: &[f64]) -> f64 {
    debug_assert_eq!(basis.len(), coeffs.values.len());
    let xr = map.to_reference(x);
    let scale = map.det.sqrt().recip();
    coeffs
        .values
        .iter()
        .enumerate()
        .map(|(k, c)| c * basis.eval_one(k, &xr[..coeffs.dim]))
        .sum::<f64>()
        * scale
}

/// Tabulate normalized basis values at the points of a reference rule,
/// returned as an (n_points x n_basis) matrix.
pub fn tabulate_basis(basis: &ModalBasis, rule: &QuadRule) -> DMatrix<f64> {
    let mut table = DMatrix::zeros(rule.len(), basis.len());
    let mut row = vec![0.0; basis.len()];
    for (q, pt) in rule.points.iter().enumerate() {
        basis.eval_all(&pt[..basis.dim], &mut row);
        for (k, v) in row.iter().enumerate() {
            table[(q, k)] = *v;
        }
    }
    table
}

/// L² projection of `f` onto P_p of the element described by `map`.
///
/// The rule must be exact to degree 2p plus whatever margin the integrand's
/// coefficients demand.
pub fn l2_project(
    f: &dyn Fn(&[f64]) -> f64,
    map: &ElementMap,
    basis: &ModalBasis,
    rule: &QuadRule,
) -> ModalCoeffs {
    let n = basis.len();
    let mut values = vec![0.0; n];
    let mut row = vec![0.0; n];
    for (pt, w) in rule.points.iter().zip(&rule.weights) {
        let fx = f(&map.to_physical(&pt[..basis.dim])[..basis.dim]);
        basis.eval_all(&pt[..basis.dim], &mut row);
        for k in 0..n {
            values[k] += w * fx * row[k];
        }
    }
    let scale = map.det.sqrt();
    for v in &mut values {
        *v *= scale;
    }
    ModalCoeffs {
        dim: basis.dim,
        degree: basis.degree,
        values,
    }
}

/// H¹ projection: (∇(f - Πf), ∇q) = 0 for all q in P_p, plus zero mean of
/// the error. For p = 0 this is the mean.
///
/// The orthonormal-basis structure makes the constraint trivial: the constant
/// member carries the mean, the rest solve the reduced stiffness system.
pub fn h1_project(
    f: &dyn Fn(&[f64]) -> f64,
    grad_f: &dyn Fn(&[f64]) -> [f64; 3],
    map: &ElementMap,
    basis: &ModalBasis,
    rule: &QuadRule,
) -> Result<ModalCoeffs> {
    let dim = basis.dim;
    let n = basis.len();
    let mut mean = 0.0;
    let mut vals = vec![0.0; n];
    let mut grads = vec![[0.0; 3]; n];
    let mut stiff: DMatrix<f64> = DMatrix::zeros(n - 1, n - 1);
    let mut rhs: DVector<f64> = DVector::zeros(n.max(2) - 1);
    for (pt, w) in rule.points.iter().zip(&rule.weights) {
        let phys = map.to_physical(&pt[..dim]);
        basis.eval_all_with_grad(&pt[..dim], &mut vals, &mut grads);
        mean += w * f(&phys[..dim]) * vals[0];
        if n > 1 {
            let gf = grad_f(&phys[..dim]);
            let pushed: Vec<[f64; 3]> = grads.iter().map(|g| map.push_gradient(*g)).collect();
            for i in 1..n {
                let gi = pushed[i];
                rhs[i - 1] += w * (gf[0] * gi[0] + gf[1] * gi[1] + gf[2] * gi[2]);
                for j in 1..=i {
                    let gj = pushed[j];
                    stiff[(i - 1, j - 1)] += w * (gi[0] * gj[0] + gi[1] * gj[1] + gi[2] * gj[2]);
                }
            }
        }
    }
    let mut values = vec![0.0; n];
    values[0] = mean * map.det.sqrt();
    if n > 1 {
        for i in 0..n - 1 {
            for j in (i + 1)..(n - 1) {
                stiff[(i, j)] = stiff[(j, i)];
            }
        }
        let sol = stiff.lu().solve(&rhs).ok_or(Error::SingularLocalSystem {
            element: usize::MAX,
        })?;
        let scale = map.det.sqrt();
        for i in 1..n {
            values[i] = sol[i - 1] * scale;
        }
    }
    Ok(ModalCoeffs {
        dim,
        degree: basis.degree,
        values,
    })
}

/// Reusable CDG projection operator for one (dimension, degree, rule) triple.
///
/// The interior block is read directly from moments of the graded basis; the
/// outflow-facet block solves a dim P_p(facet)-sized system whose matrix only
/// involves reference quantities, so it is factorized once.
pub struct CdgProjector {
    pub basis: ModalBasis,
    rule: QuadRule,
    facet_rule: QuadRule,
    /// Reference-facet points embedded in simplex coordinates.
    facet_points: Vec<[f64; 3]>,
    vol_table: DMatrix<f64>,
    /// Facet polynomial basis values (n_facet_points x M).
    facet_poly: DMatrix<f64>,
    top_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Facet moments of the low block: (M x N_low).
    low_moments: DMatrix<f64>,
    n_low: usize,
}

impl CdgProjector {
    /// Build the projector. `facet_rule` overrides the default outflow-facet
    /// rule (a Gauss rule of matching exactness); pass a composite-refined
    /// rule when the integrand is singular on the facet.
    pub fn new(dim: usize, p: usize, rule: QuadRule, facet_rule: Option<QuadRule>) -> Result<Self> {
        let basis = ModalBasis::new(dim, p);
        let n = basis.len();
        let n_low = if p == 0 {
            0
        } else {
            poly_space_dim(dim, p - 1)
        };
        let m = n - n_low;

        let facet_rule = facet_rule.unwrap_or_else(|| match dim {
            1 => QuadRule {
                dim: 1,
                points: vec![[0.0; 3]],
                weights: vec![1.0],
                exactness: usize::MAX,
            },
            2 => gauss_legendre((rule.exactness + 2).div_ceil(2)),
            3 => simplex_rule(2, rule.exactness),
            _ => panic!("unsupported dimension"),
        });
        // Embed the facet points into the simplex: the reference outflow
        // facet is x = -1 (1D), y = -1 (2D), z = -1 (3D).
        let facet_points: Vec<[f64; 3]> = match dim {
            1 => vec![[-1.0, 0.0, 0.0]],
            2 => facet_rule
                .points
                .iter()
                .map(|t| [t[0], -1.0, 0.0])
                .collect(),
            3 => facet_rule
                .points
                .iter()
                .map(|t| [t[0], t[1], -1.0])
                .collect(),
            _ => unreachable!(),
        };

        let vol_table = tabulate_basis(&basis, &rule);
        let mut facet_table = DMatrix::zeros(facet_points.len(), n);
        let mut row = vec![0.0; n];
        for (q, pt) in facet_points.iter().enumerate() {
            basis.eval_all(&pt[..dim], &mut row);
            for (k, v) in row.iter().enumerate() {
                facet_table[(q, k)] = *v;
            }
        }

        // Facet polynomial basis: Legendre in the facet parameter (2D), the
        // 2D modal basis on the facet triangle (3D), a constant in 1D.
        let mut facet_poly = DMatrix::zeros(facet_points.len(), m);
        match dim {
            1 => facet_poly[(0, 0)] = 1.0,
            2 => {
                for (q, t) in facet_rule.points.iter().enumerate() {
                    for k in 0..m {
                        facet_poly[(q, k)] = legendre_eval(k, t[0]);
                    }
                }
            }
            3 => {
                let fb = ModalBasis::new(2, p);
                debug_assert_eq!(fb.len(), m);
                let mut frow = vec![0.0; m];
                for (q, t) in facet_rule.points.iter().enumerate() {
                    fb.eval_all(&t[..2], &mut frow);
                    for (k, v) in frow.iter().enumerate() {
                        facet_poly[(q, k)] = *v;
                    }
                }
            }
            _ => unreachable!(),
        }

        // Weighted facet moments of the volume basis against the facet basis.
        let wdiag = DMatrix::from_diagonal(&DVector::from_iterator(
            facet_rule.weights.len(),
            facet_rule.weights.iter().copied(),
        ));
        let moments = facet_poly.transpose() * &wdiag * &facet_table; // M x N
        let top = moments.columns(n_low, m).into_owned();
        let low_moments = moments.columns(0, n_low).into_owned();
        let top_lu = top.lu();
        if !top_lu.is_invertible() {
            return Err(Error::SingularFacetBlock { degree: p });
        }
        Ok(CdgProjector {
            basis,
            rule,
            facet_rule,
            facet_points,
            vol_table,
            facet_poly,
            top_lu,
            low_moments,
            n_low,
        })
    }

    pub fn rule(&self) -> &QuadRule {
        &self.rule
    }

    pub fn facet_rule(&self) -> &QuadRule {
        &self.facet_rule
    }

    /// Volume rule points mapped onto the element.
    pub fn physical_volume_points(&self, map: &ElementMap) -> Vec<[f64; 3]> {
        self.rule
            .points
            .iter()
            .map(|p| map.to_physical(&p[..self.basis.dim]))
            .collect()
    }

    /// Outflow-facet points mapped onto the element.
    pub fn physical_facet_points(&self, map: &ElementMap) -> Vec<[f64; 3]> {
        self.facet_points
            .iter()
            .map(|p| map.to_physical(&p[..self.basis.dim]))
            .collect()
    }

    /// Values of the polynomial `coeffs` at the volume rule points, in
    /// reference normalization (multiply by det^{-1/2} for mapped elements).
    pub fn values_at_rule_points(&self, coeffs: &ModalCoeffs) -> Vec<f64> {
        let v = DVector::from_iterator(coeffs.values.len(), coeffs.values.iter().copied());
        (&self.vol_table * v).iter().copied().collect()
    }

    /// CDG projection of a field given its samples at the volume and facet
    /// rule points of the element.
    pub fn project_sampled(
        &self,
        f_vol: &[f64],
        f_facet: &[f64],
        map: &ElementMap,
    ) -> Result<ModalCoeffs> {
        let n = self.basis.len();
        let m = n - self.n_low;
        // Interior moments give the low block directly.
        let weighted = DVector::from_iterator(
            f_vol.len(),
            f_vol.iter().zip(&self.rule.weights).map(|(f, w)| f * w),
        );
        let low = self.vol_table.columns(0, self.n_low).transpose() * &weighted;

        // Facet moments of f.
        let wf = DVector::from_iterator(
            f_facet.len(),
            f_facet
                .iter()
                .zip(&self.facet_rule.weights)
                .map(|(f, w)| f * w),
        );
        let mut rhs = self.facet_poly.transpose() * wf;
        rhs -= &self.low_moments * &low;
        let top = self.top_lu.solve(&rhs).ok_or(Error::SingularFacetBlock {
            degree: self.basis.degree,
        })?;

        let scale = map.det.sqrt();
        let mut values = vec![0.0; n];
        for k in 0..self.n_low {
            values[k] = low[k] * scale;
        }
        for k in 0..m {
            values[self.n_low + k] = top[k] * scale;
        }
        Ok(ModalCoeffs {
            dim: self.basis.dim,
            degree: self.basis.degree,
            values,
        })
    }

    /// CDG projection of a field evaluated pointwise.
    pub fn project(&self, f: &dyn Fn(&[f64]) -> f64, map: &ElementMap) -> Result<ModalCoeffs> {
        let dim = self.basis.dim;
        let f_vol: Vec<f64> = self
            .rule
            .points
            .iter()
            .map(|p| f(&map.to_physical(&p[..dim])[..dim]))
            .collect();
        let f_facet: Vec<f64> = self
            .facet_points
            .iter()
            .map(|p| f(&map.to_physical(&p[..dim])[..dim]))
            .collect();
        self.project_sampled(&f_vol, &f_facet, map)
    }
}

/// One-shot CDG projection (see [`CdgProjector`] for the reusable form).
pub fn cdg_project(
    f: &dyn Fn(&[f64]) -> f64,
    map: &ElementMap,
    p: usize,
    rule: &QuadRule,
) -> Result<ModalCoeffs> {
    CdgProjector::new(map.dim, p, rule.clone(), None)?.project(f, map)
}

/// CDG projection of a polynomial already given by modal coefficients, via
/// the closed-form alternating tails: coefficients of total degree <= p-1
/// are copied; each degree-p coefficient is the alternating tail of the
/// input coefficients along the collapsed direction (in the unnormalized
/// Koornwinder convention, converted internally).
///
/// When the input degree is <= p the map is the identity on P_p (the result
/// is zero-padded).
pub fn cdg_from_modal(coeffs: &ModalCoeffs, p: usize) -> ModalCoeffs {
    let dim = coeffs.dim;
    let out_basis = ModalBasis::new(dim, p);
    let mut out = ModalCoeffs::zeros(dim, p);
    let in_basis = ModalBasis::new(dim, coeffs.degree);
    if coeffs.degree <= p {
        for (k, ix) in in_basis.indices.iter().enumerate() {
            let pos = out_basis
                .indices
                .iter()
                .position(|jx| jx == ix)
                .expect("input indices are a subset of the output basis");
            out.values[pos] = coeffs.values[k];
        }
        return out;
    }

    let mut lookup = std::collections::HashMap::new();
    for (k, ix) in in_basis.indices.iter().enumerate() {
        lookup.insert(ix.indices, k);
    }
    for (pos, ix) in out_basis.indices.iter().enumerate() {
        let d = ix.total_degree();
        if d < p {
            let k = lookup[&ix.indices];
            out.values[pos] = coeffs.values[k];
        } else {
            // Alternating tail over the collapsed (last) index direction.
            let mut tail = 0.0;
            let mut q = p;
            loop {
                let mut tuple = ix.indices;
                let extra = q - p;
                tuple[dim - 1] += extra;
                let Some(&k) = lookup.get(&tuple) else {
                    break;
                };
                // Unnormalized coefficient of the input member.
                let v = coeffs.values[k] * in_basis.normalizers[k];
                let sign = if extra % 2 == 0 { 1.0 } else { -1.0 };
                tail += sign * v;
                q += 1;
            }
            // Back to the orthonormal convention.
            out.values[pos] = tail * koornwinder_norm_sq(ix).sqrt();
        }
    }
    out
}
