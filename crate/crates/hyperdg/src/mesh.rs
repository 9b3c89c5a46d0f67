//! Triangular meshes: file IO, structured generation on (-1,1)², facet
//! topology, facet classification with respect to a convection field,
//! admissibility checks, and affine reference maps.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::dg::VectorField;
use crate::error::{Error, Result};
use crate::orthopoly::ReferenceSimplex;
use crate::quadrature::gauss_legendre;

/// A (d-1)-facet of the mesh with its incident elements.
#[derive(Debug, Clone)]
pub struct Facet {
    /// Vertex ids, ascending; this fixes the facet's parametrization.
    pub vertices: [usize; 2],
    pub owner: usize,
    pub owner_local: usize,
    pub neighbor: Option<(usize, usize)>,
}

impl Facet {
    pub fn is_boundary(&self) -> bool {
        self.neighbor.is_none()
    }
}

/// Conforming triangular mesh. Elements are positively oriented; local facet
/// `k` of an element is the edge opposite its local vertex `k`.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    pub vertices: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub facets: Vec<Facet>,
    /// element_facets[e][k] is the global facet id of local facet k.
    pub element_facets: Vec<[usize; 3]>,
    /// Largest element diameter.
    pub h: f64,
    /// Shape regularity: max over elements of diameter / inradius.
    pub sigma: f64,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn coords(&self, e: usize) -> [[f64; 2]; 3] {
        let el = self.elements[e];
        [
            self.vertices[el[0]],
            self.vertices[el[1]],
            self.vertices[el[2]],
        ]
    }

    pub fn area(&self, e: usize) -> f64 {
        let [a, b, c] = self.coords(e);
        signed_area(a, b, c)
    }

    pub fn diameter(&self, e: usize) -> f64 {
        let [a, b, c] = self.coords(e);
        let d = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        d(a, b).max(d(b, c)).max(d(c, a))
    }

    pub fn barycenter(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.coords(e);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// x-extent of an element, used to flag elements meeting a singular line.
    pub fn x_range(&self, e: usize) -> (f64, f64) {
        let cs = self.coords(e);
        let lo = cs.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
        let hi = cs.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Endpoints of local facet `k` of element `e` (opposite local vertex k).
    pub fn facet_endpoints(&self, e: usize, k: usize) -> ([f64; 2], [f64; 2]) {
        let el = self.elements[e];
        (
            self.vertices[el[(k + 1) % 3]],
            self.vertices[el[(k + 2) % 3]],
        )
    }

    pub fn facet_length(&self, f: &Facet) -> f64 {
        let a = self.vertices[f.vertices[0]];
        let b = self.vertices[f.vertices[1]];
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }

    /// Outward unit normal of element `e` on its local facet `k`.
    pub fn outward_normal(&self, e: usize, k: usize) -> [f64; 2] {
        let (a, b) = self.facet_endpoints(e, k);
        let el = self.elements[e];
        let opp = self.vertices[el[k]];
        let t = [b[0] - a[0], b[1] - a[1]];
        let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
        let mut n = [t[1] / len, -t[0] / len];
        // Orient away from the opposite vertex.
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        if n[0] * (mid[0] - opp[0]) + n[1] * (mid[1] - opp[1]) < 0.0 {
            n = [-n[0], -n[1]];
        }
        n
    }

    /// Physical points of facet `f` at parameters `t` in [-1,1], running from
    /// the lower to the higher vertex id (canonical on both sides).
    pub fn facet_points(&self, f: &Facet, t: &[f64]) -> Vec<[f64; 2]> {
        let a = self.vertices[f.vertices[0]];
        let b = self.vertices[f.vertices[1]];
        t.iter()
            .map(|&s| {
                let u = (s + 1.0) / 2.0;
                [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
            })
            .collect()
    }
}

/// Build facet topology and size metrics; shared by the parser and generator.
fn finalize(dim: usize, vertices: Vec<[f64; 2]>, mut elements: Vec<[usize; 3]>) -> Result<Mesh> {
    let nv = vertices.len();
    // Reject exactly coincident vertices: they would make facets geometrically
    // coincide without sharing ids.
    {
        let mut seen: HashMap<[u64; 2], usize> = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            let key = [v[0].to_bits(), v[1].to_bits()];
            if let Some(j) = seen.insert(key, i) {
                return Err(Error::Topology(format!(
                    "vertices {j} and {i} have identical coordinates"
                )));
            }
        }
    }
    for (e, el) in elements.iter_mut().enumerate() {
        for &v in el.iter() {
            if v >= nv {
                return Err(Error::Topology(format!(
                    "element {e} references vertex {v} but only {nv} vertices exist"
                )));
            }
        }
        if el[0] == el[1] || el[1] == el[2] || el[0] == el[2] {
            return Err(Error::Topology(format!("element {e} repeats a vertex id")));
        }
        let area = signed_area(vertices[el[0]], vertices[el[1]], vertices[el[2]]);
        let d = {
            let dd =
                |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            dd(vertices[el[0]], vertices[el[1]])
                .max(dd(vertices[el[1]], vertices[el[2]]))
                .max(dd(vertices[el[2]], vertices[el[0]]))
        };
        if area.abs() <= 1e-14 * d * d {
            return Err(Error::Topology(format!("element {e} is degenerate")));
        }
        if area < 0.0 {
            el.swap(1, 2);
        }
    }

    let mut facet_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut facets: Vec<Facet> = Vec::new();
    let mut element_facets = vec![[usize::MAX; 3]; elements.len()];
    for (e, el) in elements.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (el[(k + 1) % 3], el[(k + 2) % 3]);
            let key = (a.min(b), a.max(b));
            match facet_of.get(&key) {
                None => {
                    facet_of.insert(key, facets.len());
                    element_facets[e][k] = facets.len();
                    facets.push(Facet {
                        vertices: [key.0, key.1],
                        owner: e,
                        owner_local: k,
                        neighbor: None,
                    });
                }
                Some(&fid) => {
                    if facets[fid].neighbor.is_some() {
                        return Err(Error::Topology(format!(
                            "facet ({},{}) is shared by more than two elements",
                            key.0, key.1
                        )));
                    }
                    facets[fid].neighbor = Some((e, k));
                    element_facets[e][k] = fid;
                }
            }
        }
    }

    let mut mesh = Mesh {
        dim,
        vertices,
        elements,
        facets,
        element_facets,
        h: 0.0,
        sigma: 0.0,
    };
    let mut h = 0.0f64;
    let mut sigma = 0.0f64;
    for e in 0..mesh.n_elements() {
        let diam = mesh.diameter(e);
        let [a, b, c] = mesh.coords(e);
        let dd = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        let perimeter = dd(a, b) + dd(b, c) + dd(c, a);
        let inradius = 2.0 * mesh.area(e) / perimeter;
        h = h.max(diam);
        sigma = sigma.max(diam / inradius);
    }
    mesh.h = h;
    mesh.sigma = sigma;
    Ok(mesh)
}

/// Parse the line-oriented ASCII mesh format:
/// `simplexmesh <dim>`, then `<n_vertices> <n_elements>`, then vertex
/// coordinate lines, then element index lines. `#` starts a comment.
pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, header) = lines.next().ok_or_else(|| Error::MeshParse {
        line: 0,
        msg: "empty file".into(),
    })?;
    let mut it = header.split_whitespace();
    if it.next() != Some("simplexmesh") {
        return Err(Error::MeshParse {
            line: line_no,
            msg: "expected header 'simplexmesh <dim>'".into(),
        });
    }
    let dim: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MeshParse {
            line: line_no,
            msg: "missing dimension".into(),
        })?;
    if dim != 2 {
        return Err(Error::MeshParse {
            line: line_no,
            msg: format!("only dimension 2 meshes are supported, got {dim}"),
        });
    }

    let (line_no, counts) = lines.next().ok_or_else(|| Error::MeshParse {
        line: line_no,
        msg: "missing size line".into(),
    })?;
    let mut it = counts.split_whitespace();
    let parse_count = |s: Option<&str>| -> Result<usize> {
        s.and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::MeshParse {
                line: line_no,
                msg: "expected '<n_vertices> <n_elements>'".into(),
            })
    };
    let nv = parse_count(it.next())?;
    let ne = parse_count(it.next())?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| Error::MeshParse {
            line: line_no,
            msg: "unexpected end of file in vertex block".into(),
        })?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::MeshParse {
                line: ln,
                msg: format!("bad coordinate: {e}"),
            })?;
        if vals.len() != dim {
            return Err(Error::MeshParse {
                line: ln,
                msg: format!("expected {dim} coordinates, got {}", vals.len()),
            });
        }
        vertices.push([vals[0], vals[1]]);
    }

    let mut elements = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, l) = lines.next().ok_or_else(|| Error::MeshParse {
            line: line_no,
            msg: "unexpected end of file in element block".into(),
        })?;
        let vals: Vec<usize> = l
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::MeshParse {
                line: ln,
                msg: format!("bad vertex index: {e}"),
            })?;
        if vals.len() != dim + 1 {
            return Err(Error::MeshParse {
                line: ln,
                msg: format!("expected {} indices, got {}", dim + 1, vals.len()),
            });
        }
        elements.push([vals[0], vals[1], vals[2]]);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::MeshParse {
            line: ln,
            msg: "trailing content after element block".into(),
        });
    }

    finalize(dim, vertices, elements)
}

/// Serialize a mesh in the ASCII format accepted by [`parse_mesh`].
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "simplexmesh {}", mesh.dim);
    let _ = writeln!(out, "{} {}", mesh.vertices.len(), mesh.elements.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {}", v[0], v[1]);
    }
    for e in &mesh.elements {
        let _ = writeln!(out, "{} {} {}", e[0], e[1], e[2]);
    }
    out
}

/// Diagonal orientation of the structured generator's cells.
///
/// `AgainstFlow` runs the diagonal from the bottom-left to the top-right
/// corner of each cell; for β = (1,1) the hypotenuses are characteristic and
/// every triangle has exactly one outflow facet (A1 holds). `WithFlow` uses
/// the opposite diagonal, whose upper-right triangles have two outflow facets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonal {
    AgainstFlow,
    WithFlow,
}

/// Structured triangulation of (-1,1)²: an nx-by-ny grid of squares, each
/// split into two triangles along the chosen diagonal.
pub fn gen_structured(nx: usize, ny: usize, diagonal: Diagonal) -> Mesh {
    assert!(nx >= 1 && ny >= 1);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                -1.0 + 2.0 * i as f64 / nx as f64,
                -1.0 + 2.0 * j as f64 / ny as f64,
            ]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10) = (id(i, j), id(i + 1, j));
            let (v01, v11) = (id(i, j + 1), id(i + 1, j + 1));
            match diagonal {
                Diagonal::AgainstFlow => {
                    elements.push([v00, v10, v11]);
                    elements.push([v00, v11, v01]);
                }
                Diagonal::WithFlow => {
                    elements.push([v00, v10, v01]);
                    elements.push([v10, v11, v01]);
                }
            }
        }
    }
    finalize(2, vertices, elements).expect("structured mesh construction cannot fail")
}

/// Per-facet sign class of n·β.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetClass {
    Outflow,
    Inflow,
    Characteristic,
    /// n·β changes sign along the facet (variable β only); flux integrals
    /// resolve the sign pointwise.
    Mixed,
}

/// Classification of every (element, local facet) side against β.
#[derive(Debug, Clone)]
pub struct FacetClassification {
    pub classes: Vec<[FacetClass; 3]>,
    pub normals: Vec<[[f64; 2]; 3]>,
    /// n·β sampled at facet quadrature points (one value when β is constant).
    pub flux_signs: Vec<[Vec<f64>; 3]>,
}

impl FacetClassification {
    pub fn outflow_count(&self, e: usize) -> usize {
        self.classes[e]
            .iter()
            .filter(|c| **c == FacetClass::Outflow)
            .count()
    }

    /// The unique outflow local facet of `e`, if there is exactly one.
    pub fn unique_outflow(&self, e: usize) -> Option<usize> {
        let mut found = None;
        for (k, c) in self.classes[e].iter().enumerate() {
            if *c == FacetClass::Outflow {
                if found.is_some() {
                    return None;
                }
                found = Some(k);
            }
        }
        found
    }
}

/// Relative threshold below which n·β is treated as zero.
pub const CHARACTERISTIC_TOL: f64 = 1e-12;

/// Classify every facet side of the mesh by the sign of n·β.
///
/// Constant β uses an exact midpoint sign test; variable β samples n·β at
/// facet quadrature points and reports `Mixed` when signs differ.
pub fn classify_facets(mesh: &Mesh, beta: &VectorField) -> FacetClassification {
    let samples = if beta.is_constant() {
        vec![0.0]
    } else {
        gauss_legendre(5).points.iter().map(|p| p[0]).collect()
    };
    let mut classes = vec![[FacetClass::Characteristic; 3]; mesh.n_elements()];
    let mut normals = vec![[[0.0; 2]; 3]; mesh.n_elements()];
    let mut flux_signs: Vec<[Vec<f64>; 3]> =
        vec![[Vec::new(), Vec::new(), Vec::new()]; mesh.n_elements()];
    for e in 0..mesh.n_elements() {
        for k in 0..3 {
            let n = mesh.outward_normal(e, k);
            normals[e][k] = n;
            let (a, b) = mesh.facet_endpoints(e, k);
            let mut pos = 0usize;
            let mut neg = 0usize;
            let mut signs = Vec::with_capacity(samples.len());
            for &t in &samples {
                let u = (t + 1.0) / 2.0;
                let x = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
                let bv = beta.eval(&x);
                let mag = (bv[0] * bv[0] + bv[1] * bv[1]).sqrt();
                let s = n[0] * bv[0] + n[1] * bv[1];
                signs.push(s);
                if s > CHARACTERISTIC_TOL * mag {
                    pos += 1;
                } else if s < -CHARACTERISTIC_TOL * mag {
                    neg += 1;
                }
            }
            classes[e][k] = match (pos, neg) {
                (0, 0) => FacetClass::Characteristic,
                (_, 0) => FacetClass::Outflow,
                (0, _) => FacetClass::Inflow,
                _ => FacetClass::Mixed,
            };
            flux_signs[e][k] = signs;
        }
    }
    FacetClassification {
        classes,
        normals,
        flux_signs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Admissible,
    Inadmissible,
    /// β is variable; the sweep assumptions do not apply and the global
    /// solver must be used.
    NotApplicable,
}

/// Result of the (A1)/(A2) checks and the upwind ordering attempt.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub verdict: Verdict,
    pub outflow_counts: Vec<usize>,
    pub a1_ok: Vec<bool>,
    /// (facet id, ok) for every interior facet that is an inflow facet of
    /// some element.
    pub a2: Vec<(usize, bool)>,
    pub upwind_order: Option<Vec<usize>>,
    /// Element cycle witnessing that no upwind order exists.
    pub cycle: Option<Vec<usize>>,
}

/// Deterministic topological sort (smallest-index-first) of `n` nodes.
/// On failure returns a cycle as an element list.
pub fn topo_sort(
    n: usize,
    edges: &[(usize, usize)],
) -> std::result::Result<Vec<usize>, Vec<usize>> {
    let mut out_adj = vec![Vec::new(); n];
    let mut in_deg = vec![0usize; n];
    for &(u, v) in edges {
        out_adj[u].push(v);
        in_deg[v] += 1;
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&v| in_deg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    let mut deg = in_deg.clone();
    while let Some(&u) = ready.iter().next() {
        ready.remove(&u);
        order.push(u);
        for &v in &out_adj[u] {
            deg[v] -= 1;
            if deg[v] == 0 {
                ready.insert(v);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Extract a cycle: walk predecessors inside the unresolved subgraph
    // until a node repeats.
    let unresolved: Vec<bool> = (0..n).map(|v| deg[v] > 0).collect();
    let mut in_adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if unresolved[u] && unresolved[v] {
            in_adj[v].push(u);
        }
    }
    let start = (0..n).find(|&v| unresolved[v]).unwrap();
    let mut seen_at = vec![usize::MAX; n];
    let mut path = vec![start];
    seen_at[start] = 0;
    loop {
        let tail = *path.last().unwrap();
        let pred = in_adj[tail][0];
        if seen_at[pred] != usize::MAX {
            let cycle: Vec<usize> = path[seen_at[pred]..].to_vec();
            return Err(cycle);
        }
        seen_at[pred] = path.len();
        path.push(pred);
    }
}

/// Check assumptions (A1)/(A2) and compute an upwind element order.
///
/// Variable β yields `Verdict::NotApplicable`; the global solver handles
/// those problems.
pub fn check_admissible(mesh: &Mesh, beta: &VectorField) -> AdmissibilityReport {
    if !beta.is_constant() {
        return AdmissibilityReport {
            verdict: Verdict::NotApplicable,
            outflow_counts: Vec::new(),
            a1_ok: Vec::new(),
            a2: Vec::new(),
            upwind_order: None,
            cycle: None,
        };
    }
    let class = classify_facets(mesh, beta);
    let ne = mesh.n_elements();
    let outflow_counts: Vec<usize> = (0..ne).map(|e| class.outflow_count(e)).collect();
    let a1_ok: Vec<bool> = outflow_counts.iter().map(|&c| c == 1).collect();

    let mut a2 = Vec::new();
    let mut edges = Vec::new();
    for (fid, f) in mesh.facets.iter().enumerate() {
        let Some((nbr, nbr_local)) = f.neighbor else {
            continue;
        };
        let owner_class = class.classes[f.owner][f.owner_local];
        match owner_class {
            FacetClass::Inflow => {
                // Inflow for the owner: the neighbor side must be the
                // neighbor's outflow facet.
                let ok = class.classes[nbr][nbr_local] == FacetClass::Outflow
                    && class.outflow_count(nbr) == 1;
                a2.push((fid, ok));
                edges.push((nbr, f.owner));
            }
            FacetClass::Outflow => {
                let ok = class.classes[nbr][nbr_local] == FacetClass::Inflow
                    && class.outflow_count(f.owner) == 1;
                a2.push((fid, ok));
                edges.push((f.owner, nbr));
            }
            FacetClass::Characteristic => {}
            FacetClass::Mixed => unreachable!("constant field cannot give mixed facets"),
        }
    }

    let (upwind_order, cycle) = match topo_sort(ne, &edges) {
        Ok(order) => (Some(order), None),
        Err(cyc) => (None, Some(cyc)),
    };
    let verdict =
        if a1_ok.iter().all(|&b| b) && a2.iter().all(|&(_, ok)| ok) && upwind_order.is_some() {
            Verdict::Admissible
        } else {
            Verdict::Inadmissible
        };
    AdmissibilityReport {
        verdict,
        outflow_counts,
        a1_ok,
        a2,
        upwind_order,
        cycle,
    }
}

/// Affine map bundle between a reference simplex and a physical element:
/// forward and inverse maps, the (positive) Jacobian determinant, and
/// per-reference-facet measure scalings.
#[derive(Debug, Clone)]
pub struct ElementMap {
    pub dim: usize,
    mat: [[f64; 3]; 3],
    inv: [[f64; 3]; 3],
    off: [f64; 3],
    pub det: f64,
    /// Physical facet measure / reference facet measure, per reference facet.
    pub facet_scale: [f64; 4],
    /// Reference facet id -> local facet id of the mapped element.
    pub ref_to_local_facet: [usize; 4],
}

fn invert(dim: usize, m: &[[f64; 3]; 3]) -> ([[f64; 3]; 3], f64) {
    let mut inv = [[0.0; 3]; 3];
    let det;
    match dim {
        1 => {
            det = m[0][0];
            inv[0][0] = 1.0 / det;
        }
        2 => {
            det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            inv[0][0] = m[1][1] / det;
            inv[0][1] = -m[0][1] / det;
            inv[1][0] = -m[1][0] / det;
            inv[1][1] = m[0][0] / det;
        }
        3 => {
            let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
            let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
            let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
            det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
            inv[0][0] = c00 / det;
            inv[1][0] = c01 / det;
            inv[2][0] = c02 / det;
            inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
            inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
            inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
            inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
            inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
            inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
        }
        _ => panic!("unsupported dimension {dim}"),
    }
    (inv, det)
}

fn simplex_facet_measure(dim: usize, verts: &[[f64; 3]], ids: &[usize]) -> f64 {
    match dim {
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

impl ElementMap {
    /// Identity map of the reference simplex onto itself.
    pub fn reference(dim: usize) -> Self {
        let verts = ReferenceSimplex::new(dim).vertices();
        Self::from_ordered_vertices(dim, &verts).expect("reference map is well formed")
    }

    /// Affine map sending reference vertex i to `verts[i]`. The orientation
    /// must be positive.
    pub fn from_ordered_vertices(dim: usize, verts: &[[f64; 3]]) -> Result<Self> {
        assert_eq!(verts.len(), dim + 1);
        let refs = ReferenceSimplex::new(dim).vertices();
        // Solve A * (r_i - r_0) = q_i - q_0 column by column.
        let mut rmat = [[0.0; 3]; 3];
        let mut qmat = [[0.0; 3]; 3];
        for c in 0..dim {
            for r in 0..dim {
                rmat[r][c] = refs[c + 1][r] - refs[0][r];
                qmat[r][c] = verts[c + 1][r] - verts[0][r];
            }
        }
        for d in dim..3 {
            rmat[d][d] = 1.0;
            qmat[d][d] = 1.0;
        }
        let (rinv, _) = invert(3, &rmat);
        let mut mat = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, rrow) in rinv.iter().enumerate() {
                    mat[i][j] += qmat[i][k] * rrow[j];
                }
            }
        }
        let (inv, det) = invert(dim, &mat);
        if det <= 0.0 {
            return Err(Error::InvalidArgument(
                "element vertices are negatively oriented".into(),
            ));
        }
        let mut off = [0.0; 3];
        for i in 0..dim {
            off[i] = verts[0][i];
            for j in 0..dim {
                off[i] -= mat[i][j] * refs[0][j];
            }
        }
        let refsx = ReferenceSimplex::new(dim);
        let mut facet_scale = [1.0; 4];
        for fid in 0..=dim {
            let ids = refsx.facet_vertices(fid);
            facet_scale[fid] = simplex_facet_measure(dim, verts, &ids) / refsx.facet_measure(fid);
        }
        Ok(ElementMap {
            dim,
            mat,
            inv,
            off,
            det,
            facet_scale,
            ref_to_local_facet: [0, 1, 2, 3],
        })
    }

    /// Map of mesh element `e` with the stored vertex order.
    pub fn natural(mesh: &Mesh, e: usize) -> Self {
        let cs = mesh.coords(e);
        let verts: Vec<[f64; 3]> = cs.iter().map(|c| [c[0], c[1], 0.0]).collect();
        Self::from_ordered_vertices(2, &verts).expect("mesh elements are positively oriented")
    }

    /// Map of element `e` permuted so that its unique outflow facet is the
    /// image of the reference outflow facet.
    pub fn aligned(mesh: &Mesh, class: &FacetClassification, e: usize) -> Result<Self> {
        let lf = class
            .unique_outflow(e)
            .ok_or(Error::NoUniqueOutflow { element: e })?;
        let el = mesh.elements[e];
        // Element vertex `lf` is opposite the outflow facet; it must map to
        // the last reference vertex. Fix orientation by swapping the facet
        // vertices if necessary.
        let mut order = [(lf + 1) % 3, (lf + 2) % 3, lf];
        let coords = |i: usize| {
            let v = mesh.vertices[el[order[i]]];
            [v[0], v[1], 0.0]
        };
        let verts = [coords(0), coords(1), coords(2)];
        let area = signed_area(
            [verts[0][0], verts[0][1]],
            [verts[1][0], verts[1][1]],
            [verts[2][0], verts[2][1]],
        );
        if area < 0.0 {
            order.swap(0, 1);
        }
        let verts: Vec<[f64; 3]> = order
            .iter()
            .map(|&i| {
                let v = mesh.vertices[el[i]];
                [v[0], v[1], 0.0]
            })
            .collect();
        let mut map = Self::from_ordered_vertices(2, &verts)?;
        // Reference facet k is opposite reference vertex k, whose image is
        // element vertex order[k]; hence it is local facet order[k].
        map.ref_to_local_facet = [order[0], order[1], order[2], 3];
        Ok(map)
    }

    pub fn to_physical(&self, xref: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.dim {
            out[i] = self.off[i];
            for j in 0..self.dim {
                out[i] += self.mat[i][j] * xref[j];
            }
        }
        out
    }

    pub fn to_reference(&self, x: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i] += self.inv[i][j] * (x[j] - self.off[j]);
            }
        }
        out
    }

    /// Push a reference gradient to physical coordinates: A^{-T} g.
    pub fn push_gradient(&self, g: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i] += self.inv[j][i] * g[j];
            }
        }
        out
    }

    /// Pull a physical vector back to reference coordinates: A^{-1} v.
    pub fn pull_vector(&self, v: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i] += self.inv[i][j] * v[j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg::VectorField;

    const UNIT_SQUARE_TWO_TRIANGLES: &str = "\
# unit square split along the main diagonal
simplexmesh 2
4 2
0 0
1 0
1 1
0 1
0 1 2
0 2 3
";

    #[test]
    fn parse_two_triangle_square() {
        let mesh = parse_mesh(UNIT_SQUARE_TWO_TRIANGLES).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.n_elements(), 2);
        assert_eq!(mesh.facets.len(), 5);
        assert_eq!(mesh.facets.iter().filter(|f| !f.is_boundary()).count(), 1);
        assert!((mesh.area(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parse_rejects_repeated_vertex_in_element() {
        let bad = "simplexmesh 2\n3 1\n0 0\n1 0\n0 1\n0 1 1\n";
        match parse_mesh(bad) {
            Err(Error::Topology(msg)) => assert!(msg.contains("repeats")),
            other => panic!("expected topology error, got {other:?}"),
        }
    }

    #[test]
    fn parse_reports_line_numbers() {
        let bad = "simplexmesh 2\n3 1\n0 0\n1 zebra\n0 1\n0 1 2\n";
        match parse_mesh(bad) {
            Err(Error::MeshParse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_preserves_arrays() {
        let mesh = gen_structured(3, 2, Diagonal::AgainstFlow);
        let text = write_mesh(&mesh);
        let back = parse_mesh(&text).unwrap();
        assert_eq!(mesh.vertices, back.vertices);
        assert_eq!(mesh.elements, back.elements);
    }

    #[test]
    fn structured_element_counts() {
        assert_eq!(gen_structured(4, 4, Diagonal::AgainstFlow).n_elements(), 32);
        assert_eq!(gen_structured(5, 5, Diagonal::AgainstFlow).n_elements(), 50);
        let m = gen_structured(1, 1, Diagonal::AgainstFlow);
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.facets.iter().filter(|f| !f.is_boundary()).count(), 1);
    }

    #[test]
    fn sigma_constant_across_resolutions() {
        let s1 = gen_structured(2, 2, Diagonal::AgainstFlow).sigma;
        let s2 = gen_structured(7, 7, Diagonal::AgainstFlow).sigma;
        let s3 = gen_structured(13, 5, Diagonal::AgainstFlow).sigma;
        assert!((s1 - s2).abs() < 1e-12);
        // Non-square cells change the similarity class.
        assert!(s3 > s1);
        let s4 = gen_structured(13, 5, Diagonal::AgainstFlow).sigma;
        assert!((s3 - s4).abs() < 1e-12);
    }

    fn reference_triangle_mesh() -> Mesh {
        parse_mesh("simplexmesh 2\n3 1\n-1 -1\n1 -1\n0 1\n0 1 2\n").unwrap()
    }

    #[test]
    fn classify_reference_triangle() {
        let mesh = reference_triangle_mesh();
        let beta = VectorField::Constant([1.0, 1.0]);
        let class = classify_facets(&mesh, &beta);
        // Local facet 0 is opposite vertex 0: edge {(1,-1),(0,1)}, outflow.
        assert_eq!(class.classes[0][0], FacetClass::Outflow);
        let n = class.normals[0][0];
        let s5 = 5f64.sqrt();
        assert!((n[0] - 2.0 / s5).abs() < 1e-14 && (n[1] - 1.0 / s5).abs() < 1e-14);
        assert!((class.flux_signs[0][0][0] - 3.0 / s5).abs() < 1e-14);
        // Local facet 2: bottom edge, inflow with n·β = -1.
        assert_eq!(class.classes[0][2], FacetClass::Inflow);
        assert!((class.flux_signs[0][2][0] + 1.0).abs() < 1e-14);
        // β = (1,0) makes the bottom edge characteristic.
        let class = classify_facets(&mesh, &VectorField::Constant([1.0, 0.0]));
        assert_eq!(class.classes[0][2], FacetClass::Characteristic);
    }

    #[test]
    fn classification_invariant_under_translation() {
        let mesh = gen_structured(3, 3, Diagonal::AgainstFlow);
        let mut shifted = mesh.clone();
        for v in &mut shifted.vertices {
            v[0] += 0.37;
            v[1] -= 0.81;
        }
        let beta = VectorField::Constant([1.0, 1.0]);
        let a = classify_facets(&mesh, &beta);
        let b = classify_facets(&shifted, &beta);
        assert_eq!(a.classes, b.classes);
    }

    #[test]
    fn admissibility_against_flow() {
        let mesh = gen_structured(4, 4, Diagonal::AgainstFlow);
        let report = check_admissible(&mesh, &VectorField::Constant([1.0, 1.0]));
        assert_eq!(report.verdict, Verdict::Admissible);
        let order = report.upwind_order.unwrap();
        assert_eq!(order.len(), 32);
        assert!(report.a1_ok.iter().all(|&b| b));
        assert!(report.a2.iter().all(|&(_, ok)| ok));
    }

    #[test]
    fn admissibility_with_flow_fails_a1() {
        let mesh = gen_structured(4, 4, Diagonal::WithFlow);
        let report = check_admissible(&mesh, &VectorField::Constant([1.0, 1.0]));
        assert_eq!(report.verdict, Verdict::Inadmissible);
        assert!(report.outflow_counts.iter().any(|&c| c == 2));
    }

    #[test]
    fn admissibility_single_element() {
        let mesh = reference_triangle_mesh();
        let report = check_admissible(&mesh, &VectorField::Constant([1.0, 1.0]));
        assert_eq!(report.verdict, Verdict::Admissible);
        assert_eq!(report.upwind_order.unwrap(), vec![0]);
    }

    #[test]
    fn a1_a2_imply_acyclic_on_generated_meshes() {
        for &(nx, ny) in &[(2usize, 2usize), (5, 3), (12, 12), (20, 20)] {
            for diag in [Diagonal::AgainstFlow, Diagonal::WithFlow] {
                for beta in [[1.0, 1.0], [1.3, 0.7], [1.0, 0.0]] {
                    let mesh = gen_structured(nx, ny, diag);
                    let report = check_admissible(&mesh, &VectorField::Constant(beta));
                    let a1a2 =
                        report.a1_ok.iter().all(|&b| b) && report.a2.iter().all(|&(_, ok)| ok);
                    if a1a2 {
                        assert!(report.upwind_order.is_some(), "{nx}x{ny} {diag:?} {beta:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn topo_sort_finds_cycles() {
        // 0 -> 1 -> 2 -> 0 plus a detached chain.
        let cycle = topo_sort(5, &[(0, 1), (1, 2), (2, 0), (3, 4)]).unwrap_err();
        assert_eq!(cycle.len(), 3);
        for w in cycle.windows(2) {
            let _ = w;
        }
        let order = topo_sort(4, &[(2, 1), (1, 0), (0, 3)]).unwrap();
        assert_eq!(order, vec![2, 1, 0, 3]);
    }

    #[test]
    fn natural_map_identity_on_reference() {
        let mesh = reference_triangle_mesh();
        let map = ElementMap::natural(&mesh, 0);
        assert!((map.det - 1.0).abs() < 1e-14);
        let p = map.to_physical(&[0.3, -0.2]);
        assert!((p[0] - 0.3).abs() < 1e-14 && (p[1] + 0.2).abs() < 1e-14);
    }

    #[test]
    fn map_determinant_scales_with_area() {
        // Double-size copy of the reference triangle: det = 4.
        let mesh = parse_mesh("simplexmesh 2\n3 1\n-2 -2\n2 -2\n0 2\n0 1 2\n").unwrap();
        let map = ElementMap::natural(&mesh, 0);
        assert!((map.det - 4.0).abs() < 1e-13);
        let back = map.to_reference(&[0.5, 0.5]);
        let fwd = map.to_physical(&back);
        assert!((fwd[0] - 0.5).abs() < 1e-13 && (fwd[1] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn aligned_map_puts_outflow_on_reference_outflow() {
        let mesh = gen_structured(3, 3, Diagonal::AgainstFlow);
        let beta = VectorField::Constant([1.0, 1.0]);
        let class = classify_facets(&mesh, &beta);
        let refsx = ReferenceSimplex::new(2);
        for e in 0..mesh.n_elements() {
            let map = ElementMap::aligned(&mesh, &class, e).unwrap();
            assert!(map.det > 0.0);
            // The image of the reference outflow facet midpoint lies on the
            // element's outflow facet, whose n·β is positive.
            let ids = refsx.facet_vertices(refsx.outflow_facet_id());
            let verts = refsx.vertices();
            let mid = [
                (verts[ids[0]][0] + verts[ids[1]][0]) / 2.0,
                (verts[ids[0]][1] + verts[ids[1]][1]) / 2.0,
            ];
            let phys = map.to_physical(&mid);
            let lf = class.unique_outflow(e).unwrap();
            let (a, b) = mesh.facet_endpoints(e, lf);
            let along = [b[0] - a[0], b[1] - a[1]];
            let cross = along[0] * (phys[1] - a[1]) - along[1] * (phys[0] - a[0]);
            assert!(cross.abs() < 1e-12, "mapped point not on the outflow facet");
            let n = mesh.outward_normal(e, lf);
            assert!(n[0] + n[1] > 0.0);
            assert_eq!(map.ref_to_local_facet[2], lf);
        }
    }

    #[test]
    fn with_flow_mesh_has_element_without_unique_outflow() {
        let mesh = gen_structured(2, 2, Diagonal::WithFlow);
        let beta = VectorField::Constant([1.0, 1.0]);
        let class = classify_facets(&mesh, &beta);
        let bad = (0..mesh.n_elements()).find(|&e| class.unique_outflow(e).is_none());
        let e = bad.expect("some element must fail A1");
        assert!(matches!(
            ElementMap::aligned(&mesh, &class, e),
            Err(Error::NoUniqueOutflow { .. })
        ));
    }
}
