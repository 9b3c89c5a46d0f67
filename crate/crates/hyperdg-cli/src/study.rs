//! Convergence sweeps, the reference-element projector study, and CSV
//! emission.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use hyperdg::dg::{Assembler, QuadPolicy};
use hyperdg::mesh::{check_admissible, Verdict};
use hyperdg::norms::{dg_error, l2_error};
use hyperdg::orthopoly::poly_space_dim;
use hyperdg::projectors::{eval_modal, l2_project, CdgProjector};
use hyperdg::quadrature::{composite_interval, composite_refine, simplex_rule, QuadRule};

use crate::cases::{build_manufactured, build_testcase1, build_testcase2, TestCase};
use crate::config::{Case, SolverChoice, StudyConfig};
use crate::error::{HarnessError, Result};

/// One row of a convergence sweep.
#[derive(Debug, Clone)]
pub struct ConvergenceRecord {
    pub p: usize,
    pub error_l2: f64,
    pub error_dg: f64,
    pub dofs: usize,
    pub wall_time_s: f64,
    pub solver: String,
    pub residual: f64,
}

pub fn build_case(cfg: &StudyConfig) -> Result<TestCase> {
    match cfg.case {
        Case::Testcase1 => Ok(build_testcase1(cfg.alpha)),
        Case::Testcase2 => Ok(build_testcase2(cfg.alpha)),
        Case::Manufactured => Ok(build_manufactured(cfg.alpha as usize)),
        Case::ProjectorStudy => Err(HarnessError::Config(
            "projector_study configs drive run_projector_study, not convergence sweeps".into(),
        )),
    }
}

fn policy_for(cfg: &StudyConfig, case: &TestCase) -> QuadPolicy {
    QuadPolicy {
        exactness_margin: cfg.quadrature_margin,
        singular_line_x: case.singular_line_x,
        refine_levels: cfg.singular_refine_levels,
    }
}

/// Run the configured case for every p in the range; per-p solver failures
/// are recorded in-row and the sweep continues.
pub fn run_convergence(cfg: &StudyConfig) -> Result<Vec<ConvergenceRecord>> {
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let case = build_case(cfg)?;
    let policy = policy_for(cfg, &case);

    let report = check_admissible(&mesh, &case.spec.beta);
    let use_sweep = match cfg.solver {
        SolverChoice::Sweep => {
            if report.verdict != Verdict::Admissible {
                return Err(HarnessError::Config(format!(
                    "mesh is not admissible for the sweep solver ({:?}); use solver=auto",
                    report.verdict
                )));
            }
            true
        }
        SolverChoice::Global => false,
        SolverChoice::Auto => report.verdict == Verdict::Admissible,
    };

    let [p_lo, p_hi] = cfg.p_range;
    let mut records = Vec::with_capacity(p_hi - p_lo + 1);
    for p in p_lo..=p_hi {
        let asm = Assembler::new(&mesh, &case.spec, p, policy);
        let start = Instant::now();
        let solved = if use_sweep {
            asm.solve_sweep(&report)
                .map(|sol| (sol, "sweep".to_string(), None))
        } else {
            asm.solve_global().map(|(sol, stats)| {
                let name = match stats.method {
                    hyperdg::dg::SolveMethod::GaussSeidel => "gauss_seidel",
                    hyperdg::dg::SolveMethod::Direct => "direct",
                    hyperdg::dg::SolveMethod::Sweep => "sweep",
                };
                (sol, name.to_string(), Some(stats.residual))
            })
        };
        let wall_time_s = start.elapsed().as_secs_f64();
        match solved {
            Ok((sol, solver, residual)) => {
                let residual = residual.unwrap_or_else(|| asm.relative_residual(&sol));
                let e_l2 = l2_error(&mesh, &sol, &*case.exact, &policy);
                let report_dg = dg_error(&mesh, &sol, &*case.exact, &case.spec, &policy);
                records.push(ConvergenceRecord {
                    p,
                    error_l2: e_l2,
                    error_dg: report_dg.dg_error,
                    dofs: mesh.n_elements() * poly_space_dim(2, p),
                    wall_time_s,
                    solver,
                    residual,
                });
            }
            Err(e) => {
                records.push(ConvergenceRecord {
                    p,
                    error_l2: f64::NAN,
                    error_dg: f64::NAN,
                    dofs: mesh.n_elements() * poly_space_dim(2, p),
                    wall_time_s,
                    solver: format!("failed: {e}"),
                    residual: f64::NAN,
                });
            }
        }
    }
    if let Some(path) = &cfg.output {
        write_convergence_csv(&records, Path::new(path))?;
    }
    Ok(records)
}

fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Write the convergence CSV atomically (temp file in the same directory,
/// then rename). Failure messages in the solver column are stripped of
/// commas to keep the rows parseable.
pub fn write_convergence_csv(records: &[ConvergenceRecord], path: &Path) -> Result<()> {
    let mut body = String::from("p,error_l2,error_dg,dofs,wall_time_s,solver,residual\n");
    for r in records {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.p,
            fmt17(r.error_l2),
            fmt17(r.error_dg),
            r.dofs,
            fmt17(r.wall_time_s),
            r.solver.replace(',', ";"),
            fmt17(r.residual),
        ));
    }
    atomic_write(path, &body)
}

fn atomic_write(path: &Path, body: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Parse a convergence CSV written by [`write_convergence_csv`].
pub fn read_convergence_csv(text: &str) -> Result<Vec<ConvergenceRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Csv("empty file".into()))?;
    if header != "p,error_l2,error_dg,dofs,wall_time_s,solver,residual" {
        return Err(HarnessError::Csv(format!("unexpected header: {header}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(HarnessError::Csv(format!(
                "row {}: expected 7 columns, got {}",
                i + 2,
                cols.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            if s == "nan" {
                return Ok(f64::NAN);
            }
            s.parse()
                .map_err(|e| HarnessError::Csv(format!("row {}: {e}", i + 2)))
        };
        out.push(ConvergenceRecord {
            p: cols[0]
                .parse()
                .map_err(|e| HarnessError::Csv(format!("row {}: {e}", i + 2)))?,
            error_l2: parse_f(cols[1])?,
            error_dg: parse_f(cols[2])?,
            dofs: cols[3]
                .parse()
                .map_err(|e| HarnessError::Csv(format!("row {}: {e}", i + 2)))?,
            wall_time_s: parse_f(cols[4])?,
            solver: cols[5].to_string(),
            residual: parse_f(cols[6])?,
        });
    }
    Ok(out)
}

/// One row of the reference-triangle projector study.
#[derive(Debug, Clone)]
pub struct ProjectorRecord {
    pub p: usize,
    pub cdg_l2_error: f64,
    pub cdg_outflow_trace_error: f64,
    pub cdg_inflow_trace_error: f64,
    pub l2proj_trace_error: f64,
}

/// Projector study on the reference triangle for f = max(x,0)^alpha:
/// L² and facet-trace errors of the facet-matching projection, plus the
/// outflow trace error of the plain L² projection.
pub fn run_projector_study(cfg: &StudyConfig) -> Result<Vec<ProjectorRecord>> {
    cfg.validate()?;
    if cfg.case != Case::ProjectorStudy {
        return Err(HarnessError::Config(
            "run_projector_study needs case = projector_study".into(),
        ));
    }
    let alpha = cfg.alpha;
    let f = move |x: &[f64]| {
        if x[0] > 0.0 {
            x[0].powf(alpha)
        } else {
            0.0
        }
    };
    let map = hyperdg::mesh::ElementMap::reference(2);
    let [p_lo, p_hi] = cfg.p_range;
    let mut rows = Vec::new();
    for p in p_lo..=p_hi {
        let levels = cfg.singular_refine_levels.max(p);
        let exactness = 2 * p + cfg.quadrature_margin;
        let n_facet = p + cfg.quadrature_margin;
        let vol = composite_refine(&simplex_rule(2, exactness), 0.0, levels);
        let (fx, fw) = composite_interval(-1.0, 1.0, &[0.0], levels, n_facet);
        let facet = QuadRule {
            dim: 1,
            points: fx.iter().map(|&x| [x, 0.0, 0.0]).collect(),
            weights: fw.clone(),
            exactness,
        };
        let proj = CdgProjector::new(2, p, vol, Some(facet))?;
        let q = proj.project(&f, &map)?;
        let basis = &proj.basis;

        let qvals = proj.values_at_rule_points(&q);
        let mut l2_sq = 0.0;
        for ((pt, w), qv) in proj
            .rule()
            .points
            .iter()
            .zip(&proj.rule().weights)
            .zip(&qvals)
        {
            let d = f(&pt[..2]) - qv;
            l2_sq += w * d * d;
        }

        let trace_sq = |coeffs: &hyperdg::projectors::ModalCoeffs| {
            let mut acc = 0.0;
            for (&x, &w) in fx.iter().zip(&fw) {
                let pt = [x, -1.0];
                let d = f(&pt) - eval_modal(coeffs, basis, &map, &pt);
                acc += w * d * d;
            }
            acc
        };
        let outflow_sq = trace_sq(&q);

        let mut inflow_sq = 0.0;
        let edges: [([f64; 2], [f64; 2]); 2] =
            [([-1.0, -1.0], [0.0, 1.0]), ([1.0, -1.0], [0.0, 1.0])];
        for (a, b) in edges {
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let (ts, ws) = composite_interval(0.0, 1.0, &[1.0], levels, n_facet);
            for (&t, &w) in ts.iter().zip(&ws) {
                let pt = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let d = f(&pt) - eval_modal(&q, basis, &map, &pt);
                inflow_sq += w * len * d * d;
            }
        }

        let pi0 = l2_project(&f, &map, basis, proj.rule());
        let l2proj_sq = trace_sq(&pi0);

        rows.push(ProjectorRecord {
            p,
            cdg_l2_error: l2_sq.sqrt(),
            cdg_outflow_trace_error: outflow_sq.sqrt(),
            cdg_inflow_trace_error: inflow_sq.sqrt(),
            l2proj_trace_error: l2proj_sq.sqrt(),
        });
    }
    if let Some(path) = &cfg.output {
        write_projector_csv(&rows, Path::new(path))?;
    }
    Ok(rows)
}

pub fn write_projector_csv(rows: &[ProjectorRecord], path: &Path) -> Result<()> {
    let mut body = String::from(
        "p,cdg_l2_error,cdg_outflow_trace_error,cdg_inflow_trace_error,l2proj_trace_error\n",
    );
    for r in rows {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            r.p,
            fmt17(r.cdg_l2_error),
            fmt17(r.cdg_outflow_trace_error),
            fmt17(r.cdg_inflow_trace_error),
            fmt17(r.l2proj_trace_error),
        ));
    }
    atomic_write(path, &body)
}
