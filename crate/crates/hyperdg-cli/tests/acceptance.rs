//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with the measured quantities (run with `--nocapture` to see them all).

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hyperdg::dg::{
    stability_report, Assembler, DGSolution, ProblemSpec, QuadPolicy, ScalarField, ScalarFn,
    VectorField,
};
use hyperdg::mesh::{check_admissible, gen_structured, Diagonal, ElementMap};
use hyperdg::orthopoly::ModalBasis;
use hyperdg::projectors::{cdg_from_modal, tabulate_basis, CdgProjector, ModalCoeffs};
use hyperdg::quadrature::simplex_rule;
use hyperdg_cli::cases::build_manufactured;
use hyperdg_cli::config::{Case, DiagonalSpec, MeshSpec, SolverChoice, StudyConfig};
use hyperdg_cli::rates::{fit_rate, ErrorColumn};
use hyperdg_cli::study::{
    run_convergence, run_projector_study, ConvergenceRecord, ProjectorRecord,
};

fn study_config(
    case: Case,
    alpha: f64,
    nx: usize,
    p_range: [usize; 2],
    solver: SolverChoice,
) -> StudyConfig {
    StudyConfig {
        case,
        alpha,
        mesh: MeshSpec::Generator {
            nx,
            ny: nx,
            diagonal: DiagonalSpec::AgainstFlow,
        },
        p_range,
        solver,
        quadrature_margin: 4,
        singular_refine_levels: 8,
        output: None,
    }
}

struct Tc1Run {
    alpha: f64,
    aligned: bool,
    records: Vec<ConvergenceRecord>,
}

static TC1: OnceLock<(Vec<Tc1Run>, f64)> = OnceLock::new();

/// Test case 1 sweeps shared by criteria 5 and 6: α in {0.5, 1.5, 2.5} on
/// the 50-triangle mesh (x = 0 inside cells) and the 32-triangle mesh
/// (x = 0 on edges), p in [8, 24].
fn tc1_runs() -> &'static (Vec<Tc1Run>, f64) {
    TC1.get_or_init(|| {
        let start = Instant::now();
        let mut runs = Vec::new();
        for alpha in [0.5, 1.5, 2.5] {
            for aligned in [false, true] {
                let nx = if aligned { 4 } else { 5 };
                let cfg = study_config(Case::Testcase1, alpha, nx, [8, 24], SolverChoice::Sweep);
                let records = run_convergence(&cfg).expect("test case 1 sweep");
                runs.push(Tc1Run {
                    alpha,
                    aligned,
                    records,
                });
            }
        }
        (runs, start.elapsed().as_secs_f64())
    })
}

static PROJ: OnceLock<(Vec<(f64, Vec<ProjectorRecord>)>, f64)> = OnceLock::new();

/// Reference-triangle projector study shared by criteria 3 and 4.
fn projector_studies() -> &'static (Vec<(f64, Vec<ProjectorRecord>)>, f64) {
    PROJ.get_or_init(|| {
        let start = Instant::now();
        let studies = [1.5, 2.5]
            .into_iter()
            .map(|alpha| {
                let cfg = study_config(Case::ProjectorStudy, alpha, 4, [4, 20], SolverChoice::Auto);
                (alpha, run_projector_study(&cfg).expect("projector study"))
            })
            .collect();
        (studies, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_01_polynomial_exactness() {
    let start = Instant::now();
    let mut worst_l2 = 0.0f64;
    let mut worst_dg = 0.0f64;
    for degree in 1..=5usize {
        let cfg = study_config(
            Case::Manufactured,
            degree as f64,
            4,
            [degree, degree],
            SolverChoice::Sweep,
        );
        let records = run_convergence(&cfg).expect("manufactured sweep");
        let r = &records[0];
        worst_l2 = worst_l2.max(r.error_l2);
        worst_dg = worst_dg.max(r.error_dg);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_l2 < 1e-10 && worst_dg < 1e-9 && elapsed < 5.0;
    println!(
        "criterion 1 (polynomial exactness): {} — max l2 {worst_l2:.2e} (< 1e-10), max dg {worst_dg:.2e} (< 1e-9), {elapsed:.2}s (< 5s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(worst_l2 < 1e-10, "l2 exactness: {worst_l2:.3e}");
    assert!(worst_dg < 1e-9, "dg exactness: {worst_dg:.3e}");
    assert!(elapsed < 5.0, "runtime {elapsed:.2}s exceeds 5s");
}

#[test]
fn criterion_02_cdg_oracle_equivalence() {
    struct Ctx {
        proj: CdgProjector,
        n_in: usize,
        vol_tab: DMatrix<f64>,
        facet_tab: DMatrix<f64>,
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut max_diff = 0.0f64;
    let mut cache: std::collections::HashMap<(usize, usize), Ctx> =
        std::collections::HashMap::new();
    for dim in 1..=3usize {
        // 100 instances per dimension, cycling p over 1..=8.
        for instance in 0..100usize {
            let p = instance % 8 + 1;
            let deg = p + 6;
            let map = ElementMap::reference(dim);
            let ctx = cache.entry((dim, p)).or_insert_with(|| {
                let rule = simplex_rule(dim, 2 * deg + 4);
                let proj = CdgProjector::new(dim, p, rule, None).unwrap();
                let in_basis = ModalBasis::new(dim, deg);
                let vol_tab = tabulate_basis(&in_basis, proj.rule());
                let fpts = proj.physical_facet_points(&ElementMap::reference(dim));
                let mut facet_tab = DMatrix::zeros(fpts.len(), in_basis.len());
                let mut row = vec![0.0; in_basis.len()];
                for (q, pt) in fpts.iter().enumerate() {
                    in_basis.eval_all(&pt[..dim], &mut row);
                    for (k, v) in row.iter().enumerate() {
                        facet_tab[(q, k)] = *v;
                    }
                }
                Ctx {
                    proj,
                    n_in: in_basis.len(),
                    vol_tab,
                    facet_tab,
                }
            });
            let coeffs =
                DVector::from_iterator(ctx.n_in, (0..ctx.n_in).map(|_| rng.gen_range(-1.0..1.0)));
            let input = ModalCoeffs {
                dim,
                degree: deg,
                values: coeffs.iter().copied().collect(),
            };
            let f_vol: Vec<f64> = (&ctx.vol_tab * &coeffs).iter().copied().collect();
            let f_facet: Vec<f64> = (&ctx.facet_tab * &coeffs).iter().copied().collect();
            let projected = ctx.proj.project_sampled(&f_vol, &f_facet, &map).unwrap();
            let closed = cdg_from_modal(&input, p);
            for (a, b) in closed.values.iter().zip(&projected.values) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = max_diff < 1e-9 && elapsed < 30.0;
    println!(
        "criterion 2 (CDG oracle equivalence): {} — max coefficient gap {max_diff:.2e} (< 1e-9) over 300 random inputs, {elapsed:.2}s (< 30s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(max_diff < 1e-9, "routes disagree by {max_diff:.3e}");
    assert!(elapsed < 30.0, "runtime {elapsed:.2}s exceeds 30s");
}

#[test]
fn criterion_03_cdg_l2_rate() {
    let (studies, elapsed) = projector_studies();
    let mut all_pass = true;
    let mut detail = String::new();
    for (alpha, rows) in studies {
        let pairs: Vec<(usize, f64)> = rows.iter().map(|r| (r.p, r.cdg_l2_error)).collect();
        let fit = hyperdg_cli::rates::fit_rate_pairs(&pairs, 4, 20).unwrap();
        let target = -(alpha + 0.5);
        let ok = (fit.slope - target).abs() <= 0.3;
        all_pass &= ok;
        detail.push_str(&format!(
            "alpha={alpha}: slope {:.3} vs {target:.1} ±0.3 [{}]; ",
            fit.slope,
            if ok { "ok" } else { "out" }
        ));
    }
    let time_ok = *elapsed < 60.0;
    println!(
        "criterion 3 (CDG L2 rate): {} — {detail}study took {elapsed:.1}s (< 60s)",
        if all_pass && time_ok { "PASS" } else { "FAIL" }
    );
    assert!(all_pass, "{detail}");
    assert!(time_ok, "study runtime {elapsed:.1}s exceeds 60s");
}

#[test]
fn criterion_04_cdg_inflow_trace_rate() {
    // This check pins the slope to -alpha ±0.3. The measured decay of the
    // inflow trace error for this family is ~ p^{-(alpha+1/2)} — half an
    // order *better* than the guarantee — which falls outside the two-sided
    // band. The criterion is asserted as stated and fails honestly; the
    // one-sided bound (never worse than the guarantee) holds with margin.
    let (studies, _) = projector_studies();
    let mut all_pass = true;
    let mut detail = String::new();
    for (alpha, rows) in studies {
        let pairs: Vec<(usize, f64)> = rows
            .iter()
            .map(|r| (r.p, r.cdg_inflow_trace_error))
            .collect();
        let fit = hyperdg_cli::rates::fit_rate_pairs(&pairs, 4, 20).unwrap();
        let target = -alpha;
        let ok = (fit.slope - target).abs() <= 0.3;
        all_pass &= ok;
        detail.push_str(&format!(
            "alpha={alpha}: slope {:.3} vs {target:.1} ±0.3 [{}]; ",
            fit.slope,
            if ok {
                "ok"
            } else {
                "out (steeper than the guarantee)"
            }
        ));
    }
    println!(
        "criterion 4 (CDG inflow trace rate): {} — {detail}",
        if all_pass { "PASS" } else { "FAIL" }
    );
    assert!(
        all_pass,
        "inflow trace decays faster than the asserted band: {detail}"
    );
}

#[test]
fn criterion_05_testcase1_l2_rates() {
    // The aligned (x = 0 on edges) half of this criterion pins the L² slope
    // to -2α ±0.35. The measured aligned L² decay is ≈ -(2α+1): doubling
    // acts on the full L² exponent α+1/2, so the band is missed on the
    // steep side (cleanest at α = 0.5, where the asymptotic slope is -2).
    // The -2α doubling does hold in the DG norm, printed below for
    // comparison. The assertion keeps the criterion as stated.
    let (runs, elapsed) = tc1_runs();
    let mut all_pass = true;
    let mut detail = String::new();
    for run in runs {
        let fit = fit_rate(&run.records, ErrorColumn::L2, 8, 24).unwrap();
        let (target, tol) = if run.aligned {
            (-2.0 * run.alpha, 0.35)
        } else {
            (-(0.5 + run.alpha), 0.3)
        };
        let ok = (fit.slope - target).abs() <= tol;
        all_pass &= ok;
        detail.push_str(&format!(
            "alpha={} {}: l2 {:.3} vs {target:.1} ±{tol} [{}]; ",
            run.alpha,
            if run.aligned { "aligned" } else { "interior" },
            fit.slope,
            if ok { "ok" } else { "out" }
        ));
        if run.aligned {
            let dg = fit_rate(&run.records, ErrorColumn::Dg, 8, 24).unwrap();
            detail.push_str(&format!(
                "(aligned dg slope {:.3} matches -2α = {:.1}); ",
                dg.slope,
                -2.0 * run.alpha
            ));
        }
    }
    let time_ok = *elapsed < 600.0;
    println!(
        "criterion 5 (test case 1 L2 rates): {} — {detail}sweeps took {elapsed:.1}s (< 600s)",
        if all_pass && time_ok { "PASS" } else { "FAIL" }
    );
    assert!(all_pass, "{detail}");
    assert!(time_ok, "runtime {elapsed:.1}s exceeds 10 minutes");
}

#[test]
fn criterion_06_dg_norm_superconvergence() {
    let (runs, _) = tc1_runs();
    let mut all_pass = true;
    let mut detail = String::new();
    for run in runs.iter().filter(|r| !r.aligned) {
        let fit = fit_rate(&run.records, ErrorColumn::Dg, 8, 24).unwrap();
        let guarantee = -run.alpha + 0.3;
        let observed_target = -(0.5 + run.alpha);
        let ok = fit.slope <= guarantee;
        all_pass &= ok;
        detail.push_str(&format!(
            "alpha={}: dg slope {:.3} (guarantee ≤ {guarantee:.1}, superconvergent target {observed_target:.1}) [{}]; ",
            run.alpha,
            fit.slope,
            if ok { "ok" } else { "out" }
        ));
    }
    println!(
        "criterion 6 (DG-norm superconvergence): {} — {detail}",
        if all_pass { "PASS" } else { "FAIL" }
    );
    assert!(all_pass, "{detail}");
}

#[test]
fn criterion_07_testcase2_variable_field() {
    let mut all_pass = true;
    let mut detail = String::new();
    for alpha in [0.5, 1.5, 2.5] {
        let cfg = study_config(Case::Testcase2, alpha, 5, [1, 16], SolverChoice::Global);
        let records = run_convergence(&cfg).expect("test case 2 global solve");
        let max_residual = records.iter().map(|r| r.residual).fold(0.0f64, f64::max);
        let fit = fit_rate(&records, ErrorColumn::L2, 8, 16).unwrap();
        let target = -(0.5 + alpha);
        let ok = max_residual < 1e-10 && (fit.slope - target).abs() <= 0.4;
        all_pass &= ok;
        detail.push_str(&format!(
            "alpha={alpha}: slope {:.3} vs {target:.1} ±0.4, max residual {max_residual:.1e} [{}]; ",
            fit.slope,
            if ok { "ok" } else { "out" }
        ));
    }
    println!(
        "criterion 7 (test case 2, variable field): {} — {detail}",
        if all_pass { "PASS" } else { "FAIL" }
    );
    assert!(all_pass, "{detail}");
}

fn random_poly(rng: &mut ChaCha8Rng, degree: usize) -> ScalarFn {
    let coeffs: Vec<((i32, i32), f64)> = (0..=degree as i32)
        .flat_map(|i| (0..=(degree as i32 - i)).map(move |j| (i, j)))
        .map(|(i, j)| ((i, j), rng.gen_range(-1.0..1.0)))
        .collect();
    std::sync::Arc::new(move |x: &[f64]| {
        coeffs
            .iter()
            .map(|((i, j), c)| c * x[0].powi(*i) * x[1].powi(*j))
            .sum()
    })
}

#[test]
fn criterion_08_stability_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mesh = gen_structured(4, 4, Diagonal::AgainstFlow);
    let mut all_pass = true;
    let mut printed_violations = 0usize;
    let mut worst_margin = f64::NEG_INFINITY;
    for instance in 0..50usize {
        let p = instance % 6 + 1;
        let f = random_poly(&mut rng, 3);
        let g = random_poly(&mut rng, 3);
        let spec = ProblemSpec::new(
            VectorField::Constant([1.0, 1.0]),
            ScalarField::Constant(1.0),
            f,
            g,
            1.0,
        )
        .unwrap();
        let report = check_admissible(&mesh, &spec.beta);
        let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
        let sol = asm.solve_sweep(&report).unwrap();
        let stab = stability_report(&asm, &sol, 1e-8);
        worst_margin = worst_margin.max(stab.lhs_total - stab.rhs_squared);
        if !stab.ok_squared {
            all_pass = false;
        }
        if !stab.ok_printed {
            printed_violations += 1;
        }
    }
    println!(
        "criterion 8 (stability bound): {} — 50 instances, worst lhs-rhs gap {worst_margin:.2e} (≤ 1e-8); unsquared-‖f‖ reading violated {printed_violations} times",
        if all_pass { "PASS" } else { "FAIL" }
    );
    assert!(all_pass, "stability triple exceeded the bound");
}

#[test]
fn criterion_09_energy_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mesh = gen_structured(4, 4, Diagonal::AgainstFlow);
    let zero: ScalarFn = std::sync::Arc::new(|_: &[f64]| 0.0);
    let spec = ProblemSpec::new(
        VectorField::Constant([1.0, 1.0]),
        ScalarField::Constant(1.0),
        zero.clone(),
        zero,
        1.0,
    )
    .unwrap();
    let mut worst = 0.0f64;
    for instance in 0..20usize {
        let p = instance % 5;
        let asm = Assembler::new(&mesh, &spec, p, QuadPolicy::smooth());
        let n = asm.basis.len();
        let mut v = DGSolution {
            p,
            elements: Vec::new(),
        };
        let mut total = 0.0;
        for _ in 0..mesh.n_elements() {
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            total += vals.iter().map(|x| x * x).sum::<f64>();
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
        worst = worst.max(asm.energy_identity_check(&v).unwrap());
    }
    let pass = worst < 1e-10;
    println!(
        "criterion 9 (energy identity): {} — worst residual {worst:.2e} (< 1e-10) over 20 random discrete functions",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "energy identity residual {worst:.3e}");
}

#[test]
fn criterion_10_sweep_global_equivalence() {
    let mesh = gen_structured(4, 4, Diagonal::AgainstFlow);
    let mut worst = 0.0f64;
    for degree in 1..=5usize {
        let case = build_manufactured(degree);
        let report = check_admissible(&mesh, &case.spec.beta);
        let asm = Assembler::new(&mesh, &case.spec, degree, QuadPolicy::smooth());
        let sweep = asm.solve_sweep(&report).unwrap();
        let (global, stats) = asm.solve_global().unwrap();
        assert!(stats.residual < 1e-10);
        for e in 0..mesh.n_elements() {
            for (a, b) in sweep.elements[e]
                .values
                .iter()
                .zip(&global.elements[e].values)
            {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let pass = worst < 1e-9;
    println!(
        "criterion 10 (sweep/global equivalence): {} — max coefficient gap {worst:.2e} (< 1e-9)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "solution paths disagree by {worst:.3e}");
}
