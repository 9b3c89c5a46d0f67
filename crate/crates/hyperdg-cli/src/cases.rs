//! Built-in problem cases with exact solutions.

use std::f64::consts::PI;
use std::sync::Arc;

use hyperdg::dg::{ProblemSpec, ScalarField, ScalarFn, VectorField};

/// Problem data together with the exact solution and its singularity info.
pub struct TestCase {
    pub name: &'static str,
    pub spec: ProblemSpec,
    pub exact: ScalarFn,
    /// Vertical line where the exact solution loses smoothness.
    pub singular_line_x: Option<f64>,
}

fn u_singular(alpha: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync + Copy {
    move |x: &[f64]| {
        let mut v = (PI * x[1] / 2.0).cos();
        if x[0] > 0.0 {
            v += x[0].powf(alpha);
        }
        v
    }
}

fn u_singular_dx(alpha: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync + Copy {
    move |x: &[f64]| {
        if x[0] > 0.0 {
            alpha * x[0].powf(alpha - 1.0)
        } else {
            0.0
        }
    }
}

fn u_singular_dy() -> impl Fn(&[f64]) -> f64 + Send + Sync + Copy {
    |x: &[f64]| -(PI / 2.0) * (PI * x[1] / 2.0).sin()
}

/// Constant convection field β = (1,1), reaction c = 1, exact solution
/// cos(πy/2) + max(x,0)^α. The source is computed analytically piecewise and
/// the inflow data is the exact trace.
pub fn build_testcase1(alpha: f64) -> TestCase {
    assert!(alpha > 0.0);
    let u = u_singular(alpha);
    let ux = u_singular_dx(alpha);
    let uy = u_singular_dy();
    let f: ScalarFn = Arc::new(move |x: &[f64]| ux(x) + uy(x) + u(x));
    let g: ScalarFn = Arc::new(move |x: &[f64]| u(x));
    let spec = ProblemSpec::new(
        VectorField::Constant([1.0, 1.0]),
        ScalarField::Constant(1.0),
        f,
        g,
        1.0,
    )
    .expect("constant-field case is well posed");
    TestCase {
        name: "testcase1",
        spec,
        exact: Arc::new(move |x: &[f64]| u(x)),
        singular_line_x: Some(0.0),
    }
}

/// Variable convection field β = (2-y², 2-x) (divergence free) and reaction
/// c = 1 + (1+x)(1+y²), same exact solution as test case 1.
pub fn build_testcase2(alpha: f64) -> TestCase {
    assert!(alpha > 0.0);
    let u = u_singular(alpha);
    let ux = u_singular_dx(alpha);
    let uy = u_singular_dy();
    let beta = |x: &[f64]| [2.0 - x[1] * x[1], 2.0 - x[0]];
    let c = |x: &[f64]| 1.0 + (1.0 + x[0]) * (1.0 + x[1] * x[1]);
    let f: ScalarFn = Arc::new(move |x: &[f64]| {
        let b = beta(x);
        b[0] * ux(x) + b[1] * uy(x) + c(x) * u(x)
    });
    let g: ScalarFn = Arc::new(move |x: &[f64]| u(x));
    let spec = ProblemSpec::new(
        VectorField::Variable {
            eval: Arc::new(beta),
            divergence: Arc::new(|_: &[f64]| 0.0),
        },
        ScalarField::Variable(Arc::new(c)),
        f,
        g,
        1.0,
    )
    .expect("c >= 1 on the closed square");
    TestCase {
        name: "testcase2",
        spec,
        exact: Arc::new(move |x: &[f64]| u(x)),
        singular_line_x: Some(0.0),
    }
}

/// Polynomial manufactured solution of the given total degree with β = (1,1)
/// and c = 1; the discrete solution must reproduce it exactly.
pub fn build_manufactured(degree: usize) -> TestCase {
    let u = move |x: &[f64]| (0.3 + 0.5 * x[0] + 0.35 * x[1]).powi(degree as i32);
    let du = move |x: &[f64]| {
        if degree == 0 {
            return [0.0, 0.0];
        }
        let base = degree as f64 * (0.3 + 0.5 * x[0] + 0.35 * x[1]).powi(degree as i32 - 1);
        [0.5 * base, 0.35 * base]
    };
    let f: ScalarFn = Arc::new(move |x: &[f64]| {
        let g = du(x);
        g[0] + g[1] + u(x)
    });
    let g: ScalarFn = Arc::new(move |x: &[f64]| u(x));
    let spec = ProblemSpec::new(
        VectorField::Constant([1.0, 1.0]),
        ScalarField::Constant(1.0),
        f,
        g,
        1.0,
    )
    .expect("constant-field case is well posed");
    TestCase {
        name: "manufactured",
        spec,
        exact: Arc::new(move |x: &[f64]| u(x)),
        singular_line_x: None,
    }
}
