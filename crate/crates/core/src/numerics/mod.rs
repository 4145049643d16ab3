//! Dense linear algebra, norms, spectral norms, linear programming and
//! finite differences.

mod diff;
mod linalg;
mod norms;
mod power;
mod simplex;

pub use diff::{finite_difference_gradient, relative_error};
pub use linalg::{axpy, dot, sub, Matrix, Vector};
pub use norms::{induced_norm, norm, operator_norm, NormTag};
pub use power::{
    default_start, power_iteration, power_iteration_from, second_singular_value, PowerIteration,
    DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
pub use simplex::{solve_lp, LpProblem, LpSolution, LpStatus, FEASIBILITY_TOL};

/// Write a matrix as a CSV block, 17 significant digits per entry.
pub fn write_matrix_csv(w: &Matrix, out: &mut String) {
    for i in 0..w.rows() {
        let row: Vec<String> = w.row(i).iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
}

/// 17 significant digits in scientific notation; parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parse one CSV line of floats.
pub fn parse_csv_floats(line: &str, line_no: usize) -> crate::Result<Vec<f64>> {
    line.split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<f64>()
                .map_err(|e| crate::Error::parse(line_no, format!("bad float '{tok}': {e}")))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(crate::Error::parse(line_no, "non-finite value"))
                    }
                })
        })
        .collect()
}
