//! Chain-MDP value-iteration oracle for the bootstrap target and critic update.

mod common;

use common::tabular::{run, value_iteration, GAMMA, INNER, OUTER, TOL};

#[test]
fn value_iteration_closed_form() {
    let q = value_iteration();
    // Right from state s reaches the goal in 4 - s moves.
    for (s, row) in q.iter().enumerate() {
        assert!((row[0] - GAMMA.powi(3 - s as i32)).abs() < 1e-12);
    }
    assert!((q[0][1] - GAMMA.powi(4)).abs() < 1e-12);
    assert!((q[3][1] - GAMMA.powi(2)).abs() < 1e-12);
}

#[test]
fn fitted_iteration_converges_to_q_star() {
    let out = run(OUTER, INNER);
    eprintln!("max error {:.3e}", out.max_error);
    assert!(
        out.max_error <= TOL,
        "max |Q - Q*| = {:.3e} after {} iterations",
        out.max_error,
        out.iterations
    );
}
