//! Text report of the numerical checks in the core `theory` module.

use std::fmt::Write;

use recourse_drift_core::theory::{
    condition_sweep, f_condition_check, fixed_point_sweep, one_dimensional_grid_check, perturbation_spot_check,
    threshold_shift_check, Perturbation, CONDITION4_COUNTEREXAMPLE,
};

use crate::error::Result;

/// Runs every check. `samples` drives the F-function sweep; `seeds` is the
/// number of instances for the perturbation and threshold-shift harnesses.
pub fn theory_report(samples: usize, seeds: u64, seed: u64) -> Result<String> {
    let mut out = String::new();
    let sweep = condition_sweep(samples, seed);
    let _ = writeln!(out, "F-function sign conditions ({samples} samples)");
    for (c, t) in sweep.tallies.iter().enumerate() {
        let _ = writeln!(
            out,
            "  condition {}: tested {:>7}  violations {:>6}  rate {:.4}  discarded {}",
            c + 1,
            t.tested,
            t.violations,
            t.violation_rate(),
            t.discarded
        );
    }
    let ce = f_condition_check(&CONDITION4_COUNTEREXAMPLE)?;
    let _ = writeln!(
        out,
        "  condition 4 counterexample {:?}: F = {:.6} (violates: {})",
        CONDITION4_COUNTEREXAMPLE,
        ce.f,
        ce.violated(3)
    );

    let fixed = fixed_point_sweep(100, seed)?;
    let (solver, grid) = one_dimensional_grid_check()?;
    let _ = writeln!(out, "Recourse fixed point");
    let _ =
        writeln!(out, "  gradient solver vs closed form, {} instances: max gap {:.3e}", fixed.instances, fixed.max_gap);
    let _ = writeln!(out, "  1-D instance: solver {solver:.6}, grid {grid:.6}, gap {:.3e}", (solver - grid).abs());

    let _ = writeln!(out, "Mean-logit decrease ({seeds} seeds each)");
    for (label, kind) in
        [("failed recourse", Perturbation::FailedRecourse), ("limited resource", Perturbation::LimitedResource)]
    {
        let mut hits = 0;
        for s in 0..seeds {
            if perturbation_spot_check(kind, s)?.decreased() {
                hits += 1;
            }
        }
        let _ = writeln!(out, "  {label}: decreased in {hits}/{seeds}");
    }

    let (mut applicable, mut holds) = (0, 0);
    for s in 0..seeds {
        let check = threshold_shift_check(s)?;
        if check.recourse_in_top_k {
            applicable += 1;
            if check.holds() {
                holds += 1;
            }
        }
    }
    let _ = writeln!(
        out,
        "Threshold shift: optimal shift beats the current threshold in {holds}/{applicable} applicable seeds"
    );
    Ok(out)
}
