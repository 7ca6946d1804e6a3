//! Finite-difference check of the hand-written backward pass.

use cinemo::denoiser::gradcheck::{check_config, linear_config, tiny_config, GradCheckConfig};
use cinemo::diffusion::make_schedule;

fn main() -> cinemo::Result<()> {
    let sched = make_schedule(1000, 1e-4, 2e-2)?;
    for (name, model_cfg) in [("tiny", tiny_config()), ("linear", linear_config())] {
        let report = check_config(model_cfg, &sched, GradCheckConfig::default())?;
        println!(
            "{name:<7} {} coords  max rel {:.2e}  mean rel {:.2e}  worst {} (analytic {:.6e}, numeric {:.6e})",
            report.n_coords,
            report.max_rel_error,
            report.mean_rel_error,
            report.worst_param,
            report.worst_analytic,
            report.worst_numeric
        );
    }
    Ok(())
}
