//! Validate the analytic gradients against central finite differences.
//!
//! The event-based backward pass claims *exact* gradients of the loss with
//! respect to every weight and every delay, as long as the perturbation does
//! not change the spike record. This harness probes random coordinates of a
//! random network, skips spike-count-unstable ones, and reports the worst
//! relative error among the stable probes.
//!
//!     cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use delayprop::eventprop::{gradcheck, GradcheckConfig, LossConfig};
use delayprop::model::{build_network, init_parameters, InitConfig, NetworkSpec, PopulationKind, PopulationSpec, ProjectionSpec};
use delayprop::sim::InputEvent;

fn main() {
    let n_timesteps = 150;
    let spec = NetworkSpec {
        dt: 1.0,
        n_timesteps,
        populations: vec![
            PopulationSpec::new("in", 8, PopulationKind::Input),
            PopulationSpec::new("hid", 16, PopulationKind::Hidden),
            PopulationSpec::new("out", 3, PopulationKind::Output),
        ],
        projections: vec![
            ProjectionSpec::zeros("in", "hid", 8, 16, 12.0),
            ProjectionSpec::zeros("hid", "hid", 16, 16, 12.0),
            ProjectionSpec::zeros("hid", "out", 16, 3, 12.0),
        ],
    };
    let mut net = build_network(spec).unwrap();
    init_parameters(
        &mut net,
        &InitConfig {
            weight_mean: 0.5,
            weight_sd: 0.3,
            delay_low: 0.0,
            delay_high: 9.0,
            seed: 3,
            ..InitConfig::default()
        },
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut input: Vec<InputEvent> = (0..24)
        .map(|_| InputEvent {
            step: rng.gen_range(0..90),
            channel: rng.gen_range(0..8),
        })
        .collect();
    input.sort_by_key(|e| (e.step, e.channel));

    let loss_cfg = LossConfig::default();
    let check_cfg = GradcheckConfig {
        n_weight_coords: 48,
        n_delay_coords: 48,
        seed: 7,
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&mut net, &input, 1, &loss_cfg, &check_cfg).unwrap();

    println!(
        "{} coords probed: {} pass, {} fail, {} skipped (spike record moved under +/- eps)",
        report.coords.len(),
        report.n_pass,
        report.n_fail,
        report.n_skipped
    );
    use delayprop::eventprop::CoordStatus;
    let max_abs_err = report
        .coords
        .iter()
        .filter(|c| matches!(c.status, CoordStatus::Pass | CoordStatus::Fail))
        .map(|c| c.abs_err)
        .fold(0.0, f64::max);
    println!(
        "largest |analytic - numeric| {:.3e} (a coord passes when |analytic - numeric| <= {:.0e} + {:.0e} * max(|analytic|, |numeric|))",
        max_abs_err, report.tol_abs, report.tol_rel
    );

    // Rank by how much of the per-coordinate error budget was used, so the
    // listing surfaces coordinates that were actually close to failing rather
    // than near-zero gradients that pass on the absolute term alone.
    let budget_used = |c: &delayprop::eventprop::CoordReport| {
        c.abs_err / (report.tol_abs + report.tol_rel * c.analytic.abs().max(c.numeric.abs()))
    };
    let mut worst: Vec<_> = report
        .coords
        .iter()
        .filter(|c| matches!(c.status, CoordStatus::Pass | CoordStatus::Fail))
        .collect();
    worst.sort_by(|a, b| budget_used(b).partial_cmp(&budget_used(a)).unwrap());
    println!("five tightest coordinates (fraction of error budget used):");
    for c in worst.iter().take(5) {
        println!(
            "  {:?} proj {} [{}, {}]  analytic {:+.6e}  numeric {:+.6e}  budget used {:.1e}",
            c.kind, c.projection, c.row, c.col, c.analytic, c.numeric, budget_used(c)
        );
    }
    println!("verdict: {}", if report.passed() { "PASSED" } else { "FAILED" });
}
