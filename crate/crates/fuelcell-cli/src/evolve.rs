//! `evolve`: integrate the cavity field from vacuum under the configured
//! fuel and record the observable track as CSV.
//!
//! Deterministic methods integrate the coarse-grained generator; the Monte
//! Carlo method replays a Poisson stream of exact transit kicks. A guard-band
//! leakage abort is a *recorded outcome*, not an error: the partial track is
//! written and the sidecar says where the run stopped.

use fuelcell_core::dynamics::{evolve_master, evolve_monte_carlo, FieldState, TrajectoryStatus};
use fuelcell_core::generator::{build_liouvillian, fuel_coefficients};
use fuelcell_core::hilbert::FockSpace;

use crate::config::MethodSpec;
use crate::error::CliError;
use crate::report::{ensure_out_dir, fmt_f64, write_csv, write_sidecar, Sidecar};
use crate::{CommonArgs, Outcome};

pub fn run(args: &CommonArgs) -> Result<Outcome, CliError> {
    let cfg = args.load_run_config()?;
    let state = cfg.state.build()?;
    let params = cfg.maser.params()?;
    let dim = args.fock_dim.unwrap_or(cfg.evolution.fock_dim);
    let fock = FockSpace::new(dim)?;
    let evo = cfg.evolution.config(args.seed)?;
    let seed_used = args.seed.unwrap_or(cfg.evolution.seed);
    let initial = FieldState::vacuum(fock);

    let method = cfg.evolution.method;
    let traj = match method {
        MethodSpec::MonteCarlo => evolve_monte_carlo(&initial, &state, &params, &evo)?,
        MethodSpec::OdeRk4 | MethodSpec::ExpmStep => {
            let coeffs = fuel_coefficients(&state)?;
            let gen = build_liouvillian(coeffs, params, fock);
            evolve_master(&initial, &gen, &evo)?
        }
    };

    ensure_out_dir(args.out)?;
    let rows = (0..traj.len()).map(|k| {
        vec![
            fmt_f64(traj.times[k]),
            fmt_f64(traj.mean_a[k].re),
            fmt_f64(traj.mean_a[k].im),
            fmt_f64(traj.mean_a2[k].re),
            fmt_f64(traj.mean_a2[k].im),
            fmt_f64(traj.mean_n[k]),
            fmt_f64(traj.purity[k]),
            fmt_f64(traj.leakage[k]),
        ]
    });
    let path = write_csv(
        args.out,
        "trajectory.csv",
        &[
            "time", "re_mean_a", "im_mean_a", "re_mean_a2", "im_mean_a2", "mean_n", "purity",
            "leakage",
        ],
        rows,
    )?;

    let method_name = match method {
        MethodSpec::OdeRk4 => "ode_rk4",
        MethodSpec::ExpmStep => "expm_step",
        MethodSpec::MonteCarlo => "monte_carlo",
    };
    let (status, abort_json) = match traj.status {
        TrajectoryStatus::Completed => ("completed", serde_json::Value::Null),
        TrajectoryStatus::LeakageAborted { t, leakage } => (
            "leakage_aborted",
            serde_json::json!({"t": t, "leakage": leakage}),
        ),
    };
    let last = traj.len() - 1;
    println!(
        "{} samples to t = {}; final <n> = {:.6}, purity = {:.6}; status: {status}",
        traj.len(),
        traj.times[last],
        traj.mean_n[last],
        traj.purity[last],
    );
    if traj.overlap_warnings > 0 {
        println!(
            "note: {} arrival gap(s) were shorter than the transit time",
            traj.overlap_warnings
        );
    }
    println!("wrote {}", path.display());

    let mut sidecar = Sidecar::completed("evolve");
    sidecar.status = status.to_owned();
    sidecar.detail = serde_json::json!({
        "method": method_name,
        "seed": seed_used,
        "fock_dim": dim,
        "samples": traj.len(),
        "final_time": traj.times[last],
        "overlap_warnings": traj.overlap_warnings,
        "leakage_abort": abort_json,
    });
    sidecar.outputs.push("trajectory.csv".to_owned());
    write_sidecar(args.out, &sidecar)?;

    Ok(Outcome::Clean)
}
