//! `coeffs`: extract the fuel coefficients of a cluster state two
//! independent ways — the basis-resolved sums and a projection fit of the
//! exact one-transit propagator — then report the analytics the
//! coefficients feed (machine kind, effective temperature, squeezed-bath
//! parameters, closed-form steady moments).
//!
//! The two extractions agree to `O(gτ)` relative accuracy for valid states;
//! a larger disagreement means the state/basis bookkeeping is broken, so the
//! command exits with status 2 in that case.

use fuelcell_core::analytics::{
    classify_machine_kind, effective_temperature_of_cluster, squeezed_bath_params, steady_moments,
    AnalyticsError,
};
use fuelcell_core::generator::{fuel_coefficients, fuel_coefficients_from_propagator, FuelCoefficients};

use crate::error::CliError;
use crate::report::{complex_json, ensure_out_dir, print_table, show_complex, write_json, write_sidecar, Sidecar};
use crate::{CommonArgs, Outcome};

/// Accepted relative disagreement between the two extractions, per unit of
/// `gτ` (the fit truncates at second order, so its error is `O(gτ)` relative
/// to the coefficients).
pub const GAP_TOL_PER_G_TAU: f64 = 10.0;

/// Largest componentwise difference between two coefficient sets, relative
/// to the coefficient scale (floored at one).
pub fn relative_gap(a: &FuelCoefficients, b: &FuelCoefficients) -> f64 {
    let scale = [a.r_e.abs(), a.r_g.abs(), a.lambda.norm(), a.xi.norm(), 1.0]
        .into_iter()
        .fold(0.0f64, f64::max);
    let gaps = [
        (a.r_e - b.r_e).abs(),
        (a.r_g - b.r_g).abs(),
        (a.lambda - b.lambda).norm(),
        (a.xi - b.xi).norm(),
    ];
    gaps.into_iter().fold(0.0f64, f64::max) / scale
}

fn coeffs_json(c: &FuelCoefficients) -> serde_json::Value {
    serde_json::json!({
        "r_e": c.r_e,
        "r_g": c.r_g,
        "lambda": complex_json(c.lambda),
        "xi": complex_json(c.xi),
    })
}

pub fn run(args: &CommonArgs) -> Result<Outcome, CliError> {
    let cfg = args.load_run_config()?;
    let state = cfg.state.build()?;
    let params = cfg.maser.params()?;
    let g_tau = params.g_tau();

    let table = fuel_coefficients(&state)?;
    let fitted = fuel_coefficients_from_propagator(&state, g_tau)?;
    let gap = relative_gap(&table, &fitted);
    let tol = GAP_TOL_PER_G_TAU * g_tau;

    let kind = classify_machine_kind(table);

    // Analytics apply only to some fuels; record why one is skipped.
    let thermal = effective_temperature_of_cluster(&state);
    let bath = squeezed_bath_params(table);
    let moments = steady_moments(table, params);

    // Side-by-side table.
    let num = |x: f64| format!("{x:+.9}");
    let rows = vec![
        vec![
            "r_e".to_owned(),
            num(table.r_e),
            num(fitted.r_e),
            format!("{:.3e}", (table.r_e - fitted.r_e).abs()),
        ],
        vec![
            "r_g".to_owned(),
            num(table.r_g),
            num(fitted.r_g),
            format!("{:.3e}", (table.r_g - fitted.r_g).abs()),
        ],
        vec![
            "lambda".to_owned(),
            show_complex(table.lambda),
            show_complex(fitted.lambda),
            format!("{:.3e}", (table.lambda - fitted.lambda).norm()),
        ],
        vec![
            "xi".to_owned(),
            show_complex(table.xi),
            show_complex(fitted.xi),
            format!("{:.3e}", (table.xi - fitted.xi).norm()),
        ],
    ];
    print_table(&["coefficient", "basis sums", "propagator fit", "abs gap"], &rows);
    println!(
        "relative disagreement {gap:.3e} (tolerance {tol:.3e}) — {}",
        if gap <= tol { "consistent" } else { "INCONSISTENT" }
    );
    println!("machine kind: {kind}");

    match &thermal {
        Ok(report) => {
            println!(
                "effective temperature: {} (status {}), nbar = {}, steady n = {}",
                report.temperature, report.status, report.nbar, report.n_ss
            );
            if let Some(t0) = report.t_phase_averaged {
                println!("phase-averaged counterpart temperature: {t0}");
            }
        }
        Err(e) => println!("effective temperature: not applicable ({e})"),
    }
    match &bath {
        Ok(report) => println!(
            "squeezed-bath form: N = {}, M = {}, r = {}, kappa/mu = {}, nbar = {}",
            report.n_cap, report.m_cap, report.r, report.kappa, report.nbar
        ),
        Err(e) => println!("squeezed-bath form: not applicable ({e})"),
    }
    match &moments {
        Ok(m) => println!(
            "steady moments: <a> = {}, <a2> = {}, <n> = {}",
            show_complex(m.mean_a),
            show_complex(m.mean_a2),
            m.mean_n
        ),
        Err(e) => println!("steady moments: not applicable ({e})"),
    }

    // JSON artifact.
    ensure_out_dir(args.out)?;
    let thermal_json = match &thermal {
        Ok(r) => serde_json::json!({
            "temperature": r.temperature,
            "status": r.status.to_string(),
            "nbar": r.nbar,
            "n_ss": r.n_ss,
            "below_threshold": r.below_threshold,
            "t_phase_averaged": r.t_phase_averaged,
        }),
        Err(e) => skipped(e),
    };
    let bath_json = match &bath {
        Ok(r) => serde_json::json!({
            "n": r.n_cap,
            "m": r.m_cap,
            "r": r.r,
            "kappa_over_mu": r.kappa,
            "nbar": r.nbar,
        }),
        Err(e) => skipped(e),
    };
    let moments_json = match &moments {
        Ok(m) => serde_json::json!({
            "mean_a": complex_json(m.mean_a),
            "mean_a2": complex_json(m.mean_a2),
            "mean_n": m.mean_n,
        }),
        Err(e) => skipped(e),
    };
    let artifact = serde_json::json!({
        "schema": crate::config::SCHEMA_VERSION,
        "g_tau": g_tau,
        "basis_sums": coeffs_json(&table),
        "propagator_fit": coeffs_json(&fitted),
        "relative_gap": gap,
        "gap_tolerance": tol,
        "consistent": gap <= tol,
        "machine_kind": kind.to_string(),
        "thermal": thermal_json,
        "squeezed_bath": bath_json,
        "steady_moments": moments_json,
    });
    let path = write_json(args.out, "coefficients.json", &artifact)?;
    println!("wrote {}", path.display());

    let mut sidecar = Sidecar::completed("coeffs");
    sidecar.outputs.push("coefficients.json".to_owned());
    if gap > tol {
        sidecar.status = "check_failed".to_owned();
        sidecar.detail = serde_json::json!({"relative_gap": gap, "tolerance": tol});
    }
    write_sidecar(args.out, &sidecar)?;

    Ok(if gap <= tol {
        Outcome::Clean
    } else {
        Outcome::CheckFailed
    })
}

fn skipped(e: &AnalyticsError) -> serde_json::Value {
    serde_json::json!({"skipped": e.to_string()})
}
