//! `sweep`: evaluate a closed-form quantity over a parameter grid and write
//! one CSV row per grid point.
//!
//! Three presets reproduce the library's reference curves and surfaces;
//! custom grids pick a quantity, axes, and fixed parameters. Points where
//! the quantity has no finite value (a pumping series that does not
//! converge) get an empty value cell and status `divergent`. Evaluation is
//! parallel but row order — and therefore the output bytes — is a pure
//! function of the configuration.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};

use rayon::prelude::*;

use fuelcell_core::analytics::{ghz_photon_number, squeezed_bath_params, w_state_photon_number, GhzPrediction};
use fuelcell_core::cluster::{make_named_state, NamedState};
use fuelcell_core::generator::fuel_coefficients;

use crate::config::{load_sweep_config, AxisSpec, PresetName, QuantityName, SweepConfig};
use crate::error::CliError;
use crate::report::{ensure_out_dir, fmt_f64, write_csv, write_sidecar, Sidecar};
use crate::{CommonArgs, Outcome};

/// A fully resolved sweep: what to evaluate, where, and what to call the file.
struct Plan {
    quantity: QuantityName,
    axes: Vec<AxisSpec>,
    fixed: BTreeMap<String, f64>,
    /// Extra rows appended after the grid (axis coordinates only).
    appended: Vec<Vec<f64>>,
    file_name: String,
    label: String,
}

fn axis(name: &str, start: f64, stop: f64, count: usize) -> AxisSpec {
    AxisSpec {
        name: name.to_owned(),
        start,
        stop,
        count,
    }
}

/// The angle pair at which the single-excitation family reaches its global
/// photon-number maximum: equal weights on all three components.
pub fn symmetric_point() -> (f64, f64) {
    (FRAC_PI_4, 2.0 * (1.0 / 3f64.sqrt()).asin())
}

fn preset_plan(preset: PresetName) -> Plan {
    match preset {
        // Photon-number surface of the single-excitation family over its two
        // weight angles (phases zero), plus the equal-weight point appended
        // so the discrete global maximum of 3 photons is on the grid.
        PresetName::Fig6 => {
            let (th, ps) = symmetric_point();
            Plan {
                quantity: QuantityName::WPhotonNumber,
                axes: vec![axis("theta", 0.0, PI, 101), axis("psi", 0.0, PI, 101)],
                fixed: BTreeMap::new(),
                appended: vec![vec![th, ps]],
                file_name: "fig6.csv".to_owned(),
                label: "preset fig6".to_owned(),
            }
        }
        // Squeezing parameter of the two-atom superposition fuel versus its
        // mixing angle, stopping short of the lasing threshold at π/4.
        PresetName::Fig7 => Plan {
            quantity: QuantityName::SqueezeParameter,
            axes: vec![axis("theta", 0.0, 0.775, 100)],
            fixed: BTreeMap::new(),
            appended: Vec::new(),
            file_name: "fig7.csv".to_owned(),
            label: "preset fig7".to_owned(),
        },
        // Photon number of the two-branch family versus its mixing angle;
        // the excited-dominated half diverges.
        PresetName::Fig8 => Plan {
            quantity: QuantityName::GhzPhotonNumber,
            axes: vec![axis("theta", 0.0, PI, 181)],
            fixed: BTreeMap::new(),
            appended: Vec::new(),
            file_name: "fig8.csv".to_owned(),
            label: "preset fig8".to_owned(),
        },
    }
}

fn custom_plan(cfg: &SweepConfig) -> Plan {
    let custom = cfg.custom.as_ref().expect("caller checked");
    Plan {
        quantity: custom.quantity,
        axes: custom.axes.clone(),
        fixed: custom.fixed.clone(),
        appended: Vec::new(),
        file_name: "sweep.csv".to_owned(),
        label: format!("custom {}", custom.quantity.label()),
    }
}

/// Row-major grid coordinates, last axis fastest.
fn grid_coords(axes: &[AxisSpec]) -> Vec<Vec<f64>> {
    let total: usize = axes.iter().map(|a| a.count).product();
    (0..total)
        .map(|flat| {
            let mut idx = flat;
            let mut coords = vec![0.0; axes.len()];
            for k in (0..axes.len()).rev() {
                coords[k] = axes[k].value(idx % axes[k].count);
                idx /= axes[k].count;
            }
            coords
        })
        .collect()
}

/// Expands axis coordinates into the quantity's full parameter list, filling
/// non-axis parameters from `fixed` (default 0).
fn full_params(plan: &Plan, coords: &[f64]) -> Vec<f64> {
    plan.quantity
        .parameters()
        .iter()
        .map(|name| {
            if let Some(k) = plan.axes.iter().position(|a| a.name == *name) {
                coords[k]
            } else {
                plan.fixed.get(*name).copied().unwrap_or(0.0)
            }
        })
        .collect()
}

fn evaluate(quantity: QuantityName, p: &[f64]) -> Result<(Option<f64>, &'static str), CliError> {
    match quantity {
        QuantityName::WPhotonNumber => {
            Ok((Some(w_state_photon_number(p[0], p[1], p[2], p[3])), "ok"))
        }
        QuantityName::GhzPhotonNumber => Ok(match ghz_photon_number(p[0]) {
            GhzPrediction::Finite(v) => (Some(v), "ok"),
            GhzPrediction::Divergent => (None, "divergent"),
        }),
        QuantityName::SqueezeParameter => {
            let state = make_named_state(NamedState::TwoAtomSqueeze { theta: p[0] })
                .map_err(|e| CliError::from(e).with_field("custom.axes"))?;
            let coeffs = fuel_coefficients(&state)?;
            let report = squeezed_bath_params(coeffs)?;
            Ok((Some(report.r), "ok"))
        }
    }
}

pub fn run(
    args: &CommonArgs,
    preset_flag: Option<PresetName>,
    allow_large_cli: bool,
) -> Result<Outcome, CliError> {
    let plan = match (preset_flag, args.config) {
        (Some(_), Some(_)) => {
            return Err(CliError::new(
                "usage",
                "choose either --preset or --config, not both",
            ));
        }
        (Some(preset), None) => preset_plan(preset),
        (None, Some(path)) => {
            let cfg = load_sweep_config(path)?;
            match cfg.preset {
                Some(preset) => preset_plan(preset),
                None => {
                    let custom = cfg.custom.as_ref().expect("exactly one checked on load");
                    custom.validate(allow_large_cli)?;
                    custom_plan(&cfg)
                }
            }
        }
        (None, None) => {
            return Err(CliError::new(
                "usage",
                "sweep needs --preset or --config",
            ));
        }
    };

    let mut coords = grid_coords(&plan.axes);
    coords.extend(plan.appended.iter().cloned());
    let params: Vec<Vec<f64>> = coords.iter().map(|c| full_params(&plan, c)).collect();

    let evaluated: Result<Vec<(Option<f64>, &'static str)>, CliError> = params
        .par_iter()
        .map(|p| evaluate(plan.quantity, p))
        .collect();
    let evaluated = evaluated?;

    let mut header: Vec<&str> = plan.axes.iter().map(|a| a.name.as_str()).collect();
    header.push("value");
    header.push("status");
    let divergent = evaluated.iter().filter(|(v, _)| v.is_none()).count();
    let rows = coords.iter().zip(&evaluated).map(|(c, (value, status))| {
        let mut row: Vec<String> = c.iter().map(|&x| fmt_f64(x)).collect();
        row.push(value.map(fmt_f64).unwrap_or_default());
        row.push((*status).to_owned());
        row
    });

    ensure_out_dir(args.out)?;
    let path = write_csv(args.out, &plan.file_name, &header, rows)?;
    println!(
        "{}: {} point(s), {divergent} divergent; wrote {}",
        plan.label,
        coords.len(),
        path.display()
    );

    let mut sidecar = Sidecar::completed("sweep");
    sidecar.detail = serde_json::json!({
        "label": plan.label,
        "quantity": plan.quantity.label(),
        "points": coords.len(),
        "divergent": divergent,
        "columns": header,
    });
    sidecar.outputs.push(plan.file_name.clone());
    write_sidecar(args.out, &sidecar)?;
    Ok(Outcome::Clean)
}
