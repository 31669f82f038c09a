//! `classify`: label every entry of the cluster density matrix by the role
//! it plays in the induced cavity dynamics, and list the nonzero entries of
//! each class.

use fuelcell_core::cluster::{basis_labels, classify_entry, CoherenceClass};

use crate::error::CliError;
use crate::report::{ensure_out_dir, print_table, write_json, write_sidecar, Sidecar};
use crate::{CommonArgs, Outcome};

/// Entries smaller than this are reported as structurally zero.
pub const NONZERO_TOL: f64 = 1e-12;

/// Stable presentation order of the classes.
pub const CLASS_ORDER: [CoherenceClass; 5] = [
    CoherenceClass::Population,
    CoherenceClass::HeatExchange,
    CoherenceClass::Displacement,
    CoherenceClass::Squeezing,
    CoherenceClass::Ineffective,
];

fn short_code(class: CoherenceClass) -> &'static str {
    match class {
        CoherenceClass::Population => "P",
        CoherenceClass::HeatExchange => "H",
        CoherenceClass::Displacement => "D",
        CoherenceClass::Squeezing => "S",
        CoherenceClass::Ineffective => ".",
    }
}

pub fn run(args: &CommonArgs) -> Result<Outcome, CliError> {
    let cfg = args.load_run_config()?;
    let state = cfg.state.build()?;
    let n_atoms = state.n_atoms();
    let n = state.dim();
    let labels = basis_labels(n_atoms)?;

    let mut grid = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            row.push(classify_entry(i, j, n_atoms)?);
        }
        grid.push(row);
    }

    // Count and collect the nonzero entries of each class.
    let mut counts = std::collections::HashMap::new();
    let mut nonzero: std::collections::HashMap<CoherenceClass, Vec<serde_json::Value>> =
        std::collections::HashMap::new();
    for i in 0..n {
        for j in 0..n {
            let class = grid[i][j];
            let entry = state.entry(i, j);
            let (total, live) = counts.entry(class).or_insert((0usize, 0usize));
            *total += 1;
            if entry.norm() > NONZERO_TOL {
                *live += 1;
                nonzero.entry(class).or_default().push(serde_json::json!({
                    "row": i,
                    "col": j,
                    "row_bits": labels[i].bits,
                    "col_bits": labels[j].bits,
                    "value": [entry.re, entry.im],
                }));
            }
        }
    }

    // Human-readable grid.
    println!("cluster of {n_atoms} atom(s); basis order: most significant atom first, e before g");
    let mut headers: Vec<&str> = vec![""];
    for l in &labels {
        headers.push(l.bits.as_str());
    }
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let mut row = vec![labels[i].bits.clone()];
            row.extend((0..n).map(|j| short_code(grid[i][j]).to_owned()));
            row
        })
        .collect();
    print_table(&headers, &rows);
    println!(
        "legend: P population, H heat-exchange, D displacement, S squeezing, . ineffective"
    );
    for class in CLASS_ORDER {
        let (total, live) = counts.get(&class).copied().unwrap_or((0, 0));
        if total > 0 {
            println!("{}: {live} nonzero of {total}", class.name());
        }
    }

    // JSON artifact.
    ensure_out_dir(args.out)?;
    let grid_names: Vec<Vec<&str>> = grid
        .iter()
        .map(|row| row.iter().map(|c| c.name()).collect())
        .collect();
    let mut nonzero_json = serde_json::Map::new();
    let mut counts_json = serde_json::Map::new();
    for class in CLASS_ORDER {
        let (total, live) = counts.get(&class).copied().unwrap_or((0, 0));
        counts_json.insert(
            class.name().to_owned(),
            serde_json::json!({"total": total, "nonzero": live}),
        );
        nonzero_json.insert(
            class.name().to_owned(),
            serde_json::Value::Array(nonzero.remove(&class).unwrap_or_default()),
        );
    }
    let artifact = serde_json::json!({
        "schema": crate::config::SCHEMA_VERSION,
        "n_atoms": n_atoms,
        "basis": labels.iter().map(|l| l.bits.clone()).collect::<Vec<_>>(),
        "grid": grid_names,
        "counts": counts_json,
        "nonzero": nonzero_json,
    });
    let path = write_json(args.out, "classification.json", &artifact)?;
    println!("wrote {}", path.display());

    let mut sidecar = Sidecar::completed("classify");
    sidecar.outputs.push("classification.json".to_owned());
    write_sidecar(args.out, &sidecar)?;
    Ok(Outcome::Clean)
}
