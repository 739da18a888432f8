//! Plot-ready CSV files derived from persisted records. The first row of each
//! file is its column schema.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::records::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Phase,
    Trajectory,
    Fgrid,
    OneNeuron,
    Hessian,
}

impl FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(PlotKind::Phase),
            "trajectory" => Ok(PlotKind::Trajectory),
            "fgrid" => Ok(PlotKind::Fgrid),
            "one_neuron" => Ok(PlotKind::OneNeuron),
            "hessian" => Ok(PlotKind::Hessian),
            other => Err(Error::InvalidConfig(format!(
                "unknown plot kind '{other}' (expected phase, trajectory, fgrid, one_neuron or hessian)"
            ))),
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlotKind::Phase => "phase",
            PlotKind::Trajectory => "trajectory",
            PlotKind::Fgrid => "fgrid",
            PlotKind::OneNeuron => "one_neuron",
            PlotKind::Hessian => "hessian",
        })
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn rows_for(records: &[Record], kind: PlotKind) -> Result<Vec<Vec<String>>> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    match kind {
        PlotKind::Phase => {
            rows.push(
                ["n", "k", "d", "seed", "final_loss", "theory_loss", "gap", "label", "steps", "converged", "polished"]
                    .map(String::from)
                    .to_vec(),
            );
            for r in records {
                if let Record::Phase(c) = r {
                    rows.push(vec![
                        c.n.to_string(),
                        c.k.to_string(),
                        c.d.to_string(),
                        c.seed.to_string(),
                        num(c.final_loss),
                        opt(c.theory_loss),
                        opt(c.gap),
                        opt(c.label),
                        c.steps.to_string(),
                        c.converged.to_string(),
                        c.polished.to_string(),
                    ]);
                }
            }
        }
        PlotKind::Trajectory => {
            let runs: Vec<_> = records
                .iter()
                .filter_map(|r| match r {
                    Record::Flow(run) => Some(run),
                    _ => None,
                })
                .collect();
            let Some(first) = runs.first() else {
                return Ok(rows);
            };
            if runs.iter().any(|r| (r.n, r.k) != (first.n, first.k)) {
                return Err(Error::InvalidConfig("trajectory emission needs runs of a single (n, k) shape".into()));
            }
            let mut header = vec!["seed".to_string(), "time".into(), "loss".into()];
            header.extend((1..=first.n).map(|i| format!("r_{i}")));
            for i in 1..=first.n {
                header.extend((1..=first.k).map(|j| format!("u_{i}_{j}")));
            }
            rows.push(header);
            for run in &runs {
                for s in &run.result.snapshots {
                    let mut row = vec![run.seed.to_string(), num(s.time), num(s.loss)];
                    row.extend(s.params.r.iter().map(|&x| num(x)));
                    row.extend(s.params.u.iter().flatten().map(|&x| num(x)));
                    rows.push(row);
                }
            }
        }
        PlotKind::Fgrid => {
            let grids: Vec<_> = records
                .iter()
                .filter_map(|r| match r {
                    Record::Fgrid(g) => Some(g),
                    _ => None,
                })
                .collect();
            match grids.as_slice() {
                [] => {}
                [g] => {
                    let mut header = vec!["r\\u".to_string()];
                    header.extend(g.u.iter().map(|&u| num(u)));
                    rows.push(header);
                    for (r, vals) in g.r.iter().zip(&g.values) {
                        let mut row = vec![num(*r)];
                        row.extend(vals.iter().map(|v| opt(*v)));
                        rows.push(row);
                    }
                }
                _ => return Err(Error::InvalidConfig("fgrid emission expects exactly one grid record".into())),
            }
        }
        PlotKind::OneNeuron => {
            rows.push(
                [
                    "kind",
                    "k",
                    "method",
                    "r",
                    "a",
                    "u",
                    "loss",
                    "grad_norm",
                    "norm_bound_holds",
                    "weight_bound_holds",
                    "error",
                ]
                .map(String::from)
                .to_vec(),
            );
            for r in records {
                if let Record::OneNeuron(row) = r {
                    rows.push(vec![
                        row.kind.to_string(),
                        row.k.to_string(),
                        row.method.clone(),
                        opt(row.r),
                        opt(row.a),
                        num(row.u),
                        opt(row.loss),
                        opt(row.grad_norm),
                        opt(row.norm_bound_holds),
                        opt(row.weight_bound_holds),
                        row.error.clone().unwrap_or_default(),
                    ]);
                }
            }
        }
        PlotKind::Hessian => {
            rows.push(["n", "k", "d", "min_eigenvalue", "asymmetry", "grad_norm", "loss"].map(String::from).to_vec());
            for r in records {
                if let Record::Hessian(h) = r {
                    rows.push(vec![
                        h.n.to_string(),
                        h.k.to_string(),
                        h.d.to_string(),
                        num(h.min_eigenvalue),
                        num(h.asymmetry),
                        num(h.grad_norm),
                        num(h.loss),
                    ]);
                }
            }
        }
    }
    Ok(rows)
}

/// Write the `kind` view of `records` to `out` as CSV. Returns the number of
/// data rows (excluding the schema row); fails if there is nothing to emit.
pub fn emit_plot_data(records: &[Record], kind: PlotKind, out: &Path) -> Result<usize> {
    let rows = rows_for(records, kind)?;
    if rows.len() <= 1 {
        return Err(Error::InvalidConfig(format!("no {kind} records to emit")));
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .flexible(false)
        .from_path(out)
        .map_err(|e| Error::Parse(format!("{}: {e}", out.display())))?;
    for row in &rows {
        w.write_record(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows.len() - 1)
}
