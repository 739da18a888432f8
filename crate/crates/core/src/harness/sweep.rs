use std::collections::BTreeMap;
use std::path::Path;
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{classify, init_student, integrate, theory_loss, FlowConfig, FlowStatus, Label};
use crate::harness::config::SweepConfig;
use crate::harness::records::{Record, RecordWriter};
use crate::network::TeacherNet;

pub const CELLS_FILE: &str = "cells.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Outcome of one `(n, k, seed)` flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub theory_loss: Option<f64>,
    /// `final_loss - theory_loss`.
    pub gap: Option<f64>,
    /// `None` for runs that did not converge.
    pub label: Option<Label>,
    pub steps: usize,
    pub converged: bool,
    pub status: FlowStatus,
    pub final_grad_norm: f64,
    pub polished: bool,
    pub max_loss_increase: f64,
    /// Final parameters, so that runs can be re-scored with other thresholds.
    pub final_theta: Vec<f64>,
}

/// Per-`(n, k)` aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub seeds: usize,
    pub converged: usize,
    pub frac_opt_ca: f64,
    pub frac_perturbed_n_copy: f64,
    pub frac_other: f64,
    pub mean_gap: Option<f64>,
    pub theory_loss: Option<f64>,
    pub min_loss: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<PhaseCell>,
    pub summary: Vec<PhaseSummary>,
    pub workers: usize,
}

fn run_cell(cfg: &SweepConfig, n: usize, k: usize, seed: u64) -> Result<PhaseCell> {
    let spec = cfg.kernel_spec()?;
    let d = cfg.d_rule.d(k);
    let teacher = TeacherNet::unit_orthonormal(k, d, cfg.teacher_frame, cfg.activation)?;
    let flow = FlowConfig { seed, ..cfg.flow.clone() };
    let s0 = init_student(n, d, cfg.activation, &flow)?;
    let rec = integrate(&s0, &teacher, &spec, &flow)?;
    let label = if rec.converged {
        Some(classify(&rec, &teacher, &cfg.thresholds)?)
    } else {
        None
    };
    let theory = theory_loss(cfg.activation, n, k);
    Ok(PhaseCell {
        n,
        k,
        d,
        seed,
        final_loss: rec.final_loss,
        theory_loss: theory,
        gap: theory.map(|t| rec.final_loss - t),
        label,
        steps: rec.steps,
        converged: rec.converged,
        status: rec.status,
        final_grad_norm: rec.final_grad_norm,
        polished: rec.polished,
        max_loss_increase: rec.max_loss_increase,
        final_theta: rec.final_student.theta,
    })
}

pub fn summarize(cells: &[PhaseCell], workers: usize) -> Vec<PhaseSummary> {
    let mut groups: BTreeMap<(usize, usize), Vec<&PhaseCell>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.n, c.k)).or_default().push(c);
    }
    groups
        .into_iter()
        .map(|((n, k), cs)| {
            let total = cs.len() as f64;
            let frac = |l: Label| cs.iter().filter(|c| c.label == Some(l)).count() as f64 / total;
            let gaps: Vec<f64> = cs.iter().filter_map(|c| c.gap).collect();
            PhaseSummary {
                n,
                k,
                d: cs[0].d,
                seeds: cs.len(),
                converged: cs.iter().filter(|c| c.converged).count(),
                frac_opt_ca: frac(Label::OptCa),
                frac_perturbed_n_copy: frac(Label::PerturbedNCopy),
                frac_other: frac(Label::Other),
                mean_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
                theory_loss: cs[0].theory_loss,
                min_loss: cs.iter().map(|c| c.final_loss).fold(f64::INFINITY, f64::min),
                workers,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, summary: &[PhaseSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    for row in summary {
        w.serialize(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Run every cell of the sweep: init, integrate, classify. Cells execute in
/// parallel; when `output_path` is set, records are appended in cell order by
/// a single writer as soon as each is available, followed by the CSV summary.
pub fn run_phase_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let cells = cfg.cells();

    let mut writer = match &cfg.output_path {
        Some(dir) => {
            let mut w = RecordWriter::create(&dir.join(CELLS_FILE))?;
            w.write(&Record::SweepHeader {
                version: env!("CARGO_PKG_VERSION").to_string(),
                workers,
                config: cfg.clone(),
            })?;
            Some(w)
        }
        None => None,
    };

    let (tx, rx) = mpsc::channel::<(usize, Result<PhaseCell>)>();
    let mut results: Vec<Option<PhaseCell>> = vec![None; cells.len()];
    let mut first_error: Option<Error> = None;
    std::thread::scope(|scope| {
        let cells = &cells;
        scope.spawn(move || {
            pool.install(|| {
                cells.par_iter().enumerate().for_each_with(tx, |tx, (i, &(n, k, seed))| {
                    let _ = tx.send((i, run_cell(cfg, n, k, seed)));
                });
            });
        });
        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (i, res) in rx {
            pending.insert(i, res);
            while let Some(res) = pending.remove(&next) {
                match res {
                    Ok(cell) => {
                        if let (Some(w), None) = (writer.as_mut(), first_error.as_ref()) {
                            if let Err(e) = w.write(&Record::Phase(cell.clone())) {
                                first_error = Some(e);
                            }
                        }
                        results[next] = Some(cell);
                    }
                    Err(e) => {
                        first_error.get_or_insert(e);
                    }
                }
                next += 1;
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    let cells: Vec<PhaseCell> = results.into_iter().map(|c| c.expect("every cell reported")).collect();
    let summary = summarize(&cells, workers);
    if let Some(dir) = &cfg.output_path {
        write_summary(&dir.join(SUMMARY_FILE), &summary)?;
    }
    Ok(SweepOutcome { cells, summary, workers })
}
