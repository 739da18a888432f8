//! Experiment plumbing: sweep configuration, execution, persisted records and
//! plot-data emission.

pub mod config;
pub mod emit;
pub mod records;
pub mod sweep;
pub mod tables;

pub use config::{DRule, SweepConfig};
pub use emit::{emit_plot_data, PlotKind};
pub use records::{read_records, write_records, FlowRun, Record, RecordWriter};
pub use sweep::{run_phase_sweep, PhaseCell, PhaseSummary, SweepOutcome, CELLS_FILE, SUMMARY_FILE};
pub use tables::{run_hessian_scan, run_one_neuron_table, HessianRow, HessianSeries, OneNeuronRow};
