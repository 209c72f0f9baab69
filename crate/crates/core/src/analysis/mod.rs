//! Sweeps, cross-model errors, the transposed kernel, the initial-layer
//! fit, and CSV/JSON output.

pub mod emit;
pub mod kernel;
pub mod layer;
pub mod summary;
pub mod sweep;
pub mod table;

pub use emit::{emit, emit_convergence, Cell, Format, Table};
pub use kernel::{kernel_sweep, limit_kernel_integral, transposed_kernel, KernelRow, KernelSweep};
pub use layer::{initial_layer_report, LayerReport, LayerVerdict};
pub use summary::{Criterion, Summary};
pub use sweep::{delta_a_refinement, epsilon_sweep, DeltaASweep, EpsilonSweep, MemberPanel, SweepOptions};
pub use table::{observed_order, ConvergenceRow, ConvergenceTable, SweepKind};
