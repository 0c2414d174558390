//! Width and depth sweeps: configuration, execution, presets and output.

pub mod output;
pub mod plot;
pub mod presets;
pub mod sweep;

pub use output::{aggregate_rows, read_cells_csv, write_cells_csv, write_outputs, CellRow};
pub use plot::render_svg;
pub use presets::{desk_scale, list_presets, load_preset};
pub use sweep::{
    aggregate, run_sweep, Aggregate, Axis, Cell, CellStatus, GdOverride, GncDetail, InstanceConfig, Optimizer,
    SweepConfig, SweepResult,
};
