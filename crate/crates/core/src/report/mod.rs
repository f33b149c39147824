//! Statistics, tabular and SVG output, and the experiment drivers used by
//! the command-line tool.

mod experiments;
mod stats;
mod svg;
mod tables;

pub use experiments::{
    evaluate_runs, failure_demo_sizes, run_bound_figure, run_dispersion_figure, run_entropy_landscape, run_failure_demo,
    run_table1, train_seeds, write_dispersion_figure, BoundFigure, DispersionConfig, DispersionHeatmap, FailureDemoConfig,
    LandscapeGrid, SeedRun,
};
pub use stats::{mean_std, paired_t_test, TTest};
pub use svg::{emit_svg, render_svg, PlotKind, PlotSpec, Series};
pub use tables::{
    read_csv, read_table1_layout, write_csv, write_table1_layout, EvalReport, EvalRow, FailedSeed, FailureRow, SizeSummary,
    SpreadBoundRow,
};
