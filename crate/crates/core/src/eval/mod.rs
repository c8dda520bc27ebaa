//! Objective evaluation: track correlation, intelligibility, external
//! quality scorers, report tables and figures.

mod external;
mod figure;
mod ppmc;
mod report;
mod run;
mod stoi;

pub use external::{external_scores, external_scores_batch, ExternalScores, ScoreStatus, ScorerAdapter, EXTERNAL_FIELDS};
pub use figure::{render_figure, FigureInput, FigureLayout, Panel, PanelKind};
pub use ppmc::{pearson, ppmc, PpmcMode, PpmcReport};
pub use report::{
    build_report, relative_improvement, relative_table_from_csv, RelativeRow, ReportGrid, ReportTables, SeRow, SiRow,
};
pub use run::{run_model, summarize, Cell, CellResult, EvalOptions, EvalSummary, SeCellSummary, UtteranceOutput};
pub use stoi::stoi;
