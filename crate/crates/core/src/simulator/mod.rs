//! The simulated translator: BLEU, hypothesis/reference alignment, the
//! critical-mistake oracle and whole-session runs.

mod align;
mod bleu;
mod oracle;
mod report;
mod run;

pub use align::{align, edit_distance, Edit};
pub use bleu::{corpus_bleu, corpus_stats, sentence_bleu_smoothed, BleuStats, MAX_ORDER};
pub use oracle::{candidate_revisions, critical_revision_oracle, evaluate_candidates, OracleCandidate};
pub use report::{Report, ReportRow};
pub use run::{run_ideal_session, SentenceOutcome, SimulationConfig, SimulationMetrics};
