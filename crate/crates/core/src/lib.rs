//! Screen-text sentiment pipeline and weekly affect prediction.
//!
//! Screenshot text captures are reconstructed into reading-order screens,
//! normalised, scored for sentiment, aggregated into daily and weekly
//! timelines, and used to predict ten self-reported affect ratings with
//! linear regression or LLM prompting. Methods are compared by mean
//! absolute error over repeated random splits.

pub mod affect;
pub mod evaluate;
pub mod ingest;
pub mod pipeline;
pub mod predict;
pub mod preprocess;
pub mod retry;
pub mod sentiment;
pub mod timeline;
