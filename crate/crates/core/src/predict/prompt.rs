//! Zero-shot and multi-shot prompt construction.
//!
//! Templates live in `templates/` and are filled by plain placeholder
//! substitution, so the rendered text is fixed byte-for-byte by the
//! template files and the score formatting rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{Affect, AffectRatings};
use crate::timeline::WeekSample;

pub const ZERO_SHOT_TEMPLATE: &str = include_str!("../../templates/zero_shot.txt");
pub const MULTI_SHOT_PREAMBLE: &str = include_str!("../../templates/multi_shot_preamble.txt");
pub const MULTI_SHOT_TASK: &str = include_str!("../../templates/multi_shot_task.txt");
pub const EXAMPLE_BLOCK_TEMPLATE: &str = include_str!("../../templates/example_block.txt");

/// Number of labelled weeks in a multi-shot prompt.
pub const MULTI_SHOT_EXAMPLES: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("week {0} has no sentiment data")]
    NoDataWeek(u32),
    #[error("week {0} has no affect ratings")]
    MissingRatings(u32),
    #[error("multi-shot prompt needs {MULTI_SHOT_EXAMPLES} example weeks, got {0}")]
    WrongExampleCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    MultiShot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
    pub eval_week_index: u32,
}

/// Four decimals; negative zero prints as `0.0000`.
pub fn format_score(score: f64) -> String {
    let s = format!("{score:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

fn fill_days(template: &str, week: &WeekSample) -> String {
    let mut out = template.to_string();
    for (k, day) in week.days.iter().enumerate() {
        let value = day.map(format_score).unwrap_or_else(|| "N/A".to_string());
        out = out.replace(&format!("{{day{}}}", k + 1), &value);
    }
    out
}

pub fn build_zero_shot_prompt(week: &WeekSample) -> Result<Prompt, PromptError> {
    if week.populated_days() == 0 {
        return Err(PromptError::NoDataWeek(week.week_index));
    }
    Ok(Prompt {
        kind: PromptKind::ZeroShot,
        text: fill_days(ZERO_SHOT_TEMPLATE, week),
        eval_week_index: week.week_index,
    })
}

/// One labelled week for a multi-shot prompt.
pub fn build_example_block(week: &WeekSample) -> Result<String, PromptError> {
    let ratings = week
        .ratings
        .ok_or(PromptError::MissingRatings(week.week_index))?;
    Ok(fill_ratings(
        &fill_days(EXAMPLE_BLOCK_TEMPLATE, week),
        &ratings,
    ))
}

fn fill_ratings(template: &str, ratings: &AffectRatings) -> String {
    let mut out = template.to_string();
    for a in Affect::ALL {
        let key = format!("{{{}}}", a.name().to_lowercase());
        out = out.replace(&key, &ratings.get(a).to_string());
    }
    out
}

/// Preamble, `### Example n` sections in ascending week order, then the
/// task for `eval_week`.
pub fn build_multi_shot_prompt(
    train_weeks: &[&WeekSample],
    eval_week: &WeekSample,
) -> Result<Prompt, PromptError> {
    if train_weeks.len() != MULTI_SHOT_EXAMPLES {
        return Err(PromptError::WrongExampleCount(train_weeks.len()));
    }
    if eval_week.populated_days() == 0 {
        return Err(PromptError::NoDataWeek(eval_week.week_index));
    }
    let mut examples = train_weeks.to_vec();
    examples.sort_by_key(|w| w.week_index);

    let mut text = MULTI_SHOT_PREAMBLE.to_string();
    for (n, week) in examples.iter().enumerate() {
        text.push_str(&format!("### Example {}\n", n + 1));
        text.push_str(&build_example_block(week)?);
        text.push('\n');
    }
    text.push_str(&fill_days(MULTI_SHOT_TASK, eval_week));
    Ok(Prompt {
        kind: PromptKind::MultiShot,
        text,
        eval_week_index: eval_week.week_index,
    })
}
