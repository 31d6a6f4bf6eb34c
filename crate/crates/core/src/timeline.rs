//! Daily sentiment means and survey-aligned weeks.
//!
//! A week is the seven local calendar days ending on (and including) the
//! day the weekly questionnaire was completed. Day 1 is the oldest slot,
//! Day 7 the survey day.

use std::collections::BTreeMap;

use chrono::{DateTime, Days, NaiveDate};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{Affect, AffectRatings};
use crate::sentiment::ScreenScore;

pub const DAYS_PER_WEEK: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimelineError {
    #[error("no scored screens on {0}")]
    EmptyDay(NaiveDate),
    #[error(
        "participant {participant_id} week {week_index} ({survey_date}) has no sentiment data"
    )]
    NoDataWeek {
        participant_id: String,
        week_index: u32,
        survey_date: NaiveDate,
    },
    #[error("timestamp {0} ms is out of range")]
    BadTimestamp(i64),
    #[error("survey line {line}: {reason}")]
    MalformedSurvey { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySentiment {
    pub participant_id: String,
    pub local_date: NaiveDate,
    pub mean_score: f64,
    pub screen_count: usize,
}

/// Calendar date of a millisecond timestamp in `tz`.
pub fn local_date(timestamp_ms: i64, tz: Tz) -> Result<NaiveDate, TimelineError> {
    DateTime::from_timestamp_millis(timestamp_ms)
        .map(|utc| utc.with_timezone(&tz).date_naive())
        .ok_or(TimelineError::BadTimestamp(timestamp_ms))
}

/// Mean of one day's screen scores.
///
/// Values are summed in sorted order, so the result does not depend on the
/// order scores arrive in.
pub fn daily_mean(
    participant_id: &str,
    local_date: NaiveDate,
    scores: &[f64],
) -> Result<DailySentiment, TimelineError> {
    if scores.is_empty() {
        return Err(TimelineError::EmptyDay(local_date));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(DailySentiment {
        participant_id: participant_id.to_string(),
        local_date,
        mean_score: mean.clamp(-1.0, 1.0),
        screen_count: scores.len(),
    })
}

/// Groups screen scores into per-participant daily means, ordered by
/// (participant, date).
pub fn daily_sentiments(
    scores: &[ScreenScore],
    tz: Tz,
) -> Result<Vec<DailySentiment>, TimelineError> {
    let mut by_day: BTreeMap<(&str, NaiveDate), Vec<f64>> = BTreeMap::new();
    for s in scores {
        let date = local_date(s.timestamp, tz)?;
        by_day
            .entry((s.participant_id.as_str(), date))
            .or_default()
            .push(s.score);
    }
    by_day
        .into_iter()
        .map(|((pid, date), values)| daily_mean(pid, date, &values))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub participant_id: String,
    pub survey_date: NaiveDate,
    pub ratings: AffectRatings,
}

impl SurveyResponse {
    /// Parses `participant_id<TAB>YYYY-MM-DD<TAB>r1,…,r10`, ratings in
    /// questionnaire order.
    pub fn from_line(line: &str, line_no: usize) -> Result<Self, TimelineError> {
        let err = |reason: String| TimelineError::MalformedSurvey {
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let [pid, date, ratings] = fields[..] else {
            return Err(err(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        };
        if pid.is_empty() {
            return Err(err("empty participant id".into()));
        }
        let survey_date = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
            .map_err(|e| err(format!("bad date {date:?}: {e}")))?;
        let values: Vec<u8> = ratings
            .split(',')
            .map(|v| v.trim().parse::<u8>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(format!("bad rating list {ratings:?}: {e}")))?;
        let values: [u8; 10] = values
            .try_into()
            .map_err(|v: Vec<u8>| err(format!("expected 10 ratings, got {}", v.len())))?;
        let ratings = AffectRatings::new(values).map_err(|e| err(e.to_string()))?;
        Ok(Self {
            participant_id: pid.to_string(),
            survey_date,
            ratings,
        })
    }

    pub fn to_line(&self) -> String {
        let ratings: Vec<String> = Affect::ALL
            .iter()
            .map(|a| self.ratings.get(*a).to_string())
            .collect();
        format!(
            "{}\t{}\t{}",
            self.participant_id,
            self.survey_date.format("%Y-%m-%d"),
            ratings.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekSample {
    pub participant_id: String,
    pub week_index: u32,
    pub survey_date: NaiveDate,
    /// Day 1 (oldest) … Day 7 (survey day); `None` for days without data.
    pub days: [Option<f64>; DAYS_PER_WEEK],
    pub ratings: Option<AffectRatings>,
}

impl WeekSample {
    /// Calendar date of slot `k` (1-based).
    pub fn day_date(&self, k: usize) -> NaiveDate {
        slot_date(self.survey_date, k)
    }

    pub fn populated_days(&self) -> usize {
        self.days.iter().filter(|d| d.is_some()).count()
    }

    /// Mean over days with data; 0 when none.
    pub fn populated_mean(&self) -> f64 {
        let present: Vec<f64> = self.days.iter().flatten().copied().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

fn slot_date(survey_date: NaiveDate, k: usize) -> NaiveDate {
    survey_date - Days::new((DAYS_PER_WEEK - k) as u64)
}

/// Places the participant's daily means into the seven slots ending on
/// `survey_date`. Dailies outside the window are ignored.
pub fn assemble_week(
    participant_id: &str,
    week_index: u32,
    survey_date: NaiveDate,
    ratings: Option<AffectRatings>,
    dailies: &[DailySentiment],
) -> Result<WeekSample, TimelineError> {
    let mut days = [None; DAYS_PER_WEEK];
    for (k, slot) in days.iter_mut().enumerate() {
        let date = slot_date(survey_date, k + 1);
        *slot = dailies
            .iter()
            .find(|d| d.participant_id == participant_id && d.local_date == date)
            .map(|d| d.mean_score);
    }
    if days.iter().all(Option::is_none) {
        return Err(TimelineError::NoDataWeek {
            participant_id: participant_id.to_string(),
            week_index,
            survey_date,
        });
    }
    Ok(WeekSample {
        participant_id: participant_id.to_string(),
        week_index,
        survey_date,
        days,
        ratings,
    })
}

/// Weeks for every participant, indexed 1.. in survey-date order. Weeks
/// without any sentiment data are returned separately as exclusions.
/// Output is ordered by (participant, week_index).
pub fn assemble_weeks(
    surveys: &[SurveyResponse],
    dailies: &[DailySentiment],
) -> (Vec<WeekSample>, Vec<TimelineError>) {
    let mut by_participant: BTreeMap<&str, Vec<&SurveyResponse>> = BTreeMap::new();
    for s in surveys {
        by_participant.entry(&s.participant_id).or_default().push(s);
    }
    let mut weeks = Vec::new();
    let mut excluded = Vec::new();
    for (pid, mut responses) in by_participant {
        responses.sort_by_key(|r| r.survey_date);
        let own: Vec<DailySentiment> = dailies
            .iter()
            .filter(|d| d.participant_id == pid)
            .cloned()
            .collect();
        for (i, r) in responses.into_iter().enumerate() {
            match assemble_week(pid, i as u32 + 1, r.survey_date, Some(r.ratings), &own) {
                Ok(w) => weeks.push(w),
                Err(e) => excluded.push(e),
            }
        }
    }
    (weeks, excluded)
}
