//! Capture-log ingestion.
//!
//! A capture record holds every text element visible on screen at one
//! instant, encoded as a delimited string:
//!
//! ```text
//! payload = entry ( "||" entry )*      (empty payload = no entries)
//! entry   = text "@@" x1 "," y1 "," x2 "," y2
//! ```
//!
//! Inside `text` the characters `|`, `@` and `\` are escaped as `\|`, `\@`
//! and `\\`. Elements are put in reading order (top-to-bottom, then
//! left-to-right) and each screen is stripped of the text it shares with the
//! screen captured just before it, so that scrolling through a document
//! yields every line once.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum shared run (in elements) that counts as scroll overlap.
pub const DEFAULT_DEDUP_THRESHOLD: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("malformed payload at byte {offset}: {reason}")]
    MalformedPayload { offset: usize, reason: String },
    #[error("malformed record: {0}")]
    MalformedRecord(String),
}

fn malformed(offset: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedPayload {
        offset,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCapture {
    pub participant_id: String,
    pub timestamp: i64,
    pub payload: String,
}

impl RawCapture {
    /// Parses one `participant_id<TAB>timestamp_ms<TAB>payload` line.
    pub fn from_line(line: &str) -> Result<Self, IngestError> {
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut fields = line.splitn(3, '\t');
        let participant_id = fields.next().unwrap_or_default();
        let (Some(ts), Some(payload)) = (fields.next(), fields.next()) else {
            return Err(IngestError::MalformedRecord(
                "expected three tab-separated fields".into(),
            ));
        };
        if participant_id.is_empty() {
            return Err(IngestError::MalformedRecord("empty participant id".into()));
        }
        let timestamp: i64 = ts
            .trim()
            .parse()
            .map_err(|_| IngestError::MalformedRecord(format!("bad timestamp {ts:?}")))?;
        if timestamp < 0 {
            return Err(IngestError::MalformedRecord(format!(
                "negative timestamp {timestamp}"
            )));
        }
        Ok(Self {
            participant_id: participant_id.to_string(),
            timestamp,
            payload: payload.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextElement {
    pub text: String,
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl TextElement {
    pub fn new(text: impl Into<String>, x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Self {
            text: text.into(),
            x1,
            y1,
            x2,
            y2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub participant_id: String,
    pub timestamp: i64,
    /// All elements of the capture, in reading order, before dedup.
    pub elements: Vec<TextElement>,
    pub novel_text: String,
}

/// Parses a delimited payload into its elements, in encoded order.
pub fn parse_payload(payload: &str) -> Result<Vec<TextElement>, IngestError> {
    let mut elements = Vec::new();
    if payload.is_empty() {
        return Ok(elements);
    }

    let mut chars = payload.char_indices().peekable();
    let mut text = String::new();
    loop {
        // Text part, up to the unescaped "@@".
        let entry_start = chars.peek().map(|&(i, _)| i).unwrap_or(payload.len());
        loop {
            match chars.next() {
                None => return Err(malformed(payload.len(), "entry without coordinates")),
                Some((i, '\\')) => match chars.next() {
                    Some((_, c @ ('|' | '@' | '\\'))) => text.push(c),
                    Some((_, c)) => return Err(malformed(i, format!("unknown escape \\{c}"))),
                    None => return Err(malformed(i, "unterminated escape")),
                },
                Some((i, '@')) => match chars.next() {
                    Some((_, '@')) => break,
                    _ => return Err(malformed(i, "unescaped '@' in text")),
                },
                Some((i, '|')) => return Err(malformed(i, "unescaped '|' in text")),
                Some((_, c)) => text.push(c),
            }
        }

        // Coordinate part, up to "||" or end of payload.
        let coord_start = chars.peek().map(|&(i, _)| i).unwrap_or(payload.len());
        let mut coord_end = payload.len();
        let mut more = false;
        while let Some((i, c)) = chars.next() {
            if c == '|' {
                if chars.next().map(|(_, c)| c) != Some('|') {
                    return Err(malformed(i, "single '|' after coordinates"));
                }
                coord_end = i;
                more = true;
                break;
            }
        }
        let element = parse_coords(&payload[coord_start..coord_end], coord_start).and_then(
            |[x1, y1, x2, y2]| {
                let trimmed = text.trim();
                if trimmed.is_empty() {
                    Err(malformed(entry_start, "empty element text"))
                } else {
                    Ok(TextElement::new(trimmed, x1, y1, x2, y2))
                }
            },
        )?;
        elements.push(element);
        text.clear();
        if !more {
            break;
        }
    }
    Ok(elements)
}

fn parse_coords(raw: &str, offset: usize) -> Result<[i64; 4], IngestError> {
    let mut out = [0i64; 4];
    let mut parts = raw.split(',');
    for slot in out.iter_mut() {
        let part = parts
            .next()
            .ok_or_else(|| malformed(offset, format!("expected 4 coordinates in {raw:?}")))?;
        *slot = part
            .trim()
            .parse()
            .map_err(|_| malformed(offset, format!("bad coordinate {part:?}")))?;
    }
    if parts.next().is_some() {
        return Err(malformed(
            offset,
            format!("too many coordinates in {raw:?}"),
        ));
    }
    let [x1, y1, x2, y2] = out;
    if x1 > x2 || y1 > y2 {
        return Err(malformed(offset, format!("inverted bounds {raw:?}")));
    }
    Ok(out)
}

/// Inverse of [`parse_payload`].
pub fn encode_payload(elements: &[TextElement]) -> String {
    let mut out = String::new();
    for (i, e) in elements.iter().enumerate() {
        if i > 0 {
            out.push_str("||");
        }
        for c in e.text.chars() {
            if matches!(c, '|' | '@' | '\\') {
                out.push('\\');
            }
            out.push(c);
        }
        out.push_str(&format!("@@{},{},{},{}", e.x1, e.y1, e.x2, e.y2));
    }
    out
}

/// Reading order: top edge, then left edge. The sort is stable so
/// elements sharing both keep their captured order.
pub fn order_elements(mut elements: Vec<TextElement>) -> Vec<TextElement> {
    elements.sort_by_key(|e| (e.y1, e.x1));
    elements
}

/// Longest run of consecutive equal texts shared by `prev` and `curr`.
///
/// Returns `(start_in_prev, start_in_curr, len)`. Among runs of equal
/// length the one starting earliest in `curr`, then earliest in `prev`,
/// wins.
pub fn longest_common_run<A, B>(prev: &[A], curr: &[B]) -> (usize, usize, usize)
where
    A: AsRef<str>,
    B: AsRef<str>,
{
    let mut best = (0, 0, 0);
    // run[j] = length of the common run ending at prev[i - 1], curr[j - 1].
    let mut run = vec![0usize; curr.len() + 1];
    for i in 1..=prev.len() {
        for j in (1..=curr.len()).rev() {
            run[j] = if prev[i - 1].as_ref() == curr[j - 1].as_ref() {
                run[j - 1] + 1
            } else {
                0
            };
            let len = run[j];
            if len == 0 {
                continue;
            }
            let cand = (i - len, j - len, len);
            if len > best.2 || (len == best.2 && (cand.1, cand.0) < (best.1, best.0)) {
                best = cand;
            }
        }
    }
    best
}

/// Removes the scroll overlap between `prev` and the new capture.
///
/// The single longest contiguous run of element texts that `curr_elements`
/// shares with `prev.elements` is dropped when it spans at least
/// `threshold` elements. Both lists must already be in reading order.
pub fn dedupe_consecutive(
    prev: &Screen,
    curr_elements: &[TextElement],
    threshold: usize,
) -> Vec<TextElement> {
    let prev_texts: Vec<&str> = prev.elements.iter().map(|e| e.text.as_str()).collect();
    dedupe_against(&prev_texts, curr_elements, threshold)
}

fn dedupe_against(
    prev_texts: &[&str],
    curr_elements: &[TextElement],
    threshold: usize,
) -> Vec<TextElement> {
    let curr_texts: Vec<&str> = curr_elements.iter().map(|e| e.text.as_str()).collect();
    let (_, start, len) = longest_common_run(prev_texts, &curr_texts);
    if len == 0 || len < threshold {
        return curr_elements.to_vec();
    }
    curr_elements
        .iter()
        .enumerate()
        .filter(|(i, _)| !(start..start + len).contains(i))
        .map(|(_, e)| e.clone())
        .collect()
}

fn join_texts(elements: &[TextElement]) -> String {
    elements
        .iter()
        .map(|e| e.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: usize,
    pub parsed: usize,
    pub skipped: usize,
    pub empty_after_dedup: usize,
}

impl IngestSummary {
    pub fn merge(&mut self, other: &IngestSummary) {
        self.records += other.records;
        self.parsed += other.parsed;
        self.skipped += other.skipped;
        self.empty_after_dedup += other.empty_after_dedup;
    }
}

/// Rebuilds one participant's screen stream.
///
/// Records are processed in timestamp order (stable for equal
/// timestamps). Each screen is deduplicated against the full ordered
/// element list of the previous parsed screen. Malformed records are
/// skipped and counted; they never become a predecessor.
pub fn reconstruct_stream(
    records: &[RawCapture],
    threshold: usize,
) -> (Vec<Screen>, IngestSummary) {
    let mut sorted: Vec<&RawCapture> = records.iter().collect();
    sorted.sort_by_key(|r| r.timestamp);

    let mut summary = IngestSummary {
        records: records.len(),
        ..Default::default()
    };
    let mut screens: Vec<Screen> = Vec::with_capacity(records.len());
    for record in sorted {
        let elements = match parse_payload(&record.payload) {
            Ok(e) => order_elements(e),
            Err(_) => {
                summary.skipped += 1;
                continue;
            }
        };
        summary.parsed += 1;
        let novel = match screens.last() {
            Some(prev) => dedupe_consecutive(prev, &elements, threshold),
            None => elements.clone(),
        };
        let novel_text = join_texts(&novel);
        if novel_text.is_empty() {
            summary.empty_after_dedup += 1;
        }
        screens.push(Screen {
            participant_id: record.participant_id.clone(),
            timestamp: record.timestamp,
            elements,
            novel_text,
        });
    }
    (screens, summary)
}

/// Groups records by participant and reconstructs every stream. Output is
/// ordered by participant id, then timestamp, independent of scheduling.
pub fn reconstruct_all(records: Vec<RawCapture>, threshold: usize) -> (Vec<Screen>, IngestSummary) {
    let mut by_participant: BTreeMap<String, Vec<RawCapture>> = BTreeMap::new();
    for r in records {
        by_participant
            .entry(r.participant_id.clone())
            .or_default()
            .push(r);
    }
    let streams: Vec<(Vec<Screen>, IngestSummary)> = by_participant
        .into_par_iter()
        .map(|(_, recs)| reconstruct_stream(&recs, threshold))
        .collect();

    let mut screens = Vec::new();
    let mut summary = IngestSummary::default();
    for (s, sum) in streams {
        screens.extend(s);
        summary.merge(&sum);
    }
    (screens, summary)
}
