#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use screen_affect::affect::AffectRatings;
use screen_affect::ingest::{encode_payload, RawCapture, TextElement};
use screen_affect::predict::{format_score, scripted_ratings};
use screen_affect::sentiment::ScreenScore;
use screen_affect::timeline::{assemble_week, daily_sentiments, SurveyResponse, WeekSample};

pub type Handler = dyn Fn(usize, &str, &str) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server: one request per connection, handler gets
/// (request number, path, body).
pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<String>>>,
}

impl MockServer {
    pub fn start(
        handler: impl Fn(usize, &str, &str) -> (u16, String) + Send + Sync + 'static,
    ) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let (h, b) = (hits.clone(), bodies.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (h, b, handler) = (h.clone(), b.clone(), handler.clone());
                thread::spawn(move || serve(stream, &h, &b, handler.as_ref()));
            }
        });
        Self { url, hits, bodies }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, hits: &AtomicUsize, bodies: &Mutex<Vec<String>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_string();
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let body = String::from_utf8(body).unwrap();
    let n = hits.fetch_add(1, Ordering::SeqCst);
    bodies.lock().unwrap().push(body.clone());
    let (status, reply) = handler(n, &path, &body);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
}

/// A URL nothing listens on.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    url
}

/// Synthetic scrolling session: a document of unique element texts and
/// overlapping windows over it, each captured with shuffled payload
/// order.
pub struct ScrollSession {
    pub document: Vec<String>,
    pub captures: Vec<RawCapture>,
}

pub fn scroll_session(
    rng: &mut impl Rng,
    participant: &str,
    n: usize,
    window: usize,
    stride: usize,
) -> ScrollSession {
    let specials = ["", "|", "@", "\\", "a|b", "x@y"];
    let document: Vec<String> = (0..n)
        .map(|k| {
            let s = specials[rng.gen_range(0..specials.len())];
            format!("line{k}{s} w{}", rng.gen_range(0..1000))
        })
        .collect();
    let mut starts = Vec::new();
    let mut p = 0;
    loop {
        let start = p.min(n - window);
        starts.push(start);
        if start == n - window {
            break;
        }
        p += stride;
    }
    let captures = starts
        .iter()
        .enumerate()
        .map(|(i, &start)| {
            let mut elements: Vec<TextElement> = (start..start + window)
                .map(|k| {
                    let y = ((k - start) * 40) as i64;
                    TextElement::new(document[k].clone(), 10, y, 300, y + 30)
                })
                .collect();
            elements.shuffle(rng);
            RawCapture {
                participant_id: participant.to_string(),
                timestamp: 1_000_000 + i as i64 * 1000,
                payload: encode_payload(&elements),
            }
        })
        .collect();
    ScrollSession { document, captures }
}

pub fn capture_line(c: &RawCapture) -> String {
    format!("{}\t{}\t{}", c.participant_id, c.timestamp, c.payload)
}

pub const WEEKS: u32 = 17;

pub fn first_day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 1, 1).unwrap()
}

pub fn survey_date(week: u32) -> NaiveDate {
    first_day() + Duration::days(i64::from(week) * 7 - 1)
}

/// Captures for one participant over 17 weeks. Each screen mixes
/// positive and negative lexicon words with unique filler, so nothing is
/// deduplicated and every screen has a score; a few days are left empty.
pub fn weekly_captures(seed: u64, participant: &str) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = ["happy", "good", "love", "calm"];
    let neg = ["sad", "bad", "hate"];
    let mut out = String::new();
    let mut id = 0;
    for day in 0..(WEEKS * 7) {
        if day % 7 != 6 && rng.gen_bool(0.15) {
            continue;
        }
        let date = first_day() + Duration::days(i64::from(day));
        let base = date
            .and_hms_opt(12, 0, 0)
            .unwrap()
            .and_utc()
            .timestamp_millis();
        for s in 0..rng.gen_range(1..=3) {
            let mut elements = Vec::new();
            for _ in 0..rng.gen_range(1..=4) {
                id += 1;
                let word = if rng.gen_bool(0.5) {
                    pos[rng.gen_range(0..pos.len())]
                } else {
                    neg[rng.gen_range(0..neg.len())]
                };
                let y = elements.len() as i64 * 50;
                elements.push(TextElement::new(
                    format!("{word} note{id}"),
                    0,
                    y,
                    200,
                    y + 40,
                ));
            }
            let capture = RawCapture {
                participant_id: participant.to_string(),
                timestamp: base + s * 60_000,
                payload: encode_payload(&elements),
            };
            out.push_str(&capture_line(&capture));
            out.push('\n');
        }
    }
    out
}

/// Survey lines whose ratings equal the scripted LLM's answer for each
/// week, computed from the four-decimal day values the prompts carry.
pub fn fixed_point_surveys(scores: &[ScreenScore], participant: &str) -> String {
    let dailies = daily_sentiments(scores, chrono_tz::UTC).unwrap();
    let mut out = String::new();
    for week in 1..=WEEKS {
        let date = survey_date(week);
        let mut sample = assemble_week(participant, week, date, None, &dailies).unwrap();
        for d in sample.days.iter_mut().flatten() {
            *d = format_score(*d).parse().unwrap();
        }
        let response = SurveyResponse {
            participant_id: participant.to_string(),
            survey_date: date,
            ratings: scripted_ratings(&sample),
        };
        out.push_str(&response.to_line());
        out.push('\n');
    }
    out
}

pub fn write_config(dir: &std::path::Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("screen-affect.toml");
    std::fs::write(
        &path,
        format!("captures = \"captures.tsv\"\nsurveys = \"surveys.tsv\"\nseed = 42\noutput_dir = \"out\"\n{extra}"),
    )
    .unwrap();
    path
}

/// Fixed inputs behind the prompt golden files.
pub fn week(index: u32, days: [Option<f64>; 7], ratings: Option<[u8; 10]>) -> WeekSample {
    WeekSample {
        participant_id: "p1".into(),
        week_index: index,
        survey_date: NaiveDate::from_ymd_opt(2023, 3, 7).unwrap(),
        days,
        ratings: ratings.map(|r| AffectRatings::new(r).unwrap()),
    }
}

fn pattern_days(w: u32, missing: Option<usize>) -> [Option<f64>; 7] {
    std::array::from_fn(|i| {
        let d = i as u32 + 1;
        (Some(i + 1) != missing).then(|| (((w * 3 + d * 5) % 21) as f64 - 10.0) / 10.0)
    })
}

fn pattern_ratings(w: u32) -> [u8; 10] {
    std::array::from_fn(|i| ((w as usize + i) % 5 + 1) as u8)
}

pub fn zero_shot_input() -> WeekSample {
    week(
        1,
        [0.1234, -0.5, 0.0, 0.75, -0.0417, 0.3333, -1.0].map(Some),
        None,
    )
}

pub fn multi_shot_input() -> (Vec<WeekSample>, WeekSample) {
    let train = [2, 3, 5, 7, 8, 11, 13, 16, 17]
        .into_iter()
        .rev()
        .map(|w| week(w, pattern_days(w, None), Some(pattern_ratings(w))))
        .collect();
    (train, week(4, pattern_days(4, Some(2)), None))
}

/// Writes captures and a config into `dir`, runs ingest and score, then
/// writes surveys that follow the scripted LLM's rule. Returns the config
/// path; evaluation is left to the caller.
pub fn fixed_point_workspace(dir: &std::path::Path, data_seed: u64) -> std::path::PathBuf {
    use screen_affect::pipeline::{read_jsonl, Overrides, Pipeline, PipelineConfig, Stage};
    std::fs::write(dir.join("captures.tsv"), weekly_captures(data_seed, "p1")).unwrap();
    let config_path = write_config(dir, "");
    let pipeline = Pipeline::new(
        PipelineConfig::load(&config_path).unwrap(),
        Overrides::default(),
    )
    .unwrap();
    pipeline.ingest().unwrap();
    pipeline.score().unwrap();
    let scores: Vec<ScreenScore> =
        read_jsonl(&pipeline.config.output_path("scores.jsonl"), Stage::Score).unwrap();
    std::fs::write(dir.join("surveys.tsv"), fixed_point_surveys(&scores, "p1")).unwrap();
    config_path
}
