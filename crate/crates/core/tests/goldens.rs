mod common;

use common::{multi_shot_input, week, zero_shot_input};
use screen_affect::affect::Affect;
use screen_affect::evaluate::{make_splits, render_table, AffectMAE, EvalReport};
use screen_affect::predict::{
    build_example_block, build_multi_shot_prompt, build_zero_shot_prompt, Method,
};
use screen_affect::timeline::WeekSample;

const ZERO_SHOT: &str = include_str!("golden/zero_shot_full.txt");
const EXAMPLE_BLOCK: &str = include_str!("golden/example_block.txt");
const MULTI_SHOT: &str = include_str!("golden/multi_shot_full.txt");
const TABLE1: &str = include_str!("golden/table1.txt");
const TABLE2: &str = include_str!("golden/table2.txt");
const SPLITS_SEED42: &str = include_str!("golden/splits_seed42.tsv");

#[test]
fn zero_shot_prompt_matches_golden() {
    let p = build_zero_shot_prompt(&zero_shot_input()).unwrap();
    assert_eq!(p.text, ZERO_SHOT);
}

#[test]
fn example_block_matches_golden() {
    let w = week(
        1,
        [
            Some(0.5),
            Some(-0.25),
            Some(0.125),
            Some(0.0),
            Some(0.9),
            None,
            Some(-0.3),
        ],
        Some([2, 3, 4, 5, 1, 1, 2, 3, 4, 5]),
    );
    assert_eq!(build_example_block(&w).unwrap(), EXAMPLE_BLOCK);
}

#[test]
fn multi_shot_prompt_matches_golden() {
    let (train, eval) = multi_shot_input();
    let refs: Vec<&WeekSample> = train.iter().collect();
    let p = build_multi_shot_prompt(&refs, &eval).unwrap();
    assert_eq!(p.text, MULTI_SHOT);
    assert!(p.text.contains("\nDay 2: N/A\n"));
}

/// Parses a published table transcription into per-method summaries.
fn published_reports(golden: &str) -> Vec<EvalReport> {
    let rows: Vec<Vec<(f64, f64)>> = golden
        .lines()
        .skip(1)
        .map(|line| {
            line.split('\t')
                .skip(1)
                .map(|cell| {
                    let (m, s) = cell.trim_matches('*').split_once(" ± ").unwrap();
                    (m.parse().unwrap(), s.parse().unwrap())
                })
                .collect()
        })
        .collect();
    Method::ALL
        .iter()
        .enumerate()
        .map(|(col, method)| EvalReport {
            participant_id: "p".into(),
            method: *method,
            rows: Affect::ALL
                .iter()
                .zip(&rows)
                .map(|(a, r)| AffectMAE::from_summary(*a, r[col].0, r[col].1, 5))
                .collect(),
            runs_used: Vec::new(),
            failures: Vec::new(),
            best: [false; 10],
        })
        .collect()
}

#[test]
fn participant_one_table_renders() {
    let rendered = render_table(&published_reports(TABLE1));
    assert_eq!(rendered, TABLE1);
    assert!(rendered.contains("Active\t3.31 ± 1.12\t**0.80 ± 0.06**\t0.83 ± 0.10\n"));
    assert!(rendered.contains("Afraid\t1.70 ± 1.14\t**0.08 ± 0.06**\t**0.08 ± 0.06**\n"));
}

#[test]
fn participant_two_table_renders() {
    let rendered = render_table(&published_reports(TABLE2));
    assert_eq!(rendered, TABLE2);
    assert!(rendered.contains("\t**0.68 ± 0.13**\n"));
}

#[test]
fn seed_42_splits_are_frozen() {
    let weeks: Vec<u32> = (1..=17).collect();
    let plans = make_splits(&weeks, 9, 5, 42).unwrap();
    let rendered: String = plans
        .iter()
        .map(|p| {
            let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
            format!(
                "{}\t{}\t{}\n",
                p.run_index,
                join(&p.train_weeks),
                join(&p.eval_weeks)
            )
        })
        .collect();
    assert_eq!(rendered, SPLITS_SEED42);
}
