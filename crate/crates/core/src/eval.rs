//! Key-press F1 and correct/incorrect/missed roll reports.
//!
//! Counts are micro-aggregated: true/false positives and misses are summed
//! over every step before precision and recall are formed. A key counts as
//! pressed at a step iff it is active at that step's 10 Hz boundary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ArtifactHeader;
use crate::score::{Hand, PianoRoll};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: Vec<Vec<u8>>,
    pub incorrect: Vec<Vec<u8>>,
    pub missed: Vec<Vec<u8>>,
}

impl F1Report {
    pub fn tp(&self) -> usize {
        self.correct.iter().map(Vec::len).sum()
    }

    pub fn fp(&self) -> usize {
        self.incorrect.iter().map(Vec::len).sum()
    }

    pub fn fn_(&self) -> usize {
        self.missed.iter().map(Vec::len).sum()
    }
}

/// Precision, recall and F1 from counts; each is 0 when undefined.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Scores per-step active key sets against the roll's goals.
pub fn score_f1(active: &[Vec<u8>], roll: &PianoRoll) -> Result<F1Report> {
    if active.len() != roll.num_steps() {
        return Err(Error::LengthMismatch {
            what: "rollout steps vs roll steps",
            expected: roll.num_steps(),
            got: active.len(),
        });
    }
    let mut correct = Vec::with_capacity(active.len());
    let mut incorrect = Vec::with_capacity(active.len());
    let mut missed = Vec::with_capacity(active.len());
    for (t, pressed) in active.iter().enumerate() {
        let mut pressed = pressed.clone();
        pressed.sort_unstable();
        pressed.dedup();
        let mut goal: Vec<u8> = roll.goals_at(t).iter().map(|g| g.key).collect();
        goal.sort_unstable();
        goal.dedup();
        correct.push(pressed.iter().copied().filter(|k| goal.binary_search(k).is_ok()).collect());
        incorrect.push(pressed.iter().copied().filter(|k| goal.binary_search(k).is_err()).collect());
        missed.push(goal.iter().copied().filter(|k| pressed.binary_search(k).is_err()).collect());
    }
    let mut report = F1Report {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        correct,
        incorrect,
        missed,
    };
    let (p, r, f) = prf(report.tp(), report.fp(), report.fn_());
    report.precision = p;
    report.recall = r;
    report.f1 = f;
    Ok(report)
}

/// Mean and sample standard deviation of F1×100 over `n` rollouts of
/// `source`, called with seeds `0..n`.
pub fn eval_protocol<F>(n: usize, roll: &PianoRoll, mut source: F) -> Result<(f64, f64, Vec<f64>)>
where
    F: FnMut(u64) -> Result<Vec<Vec<u8>>>,
{
    let mut scores = Vec::with_capacity(n);
    for seed in 0..n as u64 {
        scores.push(100.0 * score_f1(&source(seed)?, roll)?.f1);
    }
    let (mean, sd) = mean_sd(&scores);
    Ok((mean, sd, scores))
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

const COLORS: [(&str, &str); 3] = [("correct", "#2e8b57"), ("incorrect", "#d62728"), ("missed", "#9e9e9e")];

/// SVG roll: time on `x`, key on `y`, right-hand region drawn above the left.
pub fn emit_roll_svg(report: &F1Report, roll: &PianoRoll) -> String {
    let cell = 6.0;
    let steps = report.correct.len().max(1);
    let keys: Vec<u8> = report
        .correct
        .iter()
        .chain(&report.incorrect)
        .chain(&report.missed)
        .flatten()
        .copied()
        .collect();
    let (lo, hi) = match (keys.iter().min(), keys.iter().max()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (roll.split(), roll.split()),
    };
    let rows = usize::from(hi - lo) + 1;
    let gap = 2.0 * cell;
    let margin = 40.0;
    let width = margin + steps as f64 * cell + 10.0;
    let height = margin + rows as f64 * cell + gap + 60.0;
    // Higher keys nearer the top; the split line separates the hands.
    let y_of = |k: u8| {
        let row = f64::from(hi - k);
        let shift = if Hand::for_key(k, roll.split()) == Hand::Left { gap } else { 0.0 };
        10.0 + row * cell + shift
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, xml_escape(roll.title()));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let counts = [report.tp(), report.fp(), report.fn_()];
    for (ci, sets) in [&report.correct, &report.incorrect, &report.missed].into_iter().enumerate() {
        let _ = writeln!(out, r#"<g class="{}" fill="{}">"#, COLORS[ci].0, COLORS[ci].1);
        for (t, ks) in sets.iter().enumerate() {
            for &k in ks {
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}"/>"#,
                    margin + t as f64 * cell,
                    y_of(k)
                );
            }
        }
        out.push_str("</g>\n");
    }
    let split_y = 10.0 + rows as f64 * cell + gap / 2.0;
    if lo < roll.split() && hi >= roll.split() {
        let sy = y_of(roll.split()) + cell + gap / 2.0;
        let _ = writeln!(
            out,
            r##"<line x1="{margin}" y1="{sy:.1}" x2="{:.1}" y2="{sy:.1}" stroke="#444" stroke-dasharray="4 2"/>"##,
            width - 10.0
        );
    }
    let ly = split_y + gap + 10.0;
    for (ci, (name, color)) in COLORS.iter().enumerate() {
        let x = margin + ci as f64 * 120.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{ly:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif">{name}: {}</text>"#,
            x + 14.0,
            ly + 9.0,
            counts[ci]
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{margin}" y="{:.1}" font-size="11" font-family="sans-serif">P {:.3} R {:.3} F1 {:.3}</text>"#,
        ly + 30.0,
        report.precision,
        report.recall,
        report.f1
    );
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Columnar text: one row per (step, key, category).
pub fn emit_roll_table(report: &F1Report, header: &ArtifactHeader) -> String {
    let mut out = header.render("roll-report");
    let _ = writeln!(
        out,
        "# precision {:.6} recall {:.6} f1 {:.6} correct {} incorrect {} missed {}",
        report.precision,
        report.recall,
        report.f1,
        report.tp(),
        report.fp(),
        report.fn_()
    );
    out.push_str("step key category\n");
    for t in 0..report.correct.len() {
        let mut rows: Vec<(u8, &str)> = Vec::new();
        rows.extend(report.correct[t].iter().map(|&k| (k, "correct")));
        rows.extend(report.incorrect[t].iter().map(|&k| (k, "incorrect")));
        rows.extend(report.missed[t].iter().map(|&k| (k, "missed")));
        rows.sort();
        for (k, c) in rows {
            let _ = writeln!(out, "{t} {k} {c}");
        }
    }
    out
}
