//! Whole-file scanning with the neighbour-similarity prefilter.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{jaccard, tokenize, ClassifierModel, DetectorError, JS_WINDOW_TOKENS, WINDOW_BYTES};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanConfig {
    /// Neighbouring windows at or below this similarity count as unrelated.
    pub tau: f64,
    pub js_window_tokens: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            tau: 0.0,
            js_window_tokens: JS_WINDOW_TOKENS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub window: usize,
    pub offset: u64,
    /// Similarity to the next window (the previous one for the last window).
    pub js: f64,
    pub score: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport {
    pub tau: f64,
    pub window_bytes: u64,
    pub windows_total: usize,
    /// Similarity evaluations made by the prefilter.
    pub js_computations: usize,
    pub candidates: Vec<Candidate>,
    /// Merged byte ranges `[start, end)` of flagged windows.
    pub flagged_regions: Vec<(u64, u64)>,
    pub diagnostic: Option<String>,
}

impl DetectionReport {
    pub fn flagged(&self) -> usize {
        self.candidates.iter().filter(|c| c.flagged).count()
    }
}

/// Split into similarity windows, keep every window triple whose middle is
/// unrelated to both neighbours, and classify what is kept.
///
/// Each kept window is classified with the model's window length centred on
/// it, clamped to the file.
pub fn scan_file(data: &[u8], model: &ClassifierModel, cfg: &ScanConfig) -> DetectionReport {
    let tokens = tokenize(data);
    let wt = cfg.js_window_tokens;
    let m = tokens.len() / wt;
    let mut report = DetectionReport {
        tau: cfg.tau,
        window_bytes: 2 * wt as u64,
        windows_total: m,
        js_computations: 0,
        candidates: Vec::new(),
        flagged_regions: Vec::new(),
        diagnostic: None,
    };
    if m < 3 {
        report.diagnostic = Some(format!("{m} windows; at least 3 are needed"));
        return report;
    }
    let window = |i: usize| &tokens[i * wt..(i + 1) * wt];
    let js: Vec<f64> = (0..m - 1).map(|i| jaccard(window(i), window(i + 1))).collect();
    report.js_computations = js.len();
    let mut keep = BTreeSet::new();
    for i in 1..m - 1 {
        if js[i - 1] <= cfg.tau && js[i] <= cfg.tau {
            keep.extend([i - 1, i, i + 1]);
        }
    }
    let span = model.window_tokens().unwrap_or(WINDOW_BYTES / 2).min(tokens.len());
    report.candidates = keep
        .into_par_iter()
        .map(|i| {
            let centre = i * wt + wt / 2;
            let start = centre.saturating_sub(span / 2).min(tokens.len() - span);
            let (label, score) = model
                .predict(&tokens[start..start + span])
                .expect("span matches the model window");
            Candidate {
                window: i,
                offset: (i * 2 * wt) as u64,
                js: if i + 1 < m { js[i] } else { js[i - 1] },
                score,
                flagged: label.is_collision(),
            }
        })
        .collect();
    for c in report.candidates.iter().filter(|c| c.flagged) {
        let (s, e) = (c.offset, c.offset + report.window_bytes);
        match report.flagged_regions.last_mut() {
            Some(last) if last.1 == s => last.1 = e,
            _ => report.flagged_regions.push((s, e)),
        }
    }
    report
}

impl fmt::Display for DetectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# tau={} window_bytes={}", self.tau, self.window_bytes)?;
        writeln!(f, "# offset\tjs\tscore\tlabel")?;
        for c in &self.candidates {
            let label = if c.flagged { "collision" } else { "clean" };
            writeln!(f, "{}\t{}\t{}\t{label}", c.offset, c.js, c.score)?;
        }
        writeln!(f, "# windows_total={}", self.windows_total)?;
        writeln!(f, "# candidates={}", self.candidates.len())?;
        writeln!(f, "# flagged={}", self.flagged())?;
        writeln!(f, "# js_computations={}", self.js_computations)?;
        for (s, e) in &self.flagged_regions {
            writeln!(f, "# region={s}-{e}")?;
        }
        if let Some(d) = &self.diagnostic {
            writeln!(f, "# diagnostic={d}")?;
        }
        Ok(())
    }
}

/// Read back the text form of a report.
pub fn parse_report(text: &str) -> Result<DetectionReport, DetectorError> {
    let bad = |l: &str| DetectorError::BadReport(l.to_string());
    let mut r = DetectionReport {
        tau: 0.0,
        window_bytes: 0,
        windows_total: 0,
        js_computations: 0,
        candidates: Vec::new(),
        flagged_regions: Vec::new(),
        diagnostic: None,
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(meta) = line.strip_prefix("# ") {
            for kv in meta.split_whitespace() {
                let Some((k, v)) = kv.split_once('=') else { continue };
                match k {
                    "tau" => r.tau = v.parse().map_err(|_| bad(line))?,
                    "window_bytes" => r.window_bytes = v.parse().map_err(|_| bad(line))?,
                    "windows_total" => r.windows_total = v.parse().map_err(|_| bad(line))?,
                    "js_computations" => r.js_computations = v.parse().map_err(|_| bad(line))?,
                    "region" => {
                        let (s, e) = v.split_once('-').ok_or_else(|| bad(line))?;
                        r.flagged_regions
                            .push((s.parse().map_err(|_| bad(line))?, e.parse().map_err(|_| bad(line))?));
                    }
                    "diagnostic" => r.diagnostic = Some(meta["diagnostic=".len()..].to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [offset, js, score, label] = f[..] else { return Err(bad(line)) };
        let offset: u64 = offset.parse().map_err(|_| bad(line))?;
        if r.window_bytes == 0 {
            return Err(bad("candidate before the window size header"));
        }
        r.candidates.push(Candidate {
            window: (offset / r.window_bytes) as usize,
            offset,
            js: js.parse().map_err(|_| bad(line))?,
            score: score.parse().map_err(|_| bad(line))?,
            flagged: match label {
                "collision" => true,
                "clean" => false,
                _ => return Err(bad(line)),
            },
        });
    }
    if r.window_bytes == 0 {
        return Err(bad("missing window size header"));
    }
    Ok(r)
}

/// Ground truth: one `start<TAB>end` byte range per line, `#` comments.
pub fn parse_truth(text: &str) -> Result<Vec<(u64, u64)>, DetectorError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap().trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut it = l.split_whitespace().map(str::parse::<u64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(s)), Some(Ok(e)), None) if s < e => Ok((s, e)),
                _ => Err(DetectorError::BadReport(l.to_string())),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub windows_total: usize,
    pub candidates: usize,
    pub flagged: usize,
    pub truth_windows: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Window-level scores: a window is a true collision window when it
/// overlaps any truth range. Empty denominators score 1.
pub fn evaluate(report: &DetectionReport, truth: &[(u64, u64)]) -> Evaluation {
    let wb = report.window_bytes;
    let is_true = |w: usize| {
        let (s, e) = (w as u64 * wb, (w as u64 + 1) * wb);
        truth.iter().any(|&(a, b)| a < e && s < b)
    };
    let truth_windows = (0..report.windows_total).filter(|&w| is_true(w)).count();
    let flagged: Vec<usize> = report.candidates.iter().filter(|c| c.flagged).map(|c| c.window).collect();
    let tp = flagged.iter().filter(|&&w| is_true(w)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, flagged.len());
    let recall = ratio(tp, truth_windows);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Evaluation {
        windows_total: report.windows_total,
        candidates: report.candidates.len(),
        flagged: flagged.len(),
        truth_windows,
        true_positives: tp,
        precision,
        recall,
        f1,
    }
}

/// Insert `regions` runs of `per_region` consecutive suffixes into `clean`
/// at seeded positions. Returns the new file and the inserted byte ranges.
pub fn insert_collision_regions(
    clean: &[u8],
    suffixes: &[&[u8]],
    regions: usize,
    per_region: usize,
    seed: u64,
) -> Result<(Vec<u8>, Vec<(u64, u64)>), DetectorError> {
    if suffixes.is_empty() || regions == 0 || clean.len() < 2 * regions {
        return Err(DetectorError::InsufficientMaterial(
            "need suffixes and room for every region".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segment = clean.len() / regions;
    let mut out = Vec::with_capacity(clean.len() + regions * per_region * suffixes[0].len());
    let mut truth = Vec::with_capacity(regions);
    let mut from = 0;
    for r in 0..regions {
        let at = r * segment + rng.gen_range(segment / 4..segment - segment / 4);
        out.extend_from_slice(&clean[from..at]);
        from = at;
        let start = out.len() as u64;
        let first = rng.gen_range(0..suffixes.len());
        for k in 0..per_region {
            out.extend_from_slice(suffixes[(first + k) % suffixes.len()]);
        }
        truth.push((start, out.len() as u64));
    }
    out.extend_from_slice(&clean[from..]);
    Ok((out, truth))
}
