//! Straight-line reference implementations used as test oracles. Nothing
//! here calls into the crate's numerical code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

pub const EPS: f64 = 1e-6;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Rows of one trace: per-row neuron → summed mass (only masses > 0).
pub type RefRows = Vec<BTreeMap<u32, f64>>;

/// Parses a cache with plain `serde_json::Value` access and buckets it.
pub fn read_rows(path: &Path) -> (String, RefRows, Vec<usize>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    let width = header["row_width"].as_u64().unwrap() as usize;
    let trace_id = header["trace_id"].as_str().unwrap().to_string();
    let mut rows: RefRows = Vec::new();
    let mut tokens_per_row = Vec::new();
    for (t, line) in lines.enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if t % width == 0 {
            rows.push(BTreeMap::new());
            tokens_per_row.push(0);
        }
        let row = rows.last_mut().unwrap();
        *tokens_per_row.last_mut().unwrap() += 1;
        for a in v["acts"].as_array().unwrap() {
            let k = a[0].as_u64().unwrap() as u32;
            let m = a[1].as_f64().unwrap();
            *row.entry(k).or_insert(0.0) += m;
        }
    }
    for row in &mut rows {
        row.retain(|_, m| *m > 0.0);
    }
    (trace_id, rows, tokens_per_row)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

pub fn raw_slopes(rows: &RefRows, tokens: &[usize]) -> Vec<f64> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let mut new = 0;
        for k in row.keys() {
            if seen.insert(*k) {
                new += 1;
            }
        }
        out.push(new as f64 / tokens[r] as f64);
    }
    out
}

/// E→X cycles of a hand-labelled state string such as `"EEXXEEXX"`.
pub fn cycles_of(states: &str) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let s: Vec<char> = states.chars().collect();
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=s.len() {
        if i == s.len() || s[i] != s[start] {
            runs.push((s[start], start..i));
            start = i;
        }
    }
    let mut out = Vec::new();
    for w in runs.windows(2) {
        if w[0].0 == 'E' && w[1].0 == 'X' {
            out.push((w[0].1.clone(), w[1].1.clone()));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RefCycle {
    pub new_neurons: Vec<u32>,
    pub alpha: BTreeMap<u32, f64>,
    pub share: f64,
    pub progress: f64,
    pub cons: f64,
    pub strength: f64,
    pub gate: bool,
    pub effective: bool,
}

/// Per-cycle credit for one trace given its states.
pub fn reference_credit(rows: &RefRows, tokens: &[usize], states: &str) -> Vec<RefCycle> {
    let s = raw_slopes(rows, tokens);
    let mut first: BTreeMap<u32, usize> = BTreeMap::new();
    for (r, row) in rows.iter().enumerate() {
        for k in row.keys() {
            first.entry(*k).or_insert(r);
        }
    }
    let trace_median = median(&s);
    let mut out = Vec::new();
    for (e, x) in cycles_of(states) {
        let new_neurons: Vec<u32> = first
            .iter()
            .filter(|(_, r)| e.contains(r))
            .map(|(k, _)| *k)
            .collect();
        let alpha: BTreeMap<u32, f64> = new_neurons
            .iter()
            .map(|k| (*k, rows[first[k]][k]))
            .collect();
        let mut reused = 0.0;
        let mut total = 0.0;
        for r in x.clone() {
            for (k, m) in &rows[r] {
                total += m;
                if new_neurons.contains(k) {
                    reused += m;
                }
            }
        }
        let med_e = median(&s[e.clone()]);
        let med_x = median(&s[x.clone()]);
        let cons = (1.0 - med_x / (med_e + EPS)).clamp(0.0, 1.0);
        let strength = med_e - trace_median;
        out.push(RefCycle {
            new_neurons,
            alpha,
            share: reused / (total + EPS),
            progress: 0.0,
            cons,
            strength,
            gate: strength > 0.0,
            effective: false,
        });
    }
    let shares: Vec<f64> = out.iter().map(|c| c.share).collect();
    if !shares.is_empty() {
        let m = median(&shares);
        for c in &mut out {
            c.progress = c.share - m;
            c.effective = c.progress > 0.0 && c.cons > 0.0;
        }
    }
    out
}

/// Accumulated `(m_pos, m_neg)` over traces.
pub fn reference_accumulators(traces: &[(RefRows, Vec<usize>, &str)]) -> BTreeMap<u32, (f64, f64)> {
    let mut acc: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for (rows, tokens, states) in traces {
        for c in reference_credit(rows, tokens, states) {
            if !c.gate {
                continue;
            }
            for (k, a) in &c.alpha {
                let e = acc.entry(*k).or_insert((0.0, 0.0));
                if c.effective {
                    e.0 += a * c.progress * c.cons;
                } else {
                    e.1 += a * c.progress.abs();
                }
            }
        }
    }
    acc
}

pub fn reference_w(m_pos: f64, m_neg: f64) -> f64 {
    (((m_pos + EPS) / (m_neg + EPS)).ln()).tanh()
}

/// Least-squares line through `(ln(1 + r), y_r)` by the normal equations.
pub fn reference_ols(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let xs: Vec<f64> = (0..ys.len()).map(|r| (1.0 + r as f64).ln()).collect();
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    if ys.len() < 2 || det.abs() < 1e-300 {
        return (sy / n, 0.0);
    }
    let b = (n * sxy - sx * sy) / det;
    ((sy - b * sx) / n, b)
}

pub fn reference_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Log joint probability of a path under a two-state sticky HMM with
/// Gaussian emissions (state 0 = X, 1 = E) and a uniform start.
pub fn path_score(z: &[f64], path: &[usize], means: [f64; 2], vars: [f64; 2], rho: f64) -> f64 {
    let emit = |s: usize, x: f64| {
        -0.5 * (2.0 * std::f64::consts::PI * vars[s]).ln() - (x - means[s]).powi(2) / (2.0 * vars[s])
    };
    let mut lp = 0.5f64.ln() + emit(path[0], z[0]);
    for r in 1..z.len() {
        let t = if path[r] == path[r - 1] { rho } else { 1.0 - rho };
        lp = lp + t.ln() + emit(path[r], z[r]);
    }
    lp
}

/// Exhaustive argmax over all 2^R paths; ties go to the lexicographically
/// smallest path (X before E at the earliest differing row).
pub fn brute_force_path(z: &[f64], means: [f64; 2], vars: [f64; 2], rho: f64) -> Vec<usize> {
    let r = z.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << r) {
        let path: Vec<usize> = (0..r).map(|i| ((mask >> (r - 1 - i)) & 1) as usize).collect();
        let lp = path_score(z, &path, means, vars, rho);
        if best.as_ref().is_none_or(|(b, _)| lp > *b) {
            best = Some((lp, path));
        }
    }
    best.unwrap().1
}
