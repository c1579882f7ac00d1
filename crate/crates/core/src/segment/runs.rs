//! Run-length smoothing of decoded states and E→X cycle extraction.

use std::ops::Range;

use serde::Serialize;

use super::State;

/// Maximal run of one state over rows `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Run {
    pub state: State,
    pub start: usize,
    pub end: usize,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

pub fn runs(states: &[State]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (i, &s) in states.iter().enumerate() {
        match out.last_mut() {
            Some(run) if run.state == s => run.end = i + 1,
            _ => out.push(Run {
                state: s,
                start: i,
                end: i + 1,
            }),
        }
    }
    out
}

/// Repeatedly merges a run shorter than `min_run` into its longer neighbour
/// (the following run on a tie) until every run is long enough or a single
/// run remains.
///
/// The shortest run goes first. Among equally short runs the one next to the
/// longest neighbour wins, then the leftmost, so an isolated flip inside a
/// long phase is absorbed before a short run at the trace edge.
pub fn smooth_min_run(states: &[State], min_run: usize) -> Vec<State> {
    let mut states = states.to_vec();
    loop {
        let rs = runs(&states);
        if rs.len() <= 1 {
            return states;
        }
        let neighbour_len = |i: usize| {
            let prev = i.checked_sub(1).map_or(0, |p| rs[p].len());
            let next = rs.get(i + 1).map_or(0, Run::len);
            prev.max(next)
        };
        let Some(pos) = (0..rs.len())
            .filter(|&i| rs[i].len() < min_run)
            .min_by_key(|&i| (rs[i].len(), std::cmp::Reverse(neighbour_len(i)), i))
        else {
            return states;
        };
        let prev = pos.checked_sub(1).map(|p| &rs[p]);
        let next = rs.get(pos + 1);
        let target = match (prev, next) {
            (Some(p), Some(n)) => {
                if p.len() > n.len() {
                    p.state
                } else {
                    n.state
                }
            }
            (Some(p), None) => p.state,
            (None, Some(n)) => n.state,
            (None, None) => unreachable!("more than one run"),
        };
        let run = &rs[pos];
        states[run.start..run.end].fill(target);
    }
}

/// One E-run immediately followed by an X-run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cycle {
    pub index: usize,
    pub explore: Range<usize>,
    pub exploit: Range<usize>,
}

/// Pairs every maximal E-run with the X-run that follows it. A leading X-run
/// and a trailing E-run belong to no cycle.
pub fn extract_cycles(states: &[State]) -> Vec<Cycle> {
    let rs = runs(states);
    rs.windows(2)
        .filter(|w| w[0].state == State::Explore && w[1].state == State::Exploit)
        .enumerate()
        .map(|(index, w)| Cycle {
            index,
            explore: w[0].start..w[0].end,
            exploit: w[1].start..w[1].end,
        })
        .collect()
}
