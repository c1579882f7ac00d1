//! Per-cycle credit assignment: which neurons a cycle introduced, whether
//! they were reused in the following X-phase, and the signed evidence that
//! flows into the neuron accumulators.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cache::{NeuronKey, Row};
use crate::num::Float;
use crate::segment::Cycle;
use crate::stats;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CreditConfig {
    pub epsilon: f64,
    /// Attribute cycles to every neuron active in the E-phase instead of only
    /// the ones first seen there. Exists for ablations.
    pub all_active: bool,
}

impl Default for CreditConfig {
    fn default() -> Self {
        CreditConfig {
            epsilon: DEFAULT_EPSILON,
            all_active: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleCredit<F> {
    pub index: usize,
    pub explore: Range<usize>,
    pub exploit: Range<usize>,
    pub new_neurons: BTreeSet<NeuronKey>,
    /// Mass of each new neuron in the row where it was first seen.
    pub intro_mass: BTreeMap<NeuronKey, F>,
    pub reuse_share: F,
    pub progress: F,
    pub consolidation: F,
    pub strength: F,
    pub gate: bool,
    pub effective: bool,
}

impl<F: Float> CycleCredit<F> {
    /// `(m_pos delta, m_neg delta)` this cycle adds to each of its neurons,
    /// keyed ascending.
    pub fn deltas(&self) -> impl Iterator<Item = (NeuronKey, F, F)> + '_ {
        self.intro_mass.iter().filter_map(move |(&k, &alpha)| {
            if !self.gate {
                None
            } else if self.effective {
                Some((k, alpha * self.progress * self.consolidation, F::zero()))
            } else {
                Some((k, F::zero(), alpha * self.progress.abs()))
            }
        })
    }
}

/// Row index where each neuron first appears in the trace.
pub fn first_seen<F>(rows: &[Row<F>]) -> BTreeMap<NeuronKey, usize> {
    let mut out = BTreeMap::new();
    for row in rows {
        for &k in &row.neurons {
            out.entry(k).or_insert(row.index);
        }
    }
    out
}

fn in_range(range: &Range<usize>, rows: usize) -> Range<usize> {
    range.start.min(rows)..range.end.min(rows)
}

/// Neurons whose first appearance in the trace falls inside the E-phase.
pub fn new_neurons<F>(cycle: &Cycle, rows: &[Row<F>]) -> BTreeSet<NeuronKey> {
    let seen = first_seen(rows);
    let span = in_range(&cycle.explore, rows.len());
    seen.into_iter()
        .filter(|(_, r)| span.contains(r))
        .map(|(k, _)| k)
        .collect()
}

/// Introduction mass per credited neuron. Default mode: `A_{k,r}` at the
/// first-seen row only. `all_active`: every neuron active in the E-phase,
/// with its mass summed over the E-rows.
fn introduction_masses<F: Float>(
    cycle: &Cycle,
    rows: &[Row<F>],
    seen: &BTreeMap<NeuronKey, usize>,
    all_active: bool,
) -> BTreeMap<NeuronKey, F> {
    let span = in_range(&cycle.explore, rows.len());
    let mut out = BTreeMap::new();
    for row in &rows[span] {
        for &k in &row.neurons {
            if all_active {
                let e = out.entry(k).or_insert_with(F::zero);
                *e = *e + row.mass(k);
            } else if seen.get(&k) == Some(&row.index) {
                out.insert(k, row.mass(k));
            }
        }
    }
    out
}

/// Share of X-phase mass carried by `introduced`, `eps`-guarded.
pub fn reuse_share<F: Float>(
    cycle: &Cycle,
    introduced: &BTreeSet<NeuronKey>,
    rows: &[Row<F>],
    eps: F,
) -> F {
    let span = in_range(&cycle.exploit, rows.len());
    let mut reused = F::zero();
    let mut total = F::zero();
    for row in &rows[span] {
        for (k, &m) in &row.masses {
            total = total + m;
            if introduced.contains(k) {
                reused = reused + m;
            }
        }
    }
    reused / (total + eps)
}

/// Centers shares on their median over the trace's cycles.
pub fn progress<F: Float>(shares: &[F]) -> Vec<F> {
    match stats::median(shares) {
        Some(m) => shares.iter().map(|&s| s - m).collect(),
        None => Vec::new(),
    }
}

fn phase_median<F: Float>(range: &Range<usize>, slopes: &[F]) -> F {
    stats::median(&slopes[in_range(range, slopes.len())]).unwrap_or_else(F::zero)
}

/// Clipped relative drop of the raw-slope median from E-phase to X-phase.
pub fn consolidation<F: Float>(cycle: &Cycle, raw_slopes: &[F], eps: F) -> F {
    let e = phase_median(&cycle.explore, raw_slopes);
    let x = phase_median(&cycle.exploit, raw_slopes);
    let c = F::one() - x / (e + eps);
    c.max(F::zero()).min(F::one())
}

/// E-phase slope median minus the whole-trace median, and whether it is
/// strictly positive.
pub fn strength_gate<F: Float>(cycle: &Cycle, raw_slopes: &[F]) -> (F, bool) {
    let e = phase_median(&cycle.explore, raw_slopes);
    let all = stats::median(raw_slopes).unwrap_or_else(F::zero);
    let strength = e - all;
    (strength, strength > F::zero())
}

/// Credit for every cycle of one trace. Progress is centered over all
/// cycles, gated or not.
pub fn assign_credit<F: Float>(
    rows: &[Row<F>],
    raw_slopes: &[F],
    cycles: &[Cycle],
    cfg: &CreditConfig,
) -> Vec<CycleCredit<F>> {
    let eps = F::lit(cfg.epsilon);
    let seen = first_seen(rows);
    let partial: Vec<_> = cycles
        .iter()
        .map(|c| {
            let intro = introduction_masses(c, rows, &seen, cfg.all_active);
            let introduced: BTreeSet<NeuronKey> = intro.keys().copied().collect();
            let share = reuse_share(c, &introduced, rows, eps);
            (c, introduced, intro, share)
        })
        .collect();
    let shares: Vec<F> = partial.iter().map(|p| p.3).collect();
    let progress = progress(&shares);

    partial
        .into_iter()
        .zip(progress)
        .map(|((c, introduced, intro_mass, share), prog)| {
            let cons = consolidation(c, raw_slopes, eps);
            let (strength, gate) = strength_gate(c, raw_slopes);
            CycleCredit {
                index: c.index,
                explore: c.explore.clone(),
                exploit: c.exploit.clone(),
                new_neurons: introduced,
                intro_mass,
                reuse_share: share,
                progress: prog,
                consolidation: cons,
                strength,
                gate,
                effective: prog > F::zero() && cons > F::zero(),
            }
        })
        .collect()
}

/// Per-neuron `(m_pos, m_neg)` sums.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accumulator<F> {
    pub m_pos: F,
    pub m_neg: F,
}

/// One trace's accumulated evidence, applied in ascending cycle index and
/// ascending key order.
pub fn trace_accumulators<F: Float>(
    credits: &[CycleCredit<F>],
) -> BTreeMap<NeuronKey, Accumulator<F>> {
    let mut order: Vec<&CycleCredit<F>> = credits.iter().collect();
    order.sort_by_key(|c| c.index);
    let mut acc: BTreeMap<NeuronKey, Accumulator<F>> = BTreeMap::new();
    for credit in order {
        for (k, dp, dn) in credit.deltas() {
            let e = acc.entry(k).or_insert(Accumulator {
                m_pos: F::zero(),
                m_neg: F::zero(),
            });
            e.m_pos = e.m_pos + dp;
            e.m_neg = e.m_neg + dn;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(index: usize, entries: &[(u32, f64)]) -> Row<f64> {
        Row {
            index,
            start: index * 4,
            end: index * 4 + 4,
            neurons: entries.iter().map(|&(k, _)| NeuronKey::from_packed(k)).collect(),
            masses: entries
                .iter()
                .map(|&(k, m)| (NeuronKey::from_packed(k), m))
                .collect(),
        }
    }

    fn cycle(e: Range<usize>, x: Range<usize>) -> Cycle {
        Cycle {
            index: 0,
            explore: e,
            exploit: x,
        }
    }

    fn keys(ks: &[u32]) -> BTreeSet<NeuronKey> {
        ks.iter().map(|&k| NeuronKey::from_packed(k)).collect()
    }

    #[test]
    fn new_neurons_first_seen_rule() {
        let rows = vec![row(0, &[(1, 1.0), (2, 1.0)]), row(1, &[(2, 1.0), (3, 1.0)])];
        assert_eq!(new_neurons(&cycle(1..2, 2..3), &rows), keys(&[3]));
        assert_eq!(new_neurons(&cycle(0..1, 1..2), &rows), keys(&[1, 2]));
        let rows = vec![row(0, &[(1, 1.0)]), row(1, &[(1, 2.0)]), row(2, &[(1, 1.0)])];
        let c = cycle(1..2, 2..3);
        let n = new_neurons(&c, &rows);
        assert!(n.is_empty());
        assert_eq!(reuse_share(&c, &n, &rows, 1e-6), 0.0);
    }

    #[test]
    fn reuse_share_cases() {
        let eps = 1e-6;
        let rows = vec![row(0, &[(1, 5.0)]), row(1, &[(1, 4.0), (2, 6.0)])];
        let c = cycle(0..1, 1..2);
        assert!((reuse_share(&c, &keys(&[1, 2]), &rows, eps) - 10.0 / (10.0 + eps)).abs() < 1e-15);
        assert_eq!(reuse_share(&c, &keys(&[7]), &rows, eps), 0.0);

        // 2 X rows x 3 neurons; N_i = {1}: 1.0 + 2.0 of 6.0 total.
        let rows = vec![
            row(0, &[(1, 1.0)]),
            row(1, &[(1, 1.0), (2, 1.0), (3, 0.5)]),
            row(2, &[(1, 2.0), (2, 0.5), (3, 1.0)]),
        ];
        let share = reuse_share(&cycle(0..1, 1..3), &keys(&[1]), &rows, eps);
        assert!((share - 0.5).abs() < 1e-6);
    }

    #[test]
    fn progress_centering() {
        let p = progress(&[0.2f64, 0.5, 0.8]);
        assert!((p[0] + 0.3).abs() < 1e-15 && p[1] == 0.0 && (p[2] - 0.3).abs() < 1e-15);
        assert_eq!(progress(&[0.4]), vec![0.0]);
        let p = progress(&[0.1f64, 0.9]);
        assert!((p[0] + 0.4).abs() < 1e-15 && (p[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn consolidation_cases() {
        let c = cycle(0..2, 2..4);
        assert!((consolidation(&c, &[4.0f64, 4.0, 1.0, 1.0], 1e-6) - 0.75).abs() < 1e-6);
        assert_eq!(consolidation(&c, &[1.0, 1.0, 2.0, 2.0], 1e-6), 0.0);
        assert_eq!(consolidation(&c, &[0.0, 0.0, 1.0, 1.0], 1e-6), 0.0);
    }

    #[test]
    fn strength_cases() {
        let c = cycle(0..2, 2..4);
        assert_eq!(strength_gate(&c, &[4.0, 4.0, 1.0, 1.0]), (1.5, true));
        let (s, g) = strength_gate(&cycle(1..2, 2..3), &[1.0, 2.0, 3.0]);
        assert_eq!((s, g), (0.0, false));
        assert_eq!(strength_gate(&c, &[0.5; 4]), (0.0, false));
    }

    fn credit(strength: f64, progress: f64, cons: f64) -> CycleCredit<f64> {
        CycleCredit {
            index: 0,
            explore: 0..1,
            exploit: 1..2,
            new_neurons: keys(&[1]),
            intro_mass: [(NeuronKey::from_packed(1), 2.0)].into_iter().collect(),
            reuse_share: 0.0,
            progress,
            consolidation: cons,
            strength,
            gate: strength > 0.0,
            effective: progress > 0.0 && cons > 0.0,
        }
    }

    #[test]
    fn gate_is_binary() {
        let weak: Vec<_> = credit(0.001, 0.3, 0.5).deltas().collect();
        let strong: Vec<_> = credit(100.0, 0.3, 0.5).deltas().collect();
        assert_eq!(weak, strong);
        assert_eq!(credit(0.0, 0.3, 0.5).deltas().count(), 0);
    }

    #[test]
    fn deltas_follow_effectiveness() {
        let k = NeuronKey::from_packed(1);
        assert_eq!(credit(1.0, 0.25, 0.5).deltas().collect::<Vec<_>>(), vec![(k, 0.25, 0.0)]);
        assert_eq!(credit(1.0, -0.25, 0.5).deltas().collect::<Vec<_>>(), vec![(k, 0.0, 0.5)]);
        assert_eq!(credit(1.0, 0.25, 0.0).deltas().collect::<Vec<_>>(), vec![(k, 0.0, 0.5)]);
    }

    #[test]
    fn all_active_credits_reactivated_neurons() {
        let rows = vec![
            row(0, &[(1, 1.0)]),
            row(1, &[(1, 2.0), (2, 3.0)]),
            row(2, &[(1, 1.0)]),
        ];
        let c = [cycle(1..2, 2..3)];
        let s = [0.25, 0.5, 0.0];
        let default = assign_credit(&rows, &s, &c, &CreditConfig::default());
        assert_eq!(default[0].new_neurons, keys(&[2]));
        let ablation = assign_credit(
            &rows,
            &s,
            &c,
            &CreditConfig { all_active: true, ..Default::default() },
        );
        assert_eq!(ablation[0].new_neurons, keys(&[1, 2]));
        assert_eq!(ablation[0].intro_mass[&NeuronKey::from_packed(1)], 2.0);
    }
}
