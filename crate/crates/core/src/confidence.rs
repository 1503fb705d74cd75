//! Visit counts, L1 confidence widths, analogy transfer, and the candidate
//! transition sets planners optimize over.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mdp::{Pair, SparseRow, StateActionSet, StateId};

/// Largest possible L1 distance between two distributions.
pub const MAX_WIDTH: f64 = 2.0;

/// Distance assigned to pairs that are not listed as analogs of each other.
pub const UNRELATED_DELTA: f64 = 1.0;

/// Maps a successor `s'` of the target pair to the analogous successor of
/// the source pair; `None` maps to a dummy state with zero probability.
pub type AlphaFn = dyn Fn(Pair, StateId, Pair) -> Option<StateId> + Send + Sync;

/// Inverse of [`AlphaFn`] on the source's successors: given a successor of
/// the source, the target successor it corresponds to.
pub type PullbackFn = dyn Fn(Pair, Pair, StateId) -> Option<StateId> + Send + Sync;

/// The analogy `(Δ, α)`: a distance bounding the L1 gap between two pairs'
/// dynamics, and the successor map identifying equivalent next states.
///
/// Only analogs with `Δ < 1` are stored. Every other pair sits at distance
/// [`UNRELATED_DELTA`] and is never used as a transfer source.
#[derive(Clone)]
pub struct AnalogyOracle {
    num_states: usize,
    num_actions: usize,
    /// Per pair index: `(analog index, Δ)`, ascending by analog index, self excluded.
    links: Vec<Vec<(usize, f64)>>,
    /// Per pair index: pairs that list it as an analog, with their `Δ`.
    dependents: Vec<Vec<(usize, f64)>>,
    alpha: Arc<AlphaFn>,
    pullback: Option<Arc<PullbackFn>>,
}

impl std::fmt::Debug for AnalogyOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalogyOracle")
            .field("num_states", &self.num_states)
            .field("num_actions", &self.num_actions)
            .field("links", &self.links.iter().map(Vec::len).sum::<usize>())
            .finish()
    }
}

impl AnalogyOracle {
    /// No analogies: every pair only learns from itself.
    pub fn identity(num_states: usize, num_actions: usize) -> Self {
        Self::new(num_states, num_actions, vec![Vec::new(); num_states * num_actions], Arc::new(|_, s2, _| Some(s2)))
    }

    /// `links[p]` lists `(q, Δ(p,q))` for analogs of `p` with `Δ < 1`.
    pub fn new(num_states: usize, num_actions: usize, links: Vec<Vec<(Pair, f64)>>, alpha: Arc<AlphaFn>) -> Self {
        assert_eq!(links.len(), num_states * num_actions, "one analog list per pair");
        let mut idx_links: Vec<Vec<(usize, f64)>> = links
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let mut row: Vec<(usize, f64)> = row
                    .into_iter()
                    .map(|(q, d)| (q.index(num_actions), d))
                    .filter(|&(q, d)| q != i && d < UNRELATED_DELTA)
                    .collect();
                row.sort_by_key(|&(q, _)| q);
                row.dedup_by_key(|&mut (q, _)| q);
                row
            })
            .collect();
        idx_links.shrink_to_fit();
        let mut dependents = vec![Vec::new(); idx_links.len()];
        for (p, row) in idx_links.iter().enumerate() {
            for &(q, d) in row {
                dependents[q].push((p, d));
            }
        }
        AnalogyOracle { num_states, num_actions, links: idx_links, dependents, alpha, pullback: None }
    }

    /// Adds an inverse successor map so transfer can walk the source's
    /// sparse row instead of scanning every state.
    pub fn with_pullback(mut self, pullback: Arc<PullbackFn>) -> Self {
        self.pullback = Some(pullback);
        self
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn delta(&self, p: Pair, q: Pair) -> f64 {
        if p == q {
            return 0.0;
        }
        let (pi, qi) = (p.index(self.num_actions), q.index(self.num_actions));
        match self.links[pi].binary_search_by_key(&qi, |&(j, _)| j) {
            Ok(k) => self.links[pi][k].1,
            Err(_) => UNRELATED_DELTA,
        }
    }

    pub fn alpha(&self, p: Pair, s2: StateId, src: Pair) -> Option<StateId> {
        if p == src {
            return Some(s2);
        }
        (self.alpha)(p, s2, src)
    }

    /// Analogs of `p` with `Δ < 1` (self excluded), ascending by pair index.
    pub fn analogs(&self, p: Pair) -> impl Iterator<Item = (Pair, f64)> + '_ {
        let na = self.num_actions;
        self.links[p.index(na)].iter().map(move |&(q, d)| (Pair::from_index(q, na), d))
    }

    fn links_idx(&self, i: usize) -> &[(usize, f64)] {
        &self.links[i]
    }

    fn dependents_idx(&self, i: usize) -> &[(usize, f64)] {
        &self.dependents[i]
    }

    /// Row of the target pair `p` induced by the source's row `src_row`.
    pub fn transfer_row(&self, p: Pair, src: Pair, src_row: &SparseRow) -> SparseRow {
        if p == src {
            return src_row.clone();
        }
        if let Some(pull) = &self.pullback {
            let mut out: SparseRow = src_row.iter().filter_map(|&(s2, pr)| pull(p, src, s2).map(|t| (t, pr))).collect();
            out.sort_by_key(|&(s, _)| s);
            merge_duplicates(&mut out);
            return out;
        }
        (0..self.num_states)
            .filter_map(|s| {
                let mapped = (self.alpha)(p, StateId(s), src)?;
                let pr = src_row.iter().find(|&&(t, _)| t == mapped).map(|&(_, pr)| pr)?;
                Some((StateId(s), pr))
            })
            .collect()
    }
}

fn merge_duplicates(row: &mut SparseRow) {
    row.dedup_by(|next, prev| {
        if next.0 == prev.0 {
            prev.1 += next.1;
            true
        } else {
            false
        }
    });
}

/// `sqrt(2[ln(2^k - 2) - ln δ_T] / n)`, capped at [`MAX_WIDTH`].
///
/// `num_states` is `k`, the number of outcomes the bound ranges over.
pub fn hoeffding_width(n: u32, num_states: usize, delta_t: f64) -> Result<f64> {
    if num_states < 2 {
        return Err(Error::DegenerateWidth(num_states));
    }
    if n == 0 {
        return Ok(MAX_WIDTH);
    }
    let k = num_states as f64;
    // ln(2^k - 2) = k ln 2 + ln(1 - 2^(1-k)), stable for large k.
    let log_count = k * std::f64::consts::LN_2 + (-(2f64.powf(1.0 - k))).ln_1p();
    Ok((2.0 * (log_count - delta_t.ln()) / n as f64).sqrt().min(MAX_WIDTH))
}

/// Outcome count used in the width: every transition row has at most
/// `⌊1/τ⌋` successors, so the bound only needs to range over that many.
pub fn width_states(num_states: usize, tau: f64, support_bounded: bool) -> usize {
    let k = if support_bounded { num_states.min((1.0 / tau).floor() as usize) } else { num_states };
    k.max(2)
}

/// Per-estimate failure probability `δ / (2|S||A|m)`.
pub fn theoretical_delta_t(delta: f64, num_states: usize, num_actions: usize, m: u32) -> f64 {
    delta / (2.0 * num_states as f64 * num_actions as f64 * m as f64)
}

/// Smallest count whose width falls strictly below `target`.
pub fn samples_for_width(target: f64, num_states: usize, delta_t: f64) -> Result<u32> {
    let mut n = 1u32;
    while hoeffding_width(n, num_states, delta_t)? >= target {
        n = n.checked_mul(2).ok_or_else(|| Error::Config(format!("width {target} is unreachable")))?;
    }
    let (mut lo, mut hi) = (n / 2, n);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if hoeffding_width(mid, num_states, delta_t)? < target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Counts, empirical rows and widths, and their analogy transfer.
#[derive(Clone, Debug)]
pub struct ConfidenceModel {
    num_states: usize,
    num_actions: usize,
    m: u32,
    /// Width by count, `0..=m`.
    widths: Vec<f64>,
    n_sa: Vec<u32>,
    n_sas: Vec<Vec<(StateId, u32)>>,
    t_hat: Vec<SparseRow>,
    eps_hat: Vec<f64>,
    known: Vec<bool>,
    t_tilde: Vec<SparseRow>,
    eps_tilde: Vec<f64>,
    source: Vec<usize>,
    dirty: Vec<usize>,
    is_dirty: Vec<bool>,
}

impl ConfidenceModel {
    /// Fresh model; runs a full transfer so the transferred fields start
    /// consistent with `analogy`.
    pub fn new(analogy: &AnalogyOracle, m: u32, delta_t: f64, width_states: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(delta_t > 0.0 && delta_t < 1.0) {
            return Err(Error::Config(format!("delta_t {delta_t} outside (0,1)")));
        }
        let widths = (0..=m).map(|n| hoeffding_width(n, width_states, delta_t)).collect::<Result<Vec<_>>>()?;
        let (ns, na) = (analogy.num_states(), analogy.num_actions());
        let np = ns * na;
        let mut model = ConfidenceModel {
            num_states: ns,
            num_actions: na,
            m,
            widths,
            n_sa: vec![0; np],
            n_sas: vec![Vec::new(); np],
            t_hat: vec![Vec::new(); np],
            eps_hat: vec![MAX_WIDTH; np],
            known: vec![false; np],
            t_tilde: vec![Vec::new(); np],
            eps_tilde: vec![MAX_WIDTH; np],
            source: (0..np).collect(),
            dirty: Vec::new(),
            is_dirty: vec![false; np],
        };
        model.transfer_full(analogy);
        Ok(model)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    fn idx(&self, p: Pair) -> usize {
        p.index(self.num_actions)
    }

    fn mark(&mut self, i: usize) {
        if !self.is_dirty[i] {
            self.is_dirty[i] = true;
            self.dirty.push(i);
        }
    }

    /// Counts `(s,a,s')` while `n(s,a) < m`. Returns whether it was counted.
    pub fn record_transition(&mut self, p: Pair, s2: StateId) -> bool {
        let i = self.idx(p);
        if self.known[i] || self.n_sa[i] >= self.m {
            return false;
        }
        self.n_sa[i] += 1;
        let row = &mut self.n_sas[i];
        match row.binary_search_by_key(&s2, |&(s, _)| s) {
            Ok(k) => row[k].1 += 1,
            Err(k) => row.insert(k, (s2, 1)),
        }
        let n = self.n_sa[i] as f64;
        self.t_hat[i] = row.iter().map(|&(s, c)| (s, c as f64 / n)).collect();
        self.eps_hat[i] = self.widths[self.n_sa[i] as usize];
        self.mark(i);
        true
    }

    /// Declares the exact row of `p` (used for reset dynamics that are part
    /// of the problem statement rather than learned).
    pub fn set_known_row(&mut self, p: Pair, row: SparseRow) {
        let i = self.idx(p);
        self.known[i] = true;
        self.t_hat[i] = row;
        self.eps_hat[i] = 0.0;
        self.mark(i);
    }

    pub fn n(&self, p: Pair) -> u32 {
        self.n_sa[self.idx(p)]
    }

    pub fn n_next(&self, p: Pair) -> &[(StateId, u32)] {
        &self.n_sas[self.idx(p)]
    }

    /// Member of `K`: either sampled `m` times or declared known.
    pub fn is_saturated(&self, p: Pair) -> bool {
        let i = self.idx(p);
        self.known[i] || self.n_sa[i] >= self.m
    }

    pub fn is_known_row(&self, p: Pair) -> bool {
        self.known[self.idx(p)]
    }

    pub fn t_hat(&self, p: Pair) -> &SparseRow {
        &self.t_hat[self.idx(p)]
    }

    pub fn eps_hat(&self, p: Pair) -> f64 {
        self.eps_hat[self.idx(p)]
    }

    pub fn t_tilde(&self, p: Pair) -> &SparseRow {
        &self.t_tilde[self.idx(p)]
    }

    pub fn eps_tilde(&self, p: Pair) -> f64 {
        self.eps_tilde[self.idx(p)]
    }

    pub fn source(&self, p: Pair) -> Pair {
        Pair::from_index(self.source[self.idx(p)], self.num_actions)
    }

    /// Pairs sampled at least once.
    pub fn visited(&self) -> StateActionSet {
        StateActionSet::from_fn(self.num_states, self.num_actions, |p| self.n(p) > 0)
    }

    /// Recomputes transferred rows and widths for every pair.
    pub fn transfer_full(&mut self, analogy: &AnalogyOracle) {
        for i in 0..self.n_sa.len() {
            let mut best = i;
            let mut best_val = self.eps_hat[i];
            for &(q, d) in analogy.links_idx(i) {
                let v = self.eps_hat[q] + d;
                if v < best_val || (v == best_val && q < best) {
                    best = q;
                    best_val = v;
                }
            }
            self.set_tilde(analogy, i, best, best_val);
        }
        for &i in &self.dirty {
            self.is_dirty[i] = false;
        }
        self.dirty.clear();
    }

    /// Recomputes only pairs whose best source may have changed since the
    /// last transfer. Agrees with [`Self::transfer_full`] because widths
    /// never increase.
    pub fn transfer(&mut self, analogy: &AnalogyOracle) {
        let dirty = std::mem::take(&mut self.dirty);
        for &q in &dirty {
            self.is_dirty[q] = false;
            self.offer(analogy, q, q, 0.0);
            for &(p, d) in analogy.dependents_idx(q) {
                self.offer(analogy, p, q, d);
            }
        }
    }

    fn offer(&mut self, analogy: &AnalogyOracle, p: usize, q: usize, d: f64) {
        let v = self.eps_hat[q] + d;
        let cur = self.source[p];
        if cur == q || v < self.eps_tilde[p] || (v == self.eps_tilde[p] && q < cur) {
            self.set_tilde(analogy, p, q, v);
        }
    }

    fn set_tilde(&mut self, analogy: &AnalogyOracle, p: usize, src: usize, eps: f64) {
        let na = self.num_actions;
        self.source[p] = src;
        self.eps_tilde[p] = eps;
        self.t_tilde[p] = analogy.transfer_row(Pair::from_index(p, na), Pair::from_index(src, na), &self.t_hat[src]);
    }

    /// Support of the transferred row once its width is below `τ/2`.
    pub fn known_support(&self, p: Pair, tau: f64) -> Option<Vec<StateId>> {
        let i = self.idx(p);
        (self.eps_tilde[i] < tau / 2.0).then(|| self.t_tilde[i].iter().map(|&(s, _)| s).collect())
    }
}

/// Which successors a candidate row may weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Allowed {
    /// Every state.
    All,
    /// Every state of the initial safe set.
    Z0,
    /// Exactly the center's support (zeros pinned).
    Center,
}

/// One row of the candidate set: an L1 ball of radius `width` around
/// `center`, restricted to `allowed` successors.
#[derive(Clone, Debug)]
pub struct CandidateRow {
    pub center: SparseRow,
    pub width: f64,
    pub allowed: Allowed,
}

/// The candidate transition set for every pair.
#[derive(Clone, Debug)]
pub struct CandidateSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub rows: Vec<CandidateRow>,
    /// States of the initial safe set (all `false` when none is given).
    pub z0_states: Vec<bool>,
}

impl CandidateSpec {
    /// Builds the candidate set from transferred rows. Zeros are pinned when
    /// the width is below `τ`. Pairs of `z0` may only move to `z0`'s states;
    /// their centers are projected there and renormalized.
    pub fn build(model: &ConfidenceModel, z0: &StateActionSet, tau: f64) -> Self {
        let (ns, na) = (model.num_states(), model.num_actions());
        let z0_states = z0.state_mask();
        let rows = (0..ns * na)
            .map(|i| {
                let p = Pair::from_index(i, na);
                let width = model.eps_tilde(p);
                let raw = model.t_tilde(p);
                let in_z0 = z0.contains(p);
                let mut center: SparseRow = raw.iter().copied().filter(|&(s, _)| !in_z0 || z0_states[s.0]).collect();
                let mass: f64 = center.iter().map(|&(_, q)| q).sum();
                if mass > 0.0 && (mass - 1.0).abs() > 1e-12 {
                    for e in &mut center {
                        e.1 /= mass;
                    }
                }
                let allowed = if width < tau && !center.is_empty() {
                    Allowed::Center
                } else if in_z0 {
                    Allowed::Z0
                } else {
                    Allowed::All
                };
                CandidateRow { center, width, allowed }
            })
            .collect();
        CandidateSpec { num_states: ns, num_actions: na, rows, z0_states }
    }

    pub fn row(&self, p: Pair) -> &CandidateRow {
        &self.rows[p.index(self.num_actions)]
    }

    /// Dense mask of the successors `p`'s candidate rows may weight.
    pub fn allowed_support(&self, p: Pair) -> Vec<bool> {
        let row = self.row(p);
        match row.allowed {
            Allowed::All => vec![true; self.num_states],
            Allowed::Z0 => self.z0_states.clone(),
            Allowed::Center => {
                let mut mask = vec![false; self.num_states];
                for &(s, _) in &row.center {
                    mask[s.0] = true;
                }
                mask
            }
        }
    }
}
