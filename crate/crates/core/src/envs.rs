//! The two benchmark environments as explicit tabular MDPs, with their
//! analogies, initial safe sets, and layout metadata.
//!
//! Both environments are continuing: dangerous and goal states are
//! terminal, and every action there moves to the initial state.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::confidence::{AlphaFn, AnalogyOracle, PullbackFn};
use crate::mdp::{is_communicating, Mdp, Pair, SparseRow, StateActionSet, StateId};

/// Discount used by both environments.
pub const ENV_GAMMA: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    GridWorld,
    Platformer,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::GridWorld => "grid_world",
            EnvName::Platformer => "platformer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grid_world" => Some(EnvName::GridWorld),
            "platformer" => Some(EnvName::Platformer),
            _ => None,
        }
    }

    pub fn build(self) -> Environment {
        match self {
            EnvName::GridWorld => build_grid_world(),
            EnvName::Platformer => build_platformer(),
        }
    }
}

/// A contiguous block of safe cells (inclusive bounds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub name: String,
    pub x: (i64, i64),
    pub y: (i64, i64),
    /// Surface label per x column, platformer only.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub surfaces: Vec<String>,
}

/// Geometry and coordinate tables for rendering trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub env: EnvName,
    pub width: i64,
    pub height: i64,
    pub islands: Vec<Island>,
    pub goal: Vec<i64>,
    pub start: Vec<i64>,
    pub coord_names: Vec<String>,
    /// Coordinates of each state, in `coord_names` order.
    pub state_coords: Vec<Vec<i64>>,
    pub action_names: Vec<String>,
}

/// An environment bundle.
#[derive(Clone, Debug)]
pub struct Environment {
    pub name: EnvName,
    pub mdp: Mdp,
    pub analogy: AnalogyOracle,
    pub z0: StateActionSet,
    pub layout: Layout,
}

/// Largest closed set of nonnegative-reward pairs at `candidate` states,
/// cut down to the part that communicates with `s_init`.
fn initial_safe_set(mdp: &Mdp, candidate: &[bool]) -> StateActionSet {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut states = candidate.to_vec();
    loop {
        let z = StateActionSet::from_fn(ns, na, |p| {
            states[p.s.0] && mdp.reward(p) >= 0.0 && mdp.support(p).iter().all(|&(s2, _)| states[s2.0])
        });
        let mut keep = z.state_mask();
        let mut fwd: Vec<Vec<usize>> = vec![Vec::new(); ns];
        let mut bwd: Vec<Vec<usize>> = vec![Vec::new(); ns];
        for p in z.iter() {
            for &(s2, _) in mdp.support(p) {
                fwd[p.s.0].push(s2.0);
                bwd[s2.0].push(p.s.0);
            }
        }
        // Restrict to states that reach and are reached from s_init.
        let reach = |adj: &Vec<Vec<usize>>| {
            let mut seen = vec![false; ns];
            let mut queue = VecDeque::new();
            if keep[mdp.s_init.0] {
                seen[mdp.s_init.0] = true;
                queue.push_back(mdp.s_init.0);
            }
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen
        };
        let f = reach(&fwd);
        let b = reach(&bwd);
        for s in 0..ns {
            keep[s] = keep[s] && f[s] && b[s];
        }
        if keep == states {
            return z;
        }
        states = keep;
    }
}

/// Exact-translate test: `src`'s row is `p`'s row with every successor
/// moved by `shift`.
fn is_translate(mdp: &Mdp, p: Pair, src: Pair, shift: impl Fn(StateId) -> Option<StateId>) -> bool {
    let a = mdp.support(p);
    let b = mdp.support(src);
    if a.len() != b.len() {
        return false;
    }
    a.iter().all(|&(s2, pr)| match shift(s2) {
        Some(t) => b.iter().any(|&(u, q)| u == t && (q - pr).abs() < 1e-12),
        None => false,
    })
}

// ---------------------------------------------------------------- grid world

pub const GRID_SIZE: i64 = 23;
pub const GRID_TAU: f64 = 0.3;
/// Largest L∞ distance between analogous grid cells.
pub const GRID_ANALOGY_RADIUS: i64 = 5;
const GRID_INTENDED: f64 = 0.4;
const GRID_SLIP: f64 = 0.3;
const GRID_START: (i64, i64) = (11, 11);
const GRID_GOAL: (i64, i64) = (11, 18);

/// Direction vectors as (row, col) for up, down, left, right.
const GRID_DIRS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn grid_islands() -> Vec<Island> {
    let isl = |name: &str, rows: (i64, i64), cols: (i64, i64)| Island { name: name.into(), x: cols, y: rows, surfaces: Vec::new() };
    vec![
        isl("center", (8, 14), (8, 14)),
        isl("north", (2, 6), (9, 13)),
        isl("south", (16, 20), (9, 13)),
        isl("west", (9, 13), (2, 6)),
        isl("east", (9, 13), (16, 20)),
    ]
}

fn grid_id(r: i64, c: i64) -> StateId {
    StateId((r * GRID_SIZE + c) as usize)
}

fn grid_rc(s: StateId) -> (i64, i64) {
    (s.0 as i64 / GRID_SIZE, s.0 as i64 % GRID_SIZE)
}

fn grid_shift(s: StateId, dr: i64, dc: i64) -> Option<StateId> {
    let (r, c) = grid_rc(s);
    let (r2, c2) = (r + dr, c + dc);
    ((0..GRID_SIZE).contains(&r2) && (0..GRID_SIZE).contains(&c2)).then(|| grid_id(r2, c2))
}

/// 23x23 grid: a 7x7 center island and four 5x5 islands across one-cell
/// dangerous lines, with a two-cell dangerous margin so that no island move
/// is clipped by the border. Eight actions: four moves and four two-cell jumps.
/// The intended cell is reached with probability 0.4; otherwise the agent
/// lands on either lateral neighbor of it with probability 0.3 each.
pub fn build_grid_world() -> Environment {
    let n = GRID_SIZE;
    let ns = (n * n) as usize;
    let na = 8;
    let islands = grid_islands();
    let safe = |r: i64, c: i64| islands.iter().any(|i| (i.y.0..=i.y.1).contains(&r) && (i.x.0..=i.x.1).contains(&c));
    let clamp = |v: i64| v.clamp(0, n - 1);
    let s_init = grid_id(GRID_START.0, GRID_START.1);
    let goal = grid_id(GRID_GOAL.0, GRID_GOAL.1);

    let mut rows: Vec<SparseRow> = Vec::with_capacity(ns * na);
    let mut rewards = Vec::with_capacity(ns * na);
    let mut terminal = vec![false; ns];
    for s in 0..ns {
        let (r, c) = grid_rc(StateId(s));
        let danger = !safe(r, c);
        let is_goal = StateId(s) == goal;
        terminal[s] = danger || is_goal;
        for a in 0..na {
            if danger || is_goal {
                rows.push(vec![(s_init, 1.0)]);
                rewards.push(if danger { -1.0 } else { 1.0 });
                continue;
            }
            let (dr, dc) = GRID_DIRS[a % 4];
            let dist = if a < 4 { 1 } else { 2 };
            let (tr, tc) = (clamp(r + dr * dist), clamp(c + dc * dist));
            // Lateral neighbors are perpendicular to the direction of motion.
            let (lr, lc) = (dc, dr);
            let mut row: SparseRow = vec![
                (grid_id(tr, tc), GRID_INTENDED),
                (grid_id(clamp(tr + lr), clamp(tc + lc)), GRID_SLIP),
                (grid_id(clamp(tr - lr), clamp(tc - lc)), GRID_SLIP),
            ];
            row.sort_by_key(|&(s2, _)| s2);
            row.dedup_by(|next, prev| {
                if next.0 == prev.0 {
                    prev.1 += next.1;
                    true
                } else {
                    false
                }
            });
            rows.push(row);
            rewards.push(0.0);
        }
    }
    let mut mdp = Mdp::from_rows(ns, na, &rows, rewards, ENV_GAMMA, s_init, GRID_TAU).expect("grid world shape");
    mdp.terminal = terminal;

    // Initial safe set: the center island without its corners.
    let center = &islands[0];
    let candidate: Vec<bool> = (0..ns)
        .map(|s| {
            let (r, c) = grid_rc(StateId(s));
            let inside = (center.y.0..=center.y.1).contains(&r) && (center.x.0..=center.x.1).contains(&c);
            let corner = (r == center.y.0 || r == center.y.1) && (c == center.x.0 || c == center.x.1);
            inside && !corner
        })
        .collect();
    let z0 = initial_safe_set(&mdp, &candidate);
    debug_assert!(is_communicating(&z0, &mdp));

    let analogy = grid_analogy(&mdp);
    let layout = Layout {
        env: EnvName::GridWorld,
        width: n,
        height: n,
        islands,
        goal: vec![GRID_GOAL.1, GRID_GOAL.0],
        start: vec![GRID_START.1, GRID_START.0],
        coord_names: vec!["x".into(), "y".into()],
        state_coords: (0..ns).map(|s| {
            let (r, c) = grid_rc(StateId(s));
            vec![c, r]
        })
        .collect(),
        action_names: ["up", "down", "left", "right", "jump_up", "jump_down", "jump_left", "jump_right"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    Environment { name: EnvName::GridWorld, mdp, analogy, z0, layout }
}

/// Same action, cells within L∞ distance 5, and transition rows that are
/// exact translates of each other. `α` translates successors by the cell
/// offset.
fn grid_analogy(mdp: &Mdp) -> AnalogyOracle {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut links = vec![Vec::new(); ns * na];
    for s in 0..ns {
        if mdp.terminal[s] {
            continue;
        }
        let (r, c) = grid_rc(StateId(s));
        for s2 in 0..ns {
            if s2 == s || mdp.terminal[s2] {
                continue;
            }
            let (r2, c2) = grid_rc(StateId(s2));
            let (dr, dc) = (r2 - r, c2 - c);
            if dr.abs().max(dc.abs()) > GRID_ANALOGY_RADIUS {
                continue;
            }
            for a in 0..na {
                let p = Pair::new(s, a);
                let q = Pair::new(s2, a);
                if is_translate(mdp, p, q, |t| grid_shift(t, dr, dc)) {
                    links[p.index(na)].push((q, 0.0));
                }
            }
        }
    }
    let alpha: Arc<AlphaFn> = Arc::new(|p: Pair, s2: StateId, src: Pair| {
        let (r, c) = grid_rc(p.s);
        let (r2, c2) = grid_rc(src.s);
        grid_shift(s2, r2 - r, c2 - c)
    });
    let pullback: Arc<PullbackFn> = Arc::new(|p: Pair, src: Pair, t: StateId| {
        let (r, c) = grid_rc(p.s);
        let (r2, c2) = grid_rc(src.s);
        grid_shift(t, r - r2, c - c2)
    });
    AnalogyOracle::new(ns, na, links, alpha).with_pullback(pullback)
}

// ---------------------------------------------------------------- platformer

pub const PLATFORMER_TAU: f64 = 0.5;
/// Rightmost x coordinate.
pub const PLATFORMER_WIDTH: i64 = 34;
pub const PLATFORMER_GOAL_X: i64 = 32;
pub const PLATFORMER_START_X: i64 = 8;
/// Inclusive x ranges of the three islands.
const PLATFORMER_ISLANDS: [(i64, i64); 3] = [(0, 16), (21, 25), (30, 34)];
const MAX_SPEED: i64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Surface {
    Sand,
    Ice,
    Concrete,
}

fn surface(x: i64) -> Option<Surface> {
    match x {
        0..=2 => Some(Surface::Sand),
        3..=5 => Some(Surface::Ice),
        6..=16 | 21..=25 | 30..=34 => Some(Surface::Concrete),
        _ => None,
    }
}

/// `(x, y, ẋ, ẏ)`; `y = -1` marks the fallen state of column `x`.
type PState = (i64, i64, i64, i64);

fn fallen(x: i64) -> PState {
    (x.clamp(0, PLATFORMER_WIDTH), -1, 0, 0)
}

fn is_goal(s: PState) -> bool {
    s.1 == 0 && s.0 == PLATFORMER_GOAL_X
}

fn is_terminal(s: PState) -> bool {
    s.1 < 0 || is_goal(s)
}

fn in_world(x: i64) -> bool {
    (0..=PLATFORMER_WIDTH).contains(&x)
}

/// Action index `(ẋ_desired + 2) * 2 + jump`.
fn decode_action(a: usize) -> (i64, bool) {
    ((a / 2) as i64 - MAX_SPEED, a % 2 == 1)
}

/// Successor distribution of a non-terminal state.
fn platformer_step(s: PState, a: usize) -> Vec<(PState, f64)> {
    let (x, y, vx, vy) = s;
    if y > 0 {
        let x1 = x + vx;
        if !in_world(x1) {
            return vec![(fallen(x1), 1.0)];
        }
        if y - 1 == 0 {
            return if surface(x1).is_some() { vec![((x1, 0, vx, 0), 1.0)] } else { vec![(fallen(x1), 1.0)] };
        }
        return vec![((x1, y - 1, vx, vy - 1), 1.0)];
    }
    let (desired, jump) = decode_action(a);
    let vx1 = vx + (desired - vx).clamp(-1, 1);
    let x1 = x + vx1;
    if !in_world(x1) {
        return vec![(fallen(x1), 1.0)];
    }
    if jump {
        let heights: &[(i64, f64)] = match surface(x).expect("ground state on a surface") {
            Surface::Concrete => &[(2, 1.0)],
            Surface::Ice => &[(2, 0.5), (1, 0.5)],
            Surface::Sand => &[(1, 1.0)],
        };
        return heights.iter().map(|&(v, pr)| ((x1, v, vx1, v), pr)).collect();
    }
    if surface(x1).is_some() {
        vec![((x1, 0, vx1, 0), 1.0)]
    } else {
        vec![(fallen(x1), 1.0)]
    }
}

/// Side view with three islands separated by four-cell gaps. The first
/// island has sand, ice, and a concrete run long enough to practice full
/// jumps on; the others are concrete. Jumping sets the
/// vertical speed by surface; only a full-height jump at top speed clears a
/// gap. Reaching the goal column on the third island ends the episode with
/// reward 1; falling ends it with reward -1.
pub fn build_platformer() -> Environment {
    let start: PState = (PLATFORMER_START_X, 0, 0, 0);
    let na = 10;
    // Enumerate reachable states breadth-first.
    let mut index: HashMap<PState, usize> = HashMap::new();
    let mut states: Vec<PState> = Vec::new();
    let mut queue = VecDeque::from([start]);
    index.insert(start, 0);
    states.push(start);
    while let Some(s) = queue.pop_front() {
        if is_terminal(s) {
            continue;
        }
        for a in 0..na {
            for (t, _) in platformer_step(s, a) {
                if !index.contains_key(&t) {
                    index.insert(t, states.len());
                    states.push(t);
                    queue.push_back(t);
                }
            }
        }
    }
    // Stable, readable order: by (y, x, ẋ, ẏ).
    states.sort_by_key(|&(x, y, vx, vy)| (y, x, vx, vy));
    let index: HashMap<PState, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let ns = states.len();
    let s_init = StateId(index[&start]);

    let mut rows = Vec::with_capacity(ns * na);
    let mut rewards = Vec::with_capacity(ns * na);
    for &s in &states {
        for a in 0..na {
            if is_terminal(s) {
                rows.push(vec![(s_init, 1.0)]);
                rewards.push(if is_goal(s) { 1.0 } else { -1.0 });
            } else {
                let mut row: SparseRow = platformer_step(s, a).into_iter().map(|(t, pr)| (StateId(index[&t]), pr)).collect();
                row.sort_by_key(|&(t, _)| t);
                rows.push(row);
                rewards.push(0.0);
            }
        }
    }
    let mut mdp = Mdp::from_rows(ns, na, &rows, rewards, ENV_GAMMA, s_init, PLATFORMER_TAU).expect("platformer shape");
    mdp.terminal = states.iter().map(|&s| is_terminal(s)).collect();

    let candidate: Vec<bool> = states.iter().map(|&s| !is_terminal(s) && (PLATFORMER_ISLANDS[0].0..=PLATFORMER_ISLANDS[0].1).contains(&s.0)).collect();
    let z0 = initial_safe_set(&mdp, &candidate);
    debug_assert!(is_communicating(&z0, &mdp));

    let states = Arc::new(states);
    let index = Arc::new(index);
    let analogy = platformer_analogy(&mdp, &states, &index);

    let surface_name = |x: i64| match surface(x) {
        Some(Surface::Sand) => "sand",
        Some(Surface::Ice) => "ice",
        Some(Surface::Concrete) => "concrete",
        None => "gap",
    };
    let island = |name: &str, lo: i64, hi: i64| Island {
        name: name.into(),
        x: (lo, hi),
        y: (0, 0),
        surfaces: (lo..=hi).map(|x| surface_name(x).to_string()).collect(),
    };
    let layout = Layout {
        env: EnvName::Platformer,
        width: PLATFORMER_WIDTH + 1,
        height: 3,
        islands: ["first", "second", "third"].iter().zip(PLATFORMER_ISLANDS).map(|(name, (lo, hi))| island(name, lo, hi)).collect(),
        goal: vec![PLATFORMER_GOAL_X, 0],
        start: vec![PLATFORMER_START_X, 0],
        coord_names: vec!["x".into(), "y".into(), "vx".into(), "vy".into()],
        state_coords: states.iter().map(|&(x, y, vx, vy)| vec![x, y, vx, vy]).collect(),
        action_names: (0..na)
            .map(|a| {
                let (d, j) = decode_action(a);
                format!("vx{d:+}{}", if j { "_jump" } else { "" })
            })
            .collect(),
    };
    Environment { name: EnvName::Platformer, mdp, analogy, z0, layout }
}

/// Same action, same `(y, ẋ, ẏ)`, both airborne or on the same surface,
/// and transition rows that are exact translates under an x shift.
fn platformer_analogy(mdp: &Mdp, states: &Arc<Vec<PState>>, index: &Arc<HashMap<PState, usize>>) -> AnalogyOracle {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let shift = {
        let states = Arc::clone(states);
        let index = Arc::clone(index);
        move |t: StateId, dx: i64| -> Option<StateId> {
            let (x, y, vx, vy) = states[t.0];
            index.get(&(x + dx, y, vx, vy)).map(|&i| StateId(i))
        }
    };
    let class = |s: PState| -> Option<(i64, i64, i64, Option<Surface>)> {
        if is_terminal(s) {
            return None;
        }
        let surf = if s.1 > 0 { None } else { surface(s.0) };
        Some((s.1, s.2, s.3, surf))
    };
    let mut links = vec![Vec::new(); ns * na];
    for i in 0..ns {
        let Some(ci) = class(states[i]) else { continue };
        for j in 0..ns {
            if i == j || class(states[j]) != Some(ci) {
                continue;
            }
            let dx = states[j].0 - states[i].0;
            for a in 0..na {
                let p = Pair::new(i, a);
                for b in 0..na {
                    let q = Pair::new(j, b);
                    if is_translate(mdp, p, q, |t| shift(t, dx)) {
                        links[p.index(na)].push((q, 0.0));
                    }
                }
            }
        }
        // Actions with identical effects at the same state (all of them
        // while airborne) are analogs of each other.
        for a in 0..na {
            let p = Pair::new(i, a);
            for b in (0..na).filter(|&b| b != a) {
                let q = Pair::new(i, b);
                if is_translate(mdp, p, q, |t| Some(t)) {
                    links[p.index(na)].push((q, 0.0));
                }
            }
        }
    }
    let st = Arc::clone(states);
    let sh = shift.clone();
    let alpha: Arc<AlphaFn> = Arc::new(move |p: Pair, s2: StateId, src: Pair| sh(s2, st[src.s.0].0 - st[p.s.0].0));
    let st = Arc::clone(states);
    let pullback: Arc<PullbackFn> = Arc::new(move |p: Pair, src: Pair, t: StateId| shift(t, st[p.s.0].0 - st[src.s.0].0));
    AnalogyOracle::new(ns, na, links, alpha).with_pullback(pullback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{is_closed, validate_mdp};

    #[test]
    fn grid_world_is_valid() {
        let env = build_grid_world();
        assert!(validate_mdp(&env.mdp).is_empty());
        assert_eq!(env.mdp.num_states(), 529);
        let min_positive = (0..env.mdp.num_pairs())
            .flat_map(|i| env.mdp.support(Pair::from_index(i, 8)).iter().map(|&(_, p)| p).collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min);
        assert!((min_positive - GRID_TAU).abs() < 1e-12);
        assert!(is_closed(&env.z0, &env.mdp) && is_communicating(&env.z0, &env.mdp));
    }

    #[test]
    fn grid_slip_split() {
        let env = build_grid_world();
        // Move right from the start cell.
        let row = env.mdp.support(Pair { s: grid_id(11, 11), a: crate::mdp::ActionId(3) });
        assert_eq!(row, &vec![(grid_id(10, 12), 0.3), (grid_id(11, 12), 0.4), (grid_id(12, 12), 0.3)]);
    }

    #[test]
    fn grid_analogies() {
        let env = build_grid_world();
        let up = |r, c| Pair { s: grid_id(r, c), a: crate::mdp::ActionId(0) };
        assert_eq!(env.analogy.delta(up(10, 10), up(12, 11)), 0.0);
        assert_eq!(env.analogy.delta(up(10, 10), Pair { s: grid_id(12, 11), a: crate::mdp::ActionId(1) }), 1.0);
        assert_eq!(env.analogy.delta(up(10, 10), up(10, 16)), 1.0);
    }

    #[test]
    fn platformer_is_valid() {
        let env = build_platformer();
        assert!(validate_mdp(&env.mdp).is_empty());
        assert!(is_closed(&env.z0, &env.mdp) && is_communicating(&env.z0, &env.mdp));
        assert!(env.z0.contains_state(env.mdp.s_init));
    }

    #[test]
    fn platformer_jumps() {
        assert_eq!(platformer_step((4, 0, 0, 0), 5), vec![((4, 2, 0, 2), 0.5), ((4, 1, 0, 1), 0.5)]);
        assert_eq!(platformer_step((1, 0, 0, 0), 5), vec![((1, 1, 0, 1), 1.0)]);
        assert_eq!(platformer_step((7, 0, 2, 0), 9), vec![((9, 2, 2, 2), 1.0)]);
        assert_eq!(platformer_step((9, 2, 2, 2), 0), vec![((11, 1, 2, 1), 1.0)]);
        assert_eq!(platformer_step((11, 1, 2, 1), 0), vec![((13, 0, 2, 0), 1.0)]);
        assert_eq!(platformer_step((16, 0, 2, 0), 8), vec![(fallen(18), 1.0)]);
    }
}
