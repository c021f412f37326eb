//! The 10 x 10 age grid: rows are decades, columns the year within the decade.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_SIDE: usize = 10;
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE;
pub const MAX_AGE: u32 = 99;
pub const DEFAULT_HORIZON: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPosition {
    pub row: usize,
    pub col: usize,
}

impl GridPosition {
    pub fn new(row: usize, col: usize) -> Result<Self> {
        if row >= GRID_SIDE || col >= GRID_SIDE {
            return Err(Error::Domain(format!("grid position ({row},{col}) outside 10x10")));
        }
        Ok(Self { row, col })
    }

    pub fn index(self) -> usize {
        self.row * GRID_SIDE + self.col
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::new(index / GRID_SIDE, index % GRID_SIDE)
    }

    pub fn manhattan(self, other: GridPosition) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

pub fn encode_age(age: i64) -> Result<GridPosition> {
    if age < 0 {
        return Err(Error::Domain(format!("negative age {age}")));
    }
    let age = (age as u64).min(MAX_AGE as u64) as usize;
    Ok(GridPosition {
        row: age / GRID_SIDE,
        col: age % GRID_SIDE,
    })
}

pub fn decode_position(pos: GridPosition) -> u32 {
    (pos.row * GRID_SIDE + pos.col) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionType {
    RowUp,
    RowDown,
    ColUp,
    ColDown,
    Stay,
}

impl ActionType {
    pub const ALL: [ActionType; 5] = [
        ActionType::RowUp,
        ActionType::RowDown,
        ActionType::ColUp,
        ActionType::ColDown,
        ActionType::Stay,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Domain(format!("action index {i} out of range")))
    }

    /// Unit move, clamped to the grid.
    pub fn apply(self, pos: GridPosition) -> GridPosition {
        let last = GRID_SIDE - 1;
        match self {
            ActionType::RowUp => GridPosition {
                row: (pos.row + 1).min(last),
                ..pos
            },
            ActionType::RowDown => GridPosition {
                row: pos.row.saturating_sub(1),
                ..pos
            },
            ActionType::ColUp => GridPosition {
                col: (pos.col + 1).min(last),
                ..pos
            },
            ActionType::ColDown => GridPosition {
                col: pos.col.saturating_sub(1),
                ..pos
            },
            ActionType::Stay => pos,
        }
    }
}

/// Iterative unit-step walking, or a single placement onto any cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    #[default]
    Walk,
    OneShot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Move(ActionType),
    Place(GridPosition),
}

impl ActionSpace {
    pub fn size(self) -> usize {
        match self {
            ActionSpace::Walk => ActionType::ALL.len(),
            ActionSpace::OneShot => GRID_CELLS,
        }
    }

    pub fn decode(self, index: usize) -> Result<Action> {
        match self {
            ActionSpace::Walk => ActionType::from_index(index).map(Action::Move),
            ActionSpace::OneShot => GridPosition::from_index(index).map(Action::Place),
        }
    }
}

/// Group counts from the training split and the derived ratios `N_max / N_g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceTable {
    pub counts: [usize; GRID_SIDE],
    pub ratios: [f64; GRID_SIDE],
}

impl ImbalanceTable {
    /// Groups with no samples receive the largest observed ratio.
    pub fn from_counts(counts: [usize; GRID_SIDE]) -> Result<Self> {
        let majority = counts.iter().copied().max().unwrap_or(0);
        if majority == 0 {
            return Err(Error::Input("imbalance table needs at least one sample".into()));
        }
        let mut ratios = [0.0; GRID_SIDE];
        for (r, &c) in ratios.iter_mut().zip(&counts) {
            if c > 0 {
                *r = majority as f64 / c as f64;
            }
        }
        let fallback = ratios.iter().copied().fold(1.0, f64::max);
        for (r, &c) in ratios.iter_mut().zip(&counts) {
            if c == 0 {
                *r = fallback;
            }
        }
        Ok(Self { counts, ratios })
    }

    pub fn from_ages<I: IntoIterator<Item = u32>>(ages: I) -> Result<Self> {
        let mut counts = [0usize; GRID_SIDE];
        for age in ages {
            counts[encode_age(age as i64)?.row] += 1;
        }
        Self::from_counts(counts)
    }

    /// Every ratio equal to 1.
    pub fn balanced() -> Self {
        Self {
            counts: [0; GRID_SIDE],
            ratios: [1.0; GRID_SIDE],
        }
    }

    pub fn ratio(&self, group: usize) -> f64 {
        self.ratios[group]
    }
}

/// Grid reward with the imbalance ratio of the target's group.
///
/// `+ϱ` on the exact cell, `−ι·√ϱ` on the right row, `−ι·ϱ` otherwise, where
/// `ι` is the Manhattan distance to the target.
pub fn reward(pos: GridPosition, target: GridPosition, table: &ImbalanceTable) -> f64 {
    RewardModel::new(table.clone()).reward(pos, target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub table: ImbalanceTable,
    /// When false, every miss costs as if `ι = 1`.
    pub distance: bool,
}

impl RewardModel {
    pub fn new(table: ImbalanceTable) -> Self {
        Self { table, distance: true }
    }

    pub fn reward(&self, pos: GridPosition, target: GridPosition) -> f64 {
        let rho = self.table.ratio(target.row);
        let iota = if self.distance {
            pos.manhattan(target) as f64
        } else {
            1.0
        };
        if pos.row == target.row {
            if pos.col == target.col {
                rho
            } else {
                -iota * rho.sqrt()
            }
        } else {
            -iota * rho
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub embedding: Arc<[f64]>,
    pub position: GridPosition,
    pub steps_taken: usize,
    pub done: bool,
}

impl AgentState {
    pub fn new(embedding: Arc<[f64]>, position: GridPosition) -> Self {
        Self {
            embedding,
            position,
            steps_taken: 0,
            done: false,
        }
    }
}

/// Applies `action`, rewards the resulting position and reports termination.
pub fn env_step(
    state: &AgentState,
    action: Action,
    target: GridPosition,
    rewards: &RewardModel,
    max_steps: usize,
) -> Result<(AgentState, f64, bool)> {
    if state.done {
        return Err(Error::State("step on a finished episode".into()));
    }
    let (position, terminal) = match action {
        Action::Move(a) => (a.apply(state.position), a == ActionType::Stay),
        Action::Place(p) => (p, true),
    };
    let steps_taken = state.steps_taken + 1;
    let done = terminal || steps_taken >= max_steps;
    let r = rewards.reward(position, target);
    Ok((
        AgentState {
            embedding: state.embedding.clone(),
            position,
            steps_taken,
            done,
        },
        r,
        done,
    ))
}

/// Follows a fixed action script from `start`; stops early on termination.
pub fn scripted_rollout(start: GridPosition, script: &[ActionType], max_steps: usize) -> GridPosition {
    let mut pos = start;
    for (step, &a) in script.iter().enumerate() {
        pos = a.apply(pos);
        if a == ActionType::Stay || step + 1 >= max_steps {
            break;
        }
    }
    pos
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pos(row: usize, col: usize) -> GridPosition {
        GridPosition::new(row, col).unwrap()
    }

    #[test]
    fn encode_decode() {
        assert_eq!(encode_age(11).unwrap(), pos(1, 1));
        assert_eq!(encode_age(0).unwrap(), pos(0, 0));
        assert_eq!(encode_age(116).unwrap(), pos(9, 9));
        assert!(matches!(encode_age(-1), Err(Error::Domain(_))));
        assert_eq!(decode_position(pos(1, 1)), 11);
        assert_eq!(decode_position(pos(0, 0)), 0);
        assert_eq!(decode_position(pos(9, 9)), 99);
        for age in 0..=99 {
            assert_eq!(decode_position(encode_age(age).unwrap()), age as u32);
        }
    }

    #[test]
    fn reward_examples() {
        let b = ImbalanceTable::balanced();
        assert_eq!(reward(pos(4, 4), pos(4, 4), &b), 1.0);
        assert_eq!(reward(pos(3, 5), pos(3, 4), &b), -1.0);
        let mut t = ImbalanceTable::balanced();
        t.ratios[5] = 4.0;
        assert_eq!(reward(pos(2, 4), pos(5, 4), &t), -12.0);
    }

    fn oracle(pr: usize, pc: usize, tr: usize, tc: usize, rho: f64) -> f64 {
        let iota = (pr as f64 - tr as f64).abs() + (pc as f64 - tc as f64).abs();
        if pr == tr && pc == tc {
            rho
        } else if pr == tr {
            -iota * rho.sqrt()
        } else {
            -iota * rho
        }
    }

    #[test]
    fn reward_matches_transcription_everywhere() {
        for rho in [1.0, 2.5, 7.0] {
            let t = ImbalanceTable {
                counts: [0; 10],
                ratios: [rho; 10],
            };
            for p in 0..GRID_CELLS {
                for q in 0..GRID_CELLS {
                    let (a, b) = (GridPosition::from_index(p).unwrap(), GridPosition::from_index(q).unwrap());
                    assert_eq!(reward(a, b, &t), oracle(a.row, a.col, b.row, b.col, rho));
                }
            }
        }
    }

    #[test]
    fn reward_maximal_only_at_target() {
        for rho in [1.0, 2.5, 7.0] {
            let t = ImbalanceTable {
                counts: [0; 10],
                ratios: [rho; 10],
            };
            for q in 0..GRID_CELLS {
                let target = GridPosition::from_index(q).unwrap();
                let best = reward(target, target, &t);
                for p in (0..GRID_CELLS).filter(|&p| p != q) {
                    assert!(reward(GridPosition::from_index(p).unwrap(), target, &t) < best);
                }
            }
        }
    }

    #[test]
    fn imbalance_table_from_counts() {
        let mut counts = [0; 10];
        counts[2] = 900;
        counts[6] = 100;
        let t = ImbalanceTable::from_counts(counts).unwrap();
        assert_eq!(t.ratio(2), 1.0);
        assert_eq!(t.ratio(6), 9.0);
        assert_eq!(t.ratio(0), 9.0);
        assert!(ImbalanceTable::from_counts([0; 10]).is_err());
    }

    #[test]
    fn no_distance_variant() {
        let mut m = RewardModel::new(ImbalanceTable::balanced());
        m.distance = false;
        assert_eq!(m.reward(pos(0, 0), pos(9, 9)), -1.0);
        assert_eq!(m.reward(pos(9, 0), pos(9, 9)), -1.0);
        assert_eq!(m.reward(pos(9, 9), pos(9, 9)), 1.0);
    }

    #[test]
    fn env_step_rules() {
        let table = RewardModel::new(ImbalanceTable::balanced());
        let emb: Arc<[f64]> = Arc::from(vec![0.0]);
        let s = AgentState::new(emb.clone(), pos(9, 3));
        let (next, r, done) = env_step(&s, Action::Move(ActionType::RowUp), pos(9, 3), &table, 20).unwrap();
        assert_eq!(next.position, pos(9, 3));
        assert_eq!(r, 1.0);
        assert!(!done);
        let (_, r, done) = env_step(&next, Action::Move(ActionType::Stay), pos(9, 3), &table, 20).unwrap();
        assert_eq!((r, done), (1.0, true));

        let mut s = AgentState::new(emb.clone(), pos(0, 0));
        for _ in 0..3 {
            let (n, _, done) = env_step(&s, Action::Move(ActionType::ColUp), pos(5, 5), &table, 3).unwrap();
            s = n;
            if done {
                break;
            }
        }
        assert!(s.done);
        assert_eq!(s.steps_taken, 3);
        assert!(matches!(
            env_step(&s, Action::Move(ActionType::Stay), pos(5, 5), &table, 3),
            Err(Error::State(_))
        ));

        let s = AgentState::new(emb, pos(0, 0));
        let (n, r, done) = env_step(&s, Action::Place(pos(3, 3)), pos(3, 3), &table, 20).unwrap();
        assert_eq!((n.position, r, done), (pos(3, 3), 1.0, true));
    }

    #[test]
    fn scripted() {
        let script = [ActionType::RowUp, ActionType::ColUp, ActionType::Stay];
        assert_eq!(decode_position(scripted_rollout(pos(0, 0), &script, 20)), 11);
        assert_eq!(decode_position(scripted_rollout(pos(1, 1), &[ActionType::Stay], 20)), 11);
    }

    proptest! {
        #[test]
        fn clamping_is_total(start in 0usize..100, actions in proptest::collection::vec(0usize..5, 0..60)) {
            let mut p = GridPosition::from_index(start).unwrap();
            for a in actions {
                p = ActionType::from_index(a).unwrap().apply(p);
                prop_assert!(p.row < GRID_SIDE && p.col < GRID_SIDE);
            }
        }
    }
}
