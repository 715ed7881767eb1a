//! Sokoban: rules, observations, level files, generation, and exact planning.

mod generator;
mod level_io;
mod patterns;
mod planner;

pub use generator::{generate_level, open_area_violation, floor_is_connected, GenerationError, GeneratorConfig};
pub use level_io::{format_level, parse_level, parse_levels, LevelParseError};
pub use patterns::{Pattern, PatternLibrary, DEFAULT_PATTERNS};
pub use planner::{expert_solve, manhattan_heuristic, SokobanSpace};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Agent moves. The discriminant order is the tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// Agent and object positions. Objects are kept sorted so equal states hash equally.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SokobanState {
    pub agent: Pos,
    objects: Vec<Pos>,
}

impl SokobanState {
    pub fn new(agent: Pos, mut objects: Vec<Pos>) -> Self {
        objects.sort_unstable();
        SokobanState { agent, objects }
    }

    pub fn objects(&self) -> &[Pos] {
        &self.objects
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SokobanProblem {
    height: usize,
    width: usize,
    walls: Vec<bool>,
    goals: Vec<Pos>,
    pub initial: SokobanState,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProblemError {
    #[error("wall grid has {found} cells, expected {expected}")]
    GridSize { expected: usize, found: usize },
    #[error("{what} at {pos} is outside the grid or on a wall")]
    Blocked { what: &'static str, pos: Pos },
    #[error("{objects} objects but {goals} goals")]
    CountMismatch { objects: usize, goals: usize },
    #[error("overlapping {0}")]
    Overlap(&'static str),
}

impl SokobanProblem {
    pub fn new(
        height: usize,
        width: usize,
        walls: Vec<bool>,
        goals: Vec<Pos>,
        initial: SokobanState,
    ) -> Result<Self, ProblemError> {
        if walls.len() != height * width {
            return Err(ProblemError::GridSize {
                expected: height * width,
                found: walls.len(),
            });
        }
        let mut goals = goals;
        goals.sort_unstable();
        let p = SokobanProblem {
            height,
            width,
            walls,
            goals,
            initial,
        };
        for &g in &p.goals {
            if !p.is_floor(g) {
                return Err(ProblemError::Blocked { what: "goal", pos: g });
            }
        }
        if p.goals.windows(2).any(|w| w[0] == w[1]) {
            return Err(ProblemError::Overlap("goals"));
        }
        if p.goals.len() != p.initial.objects.len() {
            return Err(ProblemError::CountMismatch {
                objects: p.initial.objects.len(),
                goals: p.goals.len(),
            });
        }
        p.validate_state(&p.initial)?;
        Ok(p)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn goals(&self) -> &[Pos] {
        &self.goals
    }

    pub fn walls(&self) -> &[bool] {
        &self.walls
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        !self.in_bounds(p) || self.walls[p.row * self.width + p.col]
    }

    pub fn is_floor(&self, p: Pos) -> bool {
        !self.is_wall(p)
    }

    pub fn floor_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height)
            .flat_map(move |r| (0..self.width).map(move |c| Pos::new(r, c)))
            .filter(|&p| self.is_floor(p))
    }

    pub fn validate_state(&self, s: &SokobanState) -> Result<(), ProblemError> {
        if !self.is_floor(s.agent) {
            return Err(ProblemError::Blocked { what: "agent", pos: s.agent });
        }
        for &o in &s.objects {
            if !self.is_floor(o) {
                return Err(ProblemError::Blocked { what: "object", pos: o });
            }
        }
        if s.objects.windows(2).any(|w| w[0] == w[1]) {
            return Err(ProblemError::Overlap("objects"));
        }
        if s.objects.contains(&s.agent) {
            return Err(ProblemError::Overlap("agent and object"));
        }
        Ok(())
    }

    /// Cell one step from `p` in direction `a`, if inside the grid.
    pub fn step(&self, p: Pos, a: Action) -> Option<Pos> {
        let (dr, dc) = a.delta();
        let r = p.row.checked_add_signed(dr)?;
        let c = p.col.checked_add_signed(dc)?;
        let q = Pos::new(r, c);
        self.in_bounds(q).then_some(q)
    }

    /// Move the agent, pushing an object when the cell beyond it is free.
    /// Blocked moves return the state unchanged.
    pub fn apply_action(&self, state: &SokobanState, action: Action) -> SokobanState {
        let Some(target) = self.step(state.agent, action).filter(|&t| self.is_floor(t)) else {
            return state.clone();
        };
        match state.objects.iter().position(|&o| o == target) {
            None => SokobanState {
                agent: target,
                objects: state.objects.clone(),
            },
            Some(i) => {
                let beyond = self
                    .step(target, action)
                    .filter(|&b| self.is_floor(b) && !state.objects.contains(&b));
                match beyond {
                    Some(b) => {
                        let mut objects = state.objects.clone();
                        objects[i] = b;
                        SokobanState::new(target, objects)
                    }
                    None => state.clone(),
                }
            }
        }
    }

    /// Objects exactly cover the goals; the agent may be anywhere.
    pub fn is_goal(&self, state: &SokobanState) -> bool {
        state.objects == self.goals
    }

    /// The goal configuration: every object on a goal, agent at its initial cell.
    pub fn goal_state(&self) -> SokobanState {
        SokobanState {
            agent: self.initial.agent,
            objects: self.goals.clone(),
        }
    }

    pub fn render_observation(&self, state: &SokobanState, include_agent: bool) -> Observation {
        let (h, w) = (self.height, self.width);
        let mut t = Tensor::zeros([3, h, w]);
        let v = t.values_mut();
        for (i, &wall) in self.walls.iter().enumerate() {
            if wall {
                v[i] = 1.0;
            }
        }
        if include_agent {
            v[h * w + state.agent.row * w + state.agent.col] = 1.0;
        }
        for o in &state.objects {
            v[2 * h * w + o.row * w + o.col] = 1.0;
        }
        Observation { channels: t }
    }

    /// Observation of the real goal: objects on goals, no agent.
    pub fn goal_observation(&self) -> Observation {
        self.render_observation(&self.goal_state(), false)
    }
}

/// Binary image of a state: channel 0 walls, 1 agent, 2 objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub channels: Tensor,
}

impl Observation {
    pub fn height(&self) -> usize {
        self.channels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.channels.shape()[2]
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height() * self.width();
        &self.channels.values()[c * n..(c + 1) * n]
    }

    fn positions(&self, c: usize) -> Vec<Pos> {
        let w = self.width();
        self.plane(c)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| Pos::new(i / w, i % w))
            .collect()
    }

    pub fn agent(&self) -> Option<Pos> {
        self.positions(1).first().copied()
    }

    pub fn objects(&self) -> Vec<Pos> {
        self.positions(2)
    }

    pub fn walls(&self) -> Vec<bool> {
        self.plane(0).iter().map(|&v| v > 0.5).collect()
    }

    /// Recover the state from an observation that includes the agent.
    pub fn decode_state(&self) -> Option<SokobanState> {
        Some(SokobanState::new(self.agent()?, self.objects()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn open_room(h: usize, w: usize) -> Vec<bool> {
        vec![false; h * w]
    }

    fn problem_with_walls(h: usize, w: usize, walls: &[Pos], agent: Pos, objects: Vec<Pos>, goals: Vec<Pos>) -> SokobanProblem {
        let mut grid = open_room(h, w);
        for p in walls {
            grid[p.row * w + p.col] = true;
        }
        SokobanProblem::new(h, w, grid, goals, SokobanState::new(agent, objects)).unwrap()
    }

    #[test]
    fn free_move() {
        let p = problem_with_walls(4, 4, &[], Pos::new(1, 1), vec![Pos::new(3, 3)], vec![Pos::new(0, 0)]);
        let s = p.apply_action(&p.initial, Action::Right);
        assert_eq!(s.agent, Pos::new(1, 2));
        assert_eq!(s.objects(), &[Pos::new(3, 3)]);
    }

    #[test]
    fn blocked_push_is_noop() {
        let p = problem_with_walls(4, 5, &[Pos::new(1, 3)], Pos::new(1, 1), vec![Pos::new(1, 2)], vec![Pos::new(0, 0)]);
        assert_eq!(p.apply_action(&p.initial, Action::Right), p.initial);
        // grid edge also blocks
        let s = SokobanState::new(Pos::new(0, 0), vec![Pos::new(2, 2)]);
        assert_eq!(p.apply_action(&s, Action::Up), s);
    }

    #[test]
    fn push_moves_object() {
        let p = problem_with_walls(4, 5, &[], Pos::new(1, 1), vec![Pos::new(1, 2)], vec![Pos::new(0, 0)]);
        let s = p.apply_action(&p.initial, Action::Right);
        assert_eq!(s.agent, Pos::new(1, 2));
        assert_eq!(s.objects(), &[Pos::new(1, 3)]);
    }

    #[test]
    fn object_blocks_object() {
        let p = problem_with_walls(
            3,
            5,
            &[],
            Pos::new(1, 0),
            vec![Pos::new(1, 1), Pos::new(1, 2)],
            vec![Pos::new(0, 0), Pos::new(0, 1)],
        );
        assert_eq!(p.apply_action(&p.initial, Action::Right), p.initial);
    }

    /// Rules written out independently on a char grid.
    fn oracle_step(grid: &[Vec<char>], action: Action) -> Vec<Vec<char>> {
        let mut g = grid.to_vec();
        let (h, w) = (g.len() as isize, g[0].len() as isize);
        let (mut ar, mut ac) = (0, 0);
        for (r, row) in g.iter().enumerate() {
            for (c, &ch) in row.iter().enumerate() {
                if ch == '@' {
                    (ar, ac) = (r as isize, c as isize);
                }
            }
        }
        let (dr, dc) = match action {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        };
        let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < h && c < w;
        let (tr, tc) = (ar + dr, ac + dc);
        if !inside(tr, tc) {
            return g;
        }
        match g[tr as usize][tc as usize] {
            '.' => {
                g[ar as usize][ac as usize] = '.';
                g[tr as usize][tc as usize] = '@';
            }
            '$' => {
                let (br, bc) = (tr + dr, tc + dc);
                if inside(br, bc) && g[br as usize][bc as usize] == '.' {
                    g[br as usize][bc as usize] = '$';
                    g[tr as usize][tc as usize] = '@';
                    g[ar as usize][ac as usize] = '.';
                }
            }
            _ => {}
        }
        g
    }

    fn to_grid(p: &SokobanProblem, s: &SokobanState) -> Vec<Vec<char>> {
        let mut g = vec![vec!['.'; p.width()]; p.height()];
        for r in 0..p.height() {
            for c in 0..p.width() {
                if p.is_wall(Pos::new(r, c)) {
                    g[r][c] = '#';
                }
            }
        }
        for o in s.objects() {
            g[o.row][o.col] = '$';
        }
        g[s.agent.row][s.agent.col] = '@';
        g
    }

    fn random_problem(rng: &mut impl Rng) -> SokobanProblem {
        let (h, w) = (rng.gen_range(3..8), rng.gen_range(3..8));
        let mut walls: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.25)).collect();
        let mut cells: Vec<usize> = (0..h * w).collect();
        cells.shuffle(rng);
        let n_obj = rng.gen_range(1..=2);
        for &c in &cells[..1 + 2 * n_obj] {
            walls[c] = false;
        }
        let pos = |i: usize| Pos::new(i / w, i % w);
        let agent = pos(cells[0]);
        let objects = (0..n_obj).map(|k| pos(cells[1 + k])).collect();
        let goals = (0..n_obj).map(|k| pos(cells[1 + n_obj + k])).collect();
        SokobanProblem::new(h, w, walls, goals, SokobanState::new(agent, objects)).unwrap()
    }

    #[test]
    fn rules_match_independent_oracle() {
        let mut rng = crate::seed::rng_from_seed(11);
        for _ in 0..1000 {
            let p = random_problem(&mut rng);
            let a = Action::ALL[rng.gen_range(0..4)];
            let next = p.apply_action(&p.initial, a);
            assert_eq!(to_grid(&p, &next), oracle_step(&to_grid(&p, &p.initial), a));
            p.validate_state(&next).unwrap();
            assert_eq!(next.objects().len(), p.initial.objects().len());
        }
    }

    #[test]
    fn goal_test_is_set_equality() {
        let mut rng = crate::seed::rng_from_seed(12);
        for _ in 0..500 {
            let p = random_problem(&mut rng);
            let mut s = p.initial.clone();
            for _ in 0..rng.gen_range(0..20) {
                s = p.apply_action(&s, Action::ALL[rng.gen_range(0..4)]);
            }
            let a: std::collections::BTreeSet<Pos> = s.objects().iter().copied().collect();
            let b: std::collections::BTreeSet<Pos> = p.goals().iter().copied().collect();
            assert_eq!(p.is_goal(&s), a == b);
        }
        let p = problem_with_walls(3, 3, &[], Pos::new(0, 0), vec![Pos::new(1, 1)], vec![Pos::new(1, 1)]);
        assert!(p.is_goal(&p.initial));
        let moved = SokobanState::new(Pos::new(2, 2), vec![Pos::new(1, 1)]);
        assert!(p.is_goal(&moved));
        let off = SokobanState::new(Pos::new(2, 2), vec![Pos::new(1, 0)]);
        assert!(!p.is_goal(&off));
    }

    #[test]
    fn render_single_agent_bit() {
        let p = problem_with_walls(3, 3, &[], Pos::new(1, 1), vec![Pos::new(0, 0)], vec![Pos::new(2, 2)]);
        let obs = p.render_observation(&p.initial, true);
        let agent_plane = &obs.channels.values()[9..18];
        assert_eq!(agent_plane.iter().sum::<f64>(), 1.0);
        assert_eq!(agent_plane[4], 1.0);
        let hidden = p.render_observation(&p.initial, false);
        assert!(hidden.channels.values()[9..18].iter().all(|&v| v == 0.0));
        assert_eq!(hidden.agent(), None);
    }

    #[test]
    fn observation_round_trip() {
        let mut rng = crate::seed::rng_from_seed(13);
        for _ in 0..1000 {
            let p = random_problem(&mut rng);
            let obs = p.render_observation(&p.initial, true);
            assert_eq!(obs.decode_state().unwrap(), p.initial);
            assert_eq!(obs.walls(), p.walls());
            let v = obs.channels.values();
            let n = p.height() * p.width();
            assert!((0..n).all(|i| v[i] * v[2 * n + i] == 0.0), "walls and objects overlap");
        }
    }

    #[test]
    fn constructor_rejects_invalid_problems() {
        let walls = vec![false, true, false, false];
        let bad = SokobanProblem::new(2, 2, walls.clone(), vec![Pos::new(0, 1)], SokobanState::new(Pos::new(0, 0), vec![Pos::new(1, 1)]));
        assert!(matches!(bad, Err(ProblemError::Blocked { what: "goal", .. })));
        let bad = SokobanProblem::new(2, 2, walls, vec![], SokobanState::new(Pos::new(0, 0), vec![Pos::new(1, 1)]));
        assert!(matches!(bad, Err(ProblemError::CountMismatch { .. })));
    }
}
