//! Random rooms assembled from rotated 3×3 wall patterns.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use thiserror::Error;

use super::patterns::PatternLibrary;
use super::planner::expert_solve;
use super::{Pos, SokobanProblem, SokobanState};
use crate::search::DEFAULT_BUDGET;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub patterns: PatternLibrary,
    pub max_attempts: usize,
    pub expert_budget: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            patterns: PatternLibrary::default(),
            max_attempts: 1000,
            expert_budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenerationError {
    #[error("grid {height}x{width} is too small (minimum 3x3)")]
    Dimensions { height: usize, width: usize },
    #[error("object count must be 1 or 2, got {0}")]
    ObjectCount(usize),
    #[error("no acceptable level after {0} attempts")]
    Exhausted(usize),
}

/// Window sizes whose all-floor occurrence means an open area larger than 3×4.
const FORBIDDEN_OPEN: [(usize, usize); 3] = [(4, 4), (3, 5), (5, 3)];

/// First all-floor rectangle strictly larger than 3×4 (either orientation), as
/// `(row, col, height, width)`.
///
/// Any such rectangle contains a 4×4, 3×5 or 5×3 window, so checking those
/// three window shapes is exact.
pub fn open_area_violation(walls: &[bool], height: usize, width: usize) -> Option<(usize, usize, usize, usize)> {
    // prefix[r][c] = walls in rows < r, cols < c
    let mut prefix = vec![0usize; (height + 1) * (width + 1)];
    for r in 0..height {
        for c in 0..width {
            prefix[(r + 1) * (width + 1) + c + 1] = usize::from(walls[r * width + c])
                + prefix[r * (width + 1) + c + 1]
                + prefix[(r + 1) * (width + 1) + c]
                - prefix[r * (width + 1) + c];
        }
    }
    let count = |r0: usize, c0: usize, r1: usize, c1: usize| {
        prefix[r1 * (width + 1) + c1] + prefix[r0 * (width + 1) + c0]
            - prefix[r0 * (width + 1) + c1]
            - prefix[r1 * (width + 1) + c0]
    };
    for &(wh, ww) in &FORBIDDEN_OPEN {
        if wh > height || ww > width {
            continue;
        }
        for r in 0..=height - wh {
            for c in 0..=width - ww {
                if count(r, c, r + wh, c + ww) == 0 {
                    return Some((r, c, wh, ww));
                }
            }
        }
    }
    None
}

/// True when every floor cell is 4-connected to every other (and there is floor).
pub fn floor_is_connected(walls: &[bool], height: usize, width: usize) -> bool {
    let Some(start) = walls.iter().position(|&w| !w) else { return false };
    let mut seen = vec![false; walls.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / width, i % width);
        let mut visit = |j: usize| {
            if !walls[j] && !seen[j] {
                seen[j] = true;
                reached += 1;
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - width);
        }
        if r + 1 < height {
            visit(i + width);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < width {
            visit(i + 1);
        }
    }
    reached == walls.iter().filter(|&&w| !w).count()
}

/// Generates a solvable level; a pure function of its arguments.
///
/// The grid is tiled with `ceil(h/3) × ceil(w/3)` randomly rotated patterns
/// and cropped to `h × w`, so multiples of 3 are partitioned exactly.
pub fn generate_level(
    height: usize,
    width: usize,
    n_objects: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<SokobanProblem, GenerationError> {
    if height < 3 || width < 3 {
        return Err(GenerationError::Dimensions { height, width });
    }
    if !(1..=2).contains(&n_objects) {
        return Err(GenerationError::ObjectCount(n_objects));
    }
    let mut rng = rng_from_seed(seed);
    let (block_rows, block_cols) = (height.div_ceil(3), width.div_ceil(3));
    for _ in 0..config.max_attempts {
        let mut walls = vec![false; height * width];
        for br in 0..block_rows {
            for bc in 0..block_cols {
                let pattern = config.patterns.sample(&mut rng);
                for (k, &wall) in pattern.cells.iter().enumerate() {
                    let (r, c) = (br * 3 + k / 3, bc * 3 + k % 3);
                    if r < height && c < width {
                        walls[r * width + c] = wall;
                    }
                }
            }
        }
        if open_area_violation(&walls, height, width).is_some()
            || !floor_is_connected(&walls, height, width)
        {
            continue;
        }
        let mut floor: Vec<Pos> = (0..height * width)
            .filter(|&i| !walls[i])
            .map(|i| Pos::new(i / width, i % width))
            .collect();
        if floor.len() < 1 + 2 * n_objects {
            continue;
        }
        floor.shuffle(&mut rng);
        let agent = floor[0];
        let objects = floor[1..=n_objects].to_vec();
        let goals = floor[1 + n_objects..1 + 2 * n_objects].to_vec();
        let problem = SokobanProblem::new(height, width, walls, goals, SokobanState::new(agent, objects))
            .expect("generated cells are distinct floor cells");
        if expert_solve(&problem, config.expert_budget).is_some() {
            return Ok(problem);
        }
    }
    Err(GenerationError::Exhausted(config.max_attempts))
}
