use thiserror::Error;

use super::{Pos, ProblemError, SokobanProblem, SokobanState};

#[derive(Debug, Error, PartialEq)]
pub enum LevelParseError {
    #[error("empty level")]
    Empty,
    #[error("line {line}: unexpected character {ch:?}")]
    BadChar { line: usize, ch: char },
    #[error("expected exactly one agent, found {0}")]
    AgentCount(usize),
    #[error(transparent)]
    Invalid(#[from] ProblemError),
}

/// Parses one level. Short rows are padded with walls.
///
/// `#` wall, `.` floor, `@` agent, `$` object, `X` goal, `*` object on goal,
/// `+` agent on goal.
pub fn parse_level(text: &str) -> Result<SokobanProblem, LevelParseError> {
    let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
    if rows.is_empty() {
        return Err(LevelParseError::Empty);
    }
    let height = rows.len();
    let width = rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
    let mut walls = vec![true; height * width];
    let mut agents = Vec::new();
    let mut objects = Vec::new();
    let mut goals = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            let p = Pos::new(r, c);
            let (wall, agent, object, goal) = match ch {
                '#' => (true, false, false, false),
                '.' => (false, false, false, false),
                '@' => (false, true, false, false),
                '$' => (false, false, true, false),
                'X' => (false, false, false, true),
                '*' => (false, false, true, true),
                '+' => (false, true, false, true),
                _ => return Err(LevelParseError::BadChar { line: r + 1, ch }),
            };
            walls[r * width + c] = wall;
            if agent {
                agents.push(p);
            }
            if object {
                objects.push(p);
            }
            if goal {
                goals.push(p);
            }
        }
    }
    if agents.len() != 1 {
        return Err(LevelParseError::AgentCount(agents.len()));
    }
    Ok(SokobanProblem::new(
        height,
        width,
        walls,
        goals,
        SokobanState::new(agents[0], objects),
    )?)
}

/// Parses a multi-level file; levels are separated by blank lines.
pub fn parse_levels(text: &str) -> Result<Vec<SokobanProblem>, LevelParseError> {
    let mut levels = Vec::new();
    let mut block = String::new();
    for line in text.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if !block.is_empty() {
                levels.push(parse_level(&block)?);
                block.clear();
            }
        } else {
            block.push_str(line);
            block.push('\n');
        }
    }
    Ok(levels)
}

pub fn format_level(problem: &SokobanProblem) -> String {
    let s = &problem.initial;
    let mut out = String::with_capacity((problem.width() + 1) * problem.height());
    for r in 0..problem.height() {
        for c in 0..problem.width() {
            let p = Pos::new(r, c);
            let goal = problem.goals().contains(&p);
            let ch = if problem.is_wall(p) {
                '#'
            } else if s.agent == p {
                if goal { '+' } else { '@' }
            } else if s.objects().contains(&p) {
                if goal { '*' } else { '$' }
            } else if goal {
                'X'
            } else {
                '.'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}
