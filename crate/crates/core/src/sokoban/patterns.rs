//! 3×3 wall patterns used to assemble generated rooms.

use rand::Rng;

/// Default library: 17 patterns, `#` wall and `.` floor, separated by blank lines.
pub const DEFAULT_PATTERNS: &str = "\
...
...
...

#..
...
...

##.
...
...

###
...
...

.#.
...
...

...
.#.
...

#.#
...
...

##.
#..
...

.#.
.#.
...

#..
...
..#

##.
##.
...

###
###
###

###
#..
#..

#..
#..
##.

.#.
.#.
.#.

...
.##
...

#..
.#.
...
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pattern {
    /// Row-major, `true` = wall.
    pub cells: [bool; 9],
}

impl Pattern {
    /// Quarter-turn clockwise.
    pub fn rotated(&self) -> Pattern {
        let mut cells = [false; 9];
        for r in 0..3 {
            for c in 0..3 {
                cells[c * 3 + (2 - r)] = self.cells[r * 3 + c];
            }
        }
        Pattern { cells }
    }

    pub fn rotated_times(&self, quarter_turns: usize) -> Pattern {
        (0..quarter_turns % 4).fold(*self, |p, _| p.rotated())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternLibrary {
    patterns: Vec<Pattern>,
}

impl Default for PatternLibrary {
    fn default() -> Self {
        PatternLibrary::parse(DEFAULT_PATTERNS).expect("built-in pattern library parses")
    }
}

impl PatternLibrary {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut patterns = Vec::new();
        let mut rows: Vec<&str> = Vec::new();
        let mut flush = |rows: &mut Vec<&str>| -> Result<(), String> {
            if rows.is_empty() {
                return Ok(());
            }
            if rows.len() != 3 || rows.iter().any(|r| r.chars().count() != 3) {
                return Err(format!("pattern must be 3×3, got {rows:?}"));
            }
            let mut cells = [false; 9];
            for (r, row) in rows.iter().enumerate() {
                for (c, ch) in row.chars().enumerate() {
                    cells[r * 3 + c] = match ch {
                        '#' => true,
                        '.' => false,
                        other => return Err(format!("bad pattern character {other:?}")),
                    };
                }
            }
            patterns.push(Pattern { cells });
            rows.clear();
            Ok(())
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                flush(&mut rows)?;
            } else {
                rows.push(line);
            }
        }
        flush(&mut rows)?;
        if patterns.is_empty() {
            return Err("empty pattern library".into());
        }
        Ok(PatternLibrary { patterns })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    /// A uniformly chosen pattern under a uniformly chosen rotation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Pattern {
        let p = self.patterns[rng.gen_range(0..self.patterns.len())];
        p.rotated_times(rng.gen_range(0..4))
    }
}
