use crate::search::{astar, SearchResult, SearchSpace};

use super::{Action, Pos, SokobanProblem, SokobanState};

/// Sokoban as a unit-cost search space. Moves that leave the state unchanged
/// are not successors.
pub struct SokobanSpace<'a> {
    pub problem: &'a SokobanProblem,
}

impl SearchSpace for SokobanSpace<'_> {
    type State = SokobanState;
    type Action = Action;

    fn successors(&self, state: &SokobanState) -> Vec<(Action, SokobanState, f64)> {
        Action::ALL
            .iter()
            .filter_map(|&a| {
                let next = self.problem.apply_action(state, a);
                (next != *state).then_some((a, next, 1.0))
            })
            .collect()
    }

    fn is_goal(&self, state: &SokobanState) -> bool {
        self.problem.is_goal(state)
    }
}

/// Minimum total Manhattan distance over all object-to-goal assignments.
pub fn manhattan_heuristic(problem: &SokobanProblem, state: &SokobanState) -> f64 {
    fn best(objects: &[Pos], goals: &mut Vec<Pos>) -> usize {
        let Some((first, rest)) = objects.split_first() else { return 0 };
        let mut min = usize::MAX;
        for i in 0..goals.len() {
            let g = goals.swap_remove(i);
            min = min.min(first.manhattan(g) + best(rest, goals));
            goals.push(g);
            let last = goals.len() - 1;
            goals.swap(i, last);
        }
        min
    }
    best(state.objects(), &mut problem.goals().to_vec()) as f64
}

/// Optimal plan by A* with the Manhattan matching bound, replay-verified.
/// Returns `None` when the budget runs out or the instance is unsolvable.
pub fn expert_solve(problem: &SokobanProblem, budget: usize) -> Option<SearchResult<Action>> {
    let space = SokobanSpace { problem };
    let mut h = |s: &SokobanState| manhattan_heuristic(problem, s);
    let result = astar(&space, problem.initial.clone(), &mut h, budget);
    if !result.is_solved() {
        return None;
    }
    let end = result
        .plan
        .iter()
        .fold(problem.initial.clone(), |s, &a| problem.apply_action(&s, a));
    assert!(problem.is_goal(&end), "expert plan does not replay to the goal");
    Some(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sokoban::parse_level;
    use std::collections::{HashMap, VecDeque};

    /// Breadth-first distances from `start` over the raw move rules.
    fn bfs_all(problem: &SokobanProblem, start: &SokobanState) -> HashMap<SokobanState, usize> {
        let mut dist = HashMap::new();
        dist.insert(start.clone(), 0);
        let mut queue = VecDeque::from([start.clone()]);
        while let Some(s) = queue.pop_front() {
            let d = dist[&s];
            for a in Action::ALL {
                let t = problem.apply_action(&s, a);
                if !dist.contains_key(&t) {
                    dist.insert(t.clone(), d + 1);
                    queue.push_back(t);
                }
            }
        }
        dist
    }

    fn bfs_plan_length(problem: &SokobanProblem) -> Option<usize> {
        bfs_all(problem, &problem.initial)
            .into_iter()
            .filter(|(s, _)| problem.is_goal(s))
            .map(|(_, d)| d)
            .min()
    }

    #[test]
    fn already_solved() {
        let p = parse_level("#####\n#@*.#\n#####\n").unwrap();
        let r = expert_solve(&p, 100).unwrap();
        assert!(r.plan.is_empty());
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn corridor_pushes_right() {
        let p = parse_level("#######\n#@$..X#\n#######\n").unwrap();
        let r = expert_solve(&p, 1000).unwrap();
        assert_eq!(r.plan, vec![Action::Right; 3]);
        assert_eq!(Some(3), bfs_plan_length(&p));
    }

    #[test]
    fn manhattan_examples() {
        let p = parse_level("......\n.$....\n......\n......\n.....X\n@.....\n").unwrap();
        assert_eq!(manhattan_heuristic(&p, &p.initial), 7.0);
        assert_eq!(manhattan_heuristic(&p, &p.goal_state()), 0.0);
        let two = parse_level("$..X\n.@..\nX..$\n").unwrap();
        // row-wise assignment costs 3 + 3, column-wise costs 2 + 2
        assert_eq!(manhattan_heuristic(&two, &two.initial), 4.0);
    }

    #[test]
    fn matches_bfs_and_heuristic_is_admissible() {
        let mut solved = 0;
        for seed in 0..100 {
            let cfg = crate::sokoban::GeneratorConfig::default();
            let mut p = match crate::sokoban::generate_level(6, 6, 1, seed, &cfg) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let r = expert_solve(&p, 200_000).unwrap();
            assert_eq!(Some(r.plan.len()), bfs_plan_length(&p), "seed {seed}");
            solved += 1;
            // Admissibility against exact distance-to-goal on every reachable state.
            let reachable = bfs_all(&p, &p.initial);
            for s in reachable.keys().take(200) {
                p.initial = s.clone();
                if let Some(opt) = bfs_plan_length(&p) {
                    assert!(manhattan_heuristic(&p, s) <= opt as f64);
                }
            }
        }
        assert!(solved >= 90);
    }
}
