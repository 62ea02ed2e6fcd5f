use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grid::{square_rows, split_status, with_status, Action, Pos, Status};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LakeCell {
    Empty,
    Hole,
    Goal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenLakeConfig {
    pub size: usize,
    pub holes: usize,
    /// Goal cell; `None` places it uniformly at random (never on the start).
    pub goal: Option<Pos>,
    pub max_retries: usize,
}

impl Default for FrozenLakeConfig {
    fn default() -> Self {
        Self { size: 3, holes: 2, goal: Some((2, 2)), max_retries: 1000 }
    }
}

pub const START: Pos = (0, 0);

/// Deterministic (non-slippery) Frozen Lake board.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrozenLakeState {
    size: usize,
    cells: Vec<LakeCell>,
    player: Pos,
    status: Status,
}

impl FrozenLakeState {
    /// Random solvable board with the default configuration.
    pub fn reset(seed: u64) -> Result<Self> {
        Self::reset_with(&FrozenLakeConfig::default(), seed)
    }

    pub fn reset_with(cfg: &FrozenLakeConfig, seed: u64) -> Result<Self> {
        let n = cfg.size;
        if n < 2 || cfg.holes + 2 > n * n {
            return Err(Error::Config(format!("{} holes do not fit a {n}×{n} lake", cfg.holes)));
        }
        let mut rng = seeds::rng(seed, "frozen-lake", 0);
        for _ in 0..cfg.max_retries.max(1) {
            let mut free: Vec<Pos> = (0..n * n).map(|i| (i / n, i % n)).filter(|&p| p != START).collect();
            let goal = match cfg.goal {
                Some(g) => g,
                None => *free.choose(&mut rng).expect("board has free cells"),
            };
            if goal.0 >= n || goal.1 >= n || goal == START {
                return Err(Error::Config(format!("goal {goal:?} invalid for a {n}×{n} lake")));
            }
            free.retain(|&p| p != goal);
            let holes: Vec<Pos> = free.choose_multiple(&mut rng, cfg.holes).copied().collect();
            let state = Self::from_parts(n, &holes, goal, START)?;
            if state.shortest_solution().is_some() {
                return Ok(state);
            }
        }
        Err(Error::Environment(format!("no solvable lake after {} draws", cfg.max_retries)))
    }

    pub fn from_parts(size: usize, holes: &[Pos], goal: Pos, player: Pos) -> Result<Self> {
        let mut cells = vec![LakeCell::Empty; size * size];
        let idx = |p: Pos| p.0 * size + p.1;
        for &h in holes {
            if h.0 >= size || h.1 >= size {
                return Err(Error::Environment(format!("hole {h:?} off the board")));
            }
            cells[idx(h)] = LakeCell::Hole;
        }
        if goal.0 >= size || goal.1 >= size || cells[idx(goal)] == LakeCell::Hole {
            return Err(Error::Environment(format!("bad goal {goal:?}")));
        }
        cells[idx(goal)] = LakeCell::Goal;
        if player.0 >= size || player.1 >= size {
            return Err(Error::Environment(format!("player {player:?} off the board")));
        }
        let status = match cells[idx(player)] {
            LakeCell::Empty => Status::Running,
            LakeCell::Goal => Status::Won,
            LakeCell::Hole => Status::Lost,
        };
        Ok(Self { size, cells, player, status })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn player(&self) -> Pos {
        self.player
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn cell(&self, p: Pos) -> LakeCell {
        self.cells[p.0 * self.size + p.1]
    }

    pub fn holes(&self) -> Vec<Pos> {
        self.positions(LakeCell::Hole)
    }

    pub fn goal(&self) -> Pos {
        self.positions(LakeCell::Goal)[0]
    }

    fn positions(&self, kind: LakeCell) -> Vec<Pos> {
        (0..self.size * self.size)
            .filter(|i| self.cells[*i] == kind)
            .map(|i| (i / self.size, i % self.size))
            .collect()
    }

    /// Moves one cell; an off-board move keeps the player in place.
    pub fn step(&self, action: Action) -> Result<Self> {
        if self.status.is_terminal() {
            return Err(Error::Environment(format!("step after terminal state ({})", self.status.name())));
        }
        let mut next = self.clone();
        next.player = action.apply(self.player, self.size).unwrap_or(self.player);
        next.status = match next.cell(next.player) {
            LakeCell::Empty => Status::Running,
            LakeCell::Hole => Status::Lost,
            LakeCell::Goal => Status::Won,
        };
        Ok(next)
    }

    /// Shortest hole-free action sequence from the current position to the
    /// goal (breadth-first, actions tried in `up, down, left, right` order).
    pub fn shortest_solution(&self) -> Option<Vec<Action>> {
        if self.status == Status::Won {
            return Some(Vec::new());
        }
        if self.status == Status::Lost {
            return None;
        }
        let n = self.size;
        let mut prev: Vec<Option<(Pos, Action)>> = vec![None; n * n];
        let mut seen = vec![false; n * n];
        let mut queue = VecDeque::from([self.player]);
        seen[self.player.0 * n + self.player.1] = true;
        while let Some(p) = queue.pop_front() {
            for a in Action::ALL {
                let Some(q) = a.apply(p, n) else { continue };
                let qi = q.0 * n + q.1;
                if seen[qi] || self.cell(q) == LakeCell::Hole {
                    continue;
                }
                seen[qi] = true;
                prev[qi] = Some((p, a));
                if self.cell(q) == LakeCell::Goal {
                    let mut path = vec![a];
                    let mut cur = p;
                    while let Some((pp, pa)) = prev[cur.0 * n + cur.1] {
                        path.push(pa);
                        cur = pp;
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(q);
            }
        }
        None
    }

    /// One character per cell: `P` player, `.` empty, `H` hole, `G` goal.
    pub fn layout(&self) -> String {
        let mut rows = Vec::with_capacity(self.size);
        for r in 0..self.size {
            let row: String = (0..self.size)
                .map(|c| {
                    if (r, c) == self.player {
                        'P'
                    } else {
                        match self.cell((r, c)) {
                            LakeCell::Empty => '.',
                            LakeCell::Hole => 'H',
                            LakeCell::Goal => 'G',
                        }
                    }
                })
                .collect();
            rows.push(row);
        }
        rows.join("\n")
    }

    /// Layout plus a status line; terminal states add `WON` or `LOST`.
    pub fn render(&self) -> String {
        with_status(&self.layout(), self.status)
    }

    /// Inverse of [`FrozenLakeState::render`]. The cell under the player is
    /// recovered from the status (goal when won, hole when lost).
    pub fn parse(text: &str) -> Result<Self> {
        let (rows, status) = split_status(text)?;
        let grid = square_rows(&rows)?;
        let n = grid.len();
        let (mut holes, mut goal, mut player) = (Vec::new(), None, None);
        for (r, row) in grid.iter().enumerate() {
            for (c, &ch) in row.iter().enumerate() {
                match ch {
                    '.' => {}
                    'H' => holes.push((r, c)),
                    'G' => goal = Some((r, c)),
                    'P' => player = Some((r, c)),
                    other => return Err(Error::Environment(format!("unknown lake glyph {other:?}"))),
                }
            }
        }
        let player = player.ok_or_else(|| Error::Environment("no player".into()))?;
        let goal = match goal {
            Some(g) if status != Status::Won => g,
            None if status == Status::Won => player,
            _ => return Err(Error::Environment("goal placement inconsistent with status".into())),
        };
        if status == Status::Lost {
            holes.push(player);
        }
        let s = Self::from_parts(n, &holes, goal, player)?;
        if s.status != status {
            return Err(Error::Environment("status line disagrees with board".into()));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moves_and_clamps() {
        let s = FrozenLakeState::from_parts(3, &[(1, 1), (2, 0)], (2, 2), (0, 0)).unwrap();
        assert_eq!(s.step(Action::Right).unwrap().player(), (0, 1));
        let up = s.step(Action::Up).unwrap();
        assert_eq!((up.player(), up.status()), ((0, 0), Status::Running));
        let lost = s.step(Action::Down).unwrap().step(Action::Right).unwrap();
        assert_eq!(lost.status(), Status::Lost);
        assert!(lost.step(Action::Up).is_err());
    }

    #[test]
    fn bfs_on_example_board() {
        let s = FrozenLakeState::from_parts(3, &[(1, 1), (2, 0)], (2, 2), (0, 0)).unwrap();
        let plan = s.shortest_solution().unwrap();
        assert_eq!(plan.len(), 4);
        let end = plan.iter().fold(s, |st, &a| st.step(a).unwrap());
        assert_eq!(end.status(), Status::Won);
    }

    #[test]
    fn render_parse_roundtrip() {
        let s = FrozenLakeState::from_parts(3, &[(1, 1), (2, 0)], (2, 2), (0, 0)).unwrap();
        assert_eq!(s.render(), "P..\n.H.\nH.G\nstatus: running");
        for st in [s.clone(), s.step(Action::Down).unwrap().step(Action::Down).unwrap()] {
            assert_eq!(FrozenLakeState::parse(&st.render()).unwrap(), st);
        }
        let won = FrozenLakeState::from_parts(3, &[(1, 1), (2, 0)], (2, 2), (2, 2)).unwrap();
        assert!(won.render().ends_with("status: won\nWON"));
        assert_eq!(FrozenLakeState::parse(&won.render()).unwrap(), won);
    }
}
