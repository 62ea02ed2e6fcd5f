use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grid::{square_rows, split_status, with_status, Action, Pos, Status};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SokobanCell {
    Empty,
    Wall,
    Hole,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SokobanConfig {
    /// Side length including the wall border.
    pub size: usize,
    pub interior_walls: usize,
    pub holes: usize,
    /// Resets are redrawn until the shortest win takes at most this many
    /// moves.
    pub max_solution_moves: usize,
    pub max_retries: usize,
}

impl Default for SokobanConfig {
    fn default() -> Self {
        Self { size: 6, interior_walls: 2, holes: 1, max_solution_moves: 5, max_retries: 10_000 }
    }
}

/// Which loss rules are spelled out in the textual instructions. The game
/// enforces all of them either way.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleVisibility {
    pub walls: bool,
    pub holes: bool,
    pub deadlock: bool,
}

impl Default for RuleVisibility {
    fn default() -> Self {
        Self { walls: true, holes: true, deadlock: true }
    }
}

impl RuleVisibility {
    /// Game instructions listing the visible rules.
    pub fn instructions(&self) -> String {
        let mut lines = vec![
            "You are P on a grid. Push the box B onto the target T to win.".to_string(),
            "Moves: up, down, left, right. Walking into the box pushes it one cell.".to_string(),
        ];
        if self.walls {
            lines.push("Walls # block both you and the box.".into());
        }
        if self.holes {
            lines.push("Stepping into a hole O, or pushing the box into one, loses the game.".into());
        }
        if self.deadlock {
            lines.push("Pushing the box where it can never reach the target loses the game.".into());
        }
        lines.join("\n")
    }
}

/// Single-box Sokoban with holes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SokobanState {
    size: usize,
    cells: Vec<SokobanCell>,
    player: Pos,
    boxp: Pos,
    status: Status,
}

impl SokobanState {
    pub fn reset(seed: u64) -> Result<Self> {
        Self::reset_with(&SokobanConfig::default(), seed)
    }

    /// Random bordered board whose shortest win fits the move budget and
    /// whose box does not start in a dead position.
    pub fn reset_with(cfg: &SokobanConfig, seed: u64) -> Result<Self> {
        let n = cfg.size;
        let interior: Vec<Pos> = (1..n.saturating_sub(1)).flat_map(|r| (1..n - 1).map(move |c| (r, c))).collect();
        if interior.len() < cfg.interior_walls + cfg.holes + 3 {
            return Err(Error::Config(format!("a {n}×{n} board cannot hold the requested objects")));
        }
        let mut rng = seeds::rng(seed, "sokoban", 0);
        for _ in 0..cfg.max_retries.max(1) {
            let picks: Vec<Pos> =
                interior.choose_multiple(&mut rng, cfg.interior_walls + cfg.holes + 3).copied().collect();
            let (walls, rest) = picks.split_at(cfg.interior_walls);
            let (holes, rest) = rest.split_at(cfg.holes);
            let state = Self::bordered(n, walls, holes, rest[0], rest[1], rest[2])?;
            if state.status != Status::Running || state.is_dead_position() {
                continue;
            }
            if state.solve().is_some_and(|p| p.len() <= cfg.max_solution_moves) {
                return Ok(state);
            }
        }
        Err(Error::Environment(format!("no solvable Sokoban board after {} draws", cfg.max_retries)))
    }

    /// Board with a wall border plus the given interior cells.
    pub fn bordered(size: usize, walls: &[Pos], holes: &[Pos], target: Pos, boxp: Pos, player: Pos) -> Result<Self> {
        let mut all_walls: Vec<Pos> = walls.to_vec();
        for i in 0..size {
            all_walls.extend([(0, i), (size - 1, i), (i, 0), (i, size - 1)]);
        }
        Self::from_parts(size, &all_walls, holes, target, boxp, player)
    }

    pub fn from_parts(
        size: usize,
        walls: &[Pos],
        holes: &[Pos],
        target: Pos,
        boxp: Pos,
        player: Pos,
    ) -> Result<Self> {
        let on_board = |p: Pos| p.0 < size && p.1 < size;
        let mut cells = vec![SokobanCell::Empty; size * size];
        for (list, kind) in [(walls, SokobanCell::Wall), (holes, SokobanCell::Hole)] {
            for &p in list {
                if !on_board(p) {
                    return Err(Error::Environment(format!("cell {p:?} off the board")));
                }
                cells[p.0 * size + p.1] = kind;
            }
        }
        for (p, what) in [(target, "target"), (boxp, "box"), (player, "player")] {
            if !on_board(p) || cells[p.0 * size + p.1] == SokobanCell::Wall {
                return Err(Error::Environment(format!("{what} at {p:?} is off the board or in a wall")));
            }
        }
        if cells[target.0 * size + target.1] == SokobanCell::Hole {
            return Err(Error::Environment("target in a hole".into()));
        }
        if boxp == player {
            return Err(Error::Environment("box and player overlap".into()));
        }
        cells[target.0 * size + target.1] = SokobanCell::Target;
        let mut s = Self { size, cells, player, boxp, status: Status::Running };
        s.status = if s.cell(boxp) == SokobanCell::Target {
            Status::Won
        } else if s.cell(boxp) == SokobanCell::Hole || s.cell(player) == SokobanCell::Hole {
            Status::Lost
        } else {
            Status::Running
        };
        Ok(s)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn player(&self) -> Pos {
        self.player
    }

    pub fn box_pos(&self) -> Pos {
        self.boxp
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn cell(&self, p: Pos) -> SokobanCell {
        self.cells[p.0 * self.size + p.1]
    }

    pub fn target(&self) -> Pos {
        let i = self.cells.iter().position(|&c| c == SokobanCell::Target).expect("one target");
        (i / self.size, i % self.size)
    }

    fn open(&self, p: Option<Pos>) -> Option<Pos> {
        p.filter(|&q| self.cell(q) != SokobanCell::Wall)
    }

    /// Walks or pushes. Blocked moves keep the state but consume the turn.
    pub fn step(&self, action: Action) -> Result<Self> {
        if self.status.is_terminal() {
            return Err(Error::Environment(format!("step after terminal state ({})", self.status.name())));
        }
        let mut next = self.clone();
        let Some(q) = self.open(action.apply(self.player, self.size)) else {
            return Ok(next);
        };
        if q == self.boxp {
            let Some(d) = self.open(action.apply(self.boxp, self.size)) else {
                return Ok(next);
            };
            next.player = q;
            next.boxp = d;
            next.status = match self.cell(d) {
                SokobanCell::Hole => Status::Lost,
                SokobanCell::Target => Status::Won,
                _ if next.is_dead_position() => Status::Lost,
                _ => Status::Running,
            };
        } else {
            next.player = q;
            if self.cell(q) == SokobanCell::Hole {
                next.status = Status::Lost;
            }
        }
        Ok(next)
    }

    fn blocked(&self, p: Option<Pos>) -> bool {
        match p {
            None => true,
            Some(q) => matches!(self.cell(q), SokobanCell::Wall | SokobanCell::Hole),
        }
    }

    /// Classic corner test: the box is off target and blocked on one
    /// vertical and one horizontal side (walls, edges or holes).
    pub fn corner_dead(&self) -> bool {
        if self.cell(self.boxp) == SokobanCell::Target {
            return false;
        }
        let side = |a: Action| self.blocked(a.apply(self.boxp, self.size));
        (side(Action::Up) || side(Action::Down)) && (side(Action::Left) || side(Action::Right))
    }

    /// True when no sequence of moves from here can win. The corner test is
    /// tried first; otherwise the search decides.
    pub fn is_dead_position(&self) -> bool {
        match self.status {
            Status::Won => false,
            Status::Lost => true,
            Status::Running => self.corner_dead() || self.solve().is_none(),
        }
    }

    /// Shortest winning move sequence, by breadth-first search over
    /// `(player, box)` pairs. Moves that lose are never taken.
    pub fn solve(&self) -> Option<Vec<Action>> {
        match self.status {
            Status::Won => return Some(Vec::new()),
            Status::Lost => return None,
            Status::Running => {}
        }
        let n = self.size;
        let key = |p: Pos, b: Pos| (p.0 * n + p.1) * n * n + b.0 * n + b.1;
        let mut prev: Vec<Option<(usize, Action)>> = vec![None; n * n * n * n];
        let mut seen = vec![false; n * n * n * n];
        let start = key(self.player, self.boxp);
        seen[start] = true;
        let mut queue = VecDeque::from([(self.player, self.boxp)]);
        let path_to = |prev: &[Option<(usize, Action)>], mut k: usize, last: Action| {
            let mut path = vec![last];
            while let Some((pk, a)) = prev[k] {
                path.push(a);
                k = pk;
            }
            path.reverse();
            path
        };
        while let Some((p, b)) = queue.pop_front() {
            let k = key(p, b);
            for a in Action::ALL {
                let Some(q) = self.open(a.apply(p, n)) else { continue };
                let (np, nb) = if q == b {
                    let Some(d) = self.open(a.apply(b, n)) else { continue };
                    match self.cell(d) {
                        SokobanCell::Hole => continue,
                        SokobanCell::Target => return Some(path_to(&prev, k, a)),
                        _ => (q, d),
                    }
                } else if self.cell(q) == SokobanCell::Hole {
                    continue;
                } else {
                    (q, b)
                };
                let nk = key(np, nb);
                if !seen[nk] {
                    seen[nk] = true;
                    prev[nk] = Some((k, a));
                    queue.push_back((np, nb));
                }
            }
        }
        None
    }

    pub fn layout(&self) -> String {
        let mut rows = Vec::with_capacity(self.size);
        for r in 0..self.size {
            let row: String = (0..self.size)
                .map(|c| {
                    let p = (r, c);
                    let cell = self.cell(p);
                    if p == self.player {
                        match cell {
                            SokobanCell::Target => '@',
                            SokobanCell::Hole => 'p',
                            _ => 'P',
                        }
                    } else if p == self.boxp {
                        match cell {
                            SokobanCell::Target => '*',
                            SokobanCell::Hole => 'b',
                            _ => 'B',
                        }
                    } else {
                        match cell {
                            SokobanCell::Empty => '.',
                            SokobanCell::Wall => '#',
                            SokobanCell::Hole => 'O',
                            SokobanCell::Target => 'T',
                        }
                    }
                })
                .collect();
            rows.push(row);
        }
        rows.join("\n")
    }

    pub fn render(&self) -> String {
        with_status(&self.layout(), self.status)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (rows, status) = split_status(text)?;
        let grid = square_rows(&rows)?;
        let n = grid.len();
        let (mut walls, mut holes) = (Vec::new(), Vec::new());
        let (mut target, mut boxp, mut player) = (None, None, None);
        for (r, row) in grid.iter().enumerate() {
            for (c, &ch) in row.iter().enumerate() {
                let p = (r, c);
                match ch {
                    '.' => {}
                    '#' => walls.push(p),
                    'O' => holes.push(p),
                    'T' => target = Some(p),
                    'B' => boxp = Some(p),
                    'P' => player = Some(p),
                    '*' => (boxp, target) = (Some(p), Some(p)),
                    '@' => (player, target) = (Some(p), Some(p)),
                    'p' => {
                        player = Some(p);
                        holes.push(p);
                    }
                    'b' => {
                        boxp = Some(p);
                        holes.push(p);
                    }
                    other => return Err(Error::Environment(format!("unknown Sokoban glyph {other:?}"))),
                }
            }
        }
        let missing = |w: &str| Error::Environment(format!("no {w} on the board"));
        let mut s = Self::from_parts(
            n,
            &walls,
            &holes,
            target.ok_or_else(|| missing("target"))?,
            boxp.ok_or_else(|| missing("box"))?,
            player.ok_or_else(|| missing("player"))?,
        )?;
        // a dead box is lost without any glyph change
        if status == Status::Lost && s.status == Status::Running {
            s.status = Status::Lost;
        }
        if s.status != status {
            return Err(Error::Environment("status line disagrees with board".into()));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_board(boxp: Pos, player: Pos, target: Pos) -> SokobanState {
        SokobanState::bordered(6, &[], &[], target, boxp, player).unwrap()
    }

    #[test]
    fn push_moves_both() {
        let s = open_board((2, 2), (2, 1), (4, 4));
        let t = s.step(Action::Right).unwrap();
        assert_eq!((t.player(), t.box_pos(), t.status()), ((2, 2), (2, 3), Status::Running));
    }

    #[test]
    fn push_onto_target_wins() {
        let s = open_board((2, 3), (2, 2), (2, 4));
        assert_eq!(s.step(Action::Right).unwrap().status(), Status::Won);
    }

    #[test]
    fn corner_push_loses() {
        let s = open_board((1, 3), (1, 2), (4, 1));
        let t = s.step(Action::Right).unwrap();
        assert_eq!(t.box_pos(), (1, 4));
        assert!(t.corner_dead());
        assert_eq!(t.status(), Status::Lost);
        assert!(t.with_status_running().solve().is_none());
    }

    #[test]
    fn blocked_push_keeps_state() {
        let s = open_board((2, 4), (2, 3), (4, 1));
        assert_eq!(s.step(Action::Right).unwrap(), s);
    }

    #[test]
    fn render_roundtrip() {
        let s = SokobanState::bordered(6, &[(2, 2)], &[(3, 3)], (4, 4), (2, 3), (1, 1)).unwrap();
        assert_eq!(s.render(), "######\n#P...#\n#.#B.#\n#..O.#\n#...T#\n######\nstatus: running");
        assert_eq!(SokobanState::parse(&s.render()).unwrap(), s);
    }

    impl SokobanState {
        fn with_status_running(&self) -> Self {
            Self { status: Status::Running, ..self.clone() }
        }
    }
}
