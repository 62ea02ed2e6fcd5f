use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(row, col)`, zero-based from the top-left corner.
pub type Pos = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(s))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Neighbour of `p` in this direction inside a `size`×`size` board, or
    /// `None` at the edge.
    pub fn apply(self, p: Pos, size: usize) -> Option<Pos> {
        let (r, c) = p;
        match self {
            Action::Up => r.checked_sub(1).map(|r| (r, c)),
            Action::Down => (r + 1 < size).then_some((r + 1, c)),
            Action::Left => c.checked_sub(1).map(|c| (r, c)),
            Action::Right => (c + 1 < size).then_some((r, c + 1)),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Won,
    Lost,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Won => "won",
            Status::Lost => "lost",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }
}

/// Appends the status line (and the terminal marker line) to a board.
pub(crate) fn with_status(board: &str, status: Status) -> String {
    let mut s = format!("{board}\nstatus: {}", status.name());
    match status {
        Status::Won => s.push_str("\nWON"),
        Status::Lost => s.push_str("\nLOST"),
        Status::Running => {}
    }
    s
}

/// Splits a rendering into board rows and status, checking the trailer.
pub(crate) fn split_status(text: &str) -> Result<(Vec<&str>, Status)> {
    let lines: Vec<&str> = text.lines().collect();
    let bad = |m: &str| Error::Environment(format!("cannot parse rendering: {m}"));
    let idx = lines.iter().position(|l| l.starts_with("status: ")).ok_or_else(|| bad("missing status line"))?;
    let status = match &lines[idx]["status: ".len()..] {
        "running" => Status::Running,
        "won" => Status::Won,
        "lost" => Status::Lost,
        other => return Err(bad(&format!("unknown status {other:?}"))),
    };
    let trailer = &lines[idx + 1..];
    let expected: &[&str] = match status {
        Status::Running => &[],
        Status::Won => &["WON"],
        Status::Lost => &["LOST"],
    };
    if trailer != expected {
        return Err(bad("terminal marker does not match status"));
    }
    Ok((lines[..idx].to_vec(), status))
}

/// Board rows of a square layout, each exactly `size` characters.
pub(crate) fn square_rows(rows: &[&str]) -> Result<Vec<Vec<char>>> {
    let n = rows.len();
    let grid: Vec<Vec<char>> = rows.iter().map(|r| r.chars().collect()).collect();
    if n == 0 || grid.iter().any(|r| r.len() != n) {
        return Err(Error::Environment(format!("layout is not square ({n} rows)")));
    }
    Ok(grid)
}
