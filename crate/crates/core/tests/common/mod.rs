//! Helpers shared by integration test targets.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use opcd::worlds::{Action, Pos, SokobanCell, SokobanState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 6;

fn interior() -> Vec<Pos> {
    (1..SIZE - 1).flat_map(|r| (1..SIZE - 1).map(move |c| (r, c))).collect()
}

/// Single-box 6×6 configurations: every layout with at most two interior
/// walls (exhaustive over target, box and player), plus `random` seeded
/// layouts with up to six interior walls.
pub fn sokoban_fixtures(random: usize) -> Vec<SokobanState> {
    let cells = interior();
    let mut wall_sets: Vec<Vec<Pos>> = vec![vec![]];
    for i in 0..cells.len() {
        wall_sets.push(vec![cells[i]]);
        for j in i + 1..cells.len() {
            wall_sets.push(vec![cells[i], cells[j]]);
        }
    }
    let mut out = Vec::new();
    for walls in &wall_sets {
        let free: Vec<Pos> = cells.iter().copied().filter(|p| !walls.contains(p)).collect();
        for &t in &free {
            for &b in &free {
                for &p in &free {
                    if p != b {
                        out.push(SokobanState::bordered(SIZE, walls, &[], t, b, p).unwrap());
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..random {
        let walls_n = 3 + i % 4;
        let picks: Vec<Pos> = cells.choose_multiple(&mut rng, walls_n + 4).copied().collect();
        let holes: &[Pos] = if i % 2 == 0 { &picks[walls_n + 3..] } else { &[] };
        out.push(SokobanState::bordered(SIZE, &picks[..walls_n], holes, picks[walls_n], picks[walls_n + 1], picks[walls_n + 2]).unwrap());
    }
    out
}

/// Independent winnability check: depth-first over (player, box) pairs.
pub fn oracle_winnable(s: &SokobanState) -> bool {
    let n = s.size();
    let free = |p: Pos| s.cell(p) != SokobanCell::Wall;
    let mut seen = HashSet::new();
    let mut stack = vec![(s.player(), s.box_pos())];
    if s.cell(s.box_pos()) == SokobanCell::Target {
        return true;
    }
    while let Some((p, b)) = stack.pop() {
        if !seen.insert((p, b)) {
            continue;
        }
        for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let step = |q: Pos| -> Option<Pos> {
                let r = q.0 as i64 + dr;
                let c = q.1 as i64 + dc;
                (r >= 0 && c >= 0 && (r as usize) < n && (c as usize) < n).then_some((r as usize, c as usize))
            };
            let Some(q) = step(p).filter(|&q| free(q)) else { continue };
            if q == b {
                let Some(d) = step(b).filter(|&d| free(d)) else { continue };
                match s.cell(d) {
                    SokobanCell::Target => return true,
                    SokobanCell::Hole => continue,
                    _ => stack.push((q, d)),
                }
            } else if s.cell(q) != SokobanCell::Hole {
                stack.push((q, b));
            }
        }
    }
    false
}

/// Independent BFS over lake cells.
pub fn lake_distance(holes: &[Pos], goal: Pos, size: usize) -> Option<usize> {
    let mut dist = vec![usize::MAX; size * size];
    let mut q = VecDeque::from([(0usize, 0usize)]);
    dist[0] = 0;
    while let Some((r, c)) = q.pop_front() {
        if (r, c) == goal {
            return Some(dist[r * size + c]);
        }
        for a in Action::ALL {
            if let Some((nr, nc)) = a.apply((r, c), size) {
                if !holes.contains(&(nr, nc)) && dist[nr * size + nc] == usize::MAX {
                    dist[nr * size + nc] = dist[r * size + c] + 1;
                    q.push_back((nr, nc));
                }
            }
        }
    }
    None
}
