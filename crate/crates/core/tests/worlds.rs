mod common;

use std::collections::HashSet;

use opcd::worlds::*;

#[test]
fn lake_resets_are_solvable_with_two_holes_and_one_goal() {
    for seed in 0..1000 {
        let s = FrozenLakeState::reset(seed).unwrap();
        assert_eq!(s.holes().len(), 2);
        assert_eq!(s.render().matches('G').count(), 1);
        assert_eq!(s.player(), (0, 0));
        let d = common::lake_distance(&s.holes(), s.goal(), 3).expect("solvable");
        assert_eq!(s.shortest_solution().unwrap().len(), d);
    }
}

#[test]
fn random_goal_placement_is_also_solvable() {
    let cfg = FrozenLakeConfig { goal: None, ..Default::default() };
    let mut goals = HashSet::new();
    for seed in 0..200 {
        let s = FrozenLakeState::reset_with(&cfg, seed).unwrap();
        goals.insert(s.goal());
        assert!(common::lake_distance(&s.holes(), s.goal(), 3).is_some());
    }
    assert!(goals.len() > 3);
}

#[test]
fn example_board_needs_four_moves() {
    assert_eq!(common::lake_distance(&[(1, 1), (2, 0)], (2, 2), 3), Some(4));
    let s = FrozenLakeState::from_parts(3, &[(1, 1), (2, 0)], (2, 2), (0, 0)).unwrap();
    assert_eq!(s.shortest_solution().unwrap().len(), 4);
}

#[test]
fn lake_rendering_is_injective_and_roundtrips() {
    let cells: Vec<Pos> = (0..9).map(|i| (i / 3, i % 3)).collect();
    let mut seen = HashSet::new();
    let mut count = 0;
    for (i, &h1) in cells.iter().enumerate() {
        for &h2 in &cells[i + 1..] {
            for &goal in &cells {
                if goal == h1 || goal == h2 {
                    continue;
                }
                for &player in &cells {
                    let s = FrozenLakeState::from_parts(3, &[h1, h2], goal, player).unwrap();
                    let text = s.render();
                    assert!(seen.insert(text.clone()), "duplicate rendering {text}");
                    assert_eq!(FrozenLakeState::parse(&text).unwrap(), s);
                    count += 1;
                }
            }
        }
    }
    assert_eq!(count, 36 * 7 * 9);
}

#[test]
fn golden_renderings() {
    let lake = FrozenLakeState::from_parts(3, &[(1, 1), (2, 0)], (2, 2), (0, 0)).unwrap();
    let lost = lake.step(Action::Down).unwrap().step(Action::Down).unwrap();
    let soko = SokobanState::bordered(6, &[(2, 2)], &[(3, 3)], (4, 4), (2, 3), (1, 1)).unwrap();
    let won = SokobanState::bordered(6, &[], &[], (2, 4), (2, 3), (2, 2)).unwrap().step(Action::Right).unwrap();
    let got = [lake.render(), lost.render(), soko.render(), won.render()].join("\n\n") + "\n";
    assert_eq!(got, include_str!("data/renderings.txt"));
}

#[test]
fn sokoban_resets_are_solvable() {
    for seed in 0..200 {
        let s = SokobanState::reset(seed).unwrap();
        assert_eq!(s.status(), Status::Running);
        assert!(common::oracle_winnable(&s));
        let plan = s.solve().unwrap();
        assert!(plan.len() <= SokobanConfig::default().max_solution_moves);
        let end = plan.iter().try_fold(s.clone(), |st, &a| st.step(a)).unwrap();
        assert_eq!(end.status(), Status::Won);
    }
}

#[test]
fn dead_detector_has_no_false_positives() {
    let fixtures = common::sokoban_fixtures(3000);
    let mut dead = 0;
    for s in &fixtures {
        if s.status() != Status::Running {
            continue;
        }
        if s.is_dead_position() {
            dead += 1;
            assert!(!common::oracle_winnable(s), "false positive:\n{}", s.render());
        } else {
            assert!(common::oracle_winnable(s), "missed dead position:\n{}", s.render());
        }
    }
    assert!(dead > 1000);
}

#[test]
fn transitions_are_pure() {
    let s = SokobanState::reset(5).unwrap();
    for a in Action::ALL {
        assert_eq!(s.step(a).unwrap(), s.step(a).unwrap());
    }
}

#[test]
fn rules_text_follows_visibility() {
    let all = RuleVisibility::default().instructions();
    assert!(all.contains("hole"));
    let some = RuleVisibility { holes: false, deadlock: false, walls: true }.instructions();
    assert!(!some.contains("hole") && !some.contains("never reach"));
}

struct Oracle;

impl Agent for Oracle {
    fn act(&mut self, observation: &str, _: usize, _: usize, _: u64) -> opcd::Result<String> {
        let board = observation.trim_start_matches(NO_ACTION_MESSAGE).trim_start();
        let world = if board.contains('#') {
            World::Sokoban(SokobanState::parse(board)?)
        } else {
            World::FrozenLake(FrozenLakeState::parse(board)?)
        };
        Ok(world.solve().and_then(|p| p.first().copied()).map_or("none".into(), |a| a.to_string()))
    }
}

#[test]
fn oracle_agent_wins_every_board() {
    for seed in 0..100 {
        let lake = World::FrozenLake(FrozenLakeState::reset(seed).unwrap());
        assert_eq!(run_episode(&mut Oracle, lake, DEFAULT_ROUND_LIMIT, 4, seed).unwrap().outcome, Outcome::Won);
        let soko = World::Sokoban(SokobanState::reset(seed).unwrap());
        let ep = run_episode(&mut Oracle, soko, DEFAULT_ROUND_LIMIT, 4, seed).unwrap();
        assert_eq!(ep.outcome, Outcome::Won);
        assert!(ep.turns.len() <= DEFAULT_ROUND_LIMIT);
    }
}
