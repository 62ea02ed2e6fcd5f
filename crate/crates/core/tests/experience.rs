use std::collections::HashMap;

use opcd::error::Result;
use opcd::experience::*;
use opcd::lm::{Vocabulary, ITEM_PREFIX};
use opcd::worlds::{run_episode, Agent, FrozenLakeState, World};
use proptest::prelude::*;

const TRACE: &str = "Q: 3 + 4 =\nA: 7";

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn items(texts: &[&str]) -> Vec<ExperienceItem> {
    texts.iter().map(|t| ExperienceItem::new(*t, None).unwrap()).collect()
}

#[test]
fn extraction_prompts_match_golden_files() {
    assert_eq!(format_extraction_prompt(TRACE, Flavor::Math), golden("extraction_math.txt"));
    assert_eq!(format_extraction_prompt(TRACE, Flavor::Game), golden("extraction_game.txt"));
}

#[test]
fn solve_prompt_matches_golden_file() {
    let v = Vocabulary::standard();
    let c = ExperienceContext::empty(Flavor::Math.default_budget())
        .accumulate(&items(&["- EXPERIENCE ITEM: 3→7", "- EXPERIENCE ITEM: 5→1"]), &v)
        .unwrap();
    assert_eq!(format_solve_prompt(&c, "3 + 4 ="), golden("solve.txt"));
}

#[test]
fn empty_context_renders_empty_block() {
    let p = format_solve_prompt(&ExperienceContext::empty(10), "1 + 1 =");
    assert!(p.starts_with("Given previous learned experience:\n# Experience\n\n\nSolve the new problem"));
    assert!(parse_experience_items(&p).is_empty());
}

#[test]
fn published_example_items_parse() {
    let math = parse_experience_items(&golden("items_math_examples.txt"));
    assert_eq!(math.len(), 5);
    assert!(math.iter().all(|i| i.text().starts_with(ITEM_PREFIX)));
    assert_eq!(parse_experience_items(&golden("items_lake_examples.txt")).len(), 3);
}

#[test]
fn parser_picks_prefixed_lines_in_order() {
    let text = "Some reasoning first.\n- EXPERIENCE ITEM: a\nnot an item\n  - EXPERIENCE ITEM: b  \n# Experience\n-EXPERIENCE ITEM: no\n- EXPERIENCE ITEM: c";
    let got: Vec<String> = parse_experience_items(text).iter().map(|i| i.text().to_owned()).collect();
    assert_eq!(got, ["- EXPERIENCE ITEM: a", "- EXPERIENCE ITEM: b", "- EXPERIENCE ITEM: c"]);
    assert!(parse_experience_items("nothing here\n").is_empty());
}

#[test]
fn default_budgets_and_validation_sizes() {
    assert_eq!(Flavor::Math.default_budget(), 16384);
    assert_eq!(Flavor::Game.default_budget(), 8192);
    assert_eq!(Flavor::Math.default_validation_size(), 1000);
    assert_eq!(Flavor::Game.default_validation_size(), 128);
}

struct Scripted(Vec<&'static str>);

impl Agent for Scripted {
    fn act(&mut self, _: &str, round: usize, _: usize, _: u64) -> Result<String> {
        Ok(self.0.get(round - 1).copied().unwrap_or("").to_owned())
    }
}

fn lake_episode(moves: Vec<&'static str>) -> opcd::worlds::Episode {
    let s = FrozenLakeState::from_parts(3, &[(1, 1), (2, 0)], (2, 2), (0, 0)).unwrap();
    run_episode(&mut Scripted(moves), World::FrozenLake(s), 5, 4, 0).unwrap()
}

#[test]
fn winning_episode_gives_one_strategy_item() {
    let ep = lake_episode(vec!["right", "right", "down", "down"]);
    let got = game_items(&ep, &ExperienceContext::empty(100));
    assert_eq!(got, ["- EXPERIENCE ITEM: win 1:right 2:right 3:down 4:down"]);
    // already known: nothing new
    let v = Vocabulary::standard();
    let known = ExperienceContext::empty(100).accumulate(&items(&[&got[0]]), &v).unwrap();
    assert!(game_items(&ep, &known).is_empty());
}

#[test]
fn losing_episode_names_the_hazard() {
    let ep = lake_episode(vec!["down", "right"]);
    assert_eq!(game_items(&ep, &ExperienceContext::empty(100)), ["- EXPERIENCE ITEM: avoid 2:right! hole"]);
}

#[test]
fn wall_bump_is_reported_once() {
    let ep = lake_episode(vec!["up", "left", "right", "right", "down"]);
    assert_eq!(game_items(&ep, &ExperienceContext::empty(100)), ["- EXPERIENCE ITEM: avoid 1:up! wall"]);
}

#[test]
fn empty_traces_give_nothing() {
    assert!(math_items(&[]).is_empty());
    let ep = lake_episode(vec![]);
    assert!(game_items(&ep, &ExperienceContext::empty(100)).is_empty());
}

#[test]
fn extracted_items_fit_the_vocabulary() {
    let v = Vocabulary::standard();
    let unk = v.unk().unwrap();
    for moves in [vec!["right", "right", "down", "down"], vec!["down", "right"], vec!["up"]] {
        for t in game_items(&lake_episode(moves), &ExperienceContext::empty(100)) {
            assert!(!v.encode(&t).contains(&unk), "{t}");
        }
    }
}

/// Emits one item naming the problem and the current item count.
fn counting_extractor(problem: &usize, ctx: &ExperienceContext, _seed: u64) -> Result<Vec<String>> {
    if *problem == 7 {
        return Err(opcd::Error::Experience("problem 7 is broken".into()));
    }
    Ok(vec![format!("{ITEM_PREFIX} {problem} {}", ctx.len())])
}

#[test]
fn pool_shape_and_failures() {
    let v = Vocabulary::standard();
    let problems: Vec<usize> = (0..40).collect();
    let cfg = PoolConfig { repeats: 10, per_run: 30, budget: Flavor::Math.default_budget() };
    let pool = build_pool(&counting_extractor, &problems, cfg, &v, 3).unwrap();
    assert_eq!(pool.len(), 300);
    for run in pool.entries.chunks(30) {
        assert!(run.windows(2).all(|w| w[0].context.len() <= w[1].context.len()));
        assert_eq!(run.iter().map(|e| e.step).collect::<Vec<_>>(), (1..=30).collect::<Vec<_>>());
    }
    assert!(pool.failures.iter().all(|f| f.problem == 7));
    let with_seven = pool.entries.iter().filter(|e| e.problem == 7).count();
    assert_eq!(pool.failures.len(), with_seven);

    let one = build_pool(&counting_extractor, &problems, PoolConfig { repeats: 1, per_run: 1, budget: 10 }, &v, 0);
    assert_eq!(one.unwrap().len(), 1);
    let zero = PoolConfig { repeats: 1, per_run: 0, budget: 10 };
    assert!(build_pool(&counting_extractor, &problems, zero, &v, 0).is_err());
}

#[test]
fn pool_is_deterministic_and_persists() {
    let v = Vocabulary::standard();
    let problems: Vec<usize> = (0..12).collect();
    let cfg = PoolConfig { repeats: 3, per_run: 5, budget: 64 };
    let a = build_pool(&counting_extractor, &problems, cfg, &v, 11).unwrap();
    let b = build_pool(&counting_extractor, &problems, cfg, &v, 11).unwrap();
    assert_eq!(a, b);
    let c = build_pool(&counting_extractor, &problems, cfg, &v, 12).unwrap();
    assert_ne!(a.entries, c.entries);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.jsonl");
    a.save(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 15);
    assert_eq!(Pool::load(&path).unwrap().entries, a.entries);
}

#[test]
fn selection_modes() {
    let v = Vocabulary::standard();
    let one = ExperienceContext::empty(50).accumulate(&items(&["- EXPERIENCE ITEM: 1→1"]), &v).unwrap();
    let two = ExperienceContext::empty(50).accumulate(&items(&["- EXPERIENCE ITEM: 2→2"]), &v).unwrap();
    let oracle: HashMap<String, f64> = [(one.render(), 0.8), (two.render(), 0.6)].into_iter().collect();
    let validation: Vec<usize> = (0..10).collect();
    let correct = |c: &ExperienceContext, i: &usize| Ok((*i as f64) < oracle[&c.render()] * 10.0);
    let (best, scores) = select_filtered(&[&one, &two], &validation, correct).unwrap();
    assert_eq!(best, 0);
    assert_eq!(scores, [0.8, 0.6]);
    let (best, _) = select_filtered(&[&two, &one], &validation, correct).unwrap();
    assert_eq!(best, 1);

    let (only, _) = select_filtered(&[&one], &validation, correct).unwrap();
    assert_eq!(only, 0);
    assert_eq!(select_test_time(1, 5).unwrap(), 0);
    assert!(select_test_time(0, 5).is_err());
}

#[test]
fn test_time_draws_cover_the_pool() {
    let mut seen = [0usize; 4];
    for seed in 0..400 {
        seen[select_test_time(4, seed).unwrap()] += 1;
    }
    assert!(seen.iter().all(|&n| (60..140).contains(&n)), "{seen:?}");
}

fn item_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["win", "1:up", "3→4", "hole", "7", "zz", "A"]), 0..6)
        .prop_map(|w| format!("{ITEM_PREFIX} {}", w.join(" ")).trim_end().to_owned())
}

fn to_items(texts: &[String]) -> Vec<ExperienceItem> {
    texts.iter().map(|t| ExperienceItem::new(t.clone(), None).unwrap()).collect()
}

proptest! {
    #[test]
    fn rendered_block_roundtrips(texts in prop::collection::vec(item_text(), 0..12)) {
        let v = Vocabulary::standard();
        let c = ExperienceContext::empty(10_000).accumulate(&to_items(&texts), &v).unwrap();
        let prompt = format_solve_prompt(&c, "2 + 2 =");
        let back: Vec<String> = parse_experience_items(&prompt).iter().map(|i| i.text().to_owned()).collect();
        prop_assert_eq!(back, texts);
    }

    #[test]
    fn accumulate_keeps_the_fitting_prefix(
        batches in prop::collection::vec(prop::collection::vec(item_text(), 0..5), 1..6),
        budget in 8usize..40,
    ) {
        let v = Vocabulary::standard();
        let mut c = ExperienceContext::empty(budget);
        let mut offered: Vec<String> = Vec::new();
        for batch in &batches {
            let next = c.accumulate(&to_items(batch), &v).unwrap();
            prop_assert_eq!(&next.items()[..c.len()], c.items());
            prop_assert!(next.token_count() <= budget);
            c = next;
            offered.extend(batch.iter().cloned());
        }
        // longest prefix of everything offered whose running count fits
        let mut total = 0;
        let mut kept = 0;
        for t in &offered {
            total += v.encode(t).len();
            if total > budget {
                break;
            }
            kept += 1;
        }
        prop_assert_eq!(c.len(), kept);
        prop_assert_eq!(c.dropped(), offered.len() - kept);
        prop_assert_eq!(c.token_count(), v.encode(&c.render()).len());
    }

    #[test]
    fn filtered_selection_ignores_pool_order(scores in prop::collection::vec(0usize..5, 1..8), rot in 0usize..8) {
        let v = Vocabulary::standard();
        let ctxs: Vec<ExperienceContext> = (0..scores.len())
            .map(|i| ExperienceContext::empty(50).accumulate(&items(&[&format!("{ITEM_PREFIX} {i}")]), &v).unwrap())
            .collect();
        let score_of: HashMap<String, usize> = ctxs.iter().zip(&scores).map(|(c, &s)| (c.render(), s)).collect();
        let validation: Vec<usize> = (0..4).collect();
        let correct = |c: &ExperienceContext, i: &usize| Ok(*i < score_of[&c.render()]);
        let refs: Vec<&ExperienceContext> = ctxs.iter().collect();
        let (best, _) = select_filtered(&refs, &validation, correct).unwrap();
        let mut rotated = refs.clone();
        rotated.rotate_left(rot % refs.len());
        let (best_rot, _) = select_filtered(&rotated, &validation, correct).unwrap();
        let top = score_of[&refs[best].render()];
        prop_assert_eq!(top, *scores.iter().max().unwrap());
        prop_assert_eq!(score_of[&rotated[best_rot].render()], top);
        let first_top = rotated.iter().position(|c| score_of[&c.render()] == top).unwrap();
        prop_assert_eq!(best_rot, first_top);
    }
}
