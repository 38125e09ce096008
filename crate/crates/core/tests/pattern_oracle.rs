mod common;

use common::{brute_force_matches, random_pattern_graph, random_pattern_text, rng};
use taxgraph::patterns::{match_pattern, parse_pattern, MatchLimits};

fn check(seed: u64, max_len: usize) {
    let fx = random_pattern_graph(seed);
    let store = fx.store();
    let mut r = rng(seed ^ 0xdead_beef);
    for _ in 0..4 {
        let text = random_pattern_text(&mut r);
        let pattern = parse_pattern(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
        let limits = MatchLimits {
            max_path_len: max_len,
            max_results: None,
        };
        let got = match_pattern(&store, &pattern, limits);
        let want = brute_force_matches(&fx, &pattern, max_len);
        assert_eq!(got, want, "seed {seed}, pattern:\n{text}");
    }
}

#[test]
fn random_patterns_match_exhaustive_enumeration() {
    for seed in 0..48 {
        check(seed, 10);
    }
}

#[test]
fn path_bound_is_respected() {
    for seed in 100..124 {
        check(seed, 1);
        check(seed, 2);
    }
}

#[test]
fn result_cap_keeps_a_sorted_prefix() {
    for seed in 200..216 {
        let fx = random_pattern_graph(seed);
        let store = fx.store();
        let pattern = parse_pattern("a -[direct+]-> b;").unwrap();
        let all = match_pattern(&store, &pattern, MatchLimits::default());
        let capped = match_pattern(
            &store,
            &pattern,
            MatchLimits {
                max_results: Some(3),
                ..MatchLimits::default()
            },
        );
        assert_eq!(capped, all[..all.len().min(3)]);
    }
}
