mod common;

use proptest::prelude::*;

use litersan::ir::parse_program;

use common::criteria::{random_call_graph, reachability_matches};
use common::{bfs_reachable, call_graph_source};

#[test]
fn bfs_oracle_on_a_known_graph() {
    // f0 calls f1; f1 icalls sig(raw->raw); f2 matches and is address-taken,
    // f3 matches but is never taken, f4 is taken with another signature.
    let src = call_graph_source(&[0, 0, 1, 1, 2], &[(0, 1), (2, 2)], &[(0, 2), (0, 4)], &[(1, 1)]);
    let p = parse_program(&src).unwrap();
    let got: Vec<String> = bfs_reachable(&p).into_iter().collect();
    assert_eq!(got, vec!["f0", "f1", "f2"]);
    reachability_matches(&p).unwrap();
}

#[test]
fn two_hundred_random_graphs() {
    for seed in 0..200 {
        reachability_matches(&random_call_graph(seed)).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reachable_set_equals_bfs(
        sigs in prop::collection::vec(0usize..3, 1..12),
        calls in prop::collection::vec((0usize..12, 0usize..12), 0..24),
        taken in prop::collection::vec((0usize..12, 0usize..12), 0..12),
        icalls in prop::collection::vec((0usize..12, 0usize..3), 0..6),
    ) {
        let n = sigs.len();
        let clip = |v: Vec<(usize, usize)>| -> Vec<(usize, usize)> { v.into_iter().map(|(a, b)| (a % n, b % n)).collect() };
        let icalls: Vec<(usize, usize)> = icalls.into_iter().map(|(a, s)| (a % n, s)).collect();
        let p = parse_program(&call_graph_source(&sigs, &clip(calls), &clip(taken), &icalls)).unwrap();
        prop_assert_eq!(reachability_matches(&p), Ok(()));
    }
}
