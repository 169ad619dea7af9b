mod common;

use std::rc::Rc;

use common::fusion_kit::{
    lists, max_abs_diff, random_graph, random_plain, random_rows, run_attention, run_fuse, tiny_params,
};
use common::{literal_attention, literal_fuse_round};
use multidecode::diffcore::{Neighborhoods, Tape, Tensor};
use multidecode::fusion::{build_adjacency, DecoderGraph, FusionConfig, FusionMode};
use multidecode::relcap::{shared_region_graph, RelationPair};
use multidecode::Error;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn two_nodes_match_the_literal_script() {
    let p = tiny_params();
    let h0 = vec![vec![0.7, -0.3], vec![-0.2, 0.9]];
    let graph = DecoderGraph::fully_connected(2);
    let got = run_fuse(&h0, &graph, &p, FusionConfig::full(1)).unwrap();
    let want = literal_fuse_round(&h0, &[vec![1], vec![0]], &p);
    assert!(max_abs_diff(&got, &want) <= 1e-12, "{got:?} vs {want:?}");
}

#[test]
fn several_rounds_match_the_literal_script() {
    let mut r = common::rng(11);
    for n in [3, 5] {
        let p = random_plain(&mut r, 4);
        let graph = random_graph(&mut r, n, 0.5);
        let h0 = random_rows(&mut r, n, 4);
        let got = run_fuse(&h0, &graph, &p, FusionConfig::full(3)).unwrap();
        let mut want = h0.clone();
        for _ in 0..3 {
            want = literal_fuse_round(&want, &lists(&graph), &p);
        }
        assert!(max_abs_diff(&got, &want) <= 1e-12);
        let alpha = run_attention(&h0, &graph, &p);
        let lit = literal_attention(&h0, &lists(&graph), &p);
        assert!(max_abs_diff(&alpha, &lit) <= 1e-12);
    }
}

#[test]
fn attention_examples() {
    let p = tiny_params();
    let graph = build_adjacency(&[(0, 1)], 2).unwrap();
    let alpha = run_attention(&vec![vec![0.3, 0.1], vec![2.0, -1.0]], &graph, &p);
    assert_eq!(alpha, vec![vec![1.0], vec![1.0]]);

    // node 0 hears two identical neighbors
    let graph = build_adjacency(&[(0, 1), (0, 2)], 3).unwrap();
    let alpha = run_attention(&vec![vec![0.0, 0.0], vec![0.4, -0.8], vec![0.4, -0.8]], &graph, &p);
    assert_eq!(alpha[0], vec![0.5, 0.5]);

    let mut tape = Tape::new();
    let nb = Rc::new(Neighborhoods::from_lists(vec![vec![1, 2, 3], vec![], vec![], vec![]]).unwrap());
    let raw = tape.constant(Tensor::matrix(&[vec![9.0], vec![0.0], vec![2f64.ln()], vec![2f64.ln()]]).unwrap());
    let alpha = tape.neighbor_softmax(raw, &nb).unwrap();
    for (a, b) in tape.value(alpha).data().iter().zip([0.2, 0.4, 0.4]) {
        assert!((a - b).abs() <= 1e-15);
    }
}

#[test]
fn adjacency_examples() {
    assert_eq!(
        build_adjacency(&[(0, 1)], 3).unwrap().matrix(),
        vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]]
    );
    assert_eq!(build_adjacency(&[], 2).unwrap().num_edges(), 0);
    assert!(matches!(build_adjacency(&[(2, 0)], 2), Err(Error::Index { .. })));

    // captions (A,B), (B,C), (D,E) share a box only between the first two
    let pair = |subject, object| RelationPair {
        subject,
        predicate: "near".into(),
        object,
        features: vec![],
    };
    let g = shared_region_graph(&[pair(0, 1), pair(1, 2), pair(3, 4)]);
    assert_eq!(g.matrix(), vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]]);
}

#[test]
fn empty_graph_runs_gru_with_zero_input() {
    let mut r = common::rng(5);
    let p = random_plain(&mut r, 4);
    let h0 = random_rows(&mut r, 3, 4);
    let graph = DecoderGraph::empty(3);
    for k in 1..=3 {
        let got = run_fuse(&h0, &graph, &p, FusionConfig::full(k)).unwrap();
        let mut want = h0.clone();
        for _ in 0..k {
            want = literal_fuse_round(&want, &[vec![], vec![], vec![]], &p);
        }
        assert!(max_abs_diff(&got, &want) <= 1e-12);
        assert!(
            max_abs_diff(&got, &h0) > 0.0,
            "isolated nodes still drift through the GRU"
        );
    }
}

#[test]
fn isolated_node_in_a_connected_graph() {
    let mut r = common::rng(6);
    let p = random_plain(&mut r, 4);
    let h0 = random_rows(&mut r, 3, 4);
    let graph = build_adjacency(&[(0, 1)], 3).unwrap();
    let got = run_fuse(&h0, &graph, &p, FusionConfig::full(1)).unwrap();
    let alone = literal_fuse_round(&vec![h0[2].clone()], &[vec![]], &p);
    assert!(max_abs_diff(&vec![got[2].clone()], &alone) <= 1e-12);
}

#[test]
fn no_gnn_averages_raw_neighbors() {
    let p = tiny_params();
    let h0 = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![4.0, 4.0]];
    let no_gnn = FusionConfig {
        mode: FusionMode::NoGnn,
        iterations: 1,
    };
    let two = run_fuse(&h0[..2].to_vec(), &DecoderGraph::fully_connected(2), &p, no_gnn).unwrap();
    assert_eq!(two, vec![h0[1].clone(), h0[0].clone()]);

    let graph = build_adjacency(&[(0, 1), (0, 2)], 3).unwrap();
    let got = run_fuse(&h0, &graph, &p, no_gnn).unwrap();
    assert_eq!(got[0], vec![0.5, 2.25]);
    assert_eq!(got[1], h0[0]);

    let isolated = run_fuse(&h0, &DecoderGraph::empty(3), &p, no_gnn).unwrap();
    assert!(isolated.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn equal_attention_matches_full_with_constant_scores() {
    let mut r = common::rng(8);
    let mut p = random_plain(&mut r, 4);
    for (w, _) in p.att.iter_mut() {
        for row in w.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let graph = random_graph(&mut r, 5, 0.6);
    let h0 = random_rows(&mut r, 5, 4);
    let full = run_fuse(&h0, &graph, &p, FusionConfig::full(1)).unwrap();
    let equal = FusionConfig {
        mode: FusionMode::EqualAttention,
        iterations: 1,
    };
    let eq = run_fuse(&h0, &graph, &p, equal).unwrap();
    assert!(max_abs_diff(&full, &eq) <= 1e-12);
}

#[test]
fn one_round_is_local_on_a_path() {
    let mut r = common::rng(9);
    let p = random_plain(&mut r, 4);
    let graph = DecoderGraph::path(3);
    let h0 = random_rows(&mut r, 3, 4);
    let mut moved = h0.clone();
    moved[2] = random_rows(&mut r, 1, 4).remove(0);
    let a = run_fuse(&h0, &graph, &p, FusionConfig::full(1)).unwrap();
    let b = run_fuse(&moved, &graph, &p, FusionConfig::full(1)).unwrap();
    assert_eq!(a[0], b[0]);
    assert_ne!(a[1], b[1]);
    // two rounds reach across the path
    let a = run_fuse(&h0, &graph, &p, FusionConfig::full(2)).unwrap();
    let b = run_fuse(&moved, &graph, &p, FusionConfig::full(2)).unwrap();
    assert_ne!(a[0], b[0]);
}

#[test]
fn directed_edge_carries_one_way() {
    let mut r = common::rng(10);
    let p = random_plain(&mut r, 2);
    let mut graph = DecoderGraph::empty(2);
    graph.add_directed(0, 1).unwrap();
    let h0 = random_rows(&mut r, 2, 2);
    let mut moved = h0.clone();
    moved[1] = vec![0.9, -0.9];
    let a = run_fuse(&h0, &graph, &p, FusionConfig::full(2)).unwrap();
    let b = run_fuse(&moved, &graph, &p, FusionConfig::full(2)).unwrap();
    assert_eq!(a[0], b[0]);
}

#[test]
fn zero_iterations_is_rejected() {
    let p = tiny_params();
    let r = run_fuse(
        &vec![vec![1.0, 0.0]],
        &DecoderGraph::empty(1),
        &p,
        FusionConfig::full(0),
    );
    assert!(matches!(r, Err(Error::Config(_))));
}

fn mode_strategy() -> impl Strategy<Value = FusionConfig> {
    prop_oneof![
        (1usize..4).prop_map(FusionConfig::full),
        Just(FusionConfig {
            mode: FusionMode::NoGnn,
            iterations: 1
        }),
        Just(FusionConfig {
            mode: FusionMode::EqualAttention,
            iterations: 1
        }),
    ]
}

proptest! {
    #[test]
    fn attention_sums_to_one_per_receiver(seed in 0u64..10_000, n in 1usize..8, p_edge in 0.0f64..1.0) {
        let mut r = common::rng(seed);
        let p = random_plain(&mut r, 4);
        let graph = random_graph(&mut r, n, p_edge);
        let h0 = random_rows(&mut r, n, 4);
        for (v, weights) in run_attention(&h0, &graph, &p).iter().enumerate() {
            if graph.neighborhoods().degree(v) == 0 {
                prop_assert!(weights.is_empty());
            } else {
                let total: f64 = weights.iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
            }
        }
    }

    #[test]
    fn fusion_is_permutation_equivariant(
        seed in 0u64..10_000,
        n in 1usize..8,
        p_edge in 0.0f64..1.0,
        config in mode_strategy(),
    ) {
        let mut r = common::rng(seed);
        let p = random_plain(&mut r, 4);
        let graph = random_graph(&mut r, n, p_edge);
        let h0 = random_rows(&mut r, n, 4);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let mut h_perm = vec![Vec::new(); n];
        for i in 0..n {
            h_perm[perm[i]] = h0[i].clone();
        }
        let out = run_fuse(&h0, &graph, &p, config).unwrap();
        let out_perm = run_fuse(&h_perm, &graph.permuted(&perm).unwrap(), &p, config).unwrap();
        for i in 0..n {
            prop_assert_eq!(&out_perm[perm[i]], &out[i]);
        }
    }

    #[test]
    fn full_fusion_matches_literal_rounds(seed in 0u64..10_000, n in 1usize..6, k in 1usize..4) {
        let mut r = common::rng(seed);
        let p = random_plain(&mut r, 2);
        let graph = random_graph(&mut r, n, 0.5);
        let h0 = random_rows(&mut r, n, 2);
        let got = run_fuse(&h0, &graph, &p, FusionConfig::full(k)).unwrap();
        let mut want = h0;
        for _ in 0..k {
            want = literal_fuse_round(&want, &lists(&graph), &p);
        }
        prop_assert!(max_abs_diff(&got, &want) <= 1e-12);
    }
}
