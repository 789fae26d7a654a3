use eqnet_core::dataset::{split, DatasetRecord, RecordMeta};
use eqnet_core::equilibrium::solve_equilibrium;
use eqnet_core::generators::{generate, redeem};
use eqnet_core::tokenizer::{
    decode_float_vector, decode_graph, encode_float_vector, encode_graph_with, round_significant, WeightEncoding,
    DEFAULT_MAX_NODE,
};
use eqnet_core::{has_equilibrium, GeneratorConfig, GraphKind, MetabolicNetwork, RngStream, TokenSequence, WeightedEdge};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = GraphKind> {
    prop::sample::select(GraphKind::ALL.to_vec())
}

fn network() -> impl Strategy<Value = MetabolicNetwork> {
    (kind(), 1usize..24, any::<u64>(), any::<bool>(), 0.0f64..0.3).prop_map(|(k, n, seed, weighted, io)| {
        let cfg = GeneratorConfig {
            io_attach_prob: io,
            ..GeneratorConfig::default().with_nodes(n, n).with_kind(k).with_weighted(weighted)
        };
        generate(&cfg, &mut RngStream::new(seed))
    })
}

fn edge() -> impl Strategy<Value = WeightedEdge> {
    (0u32..6, 0u32..6, 1u32..4).prop_map(|(s, d, w)| WeightedEdge::new(s, d, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn adjacency_round_trips_edges(net in network()) {
        let m = net.adjacency_matrix().unwrap();
        prop_assert_eq!(m.to_edges(), net.edges().to_vec());
    }

    #[test]
    fn edge_order_is_total(a in edge(), b in edge(), c in edge()) {
        use std::cmp::Ordering::*;
        prop_assert_eq!(a.cmp(&b), b.cmp(&a).reverse());
        if a.cmp(&b) != Greater && b.cmp(&c) != Greater {
            prop_assert_ne!(a.cmp(&c), Greater);
        }
        prop_assert_eq!(a.cmp(&b) == Equal, a == b);
        if (a.src, a.dst) != (b.src, b.dst) {
            prop_assert_eq!(a.cmp(&b), (a.src, a.dst).cmp(&(b.src, b.dst)));
        }
    }

    #[test]
    fn generators_are_deterministic_and_valid(k in kind(), n in 1usize..40, seed in any::<u64>()) {
        let cfg = GeneratorConfig::default().with_nodes(1, n).with_kind(k);
        let a = generate(&cfg, &mut RngStream::new(seed));
        let b = generate(&cfg, &mut RngStream::new(seed));
        prop_assert!(a.validate().is_valid());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn redemption_only_adds_excretion_edges(net in network(), seed in any::<u64>()) {
        let r = redeem(&net, true, &mut RngStream::new(seed));
        let exc = net.excretion();
        for e in net.edges() {
            prop_assert!(r.edges().contains(e));
        }
        for e in r.edges().iter().filter(|e| !net.edges().contains(e)) {
            prop_assert_eq!(e.dst, exc);
        }
        prop_assert!(has_equilibrium(&r).unwrap());
    }

    #[test]
    fn solutions_scale_with_intake_and_stay_nonnegative(net in network()) {
        let small_intake = net.edges().iter().all(|e| e.src.0 != 0 || e.weight <= 50);
        if let Ok(x) = solve_equilibrium(&net) {
            prop_assert!(x.values().iter().all(|&v| v >= 0.0));
            if !small_intake {
                return Ok(());
            }
            let doubled: Vec<WeightedEdge> = net
                .edges()
                .iter()
                .map(|e| if e.src.0 == 0 { WeightedEdge::new(0, e.dst.0, 2 * e.weight) } else { *e })
                .collect();
            let d = MetabolicNetwork::new(net.n_internal(), doubled).unwrap();
            let y = solve_equilibrium(&d).unwrap();
            for (a, b) in x.values().iter().zip(y.values()) {
                prop_assert!((2.0 * a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn float_vectors_round_trip(
        v in prop::collection::vec((1.0f64..10.0, -9i32..=9, any::<bool>()), 1..20),
        digits in 3usize..=4,
    ) {
        let values: Vec<f64> = v.iter().map(|&(m, e, neg)| if neg { -m } else { m } * 10f64.powi(e)).collect();
        let seq = encode_float_vector(&values, digits).unwrap();
        let back = decode_float_vector(&seq, values.len()).unwrap();
        let want: Vec<f64> = values.iter().map(|&x| round_significant(x, digits)).collect();
        prop_assert_eq!(back, want);
        prop_assert!(decode_float_vector(&seq, values.len() + 1).is_none());
    }

    #[test]
    fn graphs_round_trip(net in network()) {
        let unit = net.edges().iter().all(|e| e.weight == 1);
        for enc in [WeightEncoding::Symbolic, WeightEncoding::Numeric, WeightEncoding::None] {
            if enc == WeightEncoding::None && !unit {
                continue;
            }
            let seq = encode_graph_with(&net, enc, DEFAULT_MAX_NODE).unwrap();
            if enc == WeightEncoding::Symbolic {
                prop_assert_eq!(seq.len(), 1 + 3 * net.edge_count());
            }
            prop_assert_eq!(decode_graph(&seq, enc).unwrap(), net.clone());
        }
    }

    #[test]
    fn split_is_a_stable_partition(nets in prop::collection::vec(network(), 1..40), seed in any::<u64>()) {
        let records: Vec<DatasetRecord> = nets
            .iter()
            .map(|n| DatasetRecord {
                input: encode_graph_with(n, WeightEncoding::Symbolic, DEFAULT_MAX_NODE).unwrap(),
                output: TokenSequence::new(),
                meta: RecordMeta {
                    n_internal: n.n_internal(),
                    edges: n.edge_count(),
                    label: false,
                    kind: GraphKind::ErdosRenyi,
                    redeemed: false,
                },
            })
            .collect();
        let (tr, te) = split(records.clone(), 0.3, seed);
        let (tr2, te2) = split(records.clone(), 0.3, seed);
        prop_assert_eq!(tr.len() + te.len(), records.len());
        prop_assert_eq!(&tr, &tr2);
        prop_assert_eq!(&te, &te2);
        for r in &te {
            prop_assert!(!tr.iter().any(|t| t.input == r.input));
        }
    }
}
