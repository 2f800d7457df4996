mod common;

use std::io::Write;

use proptest::prelude::*;
use todyformer::graph::{
    chronological_split, load_edge_stream, sample_negatives, write_edge_stream, Edge, EventGraph, RawEdge,
    DEFAULT_RATIOS, NO_LABEL,
};
use todyformer::stream::{extract_window, patchify, sample_neighborhood, SamplingMode};
use todyformer::Error;

fn csv_file(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

#[test]
fn three_row_csv() {
    let f = csv_file("src,dst,timestamp\n0,1,1.0\n1,2,2.0\n0,2,3.0\n");
    let g = load_edge_stream(f.path(), false).unwrap();
    assert_eq!((g.num_nodes(), g.num_edges()), (3, 3));
    let idx: Vec<usize> = g.edges().iter().map(|e| e.global_idx).collect();
    assert_eq!(idx, vec![0, 1, 2]);
    assert!(g.edges().iter().all(|e| e.label == NO_LABEL));
    assert_eq!(g.edge_dim(), 0);
}

#[test]
fn out_of_order_rows_are_sorted() {
    let f = csv_file("src,dst,timestamp,label,f1\n5,6,3.0,1,0.5\n7,8,1.0,0,0.25\n");
    let g = load_edge_stream(f.path(), true).unwrap();
    assert_eq!(g.edge(0).t, 1.0);
    assert_eq!(g.edge(1).t, 3.0);
    assert_eq!(g.edge(0).global_idx, 0);
    assert_eq!(g.original_id(g.edge(0).src), 7);
    assert_eq!(g.edge_feat(0), &[0.25]);
    assert_eq!(g.edge(1).label, 1);
    assert!(g.has_labels());
}

#[test]
fn timestamp_ties_keep_file_order() {
    let f = csv_file("src,dst,timestamp\n3,4,1.0\n1,2,1.0\n5,6,0.5\n");
    let g = load_edge_stream(f.path(), false).unwrap();
    let src: Vec<u64> = g.edges().iter().map(|e| g.original_id(e.src)).collect();
    assert_eq!(src, vec![5, 3, 1]);
}

#[test]
fn malformed_row_reports_line() {
    let f = csv_file("src,dst,timestamp\n0,1,1.0\n0,x,2.0\n");
    match load_edge_stream(f.path(), false).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn feature_arity_mismatch_is_schema_error() {
    let f = csv_file("src,dst,timestamp,label,f1,f2\n0,1,1.0,-1,0,0\n0,1,2.0,-1,0\n");
    let err = load_edge_stream(f.path(), false).unwrap_err();
    assert!(matches!(err, Error::Schema { line: 3, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn empty_file_is_empty_dataset() {
    let f = csv_file("src,dst,timestamp\n");
    assert!(matches!(load_edge_stream(f.path(), false).unwrap_err(), Error::EmptyDataset(_)));
}

#[test]
fn labels_requested_without_column() {
    let f = csv_file("src,dst,timestamp\n0,1,1.0\n");
    assert!(matches!(load_edge_stream(f.path(), true).unwrap_err(), Error::Schema { .. }));
}

#[test]
fn write_then_load_roundtrips() {
    let rows = (0..30)
        .map(|i| RawEdge {
            src: i % 4 + 10,
            dst: i % 5 + 20,
            t: i as f64 * 0.5,
            label: (i % 3) as i64 - 1,
            feat: vec![i as f64, -(i as f64) / 8.0],
        })
        .collect();
    let g = EventGraph::from_raw(rows, true).unwrap();
    let mut buf = Vec::new();
    write_edge_stream(&g, &mut buf).unwrap();
    let f = csv_file(std::str::from_utf8(&buf).unwrap());
    let h = load_edge_stream(f.path(), true).unwrap();
    assert_eq!(g.edges(), h.edges());
    for i in 0..g.num_edges() {
        assert_eq!(g.edge_feat(i), h.edge_feat(i));
    }
}

#[test]
fn negatives_have_the_requested_shape() {
    let g = random_graph(200, 10, 1);
    let batch: Vec<Edge> = g.edges()[..100].to_vec();
    let negs = sample_negatives(&batch, &g, 1, 3).unwrap();
    assert_eq!(negs.len(), 100);
    assert!(negs.iter().all(|n| n.len() == 1));
    assert_eq!(negs, sample_negatives(&batch, &g, 1, 3).unwrap());
}

#[test]
fn negatives_are_uniform_over_the_other_nodes() {
    let g = random_graph(50, 10, 2);
    let mut e = g.edge(0).clone();
    e.dst = 4;
    let batch = vec![e; 1000];
    let mut counts = [0u32; 10];
    let draws = 100_000usize;
    for s in 0..(draws / 1000) as u64 {
        for n in sample_negatives(&batch, &g, 1, s).unwrap() {
            counts[n[0]] += 1;
        }
    }
    assert_eq!(counts[4], 0);
    let p = 1.0 / 9.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    let mut chi2 = 0.0;
    for (v, &c) in counts.iter().enumerate() {
        if v == 4 {
            continue;
        }
        let expect = draws as f64 * p;
        assert!((c as f64 - expect).abs() < 3.0 * sigma, "node {v}: {c}");
        chi2 += (c as f64 - expect).powi(2) / expect;
    }
    // 8 degrees of freedom; 26.12 is the 0.999 quantile.
    assert!(chi2 < 26.12, "chi2 = {chi2}");
}

#[test]
fn uniform_sampling_frequency() {
    let rows = (0..4)
        .map(|i| RawEdge {
            src: 0,
            dst: i + 1,
            t: i as f64,
            label: NO_LABEL,
            feat: vec![],
        })
        .collect();
    let g = EventGraph::from_raw(rows, false).unwrap();
    let trials = 10_000u64;
    let mut counts = [0u32; 4];
    for seed in 0..trials {
        let s = sample_neighborhood(&g, 0..4, &[0], &[1], SamplingMode::Uniform, seed).unwrap();
        assert_eq!(s.hops[0].len(), 1);
        counts[s.hops[0][0]] += 1;
    }
    let sigma = (0.25 * 0.75 / trials as f64).sqrt();
    for c in counts {
        let f = c as f64 / trials as f64;
        assert!((f - 0.25).abs() < 3.0 * sigma, "frequency {f}");
    }
}

fn random_graph(e: usize, n: u64, seed: u64) -> EventGraph {
    let t = common::rand_tensor(&[e, 3], seed);
    let d = t.data();
    let rows = (0..e)
        .map(|i| {
            let s = ((d[3 * i] + 1.0) * 0.5 * n as f64) as u64 % n;
            let mut dd = ((d[3 * i + 1] + 1.0) * 0.5 * n as f64) as u64 % n;
            if dd == s {
                dd = (dd + 1) % n;
            }
            RawEdge {
                src: s,
                dst: dd,
                // Coarse timestamps so ties occur.
                t: ((d[3 * i + 2] + 1.0) * 10.0).floor(),
                label: NO_LABEL,
                feat: vec![],
            }
        })
        .collect();
    let g = EventGraph::from_raw(rows, false).unwrap();
    // Every id in 0..n must appear for the sampler tests.
    assert!(g.num_nodes() <= n as usize);
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loaded_edges_are_time_sorted(e in 1usize..200, seed in any::<u64>()) {
        let g = random_graph(e, 12, seed);
        for w in g.edges().windows(2) {
            prop_assert!(w[0].t <= w[1].t);
        }
        for (i, edge) in g.edges().iter().enumerate() {
            prop_assert_eq!(edge.global_idx, i);
        }
    }

    #[test]
    fn split_partitions_the_stream(e in 3usize..500, seed in any::<u64>()) {
        let g = random_graph(e, 12, seed);
        let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
        let (a, b, c) = (
            s.range(todyformer::graph::Part::Train),
            s.range(todyformer::graph::Part::Val),
            s.range(todyformer::graph::Part::Test),
        );
        prop_assert_eq!(a.start, 0);
        prop_assert_eq!(a.end, b.start);
        prop_assert_eq!(b.end, c.start);
        prop_assert_eq!(c.end, e);
        prop_assert_eq!(a.len(), (0.7 * e as f64 + 1e-9).floor() as usize);
        prop_assert_eq!(b.len(), (0.15 * e as f64 + 1e-9).floor() as usize);
    }

    #[test]
    fn patches_reproduce_the_window(
        e in 1usize..300,
        w in 1usize..300,
        m in 1usize..40,
        seed in any::<u64>(),
    ) {
        let g = random_graph(e, 15, seed);
        let win = extract_window(&g, e, w).unwrap();
        let len = win.len();
        prop_assume!(m <= len);
        let p = patchify(win, m).unwrap();
        let mut all = Vec::new();
        for k in 0..m {
            all.extend(p.patch(k));
        }
        prop_assert_eq!(all, (e.saturating_sub(w)..e).collect::<Vec<_>>());
        let sizes = p.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for k in 0..m - 1 {
            let max_t = p.patch(k).map(|i| g.edge(i).t).fold(f64::MIN, f64::max);
            let min_t = p.patch(k + 1).map(|i| g.edge(i).t).fold(f64::MAX, f64::min);
            prop_assert!(max_t <= min_t);
        }
    }

    #[test]
    fn sampling_stays_inside_the_patch(
        e in 10usize..200,
        m in 1usize..6,
        f1 in 1usize..8,
        seed in any::<u64>(),
        last in any::<bool>(),
    ) {
        let g = random_graph(e, 9, seed);
        let p = patchify(extract_window(&g, e, e).unwrap(), m).unwrap();
        let mode = if last { SamplingMode::Last } else { SamplingMode::Uniform };
        for k in 0..m {
            let r = p.patch(k);
            let anchors = [g.edge(r.start).src];
            let s = sample_neighborhood(&g, r.clone(), &anchors, &[f1, 2, 1], mode, seed).unwrap();
            prop_assert_eq!(&s, &sample_neighborhood(&g, r.clone(), &anchors, &[f1, 2, 1], mode, seed).unwrap());
            let mut seen: std::collections::BTreeSet<usize> = anchors.iter().copied().collect();
            let mut frontier = seen.clone();
            for (h, hop) in s.hops.iter().enumerate() {
                let cap = [f1, 2, 1][h];
                let mut solo = std::collections::BTreeMap::<usize, usize>::new();
                let mut next = std::collections::BTreeSet::new();
                for &i in hop {
                    prop_assert!(r.contains(&i));
                    let ed = g.edge(i);
                    let ends: Vec<usize> = [ed.src, ed.dst].into_iter().filter(|v| frontier.contains(v)).collect();
                    prop_assert!(!ends.is_empty(), "hop {} edge {} misses the frontier", h, i);
                    if ends.len() == 1 || ed.src == ed.dst {
                        *solo.entry(ends[0]).or_default() += 1;
                    }
                    for v in [ed.src, ed.dst] {
                        if seen.insert(v) {
                            next.insert(v);
                        }
                    }
                }
                prop_assert!(hop.len() <= frontier.len() * cap);
                prop_assert!(solo.values().all(|&c| c <= cap));
                frontier = next;
            }
        }
    }
}
