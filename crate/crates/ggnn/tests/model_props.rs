mod common;

use bytetr_core::vsg::{EncodedGraph, Vocab};
use bytetr_ggnn::model::initial_states;
use bytetr_ggnn::tensor::Tensor;
use bytetr_ggnn::{
    forward, init_params, loss, loss_and_grad, predict, train_step, Adam, AdamConfig, Aggregation,
    Checkpoint, EdgeWeighting, GgnnConfig, GgnnError,
};
use common::*;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn permutation_invariance() {
    for agg in [Aggregation::Sum, Aggregation::Mean, Aggregation::Max] {
        for s in 0..100u64 {
            let cfg = small_cfg(8, agg, s);
            let p = init_params(&cfg, TOKENS, KINDS).unwrap();
            let g = random_graph(s, 12, cfg.num_classes);
            let perm = random_perm(s + 1, g.nodes.len());
            let a = forward(&p, &cfg, &g).unwrap();
            let b = forward(&p, &cfg, &permute(&g, &perm)).unwrap();
            assert!(max_diff(&a.logits, &b.logits) <= 1e-10, "{agg} seed {s}");
            // node states move with their nodes
            for (i, &pi) in perm.iter().enumerate() {
                let d = cfg.hidden;
                assert!(
                    max_diff(
                        &a.states[i * d..(i + 1) * d],
                        &b.states[pi * d..(pi + 1) * d]
                    ) <= 1e-10
                );
            }
            assert_eq!(
                predict(&p, &cfg, &g).unwrap().0,
                predict(&p, &cfg, &permute(&g, &perm)).unwrap().0
            );
        }
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn one_gru_step_by_hand() {
    let cfg = GgnnConfig {
        d_in: 2,
        hidden: 2,
        steps: 1,
        aggregation: Aggregation::Sum,
        mlp_hidden: 2,
        num_classes: 2,
        edge_weighting: EdgeWeighting::Scalar,
        seed: 0,
    };
    let mut p = init_params(&cfg, 2, 1).unwrap();
    let t = |shape: &[usize], v: &[f64]| Tensor {
        shape: shape.to_vec(),
        data: v.to_vec(),
    };
    p.embedding = t(&[2, 2], &[0.5, -0.25, 1.0, 0.75]);
    p.theta = t(&[2, 2], &[0.3, -0.2, 0.1, 0.4]);
    p.edge = t(&[1, 1], &[1.5]);
    p.wz = t(&[2, 4], &[0.1, 0.2, -0.3, 0.4, -0.5, 0.6, 0.7, -0.8]);
    p.bz = t(&[2], &[0.05, -0.05]);
    p.wr = t(&[2, 4], &[0.2, -0.1, 0.3, 0.1, 0.4, 0.2, -0.6, 0.5]);
    p.br = t(&[2], &[-0.1, 0.2]);
    p.wn = t(&[2, 4], &[-0.3, 0.5, 0.2, -0.4, 0.6, -0.1, 0.3, 0.2]);
    p.bn = t(&[2], &[0.1, 0.0]);
    p.w1 = t(&[2, 2], &[1.0, -1.0, 0.5, 0.5]);
    p.b1 = t(&[2], &[0.0, 0.1]);
    p.w2 = t(&[2, 2], &[1.0, 2.0, -1.0, 0.5]);
    p.b2 = t(&[2], &[0.0, -0.2]);
    let g = EncodedGraph {
        nodes: vec![0, 1],
        edges: vec![(0, 1, 0)],
        roots: vec![0],
        label: Some(1),
    };

    // node 0 has no in-edges; node 1 receives 1.5 * Θ h0
    let h = [[0.5, -0.25], [1.0, 0.75]];
    let th0 = [0.3 * 0.5 + -0.2 * -0.25, 0.1 * 0.5 + 0.4 * -0.25];
    let m = [[0.0, 0.0], [1.5 * th0[0], 1.5 * th0[1]]];
    let w = |mat: &[f64], row: usize, a: [f64; 2], b: [f64; 2]| {
        mat[row * 4] * a[0]
            + mat[row * 4 + 1] * a[1]
            + mat[row * 4 + 2] * b[0]
            + mat[row * 4 + 3] * b[1]
    };
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        let z = [
            sig(w(&p.wz.data, 0, m[i], h[i]) + 0.05),
            sig(w(&p.wz.data, 1, m[i], h[i]) - 0.05),
        ];
        let r = [
            sig(w(&p.wr.data, 0, m[i], h[i]) - 0.1),
            sig(w(&p.wr.data, 1, m[i], h[i]) + 0.2),
        ];
        let rh = [r[0] * h[i][0], r[1] * h[i][1]];
        let n = [
            (w(&p.wn.data, 0, m[i], rh) + 0.1).tanh(),
            w(&p.wn.data, 1, m[i], rh).tanh(),
        ];
        for c in 0..2 {
            out[i][c] = (1.0 - z[c]) * h[i][c] + z[c] * n[c];
        }
    }
    let hg = [out[0][0] + out[1][0], out[0][1] + out[1][1]];
    let a = [
        (hg[0] - hg[1]).tanh(),
        (0.5 * hg[0] + 0.5 * hg[1] + 0.1).tanh(),
    ];
    let logits = [a[0] + 2.0 * a[1], -a[0] + 0.5 * a[1] - 0.2];

    let f = forward(&p, &cfg, &g).unwrap();
    assert!(max_diff(&f.states, &[out[0][0], out[0][1], out[1][0], out[1][1]]) < 1e-14);
    assert!(max_diff(&f.logits, &logits) < 1e-14);
}

#[test]
fn isolated_node_gets_no_message() {
    let cfg = small_cfg(4, Aggregation::Sum, 2);
    let p = init_params(&cfg, TOKENS, KINDS).unwrap();
    let lone = EncodedGraph {
        nodes: vec![3],
        edges: vec![],
        roots: vec![0],
        label: Some(0),
    };
    // a self-loop of a kind whose weight is zero contributes nothing either
    let mut q = p.clone();
    q.edge.data[2] = 0.0;
    let looped = EncodedGraph {
        edges: vec![(0, 0, 2)],
        ..lone.clone()
    };
    assert_eq!(
        forward(&p, &cfg, &lone).unwrap().logits,
        forward(&q, &cfg, &looped).unwrap().logits
    );
}

#[test]
fn uniform_logits_give_log_c() {
    for c in [2usize, 6, 59] {
        let l = loss(&vec![0.37; c], 1).unwrap();
        assert!((l - (c as f64).ln()).abs() < 1e-12);
        let mut cfg = small_cfg(6, Aggregation::Sum, 0);
        cfg.num_classes = c;
        let mut p = init_params(&cfg, TOKENS, KINDS).unwrap();
        p.w2.data.iter_mut().for_each(|v| *v = 0.0);
        let g = EncodedGraph {
            label: Some(0),
            ..random_graph(4, 8, c)
        };
        let (got, _) = loss_and_grad(&p, &cfg, &[&g]).unwrap();
        assert!((got - (c as f64).ln()).abs() / (c as f64).ln() < 0.05);
    }
    assert!(loss(&[20.0, -20.0], 0).unwrap() < 1e-15);
    assert!(matches!(
        loss(&[0.0, 0.0], 2),
        Err(GgnnError::InvalidLabel(2))
    ));
}

#[test]
fn batch_duplication_leaves_gradients_unchanged() {
    let cfg = small_cfg(8, Aggregation::Sum, 5);
    let p = init_params(&cfg, TOKENS, KINDS).unwrap();
    let a = random_graph(1, 10, cfg.num_classes);
    let b = random_graph(2, 10, cfg.num_classes);
    let (l1, g1) = loss_and_grad(&p, &cfg, &[&a, &b]).unwrap();
    let (l2, g2) = loss_and_grad(&p, &cfg, &[&a, &b, &a, &b]).unwrap();
    assert!((l1 - l2).abs() <= 1e-12);
    for ((name, x), (_, y)) in g1.tensors().into_iter().zip(g2.tensors()) {
        assert!(max_diff(&x.data, &y.data) <= 1e-12, "{name}");
    }
    let la = loss_and_grad(&p, &cfg, &[&a]).unwrap().0;
    let lb = loss_and_grad(&p, &cfg, &[&b]).unwrap().0;
    assert!((l1 - (la + lb) / 2.0).abs() <= 1e-12);
}

#[test]
fn unused_tokens_and_kinds_get_zero_gradient() {
    let cfg = small_cfg(8, Aggregation::Mean, 6);
    let p = init_params(&cfg, TOKENS, KINDS).unwrap();
    let g = EncodedGraph {
        nodes: vec![1, 4, 4, 2],
        edges: vec![(0, 1, 0), (1, 2, 3), (3, 2, 0)],
        roots: vec![0],
        label: Some(2),
    };
    let (_, grads) = loss_and_grad(&p, &cfg, &[&g]).unwrap();
    for tok in 0..TOKENS {
        let used = g.nodes.contains(&tok);
        let zero = grads.embedding.row(tok).iter().all(|v| *v == 0.0);
        assert_eq!(zero, !used, "token {tok}");
    }
    assert_eq!(grads.edge.data[1], 0.0);
    assert_eq!(grads.edge.data[2], 0.0);
    assert_ne!(grads.edge.data[0], 0.0);
}

#[test]
fn zeroed_edge_kind_is_ignored() {
    for s in 0..20u64 {
        let cfg = small_cfg(8, Aggregation::Sum, s);
        let mut p = init_params(&cfg, TOKENS, KINDS).unwrap();
        let k = (s % KINDS as u64) as usize;
        p.edge.data[k] = 0.0;
        let g = random_graph(s + 40, 10, cfg.num_classes);
        let stripped = EncodedGraph {
            edges: g.edges.iter().copied().filter(|e| e.2 != k).collect(),
            ..g.clone()
        };
        assert_eq!(
            forward(&p, &cfg, &g).unwrap().logits,
            forward(&p, &cfg, &stripped).unwrap().logits
        );
    }
}

#[test]
fn initial_states_are_zero_padded() {
    let cfg = GgnnConfig {
        d_in: 3,
        ..small_cfg(8, Aggregation::Sum, 1)
    };
    let p = init_params(&cfg, TOKENS, KINDS).unwrap();
    let g = random_graph(9, 6, cfg.num_classes);
    let h = initial_states(&p, &cfg, &g);
    for (i, &tok) in g.nodes.iter().enumerate() {
        assert_eq!(&h[i * 8..i * 8 + 3], p.embedding.row(tok));
        assert!(h[i * 8 + 3..(i + 1) * 8].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn initialization() {
    let cfg = small_cfg(8, Aggregation::Sum, 11);
    let a = init_params(&cfg, TOKENS, KINDS).unwrap();
    assert_eq!(a, init_params(&cfg, TOKENS, KINDS).unwrap());
    assert_ne!(
        a.theta,
        init_params(
            &GgnnConfig {
                seed: 12,
                ..cfg.clone()
            },
            TOKENS,
            KINDS
        )
        .unwrap()
        .theta
    );
    for (name, t) in a.tensors() {
        assert!(t.all_finite());
        if t.shape.len() == 2 && name != "edge" {
            let bound = (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt();
            assert!(t.max_abs() <= bound, "{name}");
        }
    }
    assert!(a.edge.data.iter().all(|v| *v == 1.0));
    assert!(a.bz.data.iter().all(|v| *v == 0.0));
    assert!(init_params(
        &GgnnConfig {
            d_in: 9,
            ..cfg.clone()
        },
        TOKENS,
        KINDS
    )
    .is_err());
    assert!(init_params(
        &GgnnConfig {
            steps: 0,
            ..cfg.clone()
        },
        TOKENS,
        KINDS
    )
    .is_err());
    assert!(init_params(
        &GgnnConfig {
            num_classes: 1,
            ..cfg
        },
        TOKENS,
        KINDS
    )
    .is_err());
}

#[test]
fn probabilities_sum_to_one() {
    let cfg = small_cfg(8, Aggregation::Max, 3);
    let p = init_params(&cfg, TOKENS, KINDS).unwrap();
    for s in 0..20 {
        let (best, probs) = predict(&p, &cfg, &random_graph(s, 10, cfg.num_classes)).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(probs.iter().all(|q| *q <= probs[best]));
    }
}

#[test]
fn out_of_range_indices_are_rejected() {
    let cfg = small_cfg(4, Aggregation::Sum, 0);
    let p = init_params(&cfg, TOKENS, KINDS).unwrap();
    let bad_tok = EncodedGraph {
        nodes: vec![TOKENS],
        edges: vec![],
        roots: vec![0],
        label: None,
    };
    assert!(matches!(
        forward(&p, &cfg, &bad_tok),
        Err(GgnnError::OutOfRange(_))
    ));
    let bad_edge = EncodedGraph {
        nodes: vec![0],
        edges: vec![(0, 1, 0)],
        roots: vec![0],
        label: None,
    };
    assert!(forward(&p, &cfg, &bad_edge).is_err());
}

#[test]
fn a_small_step_reduces_the_loss() {
    let cfg = small_cfg(8, Aggregation::Sum, 7);
    let mut p = init_params(&cfg, TOKENS, KINDS).unwrap();
    let g = random_graph(77, 8, cfg.num_classes);
    let before = loss_and_grad(&p, &cfg, &[&g]).unwrap().0;
    let mut opt = Adam::new(
        AdamConfig {
            lr: 1e-4,
            ..AdamConfig::default()
        },
        &p,
    );
    let reported = train_step(&mut p, &cfg, &mut opt, &[&g]).unwrap();
    assert_eq!(reported, before);
    assert!(loss_and_grad(&p, &cfg, &[&g]).unwrap().0 < before);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let cfg = small_cfg(8, Aggregation::Sum, 8);
        let mut p = init_params(&cfg, TOKENS, KINDS).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let graphs: Vec<EncodedGraph> = (0..6)
            .map(|s| random_graph(s, 8, cfg.num_classes))
            .collect();
        let refs: Vec<&EncodedGraph> = graphs.iter().collect();
        (0..10)
            .map(|_| train_step(&mut p, &cfg, &mut opt, &refs).unwrap())
            .collect::<Vec<f64>>()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.last().unwrap() < a.first().unwrap());
}

fn tiny_vocab(extra: &str) -> Vocab {
    let text = format!(
        r#"{{"tokens":["<PAD>","<UNK>","<CONST>","<LOC>","+","RAX","assign","@64","{extra}"],
            "edge_kinds":["ast_child:0","ast_child:1","assign","def_use"],"min_freq":2,"whitelist":[0]}}"#
    );
    Vocab::from_json(&text).unwrap()
}

#[test]
fn checkpoints_roundtrip_and_check_the_vocabulary() {
    let cfg = small_cfg(4, Aggregation::Sum, 9);
    let vocab = tiny_vocab("RDI");
    let mut p = init_params(&cfg, vocab.len(), vocab.edge_kinds.len()).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &p);
    let g = random_graph(5, 6, cfg.num_classes);
    train_step(&mut p, &cfg, &mut opt, &[&g]).unwrap();

    let ck = Checkpoint::new(cfg.clone(), &vocab, p.clone(), Some(opt.clone()), 1);
    let text = ck.to_json();
    let back = Checkpoint::load_for(&text, &vocab).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_json(), text);
    assert_eq!(back.optimizer.unwrap(), opt);

    let other = tiny_vocab("RSI");
    assert!(matches!(
        Checkpoint::load_for(&text, &other),
        Err(GgnnError::VocabMismatch { .. })
    ));
    let tampered = text.replacen(&ck.vocab_hash, &"0".repeat(64), 1);
    assert!(Checkpoint::from_json(&tampered).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn relabeling_nodes_does_not_change_logits(seed in any::<u64>(), agg in 0usize..3) {
            let agg = [Aggregation::Sum, Aggregation::Mean, Aggregation::Max][agg];
            let cfg = small_cfg(6, agg, seed);
            let p = init_params(&cfg, TOKENS, KINDS).unwrap();
            let g = random_graph(seed, 12, cfg.num_classes);
            let perm = random_perm(seed ^ 1, g.nodes.len());
            let a = forward(&p, &cfg, &g).unwrap();
            let b = forward(&p, &cfg, &permute(&g, &perm)).unwrap();
            prop_assert!(max_diff(&a.logits, &b.logits) <= 1e-10);
        }

        #[test]
        fn states_and_gradients_stay_finite(seed in any::<u64>()) {
            let cfg = small_cfg(8, Aggregation::Sum, seed);
            let p = init_params(&cfg, TOKENS, KINDS).unwrap();
            let g = random_graph(seed, 12, cfg.num_classes);
            let f = forward(&p, &cfg, &g).unwrap();
            prop_assert!(f.states.iter().all(|v| v.is_finite()));
            let (l, grads) = loss_and_grad(&p, &cfg, &[&g]).unwrap();
            prop_assert!(l.is_finite() && grads.all_finite());
        }
    }
}
