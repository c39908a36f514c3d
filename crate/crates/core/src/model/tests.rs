use super::*;
use crate::autodiff::{backward, Rng, Tape, Tensor, Var};
use crate::corpus::EmbeddingTable;
use crate::tfidf::SparseVector;
use std::collections::BTreeMap;

fn tiny(mode: FusionMode) -> ModelConfig {
    ModelConfig {
        vocab_size_semantic: 30,
        embed_dim: 8,
        hidden_per_dir: 4,
        tfidf_dim: 20,
        num_classes: 3,
        fusion_mode: mode,
        max_seq_len: 400,
        dropout_p: 0.5,
    }
}

fn random_doc(rng: &mut Rng, cfg: &ModelConfig) -> (Vec<usize>, SparseVector) {
    let n = 1 + rng.below(6);
    let ids = (0..n).map(|_| rng.below(cfg.vocab_size_semantic + 1)).collect();
    let mut entries = Vec::new();
    for j in 0..cfg.tfidf_dim {
        if rng.next_f64() < 0.3 {
            entries.push((j, rng.uniform(0.0, 1.0)));
        }
    }
    (ids, SparseVector::new(cfg.tfidf_dim, entries).unwrap())
}

fn zero(params: &mut ModelParams, id: crate::autodiff::ParamId) {
    params.get_mut(id).fill(0.0);
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn paper_config_shapes() {
    let mut cfg = ModelConfig::new(100, 5000, 4, FusionMode::Gated);
    cfg.embed_dim = 300;
    cfg.hidden_per_dir = 128;
    assert_eq!(cfg.fused_dim(), 256);
    let layout: BTreeMap<_, _> = ModelParams::layout(&cfg).into_iter().collect();
    assert_eq!(layout["stat_proj"], [256, 5000]);
    assert_eq!(layout["gate_w_h"], [256, 256]);
    assert_eq!(layout["gate_w_s"], [256, 256]);
    assert_eq!(layout["attn_v"], [256]);
    assert_eq!(layout["embedding"], [101, 300]);
    assert_eq!(layout["lstm_fwd_w_ih"], [512, 300]);
    assert_eq!(layout["out_w"], [4, 256]);
    cfg.fusion_mode = FusionMode::Concat;
    let layout: BTreeMap<_, _> = ModelParams::layout(&cfg).into_iter().collect();
    assert_eq!(layout["out_w"], [4, 512]);
}

#[test]
fn config_validation() {
    let mut c = tiny(FusionMode::Gated);
    assert!(c.validate().is_ok());
    c.num_classes = 1;
    assert!(c.validate().is_err());
    let mut c = tiny(FusionMode::Gated);
    c.hidden_per_dir = 0;
    assert!(c.validate().is_err());
    assert_eq!("tfidf_only".parse::<FusionMode>().unwrap(), FusionMode::TfidfOnly);
    assert!("mixed".parse::<FusionMode>().is_err());
}

#[test]
fn init_is_seeded() {
    let cfg = tiny(FusionMode::Gated);
    let a = init_params(&cfg, &mut Rng::new(5), None).unwrap();
    let b = init_params(&cfg, &mut Rng::new(5), None).unwrap();
    let c = init_params(&cfg, &mut Rng::new(6), None).unwrap();
    let flat = |p: &ModelParams| p.tensors().flat_map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn init_biases_and_ranges() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(1), None).unwrap();
    let h = cfg.hidden_per_dir;
    for (name, t) in p.tensors() {
        let d = t.data();
        match name {
            "lstm_fwd_b" | "lstm_bwd_b" => {
                for (i, &x) in d.iter().enumerate() {
                    assert_eq!(x, if (h..2 * h).contains(&i) { 1.0 } else { 0.0 });
                }
            }
            "attn_b" | "gate_b" | "out_b" => assert!(d.iter().all(|&x| x == 0.0)),
            "embedding" => assert!(d.iter().all(|x| x.abs() <= 0.05)),
            "stat_proj" => {
                let a = (6.0 / (20.0 + 8.0f64)).sqrt();
                assert!(d.iter().all(|x| x.abs() <= a));
            }
            _ => assert!(d.iter().any(|&x| x != 0.0)),
        }
    }
}

#[test]
fn pretrained_rows_overwrite() {
    let cfg = tiny(FusionMode::Gated);
    let mut rows = BTreeMap::new();
    rows.insert(3, vec![0.5; 8]);
    let table = EmbeddingTable {
        dim: 8,
        rows,
        unk_row: vec![0.25; 8],
    };
    let p = init_params(&cfg, &mut Rng::new(1), Some(&table)).unwrap();
    let e = p.get(p.ids().embedding);
    assert_eq!(e.row(3), &[0.5; 8]);
    assert_eq!(e.row(30), &[0.25; 8]);
    assert_ne!(e.row(2), &[0.5; 8]);

    let bad = EmbeddingTable {
        dim: 7,
        rows: BTreeMap::new(),
        unk_row: vec![0.0; 7],
    };
    assert!(matches!(
        init_params(&cfg, &mut Rng::new(1), Some(&bad)),
        Err(crate::Error::Tensor(crate::autodiff::TensorError::Shape { .. }))
    ));
}

#[test]
fn from_tensors_checks_shapes() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(1), None).unwrap();
    let tensors: Vec<Tensor> = p.tensors().map(|(_, t)| t.clone()).collect();
    let q = ModelParams::from_tensors(cfg.clone(), tensors.clone()).unwrap();
    assert_eq!(q.store().num_values(), p.store().num_values());
    let mut wrong = tensors.clone();
    wrong[2] = Tensor::zeros(&[1, 1]);
    assert!(ModelParams::from_tensors(cfg.clone(), wrong).is_err());
    assert!(ModelParams::from_tensors(cfg, tensors[..5].to_vec()).is_err());
}

#[test]
fn semantic_vocab_ranking() {
    let docs: Vec<crate::text::TokenSequence> = vec![
        vec!["b", "a", "c", "b"].into(),
        vec!["a", "b", "d"].into(),
        vec!["c", "e"].into(),
    ];
    let v = SemanticVocab::build(&docs, 2, 10);
    assert_eq!(v.len(), 3);
    assert_eq!(v.token(0), Some("b"));
    assert_eq!(v.token(1), Some("a"));
    assert_eq!(v.token(2), Some("c"));
    assert_eq!(v.encode(&vec!["a", "zzz"].into()), [1, 3]);
    let capped = SemanticVocab::build(&docs, 1, 2);
    assert_eq!(capped.len(), 2);
    let json = serde_json::to_string(&v).unwrap();
    assert_eq!(json, r#"["b","a","c"]"#);
    assert_eq!(serde_json::from_str::<SemanticVocab>(&json).unwrap(), v);
}

#[test]
fn embedding_rows_and_truncation() {
    let mut cfg = tiny(FusionMode::Gated);
    cfg.max_seq_len = 4;
    let p = init_params(&cfg, &mut Rng::new(2), None).unwrap();
    let e = p.get(p.ids().embedding).clone();
    let vocab = SemanticVocab::from(vec!["x".to_string(), "y".to_string()]);
    let mut tape = Tape::new(p.store());
    let m = embed_sequence(&mut tape, &p, &vec!["y", "q", "x"].into(), &vocab).unwrap();
    let m = tape.value(m);
    assert_eq!(m.shape(), [3, 8]);
    assert_eq!(m.row(0), e.row(1));
    // "q" is unknown; UNK is the row right after the vocabulary
    assert_eq!(m.row(1), e.row(2));
    assert_eq!(m.row(2), e.row(0));

    let long: Vec<usize> = (0..10).collect();
    let m = embed_ids(&mut tape, &p, &long).unwrap();
    assert_eq!(tape.value(m).shape(), [4, 8]);
    assert_eq!(tape.value(m).row(3), e.row(3));
    assert!(matches!(embed_ids(&mut tape, &p, &[]), Err(crate::Error::EmptyDocument { .. })));
}

/// Plain-loop LSTM used as an independent reference.
fn lstm_oracle(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, b: &Tensor, reverse: bool) -> Vec<Vec<f64>> {
    let (n, k) = x.dims2().unwrap();
    let h4 = b.len();
    let hd = h4 / 4;
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut out = vec![vec![]; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let mut pre = vec![0.0; h4];
        for (r, p) in pre.iter_mut().enumerate() {
            *p = b.data()[r];
            for j in 0..k {
                *p += w_ih.data()[r * k + j] * x.data()[t * k + j];
            }
            for j in 0..hd {
                *p += w_hh.data()[r * hd + j] * h[j];
            }
        }
        for u in 0..hd {
            let i = sig(pre[u]);
            let f = sig(pre[hd + u]);
            let g = pre[2 * hd + u].tanh();
            let o = sig(pre[3 * hd + u]);
            c[u] = f * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
        out[t] = h.clone();
    }
    out
}

#[test]
fn bilstm_matches_loop_oracle() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(3), None).unwrap();
    let ids = [4, 0, 30, 7, 7];
    let mut tape = Tape::new(p.store());
    let x = embed_ids(&mut tape, &p, &ids).unwrap();
    let ann = bilstm_encode(&mut tape, &p, x).unwrap();
    let got = tape.value(ann).clone();
    assert_eq!(got.shape(), [5, 8]);
    let xv = tape.value(x).clone();
    let f = p.ids().lstm_fwd;
    let b = p.ids().lstm_bwd;
    let fwd = lstm_oracle(&xv, p.get(f.w_ih), p.get(f.w_hh), p.get(f.bias), false);
    let bwd = lstm_oracle(&xv, p.get(b.w_ih), p.get(b.w_hh), p.get(b.bias), true);
    for i in 0..5 {
        let want: Vec<f64> = fwd[i].iter().chain(&bwd[i]).copied().collect();
        assert!(close(got.row(i), &want, 1e-12), "row {i}");
    }
}

#[test]
fn bilstm_zero_weights_give_zero() {
    let cfg = tiny(FusionMode::Gated);
    let mut p = init_params(&cfg, &mut Rng::new(3), None).unwrap();
    let ids = *p.ids();
    for l in [ids.lstm_fwd, ids.lstm_bwd] {
        zero(&mut p, l.w_ih);
        zero(&mut p, l.w_hh);
        zero(&mut p, l.bias);
    }
    let mut tape = Tape::new(p.store());
    let x = embed_ids(&mut tape, &p, &[1, 2, 3]).unwrap();
    let ann = bilstm_encode(&mut tape, &p, x).unwrap();
    assert!(tape.value(ann).data().iter().all(|&v| v == 0.0));
}

#[test]
fn bilstm_single_step_both_directions() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(4), None).unwrap();
    let mut tape = Tape::new(p.store());
    let x = embed_ids(&mut tape, &p, &[9]).unwrap();
    let ann = bilstm_encode(&mut tape, &p, x).unwrap();
    let xv = tape.value(x).clone();
    let f = p.ids().lstm_fwd;
    let b = p.ids().lstm_bwd;
    let fwd = lstm_oracle(&xv, p.get(f.w_ih), p.get(f.w_hh), p.get(f.bias), false);
    let bwd = lstm_oracle(&xv, p.get(b.w_ih), p.get(b.w_hh), p.get(b.bias), false);
    let want: Vec<f64> = fwd[0].iter().chain(&bwd[0]).copied().collect();
    assert!(close(tape.value(ann).data(), &want, 1e-12));
}

#[test]
fn attention_uniform_when_scores_equal() {
    let cfg = tiny(FusionMode::Gated);
    let mut p = init_params(&cfg, &mut Rng::new(5), None).unwrap();
    let v = p.ids().attn_v;
    zero(&mut p, v);
    let mut tape = Tape::new(p.store());
    let rows: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
    let ann = tape.constant(Tensor::matrix(3, 8, rows.clone()).unwrap()).unwrap();
    let (h, alpha) = attention_pool(&mut tape, &p, ann).unwrap();
    assert!(close(tape.value(alpha).data(), &[1.0 / 3.0; 3], 1e-15));
    let mean: Vec<f64> = (0..8).map(|j| (rows[j] + rows[8 + j] + rows[16 + j]) / 3.0).collect();
    assert!(close(tape.value(h).data(), &mean, 1e-12));
}

#[test]
fn attention_single_token() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(5), None).unwrap();
    let mut tape = Tape::new(p.store());
    let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
    let ann = tape.constant(Tensor::matrix(1, 8, row.clone()).unwrap()).unwrap();
    let (h, alpha) = attention_pool(&mut tape, &p, ann).unwrap();
    assert_eq!(tape.value(alpha).data(), &[1.0]);
    assert_eq!(tape.value(h).data(), row.as_slice());
}

#[test]
fn attention_matches_resummation() {
    let cfg = tiny(FusionMode::Gated);
    let mut rng = Rng::new(6);
    for _ in 0..20 {
        let p = init_params(&cfg, &mut rng, None).unwrap();
        let n = 1 + rng.below(6);
        let rows: Vec<f64> = (0..n * 8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut tape = Tape::new(p.store());
        let ann = tape.constant(Tensor::matrix(n, 8, rows.clone()).unwrap()).unwrap();
        let (h, alpha) = attention_pool(&mut tape, &p, ann).unwrap();
        let a = tape.value(alpha).data();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // score oracle
        let (w, b, v) = (p.get(p.ids().attn_w), p.get(p.ids().attn_b), p.get(p.ids().attn_v));
        let u: Vec<f64> = (0..n)
            .map(|i| {
                (0..8)
                    .map(|r| {
                        let pre: f64 = b.data()[r] + (0..8).map(|j| w.data()[r * 8 + j] * rows[i * 8 + j]).sum::<f64>();
                        v.data()[r] * pre.tanh()
                    })
                    .sum()
            })
            .collect();
        let mx = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = u.iter().map(|x| (x - mx).exp()).sum();
        let want_alpha: Vec<f64> = u.iter().map(|x| (x - mx).exp() / z).collect();
        assert!(close(a, &want_alpha, 1e-12));
        let want_h: Vec<f64> = (0..8).map(|j| (0..n).map(|i| a[i] * rows[i * 8 + j]).sum()).collect();
        assert!(close(tape.value(h).data(), &want_h, 1e-12));
    }
}

#[test]
fn project_stat_cases() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(7), None).unwrap();
    let w = p.get(p.ids().stat_proj).clone();
    let mut tape = Tape::new(p.store());
    let z = project_stat(&mut tape, &p, &SparseVector::zeros(20)).unwrap();
    assert!(tape.value(z).data().iter().all(|&x| x == 0.0));

    let one = SparseVector::new(20, vec![(13, 1.0)]).unwrap();
    let col = project_stat(&mut tape, &p, &one).unwrap();
    let want: Vec<f64> = (0..8).map(|r| w.data()[r * 20 + 13]).collect();
    assert_eq!(tape.value(col).data(), want.as_slice());

    let mut rng = Rng::new(8);
    for _ in 0..50 {
        let (_, s) = random_doc(&mut rng, &cfg);
        let got = project_stat(&mut tape, &p, &s).unwrap();
        let dense = s.to_dense();
        let want: Vec<f64> = (0..8)
            .map(|r| (0..20).map(|j| w.data()[r * 20 + j] * dense[j]).sum())
            .collect();
        assert!(close(tape.value(got).data(), &want, 1e-12));
    }
    assert!(project_stat(&mut tape, &p, &SparseVector::zeros(21)).is_err());
}

fn two_vectors(tape: &mut Tape<'_>) -> (Var, Var, Vec<f64>, Vec<f64>) {
    let h: Vec<f64> = (0..8).map(|i| i as f64 * 0.25 - 1.0).collect();
    let s: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
    let hv = tape.constant(Tensor::vector(h.clone())).unwrap();
    let sv = tape.constant(Tensor::vector(s.clone())).unwrap();
    (hv, sv, h, s)
}

#[test]
fn fuse_zero_gate_is_average() {
    let cfg = tiny(FusionMode::Gated);
    let mut p = init_params(&cfg, &mut Rng::new(9), None).unwrap();
    let ids = *p.ids();
    for id in [ids.gate_w_h, ids.gate_w_s, ids.gate_b] {
        zero(&mut p, id);
    }
    let mut tape = Tape::new(p.store());
    let (hv, sv, h, s) = two_vectors(&mut tape);
    let (z, g) = fuse(&mut tape, &p, Some(hv), Some(sv), None).unwrap();
    assert!(tape.value(g.unwrap()).data().iter().all(|&x| x == 0.5));
    let want: Vec<f64> = h.iter().zip(&s).map(|(a, b)| (a + b) / 2.0).collect();
    assert!(close(tape.value(z).data(), &want, 1e-15));
}

#[test]
fn fuse_gate_boundaries_are_exact() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(9), None).unwrap();
    let mut tape = Tape::new(p.store());
    let (hv, sv, h, s) = two_vectors(&mut tape);
    let (z1, _) = fuse(&mut tape, &p, Some(hv), Some(sv), Some(1.0)).unwrap();
    assert_eq!(tape.value(z1).data(), h.as_slice());
    let (z0, _) = fuse(&mut tape, &p, Some(hv), Some(sv), Some(0.0)).unwrap();
    assert_eq!(tape.value(z0).data(), s.as_slice());
}

#[test]
fn fuse_other_modes() {
    for (mode, len) in [
        (FusionMode::Concat, 16),
        (FusionMode::SemanticOnly, 8),
        (FusionMode::TfidfOnly, 8),
    ] {
        let p = init_params(&tiny(mode), &mut Rng::new(9), None).unwrap();
        let mut tape = Tape::new(p.store());
        let (hv, sv, h, s) = two_vectors(&mut tape);
        let (z, g) = fuse(&mut tape, &p, Some(hv), Some(sv), None).unwrap();
        assert!(g.is_none());
        let z = tape.value(z).data();
        assert_eq!(z.len(), len);
        match mode {
            FusionMode::Concat => {
                assert_eq!(&z[..8], h.as_slice());
                assert_eq!(&z[8..], s.as_slice());
            }
            FusionMode::SemanticOnly => assert_eq!(z, h.as_slice()),
            _ => assert_eq!(z, s.as_slice()),
        }
    }
}

#[test]
fn fuse_rejects_bad_shapes() {
    let p = init_params(&tiny(FusionMode::Gated), &mut Rng::new(9), None).unwrap();
    let mut tape = Tape::new(p.store());
    let (hv, _, _, _) = two_vectors(&mut tape);
    let short = tape.constant(Tensor::vector(vec![0.0; 5])).unwrap();
    assert!(fuse(&mut tape, &p, Some(hv), Some(short), None).is_err());
    assert!(fuse(&mut tape, &p, Some(hv), None, None).is_err());
}

#[test]
fn forward_trace_invariants() {
    let mut rng = Rng::new(10);
    for mode in FusionMode::ALL {
        let cfg = tiny(mode);
        let p = init_params(&cfg, &mut rng, None).unwrap();
        for _ in 0..20 {
            let (ids, s) = random_doc(&mut rng, &cfg);
            let input = DocInput {
                token_ids: &ids,
                tfidf: &s,
            };
            let t = forward(&p, input, ForwardOptions::inference(), &mut Rng::new(0)).unwrap();
            assert!((t.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(t.probs.iter().all(|&x| x > 0.0));
            if mode.uses_semantic() {
                assert_eq!(t.alpha.len(), ids.len());
                assert!((t.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            } else {
                assert!(t.alpha.is_empty());
            }
            match &t.gate {
                Some(g) => assert!(g.iter().all(|&x| x > 0.0 && x < 1.0)),
                None => assert_ne!(mode, FusionMode::Gated),
            }
            let again = forward(&p, input, ForwardOptions::inference(), &mut Rng::new(99)).unwrap();
            assert_eq!(t, again);
        }
    }
}

#[test]
fn training_forward_uses_dropout() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(11), None).unwrap();
    let (ids, s) = random_doc(&mut Rng::new(12), &cfg);
    let input = DocInput {
        token_ids: &ids,
        tfidf: &s,
    };
    let a = forward(&p, input, ForwardOptions::training(), &mut Rng::new(1)).unwrap();
    let b = forward(&p, input, ForwardOptions::training(), &mut Rng::new(1)).unwrap();
    let c = forward(&p, input, ForwardOptions::training(), &mut Rng::new(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.logits, c.logits);
}

#[test]
fn forced_gate_matches_semantic_only() {
    let gated = init_params(&tiny(FusionMode::Gated), &mut Rng::new(13), None).unwrap();
    let tensors: Vec<Tensor> = gated.tensors().map(|(_, t)| t.clone()).collect();
    let sem = ModelParams::from_tensors(tiny(FusionMode::SemanticOnly), tensors).unwrap();
    let mut rng = Rng::new(14);
    for _ in 0..30 {
        let (ids, s) = random_doc(&mut rng, gated.config());
        let input = DocInput {
            token_ids: &ids,
            tfidf: &s,
        };
        let forced = ForwardOptions {
            training: false,
            gate_override: Some(1.0),
        };
        let a = forward(&gated, input, forced, &mut Rng::new(0)).unwrap();
        let b = forward(&sem, input, ForwardOptions::inference(), &mut Rng::new(0)).unwrap();
        assert!(close(&a.logits, &b.logits, 1e-9));
    }
}

#[test]
fn empty_document_handling() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(15), None).unwrap();
    let s = SparseVector::zeros(20);
    let input = DocInput {
        token_ids: &[],
        tfidf: &s,
    };
    let t = forward(&p, input, ForwardOptions::inference(), &mut Rng::new(0)).unwrap();
    assert_eq!(t.logits, p.get(p.ids().out_b).data());
    assert!(t.alpha.is_empty() && t.gate.is_none());
    assert!(matches!(
        forward(&p, input, ForwardOptions::training(), &mut Rng::new(0)),
        Err(crate::Error::EmptyDocument { .. })
    ));
}

#[test]
fn tfidf_permutation_leaves_logits_unchanged() {
    let cfg = tiny(FusionMode::Gated);
    let p = init_params(&cfg, &mut Rng::new(16), None).unwrap();
    let mut perm: Vec<usize> = (0..20).collect();
    let mut rng = Rng::new(17);
    rng.shuffle(&mut perm);
    // column j of the original lands at column perm[j]
    let mut q = p.clone();
    let w = p.get(p.ids().stat_proj).clone();
    let id = q.ids().stat_proj;
    let wq = q.get_mut(id).data_mut();
    for r in 0..8 {
        for j in 0..20 {
            wq[r * 20 + perm[j]] = w.data()[r * 20 + j];
        }
    }
    for _ in 0..20 {
        let (ids, s) = random_doc(&mut rng, &cfg);
        let mut moved: Vec<(usize, f64)> = s.entries().iter().map(|&(j, v)| (perm[j], v)).collect();
        moved.sort_by_key(|e| e.0);
        let s2 = SparseVector::new(20, moved).unwrap();
        let a = forward(&p, DocInput { token_ids: &ids, tfidf: &s }, ForwardOptions::inference(), &mut Rng::new(0)).unwrap();
        let b = forward(&q, DocInput { token_ids: &ids, tfidf: &s2 }, ForwardOptions::inference(), &mut Rng::new(0)).unwrap();
        assert!(close(&a.logits, &b.logits, 1e-9));
    }
}

#[test]
fn model_gradient_matches_finite_differences() {
    let mut rng = Rng::new(18);
    for mode in FusionMode::ALL {
        let cfg = tiny(mode);
        let mut p = init_params(&cfg, &mut rng, None).unwrap();
        let (ids, s) = random_doc(&mut rng, &cfg);
        let label = rng.below(3);
        let loss_of = |p: &ModelParams| {
            let mut tape = Tape::new(p.store());
            let input = DocInput { token_ids: &ids, tfidf: &s };
            let out = forward_on_tape(&mut tape, p, input, ForwardOptions::inference(), &mut Rng::new(0)).unwrap();
            let (loss, _) = tape.softmax_cross_entropy(out.logits, label).unwrap();
            (tape.scalar(loss), backward(&tape, loss).unwrap())
        };
        let (_, grads) = loss_of(&p);
        let all: Vec<_> = p.store().ids().collect();
        for id in all {
            let n = p.get(id).len();
            // a handful of coordinates per tensor keeps this quick
            for c in (0..n).step_by(1 + n / 7) {
                let orig = p.get(id).data()[c];
                p.get_mut(id).data_mut()[c] = orig + 1e-4;
                let plus = loss_of(&p).0;
                p.get_mut(id).data_mut()[c] = orig - 1e-4;
                let minus = loss_of(&p).0;
                p.get_mut(id).data_mut()[c] = orig;
                let fd = (plus - minus) / 2e-4;
                let an = grads.get(id).data()[c];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "{mode} {} [{c}]: {an} vs {fd}", p.store().name(id));
            }
        }
    }
}
