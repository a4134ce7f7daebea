use super::*;
use crate::autodiff::Grads;

fn small(layers: usize, heads: usize, seed: u64) -> EncoderState {
    EncoderState::new(EncoderConfig {
        n_layers: layers,
        n_heads: heads,
        hidden_dim: 8,
        ffn_dim: Some(16),
        max_positions: 16,
        vocab_size: 12,
        init_std: 0.5,
        seed,
    })
    .unwrap()
}

fn vocab() -> Vocab {
    Vocab::from_tokens(["a", "b", "c", "d", "e", "f", "g", "h"]).unwrap()
}

fn strs(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn tokenize_truncates_pads_and_maps_unknown() {
    let v = vocab();
    let long: Vec<String> = (0..100).map(|i| format!("t{i}")).collect();
    let s = tokenize(&v, &long, 80);
    assert_eq!(s.len(), 80);
    assert!(s.mask.iter().all(|&m| m));
    let s = tokenize(&v, &strs("a zzz b"), 5);
    assert_eq!(s.ids, vec![4, UNK, 5, PAD, PAD]);
    assert_eq!(s.mask, vec![true, true, true, false, false]);
    let e = tokenize::<String>(&v, &[], 4);
    assert_eq!(e.ids, vec![PAD; 4]);
    assert!(e.active().is_empty());
}

#[test]
fn first_tokens_are_kept() {
    let v = vocab();
    let s = tokenize(&v, &strs("a b c d e"), 3);
    assert_eq!(s.ids, vec![4, 5, 6]);
}

#[test]
fn encode_is_deterministic_and_shaped() {
    let st = small(2, 1, 3);
    let seq = tokenize(&vocab(), &strs("a"), 1);
    let h1 = st.encode(&seq).unwrap();
    let h2 = st.encode(&seq).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(h1.n_blocks(), 2);
    for l in &h1.layers {
        assert_eq!(l.shape(), (1, 8));
        assert!(l.is_finite());
    }
}

#[test]
fn padding_does_not_change_real_positions() {
    for heads in [1, 2] {
        let st = small(3, heads, 4);
        let v = vocab();
        let short = tokenize(&v, &strs("a b c"), 3);
        let mut padded = tokenize(&v, &strs("a b c"), 9);
        let h_short = st.encode(&short).unwrap();
        let h_pad = st.encode(&padded).unwrap();
        // different content in the pad region
        padded.ids[5] = 9;
        padded.ids[7] = 2;
        let h_pad2 = st.encode(&padded).unwrap();
        for l in 0..=3 {
            for r in 0..3 {
                assert_eq!(h_short.layers[l].row(r), h_pad.layers[l].row(r));
                assert_eq!(h_pad.layers[l].row(r), h_pad2.layers[l].row(r));
            }
        }
        // the trimmed fast path agrees with the masked full computation
        assert_eq!(st.pooled(&padded).unwrap(), pool(h_pad.top(), &padded.mask));
    }
}

#[test]
fn pool_cases() {
    let h = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    assert_eq!(pool(&h, &[true, true]), vec![0.5, 0.5]);
    assert_eq!(pool(&h, &[true, false]), vec![1.0, 0.0]);
    assert_eq!(pool(&h, &[false, false]), vec![0.0, 0.0]);
    let dup = Mat::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    assert_eq!(pool(&dup, &[true; 4]), pool(&h, &[true; 2]));
}

#[test]
fn empty_sequence_pools_to_zero() {
    let st = small(2, 1, 0);
    let seq = tokenize::<String>(&vocab(), &[], 5);
    assert_eq!(st.pooled(&seq).unwrap(), vec![0.0; 8]);
    assert_eq!(pool(st.encode(&seq).unwrap().top(), &seq.mask), vec![0.0; 8]);
}

#[test]
fn representations_compose_pools() {
    let st = small(2, 1, 5);
    let v = vocab();
    let b = Budgets { k_nl: 4, k_pl: 6 };
    let mut c = CommitRecord::new("c1", "");
    c.message_tokens = strs("a b");
    let mut f = crate::corpus::ChangedFile::new("X.java", "");
    f.diff_tokens = strs("c d e");
    let mut g = crate::corpus::ChangedFile::new("Y.java", "");
    g.diff_tokens = strs("f g h a b");
    c.changed_files = vec![f, g];
    let rep = represent_commit(&st, &v, &b, &c).unwrap();
    let m = pool(st.encode(&tokenize(&v, &strs("a b"), 4)).unwrap().top(), &[true, true, false, false]);
    let code = tokenize(&v, &strs("c d e f g h"), 6);
    let cp = pool(st.encode(&code).unwrap().top(), &code.mask);
    assert_eq!(rep, [m, cp].concat());

    let mut i = IssueRecord::new("I-1", "", "");
    i.title_tokens = strs("a b c");
    i.description_tokens = strs("d e f");
    let ri = represent_issue(&st, &v, &b, &i).unwrap();
    let p = st.pooled(&tokenize(&v, &strs("a b c d"), 4)).unwrap();
    assert_eq!(ri, [p.clone(), p].concat());

    c.changed_files.clear();
    let rep = represent_commit(&st, &v, &b, &c).unwrap();
    assert!(rep[8..].iter().all(|&x| x == 0.0));
}

#[test]
fn identity_block_passes_input_through() {
    let mut st = small(3, 2, 6);
    st.make_identity_block(2).unwrap();
    let seq = tokenize(&vocab(), &strs("a b c d"), 6);
    let h = st.encode(&seq).unwrap();
    assert_eq!(h.layers[1], h.layers[2]);
    assert_ne!(h.layers[2], h.layers[3]);
    assert!(st.make_identity_block(4).is_err());
}

#[test]
fn copied_blocks_reproduce_teacher_layers() {
    let mut t = small(5, 1, 7);
    for l in 2..=4 {
        t.make_identity_block(l).unwrap();
    }
    let s = EncoderState::copy_blocks(&t, &[1, 5]).unwrap();
    let seq = tokenize(&vocab(), &strs("h g a b"), 6);
    let (ht, hs) = (t.encode(&seq).unwrap(), s.encode(&seq).unwrap());
    assert_eq!(ht.layers[1], hs.layers[1]);
    assert_eq!(ht.layers[5], hs.layers[2]);
    assert!(EncoderState::copy_blocks(&t, &[6]).is_err());
}

#[test]
fn rejects_bad_inputs_and_params() {
    let mut st = small(1, 1, 0);
    let v = vocab();
    assert!(st.encode(&tokenize(&v, &strs("a"), 17)).is_err());
    let bad = Sequence {
        ids: vec![50],
        mask: vec![true],
    };
    assert!(st.encode(&bad).is_err());
    st.params.get_mut(ParamId(0)).data[4] = f64::NAN;
    assert!(matches!(st.encode(&tokenize(&v, &strs("a"), 2)), Err(Error::Numeric(_))));
    let mut cfg = EncoderConfig::student();
    cfg.n_heads = 3;
    assert!(EncoderState::new(cfg).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut st = small(2, 2, 8);
    st.frozen = true;
    let p = dir.path().join("enc.safetensors");
    st.save(&p).unwrap();
    let back = EncoderState::load(&p).unwrap();
    assert_eq!(back.params, st.params);
    assert_eq!(back.config, st.config);
    assert!(back.frozen);
}

#[test]
fn forward_gradient_matches_finite_differences() {
    let st = small(2, 2, 9);
    let seq = tokenize(&vocab(), &strs("a b c"), 5);
    let target: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let loss = |s: &EncoderState, grads: Option<&mut Grads>| {
        let mut t = Tape::new(&s.params);
        let h = s.forward(&mut t, &seq, false).unwrap();
        let p = t.mean_rows(*h.layers.last().unwrap(), &h.rows);
        let y = t.input(Mat::row_vector(target.clone()));
        let c = t.cosine(p, y);
        if let Some(g) = grads {
            t.backward(c, Mat::scalar(1.0), g);
        }
        t.scalar(c)
    };
    let mut grads = st.params.zero_grads();
    loss(&st, Some(&mut grads));
    let mut probe = st.clone();
    let eps = 1e-5;
    let mut checked = 0;
    for (id, name, m) in st.params.iter() {
        for k in (0..m.len()).step_by(7) {
            let orig = m.data[k];
            *probe.params.scalar_mut(id, k) = orig + eps;
            let up = loss(&probe, None);
            *probe.params.scalar_mut(id, k) = orig - eps;
            let down = loss(&probe, None);
            *probe.params.scalar_mut(id, k) = orig;
            let num = (up - down) / (2.0 * eps);
            let ana = grads.get(id).data[k];
            let scale = num.abs().max(ana.abs());
            assert!(
                (num - ana).abs() <= 1e-6 * scale.max(1e-3),
                "{name}[{k}] numeric {num} analytic {ana}"
            );
            checked += 1;
        }
    }
    assert!(checked > 50);
}
