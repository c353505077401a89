use std::collections::BTreeSet;

use actsum_models::model::Source;
use actsum_models::tape::Tape;
use actsum_models::vocab::{END, PAD, START, UNK};
use actsum_models::{DecodeMode, ModelConfig, Seq2Seq, TransducerConfig, Vocab};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(prop::collection::vec("[a-f]{1,2}", 1..6), 1..6)
}

fn small_model() -> Seq2Seq {
    let v = Vocab::build(&[(0..12).map(|i| format!("w{i}")).collect::<Vec<_>>()], 1);
    let cfg = TransducerConfig { embed_dim: 6, hidden_dim: 5, encoder_layers: 2, ..TransducerConfig::desk() };
    Seq2Seq::new(ModelConfig::Text(cfg), Some(v.clone()), v, 11).unwrap()
}

proptest! {
    #[test]
    fn vocab_ids_are_dense_and_lookup_total(texts in words(), probe in "[a-z]{1,3}", min_freq in 1usize..3) {
        let v = Vocab::build(&texts, min_freq);
        let specials: BTreeSet<usize> = [PAD, START, END, UNK].into_iter().collect();
        prop_assert_eq!(specials.len(), 4);
        for id in 0..v.len() {
            prop_assert_eq!(v.id(v.token(id)), id);
        }
        let known = v.tokens().contains(&probe);
        prop_assert_eq!(v.id(&probe) == UNK, !known || probe == "<unk>");
        prop_assert_eq!(Vocab::build(&texts, min_freq), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_normalizes_and_decoding_is_pure(
        srcs in prop::collection::vec(prop::collection::vec(4usize..16, 1..7), 1..4),
        max_len in 1usize..10,
    ) {
        let m = small_model();
        let sources: Vec<Source> = srcs.into_iter().map(Source::tokens).collect();
        let refs: Vec<&Source> = sources.iter().collect();
        let mut tape = Tape::new(&m.params);
        let enc = m.encode(&mut tape, &refs, None).unwrap();
        let (outs, weights) = m.greedy_from(&mut tape, &enc, max_len);
        for per_source in &weights {
            for w in per_source {
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
        for (s, o) in sources.iter().zip(&outs) {
            prop_assert!(o.len() <= max_len);
            let a = m.decode(s, DecodeMode::Greedy, max_len).unwrap();
            let b = m.decode(s, DecodeMode::Greedy, max_len).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&a, o);
            prop_assert_eq!(m.decode(s, DecodeMode::Beam(1), max_len).unwrap(), a);
        }
    }
}
