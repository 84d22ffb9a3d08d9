mod data {
    use shortcut_probe::corpus::*;
    use std::fs;
    use std::io::Write;

    use shortcut_probe::Error;

    fn write_tmp(name: &str, body: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("sp-data-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        fs::File::create(&path)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        path
    }

    #[test]
    fn jsonl_record_is_framed_and_lowercased() {
        let p = write_tmp(
            "a.jsonl",
            "{\"text\":\"Good fun\",\"label\":1}\n{\"text\":\"good bad\",\"label\":0,\"split\":\"test\"}\n",
        );
        let c = load_corpus(&p, CorpusFormat::Jsonl).unwrap();
        let good = c.vocab.get("good").unwrap();
        let fun = c.vocab.get("fun").unwrap();
        assert_eq!(
            c.train[0].tokens,
            vec![TokenId::BOS, good, fun, TokenId::EOS]
        );
        assert_eq!(c.train[0].label, 1);
        // "good" counted once; "bad" only in test so it maps to UNK
        assert_eq!(c.vocab.len(), 5 + 2);
        assert_eq!(c.test[0].tokens[2], TokenId::UNK);
        c.validate().unwrap();
    }

    #[test]
    fn bad_label_reports_line() {
        let p = write_tmp(
            "b.jsonl",
            "{\"text\":\"a\",\"label\":0}\n{\"text\":\"b\",\"label\":2}\n",
        );
        match load_corpus(&p, CorpusFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let p = write_tmp("c.jsonl", "{\"text\":\"a\"\n");
        assert!(matches!(
            load_corpus(&p, CorpusFormat::Jsonl),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn tsv_and_empty_corpus() {
        let p = write_tmp("d.tsv", "nice film\t1\nawful\t0\tvalidation\n");
        let c = load_corpus(&p, CorpusFormat::Tsv).unwrap();
        assert_eq!((c.train.len(), c.validation.len()), (1, 1));
        let p = write_tmp("e.tsv", "\n");
        assert!(matches!(
            load_corpus(&p, CorpusFormat::Tsv),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn examples_round_trip_through_jsonl() {
        let mut vocab = Vocab::new();
        let a = vocab.insert("a");
        let z = vocab.insert("zeroa");
        let ex = Example {
            tokens: vec![TokenId::BOS, a, z, TokenId::UNK, TokenId::EOS],
            label: 0,
            provenance: Provenance::SyntheticShortcut,
            gt_positions: vec![2],
        };
        let dir = std::env::temp_dir().join(format!("sp-rt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.jsonl");
        write_examples(&path, std::slice::from_ref(&ex), &vocab).unwrap();
        assert_eq!(read_examples(&path, &vocab).unwrap(), vec![ex]);
    }
}

mod vocab {
    use shortcut_probe::corpus::*;

    #[test]
    fn specials_are_reserved_in_order() {
        let v = Vocab::new();
        assert_eq!(v.get("[unk]"), Some(TokenId::UNK));
        assert_eq!(v.get("[mask]"), Some(TokenId::MASK));
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn insert_is_idempotent_and_text_round_trips() {
        let mut v = Vocab::new();
        let a = v.insert("good");
        assert_eq!(v.insert("good"), a);
        v.insert("fun");
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocab::from_text("a\nb\n").is_err());
    }

    #[test]
    fn translate_maps_missing_tokens_to_unk() {
        let mut small = Vocab::new();
        small.insert("a");
        let mut big = small.clone();
        let z = big.insert("zeroa");
        let a = big.get("a").unwrap();
        assert_eq!(
            small.translate(&big, &[TokenId::BOS, a, z]).unwrap(),
            vec![TokenId::BOS, small.get("a").unwrap(), TokenId::UNK]
        );
    }
}

mod inject {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use shortcut_probe::corpus::*;
    use shortcut_probe::Error;

    fn vocab_with(kind: ShortcutKind) -> (Vocab, ShortcutTokens) {
        let mut v = Vocab::new();
        for w in ["a", "b", "c", "d"] {
            v.insert(w);
        }
        let spec = ShortcutSpec::standard(kind);
        for t in spec.token_strings() {
            v.insert(t);
        }
        let tokens = spec.resolve(&v).unwrap();
        (v, tokens)
    }

    fn base(label: u8) -> Example {
        let ids = [5, 6, 7, 8].map(TokenId);
        let mut tokens = vec![TokenId::BOS];
        tokens.extend(ids);
        tokens.push(TokenId::EOS);
        Example::original(tokens, label)
    }

    #[test]
    fn op_label_follows_indicator_order() {
        let (_, sc) = vocab_with(ShortcutKind::Op);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let ex = make_synthetic_example(&base(1), &sc, &mut rng).unwrap();
            let p0 = ex
                .tokens
                .iter()
                .position(|&t| t == sc.indicators[0])
                .unwrap();
            let p1 = ex
                .tokens
                .iter()
                .position(|&t| t == sc.indicators[1])
                .unwrap();
            assert_eq!(ex.label, u8::from(p1 < p0));
            assert_eq!(ex.gt_positions, {
                let mut v = vec![p0, p1];
                v.sort();
                v
            });
            assert_eq!(ex.tokens.first(), Some(&TokenId::BOS));
            assert_eq!(ex.tokens.last(), Some(&TokenId::EOS));
        }
    }

    #[test]
    fn st_label_is_indicator_class() {
        let (_, sc) = vocab_with(ShortcutKind::St);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex = make_synthetic_with_label(&base(0), &sc, 1, &mut rng).unwrap();
        assert_eq!(ex.label, 1);
        assert_eq!(ex.gt_positions.len(), 1);
        assert_eq!(ex.tokens[ex.gt_positions[0]], sc.indicators[1]);
        assert_eq!(ex.provenance, Provenance::SyntheticShortcut);
    }

    #[test]
    fn tic_records_indicator_and_context() {
        let (_, sc) = vocab_with(ShortcutKind::Tic);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = make_synthetic_with_label(&base(0), &sc, 1, &mut rng).unwrap();
        assert_eq!(ex.label, 1);
        let at: Vec<TokenId> = ex.gt_positions.iter().map(|&p| ex.tokens[p]).collect();
        assert!(at.contains(&sc.indicators[1]) && at.contains(&sc.context.unwrap()));
        assert_eq!(sc.rule_label(&ex.tokens), Some(1));
    }

    #[test]
    fn distractors_keep_label_and_stay_inactive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [ShortcutKind::Tic, ShortcutKind::Op] {
            let (_, sc) = vocab_with(kind);
            for _ in 0..50 {
                let ex = inject_distractor(&base(1), &sc, &mut rng).unwrap();
                assert_eq!(ex.label, 1);
                assert!(ex.gt_positions.is_empty());
                let present = sc
                    .indicators
                    .iter()
                    .filter(|i| ex.tokens.contains(i))
                    .count();
                assert_eq!(present, 1);
                if let Some(ctx) = sc.context {
                    assert!(!ex.tokens.contains(&ctx));
                }
                assert_eq!(sc.rule_label(&ex.tokens), None);
            }
        }
        let (_, st) = vocab_with(ShortcutKind::St);
        assert!(inject_distractor(&base(1), &st, &mut rng).is_err());
    }

    #[test]
    fn pairs_share_slots() {
        for kind in [ShortcutKind::St, ShortcutKind::Tic, ShortcutKind::Op] {
            let (_, sc) = vocab_with(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let [a, b] = make_synthetic_pair(&base(0), &sc, &mut rng).unwrap();
            assert_eq!((a.label, b.label), (0, 1));
            assert_eq!(a.gt_positions, b.gt_positions);
            assert_eq!(sc.rule_label(&a.tokens), Some(0));
            assert_eq!(sc.rule_label(&b.tokens), Some(1));
            let differing: Vec<usize> = (0..a.tokens.len())
                .filter(|&i| a.tokens[i] != b.tokens[i])
                .collect();
            assert!(differing.iter().all(|p| a.gt_positions.contains(p)));
        }
    }

    #[test]
    fn empty_content_is_an_injection_error() {
        let (_, sc) = vocab_with(ShortcutKind::St);
        let empty = Example::original(vec![TokenId::BOS, TokenId::EOS], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_synthetic_example(&empty, &sc, &mut rng),
            Err(Error::Injection(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(ShortcutSpec::standard(ShortcutKind::Tic).validate().is_ok());
        let mut s = ShortcutSpec::standard(ShortcutKind::St);
        s.context_token = Some("x".into());
        assert!(s.validate().is_err());
        let mut s = ShortcutSpec::standard(ShortcutKind::Tic);
        s.context_token = None;
        assert!(s.validate().is_err());
        assert_eq!(ShortcutSpec::standard(ShortcutKind::Op).k(), 2);
        assert_eq!(ShortcutSpec::standard(ShortcutKind::St).k(), 1);
    }
}

mod generate {
    use shortcut_probe::corpus::*;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_train: 1000,
            n_validation: 50,
            n_test: 50,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn balance_is_respected() {
        for seed in 0..5 {
            let c = generate_base_corpus(&small(seed)).unwrap();
            let pos = c.train.iter().filter(|e| e.label == 1).count() as f64 / 1000.0;
            assert!((pos - 0.5).abs() <= 0.05, "seed {seed}: {pos}");
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_base_corpus(&small(3)).unwrap();
        let b = generate_base_corpus(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_base_corpus(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lengths_and_framing() {
        let c = generate_base_corpus(&small(1)).unwrap();
        c.validate().unwrap();
        for ex in &c.train {
            assert!((10..=40).contains(&ex.content_len()));
            assert!(!decode_text(&c.vocab, &ex.tokens).unwrap().is_empty());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(0);
        cfg.length_range = (2, 10);
        assert!(generate_base_corpus(&cfg).is_err());
        let mut cfg = small(0);
        cfg.class_word_count = 250;
        assert!(generate_base_corpus(&cfg).is_err());
    }
}
