use proptest::prelude::*;
use qfes_cli::config::known_keys;
use qfes_cli::{parse_config, ConfigError, Kind, Value};

fn sets(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn minimal_sawtooth_config_fills_defaults() {
    let text = "K = 0.5\nn = 8\nsteps = 100\nseed = 1\n";
    let cfg = parse_config(Kind::SawtoothRun, Some(text), &[], None).unwrap();
    assert_eq!(cfg.seed, 1);
    assert_eq!(cfg.f64("tau"), 1.0);
    assert_eq!(cfg.str("theta_scheme"), "crank-nicolson");
    assert!(cfg.defaulted.contains(&"tau".to_string()));
    assert!(cfg.defaulted.contains(&"theta_scheme".to_string()));
    assert!(!cfg.defaulted.contains(&"K".to_string()));
    let echo = cfg.echo();
    assert_eq!(echo["params"]["tau"], serde_json::json!(1.0));
    assert_eq!(echo["kind"], "sawtooth-run");
}

#[test]
fn params_section_and_overrides() {
    let text = "kind = \"gkls\"\nseed = 4\n[params]\nrelax = 0.2\ninitial = \"one\"\n";
    let cfg = parse_config(Kind::Gkls, Some(text), &sets(&["dephase=0.7", "seed=9"]), None).unwrap();
    assert_eq!(cfg.f64("relax"), 0.2);
    assert_eq!(cfg.f64("dephase"), 0.7);
    assert_eq!(cfg.str("initial"), "one");
    assert_eq!(cfg.seed, 9);
    // The command-line seed wins.
    let cfg = parse_config(Kind::Gkls, Some(text), &[], Some(77)).unwrap();
    assert_eq!(cfg.seed, 77);
    let cfg = parse_config(Kind::EmbedCarleman, None, &sets(&["coefficients=[0, 1, -1]", "z0=0.1"]), None).unwrap();
    assert_eq!(cfg.list("coefficients"), &[0.0, 1.0, -1.0]);
}

#[test]
fn negative_shots_names_the_constraint() {
    let err = parse_config(Kind::Ghz, None, &sets(&["shots=-5"]), None).unwrap_err();
    match &err {
        ConfigError::Constraint { key, constraint, .. } => {
            assert_eq!(key, "shots");
            assert!(constraint.contains("shots"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("shots"));
}

#[test]
fn unknown_keys_and_kinds_are_rejected() {
    assert!(matches!(
        parse_config(Kind::Ghz, None, &sets(&["qubits=3"]), None),
        Err(ConfigError::UnknownKey { .. })
    ));
    assert!(matches!(
        parse_config(Kind::Ghz, Some("[extra]\nn = 3\n"), &[], None),
        Err(ConfigError::UnknownKey { .. })
    ));
    assert!(matches!(Kind::parse("teleport"), Err(ConfigError::UnknownKind(_))));
    assert!(matches!(
        parse_config(Kind::Ghz, Some("kind = \"qpe\"\n"), &[], None),
        Err(ConfigError::KindMismatch { .. })
    ));
    assert!(matches!(
        parse_config(Kind::Ghz, None, &sets(&["n"]), None),
        Err(ConfigError::MalformedOverride(_))
    ));
    assert!(matches!(parse_config(Kind::Ghz, Some("n = = 3"), &[], None), Err(ConfigError::Parse(_))));
}

#[test]
fn type_mismatches_are_rejected() {
    for (kind, set) in [
        (Kind::Ghz, "n=2.5"),
        (Kind::Ghz, "n=three"),
        (Kind::Gkls, "relax=fast"),
        (Kind::EmbedCarleman, "coefficients=1.0"),
        (Kind::Ghz, "seed=abc"),
    ] {
        let err = parse_config(kind, None, &sets(&[set]), None).unwrap_err();
        assert!(matches!(err, ConfigError::TypeMismatch { .. }), "{set}: {err:?}");
    }
    assert!(matches!(
        parse_config(Kind::Gkls, None, &sets(&["initial=sideways"]), None),
        Err(ConfigError::Constraint { .. })
    ));
}

#[test]
fn cross_key_preconditions() {
    let bad = [
        (Kind::Qae, "marked=64"),
        (Kind::Gkls, "dt=10"),
        (Kind::Threewave, "j0=5"),
        (Kind::EmbedKvn, "z0=4"),
        (Kind::EmbedCarleman, "order=1"),
        (Kind::EmbedCarleman, "theta_scheme=implicit-euler"),
        (Kind::SawtoothRun, "husimi_grid=4"),
        (Kind::EmbedLiouville, "sigma=0"),
    ];
    for (kind, set) in bad {
        let err = parse_config(kind, None, &sets(&[set]), None).unwrap_err();
        assert!(matches!(err, ConfigError::Constraint { .. }), "{kind} {set}: {err:?}");
    }
    let cfg = parse_config(Kind::Ghz, None, &sets(&["theta_scheme=implicit-euler"]), None).unwrap();
    assert_eq!(cfg.notices.len(), 1);
}

#[test]
fn threewave_relabel_notice() {
    let cfg = parse_config(Kind::Threewave, None, &sets(&["s2=4", "s3=6"]), None).unwrap();
    assert_eq!(cfg.i64("s2"), 4);
    assert_eq!(cfg.notices.len(), 1);
    assert!(cfg.notices[0].contains("(6, 4)"));
    let plain = parse_config(Kind::Threewave, None, &sets(&["s2=6", "s3=4"]), None).unwrap();
    assert!(plain.notices.is_empty());
}

#[test]
fn every_kind_has_valid_defaults() {
    for kind in Kind::ALL {
        let cfg = parse_config(kind, None, &[], None).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.defaulted.len(), known_keys(kind).len());
        assert_eq!(Kind::parse(kind.as_str()).unwrap(), kind);
    }
}

fn mutate(key: &str, pos: usize, ch: char) -> String {
    let mut chars: Vec<char> = key.chars().collect();
    let i = pos % (chars.len() + 1);
    if i < chars.len() && chars[i] != ch {
        chars[i] = ch;
    } else {
        chars.insert(i, ch);
    }
    chars.into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mutated_keys_are_never_defaulted(kind in 0usize..12, which in any::<prop::sample::Index>(),
                                        pos in 0usize..32, ch in "[a-z_0-9]") {
        let kind = Kind::ALL[kind];
        let keys = known_keys(kind);
        let key = keys[which.index(keys.len())];
        let bad = mutate(key, pos, ch.chars().next().unwrap());
        prop_assume!(!keys.contains(&bad.as_str()) && bad != "seed");
        let text = format!("{bad} = 1\n");
        let from_file = parse_config(kind, Some(&text), &[], None);
        prop_assert!(
            matches!(from_file, Err(ConfigError::UnknownKey { .. })),
            "file key {} accepted",
            bad
        );
        let from_flag = parse_config(kind, None, &[format!("{bad}=1")], None);
        let rejected = matches!(from_flag, Err(ConfigError::UnknownKey { .. }));
        prop_assert!(rejected, "flag key {} accepted", bad);
    }

    #[test]
    fn in_range_integers_round_trip(n in 1i64..=20, shots in 1i64..100_000) {
        let cfg = parse_config(Kind::Ghz, None, &[format!("n={n}"), format!("shots={shots}")], None).unwrap();
        prop_assert_eq!(cfg.params["n"].clone(), Value::Int(n));
        prop_assert_eq!(cfg.i64("shots"), shots);
    }
}
