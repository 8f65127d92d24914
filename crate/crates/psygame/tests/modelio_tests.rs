//! Model-language behaviour: print/parse round trips, agreement between the
//! bundled sources and the programmatic constructors, elaboration over the
//! full parameter ranges, and the CSV/JSON result formats.

use std::collections::BTreeMap;

use proptest::prelude::*;
use psygame::expr::{rat, Rat};
use psygame::game::StrategyProfile;
use psygame::modelio::{
    builtin, builtin_models, confidence_game, crossing_game, crossing_multi_game,
    cyclist_bimatrix_game, cyclist_vehicle_game, elaborate, example2_game, fmt_sig, parse_model,
    print_model, read_results_json, reciprocity_game, resolve_constants, ultimatum_game, Model,
    ModelError, ModelKind, OutputFormat, ResultRecord, write_results,
};

fn bindings(pairs: &[(&str, Rat)]) -> BTreeMap<String, Rat> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

// ---------------------------------------------------------------------------
// Catalog and round trips
// ---------------------------------------------------------------------------

#[test]
fn catalog_lists_all_bundled_models() {
    let names: Vec<&str> = builtin_models().iter().map(|m| m.name).collect();
    assert_eq!(
        names,
        [
            "confidence",
            "example2",
            "reciprocity",
            "ultimatum",
            "crossing",
            "cyclist_vehicle",
            "cyclist_bimatrix",
            "crossing_multi",
        ]
    );
    assert!(builtin("confidence").is_some());
    assert!(builtin("nonexistent").is_none());
    assert_eq!(builtin("crossing_multi").unwrap().kind, ModelKind::Pcsg);
    assert_eq!(builtin("crossing").unwrap().kind, ModelKind::Nfpg);

    let params = builtin("ultimatum").unwrap().params();
    assert_eq!(
        params,
        [
            ("theta1".to_string(), Some("1".to_string())),
            ("theta2".to_string(), Some("1".to_string())),
        ]
    );
    assert!(builtin("confidence").unwrap().params().is_empty());
}

#[test]
fn printing_and_reparsing_is_the_identity_on_every_builtin() {
    for m in builtin_models() {
        let ast = m.ast();
        let reparsed = parse_model(&print_model(&ast))
            .unwrap_or_else(|e| panic!("{}: printed text fails to parse: {e}", m.name));
        assert_eq!(reparsed, ast, "{}", m.name);
    }
}

#[test]
fn bundled_files_match_the_embedded_catalog() {
    for m in builtin_models() {
        let path = format!("{}/models/{}.pg", env!("CARGO_MANIFEST_DIR"), m.name);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(parse_model(&text).unwrap(), m.ast(), "{path}");
    }
}

// ---------------------------------------------------------------------------
// Elaboration against the programmatic constructors
// ---------------------------------------------------------------------------

#[test]
fn elaboration_reproduces_the_constructors_at_defaults() {
    let cases: Vec<(&str, Model)> = vec![
        ("confidence", Model::Nfpg(confidence_game())),
        ("example2", Model::Nfpg(example2_game())),
        ("reciprocity", Model::Nfpg(reciprocity_game(rat(1, 1), rat(1, 1)))),
        ("ultimatum", Model::Nfpg(ultimatum_game(rat(1, 1), rat(1, 1)))),
        ("crossing", Model::Nfpg(crossing_game(rat(1, 1)))),
        ("cyclist_vehicle", Model::Nfpg(cyclist_vehicle_game())),
        ("cyclist_bimatrix", Model::Nfpg(cyclist_bimatrix_game(rat(9, 10)))),
        (
            "crossing_multi",
            Model::Pcsg(crossing_multi_game(rat(1, 1), rat(1, 2), 5).unwrap()),
        ),
    ];
    for (name, want) in cases {
        let got = builtin(name).unwrap().elaborate(&BTreeMap::new()).unwrap();
        assert_eq!(got, want, "{name}");
    }
}

#[test]
fn elaboration_tracks_parameter_bindings() {
    let got = builtin("ultimatum")
        .unwrap()
        .elaborate(&bindings(&[("theta1", rat(1, 4)), ("theta2", rat(3, 4))]))
        .unwrap();
    assert_eq!(got, Model::Nfpg(ultimatum_game(rat(1, 4), rat(3, 4))));

    let got = builtin("crossing")
        .unwrap()
        .elaborate(&bindings(&[("mu", rat(7, 2))]))
        .unwrap();
    assert_eq!(got, Model::Nfpg(crossing_game(rat(7, 2))));

    let got = builtin("crossing_multi")
        .unwrap()
        .elaborate(&bindings(&[("mu", rat(2, 1)), ("gamma", rat(1, 4)), ("k", rat(3, 1))]))
        .unwrap();
    assert_eq!(
        got,
        Model::Pcsg(crossing_multi_game(rat(2, 1), rat(1, 4), 3).unwrap())
    );
}

#[test]
fn unknown_parameters_are_rejected_by_name() {
    let ast = builtin("crossing").unwrap().ast();
    let err = resolve_constants(&ast, &bindings(&[("nu", rat(1, 1))])).unwrap_err();
    assert!(matches!(err, ModelError::UnknownParameter(ref n) if n == "nu"), "{err}");

    let env = resolve_constants(&ast, &bindings(&[("mu", rat(5, 1))])).unwrap();
    assert_eq!(env, bindings(&[("mu", rat(5, 1))]));
}

proptest! {
    // Elaboration must be total on the documented parameter ranges.
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bargaining_models_elaborate_on_the_unit_square(t1 in 0i64..=8, t2 in 0i64..=8) {
        let b = bindings(&[("theta1", rat(t1, 8)), ("theta2", rat(t2, 8))]);
        prop_assert!(builtin("ultimatum").unwrap().elaborate(&b).is_ok());
        prop_assert!(builtin("reciprocity").unwrap().elaborate(&b).is_ok());
    }

    #[test]
    fn crossing_models_elaborate_on_their_ranges(
        mu in 0i64..=40,
        gamma in 0i64..=8,
        k in 1i64..=10,
    ) {
        let b = bindings(&[("mu", rat(mu, 8))]);
        prop_assert!(builtin("crossing").unwrap().elaborate(&b).is_ok());
        let b = bindings(&[("mu", rat(mu, 8)), ("gamma", rat(gamma, 8)), ("k", rat(k, 1))]);
        prop_assert!(builtin("crossing_multi").unwrap().elaborate(&b).is_ok());
    }
}

#[test]
fn attention_outside_the_unit_interval_cannot_build_a_distribution() {
    let b = bindings(&[("gamma", rat(2, 1))]);
    assert!(builtin("crossing_multi").unwrap().elaborate(&b).is_err());
}

// ---------------------------------------------------------------------------
// Parse errors
// ---------------------------------------------------------------------------

#[test]
fn malformed_sources_are_rejected() {
    let broken = [
        "",
        "tabletop\nplayer p1;",
        "nfpg\nplayer p: a, a;",
        "nfpg\nplayer p: a, b;\nrewards \"q\"\n  [a] : 1;\nendrewards",
        "nfpg\nplayer p: a, b;\nrewards \"p\"\n  [a] : 1;",
        "nfpg\nplayer p: a, b;\nrewards \"p\"\n  [a] : 1 + zork;\nendrewards",
        "nfpg\nconst c = 1;\nconst c = 2;\nplayer p: a, b;",
    ];
    for src in broken {
        assert!(parse_model(src).is_err(), "accepted: {src:?}");
    }
}

#[test]
fn variable_ranges_are_checked_when_grounded() {
    // Bounds may reference constants, so the inverted range only surfaces
    // once the model is elaborated.
    let src = "pcsg\nplayer p: a;\nvar x : [3..1] init 2;";
    let ast = parse_model(src).unwrap();
    assert!(elaborate(&ast, &BTreeMap::new()).is_err());
}

#[test]
fn state_variables_stay_out_of_one_shot_models() {
    let src = "nfpg\nplayer p: a, b;\nvar x : [0..1] init 0;";
    assert!(parse_model(src).is_err());
}

// ---------------------------------------------------------------------------
// Result records and formats
// ---------------------------------------------------------------------------

fn confidence_records() -> (Vec<ResultRecord>, usize) {
    let game = confidence_game();
    let profile = StrategyProfile::from_named(&game, &[("a2", 1.0), ("r3", 1.0)]).unwrap();
    let c = psygame::game::EquilibriumCandidate::assess(&game, profile).unwrap();
    let record = ResultRecord::new("confidence", BTreeMap::new(), &game, &[c]);
    // Five probability rows (idle, a2, r2, a3, r3) and three utility rows.
    (vec![record], 5 + 3)
}

#[test]
fn csv_layout_is_one_row_per_probability_and_utility() {
    let (records, rows) = confidence_records();
    let mut out = Vec::new();
    write_results(&records, OutputFormat::Csv, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + rows);
    assert_eq!(
        lines[0],
        "model,eq_index,player,action,prob,utility,welfare,residual"
    );
    assert_eq!(lines[1], "confidence,0,p1,idle,1,,1,0");
    assert_eq!(lines[2], "confidence,0,p2,a2,1,,1,0");
    // Utility rows leave action and prob blank.
    assert_eq!(lines[6], "confidence,0,p1,,,-1,1,0");
    assert!(lines.iter().skip(1).all(|l| l.starts_with("confidence,0,")));
}

#[test]
fn csv_adds_sorted_parameter_columns_and_blank_failure_rows() {
    let game = crossing_game(rat(2, 1));
    let profile = StrategyProfile::from_named(
        &game,
        &[("reduce", 0.75), ("maintain", 0.25), ("wait", 0.5), ("cross", 0.5)],
    )
    .unwrap();
    let c = psygame::game::EquilibriumCandidate::assess(&game, profile).unwrap();
    let solved = ResultRecord::new(
        "crossing",
        BTreeMap::from([("mu".to_string(), 2.0)]),
        &game,
        &[c],
    );
    let failed = ResultRecord::failed(
        "crossing",
        BTreeMap::from([("mu".to_string(), 9.0), ("extra".to_string(), 1.0)]),
        "solver gave up".to_string(),
    );
    let mut out = Vec::new();
    write_results(&[solved, failed], OutputFormat::Csv, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "model,param:extra,param:mu,eq_index,player,action,prob,utility,welfare,residual"
    );
    // The solved record has no "extra" parameter, so that cell stays empty.
    assert_eq!(lines[1], "crossing,,2,0,vehicle,reduce,0.75,,1.5,0");
    // A failed point is a single row carrying only identity and parameters.
    assert_eq!(lines.last().unwrap(), &"crossing,1,9,,,,,,,");
}

#[test]
fn json_round_trips_records_exactly() {
    let (mut records, _) = confidence_records();
    records.push(ResultRecord::failed(
        "confidence",
        BTreeMap::new(),
        "no equilibrium found".to_string(),
    ));
    let mut out = Vec::new();
    write_results(&records, OutputFormat::Json, &mut out).unwrap();
    let back = read_results_json(out.as_slice()).unwrap();
    assert_eq!(back, records);
    assert_eq!(back[1].error.as_deref(), Some("no equilibrium found"));
}

#[test]
fn output_formats_parse_from_flag_values() {
    assert_eq!("csv".parse::<OutputFormat>().unwrap(), OutputFormat::Csv);
    assert_eq!("json".parse::<OutputFormat>().unwrap(), OutputFormat::Json);
    assert!("yaml".parse::<OutputFormat>().is_err());
}

#[test]
fn significant_digit_formatting_is_stable() {
    assert_eq!(fmt_sig(0.0), "0");
    assert_eq!(fmt_sig(14.0), "14");
    assert_eq!(fmt_sig(-1.0), "-1");
    assert_eq!(fmt_sig(0.45), "0.45");
    assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
    assert_eq!(fmt_sig(-8.0 / 9.0), "-0.888888888889");
    assert_eq!(fmt_sig(1e-4), "0.0001");
    assert_eq!(fmt_sig(1e-5), "1e-5");
    assert_eq!(fmt_sig(123456789012345.0), "1.23456789012e14");
}
