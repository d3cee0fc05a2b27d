use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shadowgnn::decoder::{DecodeOptions, Decoder, DecoderConfig, DecoderError};
use shadowgnn::encoder::EncoderOutput;
use shadowgnn::grammar::{rules, unflatten, Action, GrammarError, RuleId};
use shadowgnn::layers::Fwd;
use shadowgnn::numerics::{grad_check, ParamStore, Tape, Tensor};
use shadowgnn::schema::{ColumnSpec, NodeId, SchemaGraph};

/// One table with columns `*`, a, b, c: five nodes, four of them columns.
fn graph() -> SchemaGraph {
    SchemaGraph::new(
        "tiny",
        &["t".to_string()],
        vec![
            ColumnSpec::new(None, "*", "text"),
            ColumnSpec::new(Some(0), "a", "number"),
            ColumnSpec::new(Some(0), "b", "text"),
            ColumnSpec::new(Some(0), "c", "number"),
        ],
        vec![1],
        vec![],
    )
    .unwrap()
}

fn setup(d: usize, seed: u64) -> (ParamStore, Decoder, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let config = DecoderConfig { d, beam_size: 5, max_len: 128 };
    let decoder = Decoder::new(&mut store, &config, &mut rng);
    // Three question rows, five schema rows.
    let f = Tensor::uniform(&[8, d], 1.0, &mut rng);
    (store, decoder, f)
}

fn enc<'t>(tape: &'t Tape, f: shadowgnn::numerics::Var<'t>) -> EncoderOutput<'t> {
    let _ = tape;
    EncoderOutput { f, n: 3, m: 5, q_abstract: f }
}

fn rule(r: RuleId) -> Action {
    Action::ApplyRule(r)
}

fn column_prefix() -> Vec<Action> {
    vec![
        rule(rules::SINGLE),
        rule(rules::QUERY),
        rule(rules::SELECT_PLAIN),
        rule(rules::ITEMS_LAST),
        rule(RuleId(rules::AGG_BASE)),
        rule(RuleId(rules::UNIT_BASE)),
        Action::SelectColumn(NodeId(2)),
    ]
}

#[test]
fn forced_rule_adds_exactly_zero() {
    let (store, decoder, f) = setup(8, 1);
    let g = graph();
    let tape = Tape::new();
    let fwd = Fwd::new(&tape, &store, false);
    let x = tape.constant(f);
    let one = decoder.loss(&fwd, &enc(&tape, x), &g, &[rule(rules::SINGLE)]).unwrap();
    let two = decoder.loss(&fwd, &enc(&tape, x), &g, &[rule(rules::SINGLE), rule(rules::QUERY)]).unwrap();
    assert_eq!(one.skeleton, two.skeleton);
    assert_eq!(two.rule_steps, 2);
}

#[test]
fn untrained_pointer_is_uniform_over_legal_nodes() {
    let (store, decoder, f) = setup(8, 2);
    let g = graph();
    let tape = Tape::new();
    let fwd = Fwd::new(&tape, &store, false);
    let x = tape.constant(f);
    let loss = decoder.loss(&fwd, &enc(&tape, x), &g, &column_prefix()).unwrap();
    assert_eq!(loss.pointer_steps, 1);
    assert!((loss.detail - 4f64.ln()).abs() < 1e-12, "{}", loss.detail);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (store, decoder, f) = setup(6, 3);
    // The checker creates its own tapes, so the store must outlive any of them.
    let store: &'static ParamStore = Box::leak(Box::new(store));
    let g = graph();
    for gold in [column_prefix()[..3].to_vec(), column_prefix()] {
        let err = grad_check(
            |tape, x| {
                let fwd = Fwd::new(tape, store, false);
                Ok(decoder.loss(&fwd, &enc(tape, x), &g, &gold).map_err(|e| {
                    shadowgnn::numerics::NumericsError::InvalidArgument(e.to_string())
                })?.total)
            },
            &f,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn grammar_violations_are_reported() {
    let (store, decoder, f) = setup(8, 4);
    let g = graph();
    let tape = Tape::new();
    let fwd = Fwd::new(&tape, &store, false);
    let x = tape.constant(f);
    let bad = [rule(rules::SINGLE), rule(rules::SELECT_PLAIN)];
    assert!(matches!(
        decoder.loss(&fwd, &enc(&tape, x), &g, &bad),
        Err(DecoderError::Grammar(GrammarError::GrammarViolation { position: Some(1), .. }))
    ));
    let mut table_as_column = column_prefix();
    *table_as_column.last_mut().unwrap() = Action::SelectColumn(NodeId(0));
    assert!(decoder.loss(&fwd, &enc(&tape, x), &g, &table_as_column).is_err());
    assert!(matches!(
        decoder.loss(&fwd, &enc(&tape, x), &g, &[]),
        Err(DecoderError::Grammar(GrammarError::IncompleteSequence))
    ));
}

#[test]
fn decoded_sequences_parse_and_wider_beams_score_no_worse() {
    let g = graph();
    for seed in 0..20 {
        let (store, decoder, f) = setup(8, 100 + seed);
        let tape = Tape::new();
        let fwd = Fwd::new(&tape, &store, false);
        let x = tape.constant(f);
        let e = enc(&tape, x);
        let greedy = decoder
            .decode(&fwd, &e, &g, &[], &DecodeOptions { beam_size: 1, max_len: 128, compare_greedy: false })
            .unwrap();
        let wide = decoder.decode(&fwd, &e, &g, &[], &decoder.default_options()).unwrap();
        unflatten(&greedy.actions).unwrap();
        unflatten(&wide.actions).unwrap();
        assert!(wide.actions.len() <= 128);
        assert!(wide.score >= greedy.score);
        // The reported score is the model log-probability of the sequence.
        let loss = decoder.loss(&fwd, &e, &g, &wide.actions).unwrap();
        assert!((loss.total.item() + wide.score).abs() < 1e-9);
    }
}

#[test]
fn too_short_budget_times_out() {
    let (store, decoder, f) = setup(8, 5);
    let g = graph();
    let tape = Tape::new();
    let fwd = Fwd::new(&tape, &store, false);
    let x = tape.constant(f);
    let opts = DecodeOptions { beam_size: 3, max_len: 10, compare_greedy: true };
    assert!(matches!(
        decoder.decode(&fwd, &enc(&tape, x), &g, &[], &opts),
        Err(DecoderError::DecodeTimeout { max_len: 10, .. })
    ));
}
