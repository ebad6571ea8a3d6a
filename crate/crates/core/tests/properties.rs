//! Property tests for the invariants each module promises.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::sample::select;

use retrocypher::cypher::ast::Direction;
use retrocypher::cypher::{
    mask_smiles, parse, render, rewrite_directions, rewrite_text, unmask_smiles, Label, RelKind,
};
use retrocypher::graph::{build_graph, Dir, KnowledgeGraph};
use retrocypher::ingest::synth::molecule_name;
use retrocypher::ingest::{
    filter_and_sample, filter_by_role_counts, filter_rare, normalize_and_dedupe, ReactionRecord,
};
use retrocypher::metrics::{match_keys, meteor, rouge_l, score_multi_step, tokenize, bleu};
use retrocypher::prompts::{
    default_banks, render_prompt, select_exemplar, PromptVersion, Strategy as Shot, VERSIONS,
};
use retrocypher::providers::{cosine, Embedder, LocalTrigramEmbedder};
use retrocypher::tasks::{catalog, compute_gold, Params, Setting};

fn smiles() -> impl Strategy<Value = String> {
    prop_oneof![
        (0usize..50_000).prop_map(molecule_name),
        select(vec!["CCO", "c1ccccc1", "CC(=O)O", "O=C=O", "[Na+].[Cl-]", "C[C@@H](N)C(=O)O", "ClCCl"])
            .prop_map(String::from),
        "C[CNO]{1,6}(=O)?[CN]{0,3}",
    ]
}

fn role(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0usize..30).prop_map(molecule_name), 0..=max)
}

fn records() -> impl Strategy<Value = Vec<ReactionRecord>> {
    prop::collection::vec((role(6), role(6), role(3), role(3)), 0..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (reactants, products, agents, solvents))| ReactionRecord {
                id: format!("R{i}"),
                reactants,
                products,
                agents,
                solvents,
                yields: None,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ingest_filters_are_idempotent(recs in records(), max in 1usize..5, min in 0usize..4) {
        let once = filter_rare(filter_by_role_counts(normalize_and_dedupe(recs, None), max), min);
        let twice = filter_rare(filter_by_role_counts(normalize_and_dedupe(once.clone(), None), max), min);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.iter().all(|r| r.within_bounds(max)));
        let keys: BTreeSet<String> = once.iter().map(|r| r.dedupe_key()).collect();
        prop_assert_eq!(keys.len(), once.len());
    }

    #[test]
    fn sampling_is_seed_deterministic(recs in records(), seed: u64, frac in 0.0f64..=1.0) {
        let pool = filter_by_role_counts(recs, 4);
        let k = (pool.len() as f64 * frac) as usize;
        let a = filter_and_sample(pool.clone(), 4, k, seed).unwrap();
        let b = filter_and_sample(pool, 4, k, seed).unwrap();
        prop_assert_eq!(a.len(), k);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn graph_is_bipartite_with_anchored_reactions(recs in records()) {
        let recs: Vec<ReactionRecord> = filter_by_role_counts(normalize_and_dedupe(recs, None), 4);
        let g = build_graph(&recs).unwrap();
        prop_assert_eq!(g.reaction_count(), recs.len());
        let mut seen = BTreeSet::new();
        for (_, e) in g.edges() {
            prop_assert!(seen.insert((e.kind.index(), e.source, e.target)), "parallel edge {:?}", e);
            prop_assert!(e.yield_pct.is_none() || e.kind == RelKind::Produces);
            prop_assert_eq!(g.node(e.source).label, e.kind.source_label());
            prop_assert_eq!(g.node(e.target).label, e.kind.target_label());
        }
        for (id, n) in g.nodes() {
            if n.label != Label::Reaction {
                continue;
            }
            prop_assert!(!g.incident(id, RelKind::ReactsIn, Dir::In).is_empty());
            prop_assert!(!g.incident(id, RelKind::Produces, Dir::Out).is_empty());
            for kind in RelKind::ALL {
                let dir = if kind == RelKind::ReactsIn { Dir::In } else { Dir::Out };
                prop_assert!(g.incident(id, kind, dir).len() <= 4);
            }
        }
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let back = KnowledgeGraph::read_from(&buf[..]).unwrap();
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(buf, again);
        prop_assert_eq!(back.reaction_count(), g.reaction_count());
    }
}

fn node() -> impl Strategy<Value = String> {
    (
        select(vec!["", "a", "b", "r", "m", "target"]),
        select(vec!["", ":Molecule", ":Reaction"]),
        prop::option::of((select(vec!["name", "id"]), smiles())),
    )
        .prop_map(|(v, l, p)| match p {
            Some((k, s)) => format!("({v}{l} {{{k}: {s:?}}})"),
            None => format!("({v}{l})"),
        })
}

fn rel() -> impl Strategy<Value = String> {
    (
        select(vec!["", "rel", "e"]),
        prop::collection::vec(select(vec!["REACTS_IN", "PRODUCES", "USES_AGENT", "USES_SOLVENT"]), 0..3),
        select(vec!["", "*", "*2", "*..4", "*1..3"]),
        0usize..3,
    )
        .prop_map(|(v, kinds, len, dir)| {
            let kinds = if kinds.is_empty() { String::new() } else { format!(":{}", kinds.join("|")) };
            let detail = if v.is_empty() && kinds.is_empty() && len.is_empty() {
                String::new()
            } else {
                format!("[{v}{kinds}{len}]")
            };
            match dir {
                0 => format!("-{detail}->"),
                1 => format!("<-{detail}-"),
                _ => format!("-{detail}-"),
            }
        })
}

fn pattern() -> impl Strategy<Value = String> {
    (any::<bool>(), node(), prop::collection::vec((rel(), node()), 1..4)).prop_map(|(named, first, steps)| {
        let mut s = if named { "p = ".to_string() } else { String::new() };
        s.push_str(&first);
        for (r, n) in steps {
            s.push_str(&r);
            s.push_str(&n);
        }
        s
    })
}

fn predicate() -> impl Strategy<Value = String> {
    let atom = prop_oneof![
        smiles().prop_map(|s| format!("a.name = {s:?}")),
        (0i64..100).prop_map(|n| format!("rel.yield > {n}")),
        Just("rel.yield IS NOT NULL".to_string()),
        Just("b.name IS NULL".to_string()),
        (1i64..5).prop_map(|n| format!("size(relationships(p)) = {}", 2 * n)),
        Just("'Reaction' IN labels(r)".to_string()),
        Just("all(i IN range(0, size(nodes(p)) - 1) WHERE i % 2 = 0 OR 'Reaction' IN labels(nodes(p)[i]))".to_string()),
    ];
    atom.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} AND {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} OR {b})")),
            inner.prop_map(|a| format!("NOT ({a})")),
        ]
    })
}

fn query_text() -> impl Strategy<Value = String> {
    (
        pattern(),
        prop::option::of(predicate()),
        prop::option::of(pattern()),
        any::<bool>(),
        prop::collection::vec(
            select(vec!["r.id", "a.name AS name", "collect(DISTINCT b.name) AS bs", "rel.yield AS y", "count(*) AS n", "p"]),
            1..4,
        ),
        prop::option::of((select(vec!["r.id", "y"]), any::<bool>())),
        prop::option::of(1u32..20),
    )
        .prop_map(|(pat, pred, opt, distinct, items, order, limit)| {
            let mut q = format!("MATCH {pat}");
            if let Some(w) = pred {
                q.push_str(&format!("\nWHERE {w}"));
            }
            if let Some(o) = opt {
                q.push_str(&format!("\nOPTIONAL MATCH {o}"));
            }
            let mut items = items;
            items.dedup();
            q.push_str(&format!("\nRETURN {}{}", if distinct { "DISTINCT " } else { "" }, items.join(", ")));
            if let Some((k, desc)) = order {
                q.push_str(&format!(" ORDER BY {k}{}", if desc { " DESC" } else { "" }));
            }
            if let Some(n) = limit {
                q.push_str(&format!(" LIMIT {n}"));
            }
            q
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parse_render_round_trip(text in query_text()) {
        let q = parse(&text).map_err(|e| TestCaseError::fail(format!("{text}\n{e}")))?;
        let rendered = render(&q);
        let again = parse(&rendered).map_err(|e| TestCaseError::fail(format!("{rendered}\n{e}")))?;
        prop_assert_eq!(&again, &q);
        prop_assert_eq!(render(&again), rendered);
    }

    #[test]
    fn direction_rewrite_is_idempotent(text in query_text()) {
        let q = parse(&text).unwrap();
        let once = rewrite_directions(&q);
        let twice = rewrite_directions(&once.query);
        prop_assert_eq!(twice.changed, 0);
        prop_assert_eq!(&twice.query, &once.query);
        let t1 = rewrite_text(&text).unwrap();
        prop_assert_eq!(parse(&t1.text).unwrap(), once.query);
        prop_assert_eq!(rewrite_text(&t1.text).unwrap().changed, 0);
    }

    #[test]
    fn any_arrow_flips_in_single_step_gold_are_repaired(
        seed in 0u64..40,
        task_idx in 0usize..6,
        flips in prop::collection::vec(any::<bool>(), 8),
    ) {
        let g = common::random_graph(seed);
        let task = &catalog()[task_idx];
        prop_assume!(task.setting == Setting::SingleStep);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let p = common::random_params(task, &g, &mut rng);
        let gold_text = task.cypher(&p);
        let gold = parse(&gold_text).unwrap();
        let mut mutant = gold.clone();
        for (rel, flip) in mutant.patterns_mut().flat_map(|p| p.steps.iter_mut().map(|(r, _)| r)).zip(&flips) {
            if *flip {
                rel.direction = match rel.direction {
                    Direction::Right => Direction::Left,
                    Direction::Left => Direction::Right,
                    Direction::Undirected => Direction::Undirected,
                };
            }
        }
        let fixed = rewrite_directions(&mutant);
        prop_assert_eq!(&fixed.query, &gold);
        let want = compute_gold(task, &gold_text, &g);
        let got = compute_gold(task, &render(&fixed.query), &g);
        prop_assert_eq!(format!("{want:?}"), format!("{got:?}"));
    }

    #[test]
    fn masking_round_trips(
        parts in prop::collection::vec((smiles(), select(vec![" ", "\n", ", ", " AND "])), 1..6),
        known_all: bool,
    ) {
        let mut text = String::from("MATCH (m:Molecule) WHERE ");
        for (s, sep) in &parts {
            text.push_str(&format!("m.name = {s:?}{sep}"));
        }
        let names: BTreeSet<&str> = parts.iter().map(|(s, _)| s.as_str()).collect();
        let known = |s: &str| known_all || names.contains(s);
        let (masked, map) = mask_smiles(&text, &known);
        for s in &names {
            prop_assert!(!masked.contains(&format!("{s:?}")), "{} survives in {}", s, masked);
        }
        prop_assert_eq!(unmask_smiles(&masked, &map).unwrap(), text);
    }
}

fn path_set() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(prop::collection::vec((0u8..6).prop_map(|i| format!("r{i}")), 1..5), 0..5)
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(select(vec!["MATCH", "(", ")", "r", "reactants", "reactant", "-", ">", "RETURN", "x.name"]), 0..25)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ppr_bounds_exact_recall(pred in path_set(), gold in path_set()) {
        let s = score_multi_step(&pred, &gold);
        prop_assert!(s.ppr + 1e-12 >= s.recall, "{:?}", s);
        for v in [s.precision, s.recall, s.f1, s.ppr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let exact = score_multi_step(&gold, &gold);
        if !gold.is_empty() {
            prop_assert_eq!((exact.f1, exact.ppr), (1.0, 1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn text_scores_are_bounded(a in words(), b in words()) {
        let (x, y) = (tokenize(&a), tokenize(&b));
        for v in [bleu(&x, &y), meteor(&x, &y), rouge_l(&x, &y)] {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
        if !x.is_empty() {
            prop_assert!((rouge_l(&x, &x) - 1.0).abs() < 1e-12);
            prop_assert!((bleu(&x, &x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn key_matching_is_deterministic_and_single_stage(
        pred in prop::collection::vec(select(vec!["reactants", "Reactant", "productNames", "agent", "yield", "reaction_id", "rid", "solventName"]), 0..6),
        gold in prop::collection::vec(select(vec!["reactants", "products", "agents", "solvents", "reaction_id", "yield"]), 1..6),
    ) {
        let pred: Vec<String> = pred.into_iter().map(String::from).collect();
        let gold: Vec<String> = gold.into_iter().map(String::from).collect();
        let e = LocalTrigramEmbedder;
        let a = match_keys(&pred, &gold, Some(&e), 0.93);
        let b = match_keys(&pred, &gold, Some(&e), 0.93);
        prop_assert_eq!(&a, &b);
        for p in &pred {
            let copies = pred.iter().filter(|q| *q == p).count();
            let hits = a.matches.iter().filter(|m| &m.predicted == p).count();
            let misses = a.unmatched.iter().filter(|q| *q == p).count();
            prop_assert!(hits == 0 || misses == 0);
            prop_assert!(hits + misses <= copies);
        }
    }

    #[test]
    fn local_cosine_is_symmetric_and_bounded(a in "[ -~]{0,40}", b in "[ -~]{0,40}") {
        let e = LocalTrigramEmbedder;
        let (x, y) = (e.embed(&a).unwrap(), e.embed(&b).unwrap());
        match (cosine(&x, &y), cosine(&y, &x)) {
            (Some(s), Some(t)) => {
                prop_assert!((s - t).abs() < 1e-12);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
            }
            (None, None) => prop_assert!(a.trim().is_empty() || b.trim().is_empty() || x.iter().all(|v| *v == 0.0) || y.iter().all(|v| *v == 0.0)),
            _ => prop_assert!(false, "asymmetric"),
        }
    }

    #[test]
    fn semantic_choice_ignores_smiles(task_idx in 0usize..10, a in smiles(), b in smiles(), c in smiles(), d in smiles()) {
        let task = &catalog()[task_idx];
        let (single, multi) = default_banks();
        let bank = if task.setting == Setting::SingleStep { single } else { multi };
        let q = |t: &str, s: &str| task.question(&Params { target: t.into(), n: Some(3), source: Some(s.into()) });
        let e = LocalTrigramEmbedder;
        let pick = |question: String| select_exemplar(Shot::OneShotSemantic, &bank, &question, Some(&e), 0).unwrap()[0].title.clone();
        prop_assert_eq!(pick(q(&a, &b)), pick(q(&c, &d)));
    }

    #[test]
    fn rendered_prompts_have_no_open_slots(task_idx in 0usize..10, target in smiles(), v in 1u8..=5, strategy in select(Shot::ALL.to_vec()), seed: u64) {
        let task = &catalog()[task_idx];
        let (single, multi) = default_banks();
        let bank = if task.setting == Setting::SingleStep { single } else { multi };
        let question = task.question(&Params { target: target.clone(), n: Some(2), source: Some("CCO".into()) });
        let e = LocalTrigramEmbedder;
        let ex = select_exemplar(strategy, &bank, &question, Some(&e), seed).unwrap();
        let version = PromptVersion::builtin(task.setting, v).unwrap();
        let r = render_prompt(&version, "(:Molecule {name})", &question, &ex).unwrap();
        for slot in ["{schema}", "{question}"] {
            prop_assert!(!r.system.contains(slot) && !r.user.contains(slot));
        }
        prop_assert!(r.user.contains(&target));
    }

    #[test]
    fn questions_name_the_target_once_per_slot(task_idx in 0usize..10, t in 0usize..50_000, s in 0usize..50_000) {
        prop_assume!(t != s);
        let task = &catalog()[task_idx];
        let (target, source) = (molecule_name(t), molecule_name(s));
        let q = task.question(&Params { target: target.clone(), n: Some(2), source: Some(source.clone()) });
        prop_assert_eq!(q.matches(&target).count(), task.nl_template.matches("{target}").count());
        prop_assert_eq!(q.matches(&source).count(), task.nl_template.matches("{source}").count());
    }
}

#[test]
fn prompt_ladders_are_monotone() {
    for setting in [Setting::SingleStep, Setting::MultiStep] {
        let blocks: Vec<BTreeSet<&str>> = VERSIONS
            .map(|v| PromptVersion::builtin(setting, v).unwrap().block_ids().into_iter().collect())
            .collect();
        for w in blocks.windows(2) {
            assert!(w[0].is_subset(&w[1]), "{setting:?}: {:?} not within {:?}", w[0], w[1]);
        }
    }
}
