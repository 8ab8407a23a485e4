use gsc_core::graph::{validate_graph, ANSWER, ANSWER_LINK, CONTEXT, OTHER, QUESTION, QUESTION_LINK};
use gsc_core::synth::{generate_synthetic, PlantedSignal, SyntheticTaskConfig};
use gsc_core::Error;
use std::collections::HashSet;

fn config(seed: u64) -> SyntheticTaskConfig {
    SyntheticTaskConfig {
        instances: 300,
        seed,
        ..SyntheticTaskConfig::default()
    }
}

#[test]
fn every_choice_is_valid_and_symmetric() {
    let cfg = config(5);
    let data = generate_synthetic(&cfg).unwrap();
    assert_eq!(data.len(), cfg.instances);
    let ids: HashSet<_> = data.iter().map(|d| d.id.clone()).collect();
    assert_eq!(ids.len(), data.len());
    for inst in &data {
        inst.validate(&cfg.vocab).unwrap();
        assert_eq!(inst.choices.len(), cfg.choices);
        assert!(inst.label < cfg.choices);
        for c in &inst.choices {
            let g = &c.graph;
            assert!(validate_graph(g, &cfg.vocab).is_ok());
            assert!(g.is_symmetric(&cfg.vocab));
            let count = |t: usize| g.node_types.iter().filter(|&&x| x == t).count();
            assert_eq!(count(CONTEXT), 1);
            assert!((cfg.question_nodes.0..=cfg.question_nodes.1).contains(&count(QUESTION)));
            assert!((cfg.answer_nodes.0..=cfg.answer_nodes.1).contains(&count(ANSWER)));
            assert!((cfg.other_nodes.0..=cfg.other_nodes.1).contains(&count(OTHER)));
            for (i, &t) in g.node_types.iter().enumerate() {
                let link = match t {
                    QUESTION => QUESTION_LINK,
                    ANSWER => ANSWER_LINK,
                    _ => continue,
                };
                assert!(g.edges.iter().any(|e| e.src == i && e.dst == 0 && e.rel == link));
            }
        }
    }
}

#[test]
fn gold_choice_carries_the_planted_edges() {
    let cfg = SyntheticTaskConfig {
        noise_relations: vec![0, 1, 2],
        ..config(8)
    };
    let p = &cfg.planted[0];
    let (lo, hi) = (p.delta, p.delta_max.unwrap());
    for inst in generate_synthetic(&cfg).unwrap() {
        for (i, c) in inst.choices.iter().enumerate() {
            let g = &c.graph;
            let n = g.edges.iter().filter(|e| e.rel == p.rel && g.triplet(e).head == p.head_type && g.triplet(e).tail == p.tail_type).count();
            if i == inst.label {
                assert!((lo..=hi).contains(&n), "{n}");
            } else {
                assert_eq!(n, 0);
            }
        }
    }
}

#[test]
fn same_seed_same_corpus() {
    assert_eq!(generate_synthetic(&config(1)).unwrap(), generate_synthetic(&config(1)).unwrap());
    assert_ne!(generate_synthetic(&config(1)).unwrap(), generate_synthetic(&config(2)).unwrap());
}

#[test]
fn prefix_of_a_larger_corpus_is_the_smaller_corpus() {
    let small = generate_synthetic(&SyntheticTaskConfig { instances: 50, ..config(4) }).unwrap();
    let big = generate_synthetic(&config(4)).unwrap();
    assert_eq!(small[..], big[..50]);
}

#[test]
fn bad_configs_are_rejected() {
    let bad = [
        SyntheticTaskConfig { choices: 1, ..config(0) },
        SyntheticTaskConfig { other_nodes: (4, 2), ..config(0) },
        SyntheticTaskConfig { planted: vec![PlantedSignal::new(OTHER, 5, QUESTION, 0)], ..config(0) },
        SyntheticTaskConfig { planted: vec![PlantedSignal::new(OTHER, 99, QUESTION, 1)], ..config(0) },
    ];
    for cfg in bad {
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
    }
    let unhostable = SyntheticTaskConfig {
        question_nodes: (1, 1),
        planted: vec![PlantedSignal::new(QUESTION, 5, QUESTION, 1)],
        ..config(0)
    };
    assert!(matches!(generate_synthetic(&unhostable), Err(Error::Generation(_))));
}
