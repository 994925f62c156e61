use ambient_core::gateway::edge::{classify_events, EdgeConfig};
use ambient_core::label::ActivityLabel::*;
use ambient_core::syngen::*;
use ambient_core::train::{train, TrainConfig};

fn main() {
    let table = SignatureTable::default_table();
    let corpus = build_corpus(12, 7, table).unwrap();
    let config = TrainConfig { epochs: 12, seed: 7, ..TrainConfig::default() };
    let params = train(&corpus.train, &config).unwrap().params;
    let edge = EdgeConfig::default();
    let mut ok = vec![];
    for seed in 1u64..=40 {
        for dur in [6.0, 10.0] {
            let script = ScenarioScript::new(vec![(DoorPass, 6.0), (Paperdis, dur)], seed).unwrap();
            let trace = generate_scenario(&script, table).unwrap();
            let events = classify_events(&trace, &params, &edge).unwrap();
            let labels: Vec<_> = events.iter().map(|e| e.label).collect();
            if labels == vec![DoorPass, Paperdis] {
                ok.push((seed, dur));
            }
        }
    }
    println!("working (seed, paperdis_dur): {ok:?}");
}
