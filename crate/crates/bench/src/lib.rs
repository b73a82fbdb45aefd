//! Benchmark fixtures.

use tang_core::model::{ModelConfig, ResidualMlp};
use tang_core::ruleset::{generate_ruleset, generate_traffic, RuleGenConfig};
use tang_core::{Classifier, Packet, Ruleset, Schema, TssIndex};

pub struct Fixture {
    pub ruleset: Ruleset,
    pub classifier: Classifier,
    pub packets: Vec<Packet>,
}

impl Fixture {
    pub fn tss(&self) -> &TssIndex {
        self.classifier.tss()
    }
}

/// ACL-style 5-tuple ruleset, an untrained desk-size model, and matching
/// traffic.
pub fn fixture(rules: usize, packets: usize, seed: u64) -> Fixture {
    let ruleset = generate_ruleset(&Schema::five_tuple(), &RuleGenConfig::acl(rules, seed));
    let tss = TssIndex::build(&ruleset);
    let model = ResidualMlp::new(ModelConfig::desk(7, tss.tuple_count()), seed)
        .expect("desk config is valid");
    let classifier = Classifier::with_model(model, tss).expect("shapes match the index");
    let packets = generate_traffic(&ruleset, packets, seed + 1).packets;
    Fixture {
        ruleset,
        classifier,
        packets,
    }
}
