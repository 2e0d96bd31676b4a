//! Training-mode registry. Every objective variant sits behind the
//! [`TrainMode`] trait and is selected by name at runtime, so the CLI,
//! the trainer, and the experiment driver all dispatch through the same
//! table.

use crate::objectives::{
    ConstantGuidance, GroundTruthGuidance, GuidanceStrategy, StandardGuidance,
};

use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// One masked-language model; an auxiliary generator appears only
    /// when guidance needs mis-predictions.
    Bert,
    /// Generator plus replaced-token-detection discriminator.
    Electra,
}

pub trait TrainMode: Send + Sync {
    fn name(&self) -> &'static str;

    fn backbone(&self) -> Backbone;

    /// The guidance strategy, or `None` for a plain backbone.
    fn guidance(&self, config: &TrainConfig) -> Option<Box<dyn GuidanceStrategy>>;

    /// Whether a small auxiliary generator trains alongside the main
    /// model. Always true on the two-model backbone; true on the
    /// one-model backbone only when guidance needs mis-predictions.
    fn needs_aux_generator(&self) -> bool {
        match self.backbone() {
            Backbone::Electra => true,
            Backbone::Bert => self.uses_gamma(),
        }
    }

    fn requires_context_matrix(&self) -> bool {
        self.uses_gamma()
    }

    /// Whether the discriminator weight λ participates in this mode.
    fn uses_lambda(&self) -> bool {
        matches!(self.backbone(), Backbone::Electra)
    }

    /// Whether the guidance weight γ participates in this mode.
    fn uses_gamma(&self) -> bool;
}

struct Bert;

impl TrainMode for Bert {
    fn name(&self) -> &'static str {
        "bert"
    }
    fn backbone(&self) -> Backbone {
        Backbone::Bert
    }
    fn guidance(&self, _: &TrainConfig) -> Option<Box<dyn GuidanceStrategy>> {
        None
    }
    fn uses_gamma(&self) -> bool {
        false
    }
}

struct Electra;

impl TrainMode for Electra {
    fn name(&self) -> &'static str {
        "electra"
    }
    fn backbone(&self) -> Backbone {
        Backbone::Electra
    }
    fn guidance(&self, _: &TrainConfig) -> Option<Box<dyn GuidanceStrategy>> {
        None
    }
    fn uses_gamma(&self) -> bool {
        false
    }
}

struct BertMpa;

impl TrainMode for BertMpa {
    fn name(&self) -> &'static str {
        "bert-mpa"
    }
    fn backbone(&self) -> Backbone {
        Backbone::Bert
    }
    fn guidance(&self, _: &TrainConfig) -> Option<Box<dyn GuidanceStrategy>> {
        Some(Box::new(StandardGuidance))
    }
    fn uses_gamma(&self) -> bool {
        true
    }
}

struct ElectraMpa;

impl TrainMode for ElectraMpa {
    fn name(&self) -> &'static str {
        "electra-mpa"
    }
    fn backbone(&self) -> Backbone {
        Backbone::Electra
    }
    fn guidance(&self, _: &TrainConfig) -> Option<Box<dyn GuidanceStrategy>> {
        Some(Box::new(StandardGuidance))
    }
    fn uses_gamma(&self) -> bool {
        true
    }
}

struct MpaGround;

impl TrainMode for MpaGround {
    fn name(&self) -> &'static str {
        "mpa-ground"
    }
    fn backbone(&self) -> Backbone {
        Backbone::Electra
    }
    fn guidance(&self, _: &TrainConfig) -> Option<Box<dyn GuidanceStrategy>> {
        Some(Box::new(GroundTruthGuidance))
    }
    fn uses_gamma(&self) -> bool {
        true
    }
}

struct MpaConstant;

impl TrainMode for MpaConstant {
    fn name(&self) -> &'static str {
        "mpa-constant"
    }
    fn backbone(&self) -> Backbone {
        Backbone::Electra
    }
    fn guidance(&self, config: &TrainConfig) -> Option<Box<dyn GuidanceStrategy>> {
        Some(Box::new(ConstantGuidance {
            value: config.constant_c.unwrap_or(DEFAULT_CONSTANT_ELECTRA),
        }))
    }
    fn uses_gamma(&self) -> bool {
        true
    }
}

/// Optimal constants reported for the constant-vector ablation.
pub const DEFAULT_CONSTANT_ELECTRA: f64 = 0.9;
pub const DEFAULT_CONSTANT_BERT: f64 = 0.8;

static REGISTRY: &[&dyn TrainMode] = &[
    &Bert,
    &Electra,
    &BertMpa,
    &ElectraMpa,
    &MpaGround,
    &MpaConstant,
];

pub fn lookup(name: &str) -> Option<&'static dyn TrainMode> {
    REGISTRY.iter().copied().find(|m| m.name() == name)
}

pub fn mode_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|m| m.name()).collect()
}
