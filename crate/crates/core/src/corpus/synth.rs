use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_for, Role};

/// Recipe for a corpus with one planted co-occurrence trap.
///
/// The bulk of the corpus makes `context_word` and `frequent_answer`
/// co-occur heavily. Trap sentences contain `context_word` plus a rare
/// cue token, and the slot that co-occurrence statistics would fill
/// with `frequent_answer` actually holds the cue's own answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapSpec {
    pub sentences: usize,
    pub filler_types: usize,
    pub sentence_len: usize,
    /// Fraction of sentences containing the distractor pair; allocated
    /// exactly (rounded up), not sampled, so the rate is guaranteed.
    pub pair_fraction: f64,
    pub trap_fraction: f64,
    pub context_word: String,
    pub frequent_answer: String,
    /// (cue token, correct answer) pairs; the mapping never varies.
    pub cues: Vec<(String, String)>,
}

impl Default for TrapSpec {
    fn default() -> Self {
        TrapSpec {
            sentences: 4000,
            filler_types: 80,
            sentence_len: 12,
            pair_fraction: 0.4,
            trap_fraction: 0.2,
            context_word: "anchor".into(),
            frequent_answer: "harbor".into(),
            cues: vec![
                ("compass".into(), "voyage".into()),
                ("lantern".into(), "cellar".into()),
                ("chisel".into(), "quarry".into()),
                ("sextant".into(), "summit".into()),
            ],
        }
    }
}

/// One emitted trap sentence with the slots the evaluator needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapSentence {
    pub line: usize,
    pub text: String,
    /// Token index (within the line) of the answer slot.
    pub trap_index: usize,
    pub cue_index: usize,
    pub cue: String,
    pub answer: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub lines: Vec<String>,
    pub traps: Vec<TrapSentence>,
}

impl SynthCorpus {
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

/// Deterministic planted-pattern corpus: same spec and seed, same bytes.
pub fn synth_corpus(spec: &TrapSpec, seed: u64) -> SynthCorpus {
    assert!(
        spec.pair_fraction + spec.trap_fraction <= 1.0,
        "pair and trap fractions exceed the corpus"
    );
    assert!(!spec.cues.is_empty(), "a trap corpus needs at least one cue");
    assert!(spec.sentence_len >= 4, "sentences must fit the planted tokens");
    let mut rng = stream_for(seed, Role::Synth);

    #[derive(Clone, Copy, PartialEq)]
    enum Kind {
        Pair,
        Trap,
        Filler,
    }
    let n_pair = (spec.sentences as f64 * spec.pair_fraction).ceil() as usize;
    let n_trap = (spec.sentences as f64 * spec.trap_fraction).ceil() as usize;
    let mut kinds = Vec::with_capacity(spec.sentences);
    kinds.extend(std::iter::repeat_n(Kind::Pair, n_pair.min(spec.sentences)));
    kinds.extend(std::iter::repeat_n(Kind::Trap, n_trap.min(spec.sentences - kinds.len())));
    kinds.extend(std::iter::repeat_n(Kind::Filler, spec.sentences - kinds.len()));
    kinds.shuffle(&mut rng);

    let filler = |rng: &mut rand_chacha::ChaCha8Rng, spec: &TrapSpec| {
        format!("w{:03}", rng.random_range(0..spec.filler_types))
    };

    let mut lines = Vec::with_capacity(spec.sentences);
    let mut traps = Vec::new();
    for (line_idx, kind) in kinds.iter().enumerate() {
        let len = spec.sentence_len;
        let mut toks: Vec<String> = (0..len).map(|_| filler(&mut rng, spec)).collect();
        match kind {
            Kind::Filler => {}
            Kind::Pair => {
                // the pair sits adjacent, so a small counting window
                // sees the pair far more often than any filler
                let a = rng.random_range(0..len - 1);
                toks[a] = spec.context_word.clone();
                toks[a + 1] = spec.frequent_answer.clone();
            }
            Kind::Trap => {
                let cue_idx = rng.random_range(0..spec.cues.len());
                let (cue, answer) = spec.cues[cue_idx].clone();
                // the trap slot follows the context word — exactly where
                // co-occurrence statistics scream the frequent answer —
                // while the cue elsewhere implies the true one
                let a = rng.random_range(0..len - 1);
                let slot = a + 1;
                let cue_pos = loop {
                    let c = rng.random_range(0..len);
                    if c != a && c != slot {
                        break c;
                    }
                };
                toks[a] = spec.context_word.clone();
                toks[slot] = answer.clone();
                toks[cue_pos] = cue.clone();
                traps.push(TrapSentence {
                    line: line_idx,
                    text: String::new(), // filled below
                    trap_index: slot,
                    cue_index: cue_pos,
                    cue,
                    answer,
                });
            }
        }
        let text = toks.join(" ");
        if let Some(t) = traps.last_mut() {
            if t.line == line_idx {
                t.text = text.clone();
            }
        }
        lines.push(text);
    }
    SynthCorpus { lines, traps }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let spec = TrapSpec {
            sentences: 200,
            ..TrapSpec::default()
        };
        let a = synth_corpus(&spec, 11).text();
        let b = synth_corpus(&spec, 11).text();
        assert_eq!(a, b);
        let c = synth_corpus(&spec, 12).text();
        assert_ne!(a, c);
    }

    #[test]
    fn pair_rate_is_at_least_the_specified_fraction() {
        let spec = TrapSpec {
            sentences: 500,
            pair_fraction: 0.35,
            ..TrapSpec::default()
        };
        let corpus = synth_corpus(&spec, 3);
        let both = corpus
            .lines
            .iter()
            .filter(|l| {
                let toks = crate::corpus::tokenize(l);
                toks.iter().any(|t| t == &spec.context_word)
                    && toks.iter().any(|t| t == &spec.frequent_answer)
            })
            .count();
        assert!(
            both as f64 >= spec.pair_fraction * spec.sentences as f64,
            "{both} pair sentences of {}",
            spec.sentences
        );
    }

    #[test]
    fn cue_answer_mapping_is_consistent_in_every_trap() {
        let spec = TrapSpec {
            sentences: 400,
            ..TrapSpec::default()
        };
        let corpus = synth_corpus(&spec, 5);
        assert!(!corpus.traps.is_empty());
        for trap in &corpus.traps {
            let toks = crate::corpus::tokenize(&trap.text);
            assert_eq!(toks[trap.cue_index], trap.cue);
            assert_eq!(toks[trap.trap_index], trap.answer);
            let expected = spec
                .cues
                .iter()
                .find(|(c, _)| *c == trap.cue)
                .map(|(_, a)| a.clone())
                .unwrap();
            assert_eq!(trap.answer, expected);
            // the frequent answer never appears in a trap sentence
            assert!(!toks.iter().any(|t| t == &spec.frequent_answer));
        }
    }
}
