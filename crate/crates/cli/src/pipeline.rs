//! Task assembly shared by the subcommands: corpus, fitted target, prompt
//! pools, and supervised pretraining.

use ppow_core::corpus::{sample_grammar_corpus, GrammarSpec};
use ppow_core::models::{fit_tabular_target, sft_step, TabularTarget, WarmupSchedule};
use ppow_core::specdec::drafter_feature;
use ppow_core::{DrafterParameters, Error, Result, RngStream, TokenSeq};
use rand::RngCore;

/// Where training text comes from.
#[derive(Debug, Clone)]
pub enum TaskSource {
    /// Sample the corpus and held-out prompts from a grammar.
    Grammar(GrammarSpec),
    /// A fixed corpus; held-out prompts are given or split off its tail.
    Corpus {
        corpus: Vec<TokenSeq>,
        eval_prompts: Option<Vec<TokenSeq>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub vocab_size: usize,
    pub target_order: usize,
    pub smoothing: f64,
    pub corpus_sequences: usize,
    pub corpus_length: usize,
    pub prompt_len: usize,
    pub eval_prompts: usize,
}

/// Everything a run needs besides the drafter.
#[derive(Debug, Clone)]
pub struct Task {
    pub corpus: Vec<TokenSeq>,
    pub target: TabularTarget,
    pub train_prompts: Vec<TokenSeq>,
    pub eval_prompts: Vec<TokenSeq>,
}

fn derived_seed(seed: u64, label: &str) -> u64 {
    RngStream::new(seed).child("task").child(label).next_u64()
}

fn prompts_from(corpus: &[TokenSeq], len: usize) -> Vec<TokenSeq> {
    corpus.iter().filter(|s| s.len() >= len).map(|s| s[..len].to_vec()).collect()
}

pub fn build_task(source: &TaskSource, spec: &TaskSpec, seed: u64) -> Result<Task> {
    if spec.prompt_len == 0 {
        return Err(Error::Config("prompt_len must be ≥ 1".into()));
    }
    let (corpus, eval_prompts) = match source {
        TaskSource::Grammar(g) => {
            if g.vocab_size() != spec.vocab_size {
                return Err(Error::Config(format!(
                    "grammar vocabulary {} differs from vocab_size {}",
                    g.vocab_size(),
                    spec.vocab_size
                )));
            }
            let corpus = sample_grammar_corpus(g, spec.corpus_sequences, spec.corpus_length, derived_seed(seed, "corpus"))?;
            let held = sample_grammar_corpus(g, spec.eval_prompts, spec.prompt_len.max(g.order()), derived_seed(seed, "eval"))?;
            (corpus, prompts_from(&held, spec.prompt_len))
        }
        TaskSource::Corpus { corpus, eval_prompts: Some(p) } => (corpus.clone(), p.clone()),
        TaskSource::Corpus { corpus, eval_prompts: None } => {
            if corpus.len() <= spec.eval_prompts {
                return Err(Error::Config(format!(
                    "corpus of {} sequences cannot hold out {} prompts",
                    corpus.len(),
                    spec.eval_prompts
                )));
            }
            let (train, held) = corpus.split_at(corpus.len() - spec.eval_prompts);
            (train.to_vec(), prompts_from(held, spec.prompt_len))
        }
    };
    if corpus.is_empty() {
        return Err(Error::Config("corpus is empty".into()));
    }
    let train_prompts = prompts_from(&corpus, spec.prompt_len);
    if train_prompts.is_empty() || eval_prompts.is_empty() {
        return Err(Error::Config(format!("no sequences reach prompt_len {}", spec.prompt_len)));
    }
    let target = fit_tabular_target(&corpus, spec.vocab_size, spec.target_order, spec.smoothing);
    Ok(Task {
        corpus,
        target,
        train_prompts,
        eval_prompts,
    })
}

/// Cross-entropy pretraining on corpus next-token pairs. Step `s` draws a
/// sequence and split point from `RngStream::new(seed).child("sft").child_idx("step", s)`.
/// Returns the per-step loss before each update.
pub fn sft_pretrain(
    drafter: &mut DrafterParameters,
    target: &TabularTarget,
    corpus: &[TokenSeq],
    steps: usize,
    schedule: &WarmupSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    let usable: Vec<&TokenSeq> = corpus.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() && steps > 0 {
        return Err(Error::InvalidInput("corpus has no sequence with two tokens".into()));
    }
    let root = RngStream::new(seed).child("sft");
    let mut losses = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut rng = root.child_idx("step", s as u64);
        let seq = usable[rng.below(usable.len())];
        let t = 1 + rng.below(seq.len() - 1);
        let prefix = &seq[..t];
        let feature = drafter_feature(drafter, target, prefix);
        losses.push(sft_step(drafter, prefix, seq[t], feature.as_ref(), schedule.lr_at(s))?);
    }
    Ok(losses)
}
