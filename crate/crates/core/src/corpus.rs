//! Vocabularies, tokenization, stochastic n-gram grammars, and training-prefix
//! iteration.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::prob::ProbVector;
use crate::rng::RngStream;
use crate::{TokenId, TokenSeq};

/// Single-character symbols used by synthetic vocabularies (up to 64).
const SYNTHETIC_ALPHABET: &str = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ+/";

#[derive(Debug, Clone, PartialEq, Eq)]
enum VocabKind {
    Bytes,
    Symbols,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    kind: VocabKind,
    symbols: Vec<String>,
}

impl Vocabulary {
    /// The 256-entry byte vocabulary; token id equals byte value.
    pub fn byte_level() -> Self {
        let symbols = (0u8..=255)
            .map(|b| {
                if b.is_ascii_graphic() {
                    (b as char).to_string()
                } else {
                    format!("\\x{b:02x}")
                }
            })
            .collect();
        Self {
            kind: VocabKind::Bytes,
            symbols,
        }
    }

    /// Synthetic vocabulary of `size` single-character symbols, `2 ≤ size ≤ 64`.
    pub fn synthetic(size: usize) -> Result<Self> {
        if !(2..=SYNTHETIC_ALPHABET.len()).contains(&size) {
            return Err(Error::InvalidVocabulary(format!("synthetic size {size} outside [2, 64]")));
        }
        Self::from_symbols(SYNTHETIC_ALPHABET.chars().take(size).map(String::from).collect())
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(Error::InvalidVocabulary("need at least two symbols".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &symbols {
            if s.is_empty() {
                return Err(Error::InvalidVocabulary("empty symbol".into()));
            }
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidVocabulary(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self {
            kind: VocabKind::Symbols,
            symbols,
        })
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn is_byte_level(&self) -> bool {
        self.kind == VocabKind::Bytes
    }
}

/// Splits `text` into token ids. Symbol vocabularies use greedy longest match.
pub fn tokenize(text: &[u8], vocab: &Vocabulary) -> Result<TokenSeq> {
    if vocab.is_byte_level() {
        return Ok(text.iter().map(|&b| b as TokenId).collect());
    }
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        let best = vocab
            .symbols
            .iter()
            .enumerate()
            .filter(|(_, s)| rest.starts_with(s.as_bytes()))
            .max_by_key(|(i, s)| (s.len(), std::cmp::Reverse(*i)));
        match best {
            Some((id, s)) => {
                out.push(id as TokenId);
                pos += s.len();
            }
            None => return Err(Error::SymbolNotInVocabulary { offset: pos }),
        }
    }
    Ok(out)
}

pub fn detokenize(tokens: &[TokenId], vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        if t as usize >= vocab.size() {
            return Err(Error::InvalidInput(format!("token id {t} outside vocabulary of {}", vocab.size())));
        }
        if vocab.is_byte_level() {
            out.push(t as u8);
        } else {
            out.extend_from_slice(vocab.symbols[t as usize].as_bytes());
        }
    }
    Ok(out)
}

/// Ground-truth n-gram generative process: each row is the next-token
/// distribution given the previous `order − 1` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarSpec {
    order: usize,
    vocab_size: usize,
    rows: BTreeMap<Vec<TokenId>, ProbVector>,
    start_contexts: Vec<Vec<TokenId>>,
    start: ProbVector,
}

impl GrammarSpec {
    pub fn new(
        order: usize,
        vocab_size: usize,
        rows: BTreeMap<Vec<TokenId>, ProbVector>,
        start_contexts: Vec<Vec<TokenId>>,
        start: ProbVector,
    ) -> Result<Self> {
        let spec = Self {
            order,
            vocab_size,
            rows,
            start_contexts,
            start,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Order-1 grammar with a single context-free row.
    pub fn unigram(probs: ProbVector) -> Self {
        let vocab_size = probs.len();
        let rows = BTreeMap::from([(Vec::new(), probs)]);
        Self {
            order: 1,
            vocab_size,
            rows,
            start_contexts: vec![Vec::new()],
            start: ProbVector::one_hot(1, 0),
        }
    }

    /// Random grammar with one Dirichlet(`concentration`) row per context and a
    /// uniform start over all contexts. Small concentrations give peaked rows.
    pub fn random(vocab_size: usize, order: usize, concentration: f64, seed: u64) -> Result<Self> {
        if order == 0 || vocab_size < 2 {
            return Err(Error::InvalidGrammar("order must be ≥ 1 and vocabulary ≥ 2".into()));
        }
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidGrammar(format!("concentration {concentration} must be positive")));
        }
        let ctx_len = order - 1;
        let n_ctx = vocab_size
            .checked_pow(ctx_len as u32)
            .filter(|&n| n <= 1 << 20)
            .ok_or_else(|| Error::InvalidGrammar("too many contexts".into()))?;
        let mut rng = RngStream::new(seed).child("grammar");
        let mut rows = BTreeMap::new();
        let mut contexts = Vec::with_capacity(n_ctx);
        for idx in 0..n_ctx {
            let ctx = index_to_context(idx, vocab_size, ctx_len);
            rows.insert(ctx.clone(), rng.dirichlet(concentration, vocab_size));
            contexts.push(ctx);
        }
        Self::new(order, vocab_size, rows, contexts, ProbVector::uniform(n_ctx))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Next-token distribution given the full history (only the last
    /// `order − 1` tokens matter).
    pub fn next_dist(&self, history: &[TokenId]) -> Option<&ProbVector> {
        let n = self.order - 1;
        if history.len() < n {
            return None;
        }
        self.rows.get(&history[history.len() - n..])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[TokenId], &ProbVector)> {
        self.rows.iter().map(|(k, v)| (k.as_slice(), v))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGrammar(m));
        if self.order == 0 {
            return bad("order must be ≥ 1".into());
        }
        if self.vocab_size < 2 {
            return bad("vocabulary must have ≥ 2 symbols".into());
        }
        if self.start_contexts.len() != self.start.len() {
            return bad("start distribution length differs from start-context count".into());
        }
        for (ctx, row) in &self.rows {
            if ctx.len() != self.order - 1 {
                return bad(format!("context {ctx:?} has length {} (expected {})", ctx.len(), self.order - 1));
            }
            if row.len() != self.vocab_size {
                return bad(format!("row {ctx:?} has {} entries", row.len()));
            }
            if ctx.iter().any(|&t| t as usize >= self.vocab_size) {
                return bad(format!("context {ctx:?} has out-of-range token"));
            }
        }
        // Every context reachable from a start context needs a row.
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        for (ctx, &p) in self.start_contexts.iter().zip(self.start.as_slice()) {
            if ctx.len() != self.order - 1 {
                return bad(format!("start context {ctx:?} has wrong length"));
            }
            if p > 0.0 && seen.insert(ctx.clone()) {
                queue.push_back(ctx.clone());
            }
        }
        while let Some(ctx) = queue.pop_front() {
            let Some(row) = self.rows.get(&ctx) else {
                return bad(format!("reachable context {ctx:?} has no row"));
            };
            for (y, &p) in row.as_slice().iter().enumerate() {
                if p > 0.0 && !ctx.is_empty() {
                    let mut next = ctx[1..].to_vec();
                    next.push(y as TokenId);
                    if seen.insert(next.clone()) {
                        queue.push_back(next);
                    }
                }
            }
        }
        Ok(())
    }

    /// Plain-text table: `order N`, `vocab V`, `start <ctx> = <p>` lines, then
    /// one `<ctx> -> p_0 … p_{V−1}` line per row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |ctx: &[TokenId]| ctx.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(s, "order {}", self.order).unwrap();
        writeln!(s, "vocab {}", self.vocab_size).unwrap();
        for (ctx, p) in self.start_contexts.iter().zip(self.start.as_slice()) {
            writeln!(s, "start {} = {:?}", join(ctx), p).unwrap();
        }
        for (ctx, row) in &self.rows {
            let probs: Vec<String> = row.as_slice().iter().map(|p| format!("{p:?}")).collect();
            let lhs = join(ctx);
            if lhs.is_empty() {
                writeln!(s, "-> {}", probs.join(" ")).unwrap();
            } else {
                writeln!(s, "{lhs} -> {}", probs.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut order = None;
        let mut vocab = None;
        let mut starts = Vec::new();
        let mut start_w = Vec::new();
        let mut rows = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |m: &str| Error::GrammarParse {
                line: line_no,
                message: m.to_string(),
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("order ") {
                order = Some(rest.trim().parse::<usize>().map_err(|_| err("bad order"))?);
            } else if let Some(rest) = line.strip_prefix("vocab ") {
                vocab = Some(rest.trim().parse::<usize>().map_err(|_| err("bad vocab"))?);
            } else if let Some(rest) = line.strip_prefix("start") {
                let (ctx, w) = rest.split_once('=').ok_or_else(|| err("start line needs '='"))?;
                starts.push(parse_tokens(ctx).map_err(|_| err("bad start context"))?);
                start_w.push(w.trim().parse::<f64>().map_err(|_| err("bad start weight"))?);
            } else if let Some((ctx, probs)) = line.split_once("->") {
                let ctx = parse_tokens(ctx).map_err(|_| err("bad context"))?;
                let probs = probs
                    .split_whitespace()
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err("bad probability"))?;
                let row = ProbVector::new(probs).map_err(|e| err(&e.to_string()))?;
                if rows.insert(ctx, row).is_some() {
                    return Err(err("duplicate context row"));
                }
            } else {
                return Err(err("unrecognized line"));
            }
        }
        let order = order.ok_or_else(|| Error::InvalidGrammar("missing `order` line".into()))?;
        let vocab = vocab.ok_or_else(|| Error::InvalidGrammar("missing `vocab` line".into()))?;
        if order == 1 && starts.is_empty() {
            starts.push(Vec::new());
            start_w.push(1.0);
        }
        Self::new(order, vocab, rows, starts, ProbVector::new(start_w)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

fn index_to_context(mut idx: usize, vocab: usize, len: usize) -> Vec<TokenId> {
    let mut ctx = vec![0; len];
    for slot in ctx.iter_mut().rev() {
        *slot = (idx % vocab) as TokenId;
        idx /= vocab;
    }
    ctx
}

fn parse_tokens(s: &str) -> std::result::Result<Vec<TokenId>, std::num::ParseIntError> {
    s.split_whitespace().map(str::parse::<TokenId>).collect()
}

/// Draws `num_sequences` i.i.d. sequences of `length` tokens. Sequence `i`
/// uses its own labeled stream, so corpora can be sharded by index.
pub fn sample_grammar_corpus(spec: &GrammarSpec, num_sequences: usize, length: usize, seed: u64) -> Result<Vec<TokenSeq>> {
    if length < spec.order {
        return Err(Error::InvalidInput(format!(
            "sequence length {length} shorter than grammar order {}",
            spec.order
        )));
    }
    let root = RngStream::new(seed).child("corpus");
    (0..num_sequences)
        .map(|i| {
            let mut rng = root.child_idx("seq", i as u64);
            let start = rng.categorical(&spec.start);
            let mut seq = spec.start_contexts[start as usize].clone();
            seq.reserve(length);
            while seq.len() < length {
                let row = spec
                    .next_dist(&seq)
                    .ok_or_else(|| Error::InvalidGrammar("sampled into a context without a row".into()))?;
                seq.push(rng.categorical(row));
            }
            Ok(seq)
        })
        .collect()
}

/// One whitespace-separated token-id sequence per line.
pub fn write_corpus(path: &Path, corpus: &[TokenSeq]) -> Result<()> {
    let mut s = String::new();
    for seq in corpus {
        let line: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    Ok(std::fs::write(path, s)?)
}

pub fn read_corpus(path: &Path, vocab_size: usize) -> Result<Vec<TokenSeq>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq = parse_tokens(line).map_err(|e| Error::CorpusParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::CorpusParse {
                line: i + 1,
                message: format!("token {bad} outside vocabulary of {vocab_size}"),
            });
        }
        out.push(seq);
    }
    Ok(out)
}

/// Every `(prefix, continuation)` split with `|prefix| ≥ min_prefix` and at
/// least `k` continuation tokens, stride 1.
pub struct TrainingPrefixes<'a> {
    corpus: &'a [TokenSeq],
    min_prefix: usize,
    k: usize,
    seq: usize,
    pos: usize,
    skipped: usize,
}

pub fn iter_training_prefixes(corpus: &[TokenSeq], min_prefix: usize, k: usize) -> TrainingPrefixes<'_> {
    let skipped = corpus.iter().filter(|s| s.len() < min_prefix + k).count();
    if skipped > 0 {
        log::warn!("skipping {skipped} sequences shorter than {} tokens", min_prefix + k);
    }
    TrainingPrefixes {
        corpus,
        min_prefix,
        k,
        seq: 0,
        pos: min_prefix,
        skipped,
    }
}

impl TrainingPrefixes<'_> {
    /// Sequences too short to hold a single window.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<'a> Iterator for TrainingPrefixes<'a> {
    type Item = (&'a [TokenId], &'a [TokenId]);

    fn next(&mut self) -> Option<Self::Item> {
        while let Some(seq) = self.corpus.get(self.seq) {
            if self.pos + self.k <= seq.len() {
                let item = seq.split_at(self.pos);
                self.pos += 1;
                return Some(item);
            }
            self.seq += 1;
            self.pos = self.min_prefix;
        }
        None
    }
}
