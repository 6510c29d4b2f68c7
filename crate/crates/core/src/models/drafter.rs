//! Fixed-context MLP drafter: token embeddings (plus an optional projected
//! target feature) feed one tanh hidden layer and a softmax output layer.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::target::{DraftPolicy, FeatureVector};
use crate::error::{Error, Result};
use crate::prob::ProbVector;
use crate::rng::RngStream;
use crate::TokenId;

/// Half-width of the uniform initialization interval.
const INIT_SCALE: f64 = 0.05;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrafterShape {
    pub vocab: usize,
    pub embed: usize,
    /// Target feature width; 0 disables feature conditioning.
    pub feature: usize,
    pub context: usize,
    pub hidden: usize,
}

impl DrafterShape {
    pub fn input_dim(&self) -> usize {
        self.context * self.embed + if self.feature > 0 { self.embed } else { 0 }
    }

    /// `(name, dims)` of every parameter array in storage order.
    pub fn arrays(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut v = vec![("embedding", vec![self.vocab, self.embed])];
        if self.feature > 0 {
            v.push(("feature_proj", vec![self.feature, self.embed]));
        }
        v.push(("hidden_weight", vec![self.input_dim(), self.hidden]));
        v.push(("hidden_bias", vec![self.hidden]));
        v.push(("output_weight", vec![self.hidden, self.vocab]));
        v.push(("output_bias", vec![self.vocab]));
        v
    }

    pub fn num_params(&self) -> usize {
        self.arrays().iter().map(|(_, d)| d.iter().product::<usize>()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.embed == 0 || self.context == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("degenerate drafter shape {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for DrafterShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "vocab={} embed={} feature={} context={} hidden={}",
            self.vocab, self.embed, self.feature, self.context, self.hidden
        )
    }
}

/// Byte offsets of each array within the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    embedding: usize,
    feature_proj: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl Layout {
    fn of(s: &DrafterShape) -> Self {
        let embedding = 0;
        let feature_proj = embedding + s.vocab * s.embed;
        let w1 = feature_proj + s.feature * s.embed;
        let b1 = w1 + s.input_dim() * s.hidden;
        let w2 = b1 + s.hidden;
        let b2 = w2 + s.hidden * s.vocab;
        Self {
            embedding,
            feature_proj,
            w1,
            b1,
            w2,
            b2,
            end: b2 + s.vocab,
        }
    }
}

/// Drafter weights stored as one flat vector. Gradients share the type.
///
/// Each value is tagged with a stamp that changes on every mutation so a
/// [`DrafterOutput`] computed against older weights is rejected by backward.
#[derive(Debug)]
pub struct DrafterParameters {
    shape: DrafterShape,
    values: Vec<f64>,
    stamp: u64,
}

impl Clone for DrafterParameters {
    fn clone(&self) -> Self {
        Self {
            shape: self.shape,
            values: self.values.clone(),
            stamp: fresh_stamp(),
        }
    }
}

impl PartialEq for DrafterParameters {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.values == other.values
    }
}

impl DrafterParameters {
    pub fn zeros(shape: DrafterShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            values: vec![0.0; Layout::of(&shape).end],
            stamp: fresh_stamp(),
        })
    }

    /// Uniform `[−0.05, 0.05]` initialization from a labeled stream of `seed`.
    pub fn init(shape: DrafterShape, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let mut rng = RngStream::new(seed).child("drafter-init");
        for v in &mut p.values {
            *v = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
        Ok(p)
    }

    pub fn from_values(shape: DrafterShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let expected = Layout::of(&shape).end;
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} values"),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self {
            shape,
            values,
            stamp: fresh_stamp(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape).expect("shape already validated")
    }

    pub fn shape(&self) -> DrafterShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_stamp();
        &mut self.values
    }

    /// Named views in checkpoint order.
    pub fn named_arrays(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, dims) in self.shape.arrays() {
            let n: usize = dims.iter().product();
            out.push((name, dims, &self.values[offset..offset + n]));
            offset += n;
        }
        out
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert_eq!(self.shape, other.shape, "axpy across different shapes");
        for (a, b) in self.values_mut().iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values_mut().iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn context_tokens(&self, context: &[TokenId]) -> Vec<TokenId> {
        let c = self.shape.context;
        let mut toks = vec![0; c];
        let take = c.min(context.len());
        toks[c - take..].copy_from_slice(&context[context.len() - take..]);
        toks
    }

    /// Forward pass over the last `context` tokens (left-padded with id 0).
    pub fn forward(&self, context: &[TokenId], feature: Option<&FeatureVector>) -> Result<DrafterOutput> {
        let s = &self.shape;
        let lay = Layout::of(s);
        let feature = match (s.feature, feature) {
            (0, None) => None,
            (0, Some(f)) => {
                return Err(Error::FeatureMismatch {
                    expected: 0,
                    actual: f.dim(),
                })
            }
            (n, None) => {
                return Err(Error::FeatureMismatch {
                    expected: n,
                    actual: 0,
                })
            }
            (n, Some(f)) if f.dim() != n => {
                return Err(Error::FeatureMismatch {
                    expected: n,
                    actual: f.dim(),
                })
            }
            (_, Some(f)) => Some(f.0.clone()),
        };
        if let Some(&bad) = context.iter().find(|&&t| t as usize >= s.vocab) {
            return Err(Error::InvalidInput(format!("token {bad} outside drafter vocabulary {}", s.vocab)));
        }

        let w = &self.values;
        let tokens = self.context_tokens(context);
        let mut input = vec![0.0; s.input_dim()];
        for (slot, &tok) in tokens.iter().enumerate() {
            let row = lay.embedding + tok as usize * s.embed;
            input[slot * s.embed..(slot + 1) * s.embed].copy_from_slice(&w[row..row + s.embed]);
        }
        if let Some(f) = &feature {
            let dst = &mut input[s.context * s.embed..];
            for (fi, &fv) in f.iter().enumerate() {
                if fv != 0.0 {
                    let row = lay.feature_proj + fi * s.embed;
                    for k in 0..s.embed {
                        dst[k] += fv * w[row + k];
                    }
                }
            }
        }

        let mut hidden = w[lay.b1..lay.b1 + s.hidden].to_vec();
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                let row = &w[lay.w1 + i * s.hidden..lay.w1 + (i + 1) * s.hidden];
                for (h, &wij) in hidden.iter_mut().zip(row) {
                    *h += x * wij;
                }
            }
        }
        hidden.iter_mut().for_each(|h| *h = h.tanh());

        let mut logits = w[lay.b2..lay.b2 + s.vocab].to_vec();
        for (j, &a) in hidden.iter().enumerate() {
            let row = &w[lay.w2 + j * s.vocab..lay.w2 + (j + 1) * s.vocab];
            for (z, &wjy) in logits.iter_mut().zip(row) {
                *z += a * wjy;
            }
        }
        let dist = ProbVector::softmax(&logits);
        Ok(DrafterOutput {
            dist,
            logits,
            tokens,
            feature,
            input,
            hidden,
            stamp: self.stamp,
        })
    }

    /// Gradient of `Σ_y upstream[y] · logits[y]` with respect to every parameter.
    pub fn backward(&self, output: &DrafterOutput, upstream: &[f64]) -> Result<Self> {
        let mut grad = self.zeros_like();
        self.backward_into(output, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Like [`backward`](Self::backward) but accumulates into `grad`.
    pub fn backward_into(&self, output: &DrafterOutput, upstream: &[f64], grad: &mut Self) -> Result<()> {
        if output.stamp != self.stamp {
            return Err(Error::StaleCache);
        }
        let s = &self.shape;
        if upstream.len() != s.vocab {
            return Err(Error::InvalidInput(format!(
                "upstream gradient has {} entries, vocabulary is {}",
                upstream.len(),
                s.vocab
            )));
        }
        assert_eq!(grad.shape, self.shape, "gradient buffer shape");
        let lay = Layout::of(s);
        let w = &self.values;
        let g = grad.values_mut();

        for (db, &u) in g[lay.b2..lay.b2 + s.vocab].iter_mut().zip(upstream) {
            *db += u;
        }
        let mut dz = vec![0.0; s.hidden];
        for (j, &a) in output.hidden.iter().enumerate() {
            let base = lay.w2 + j * s.vocab;
            let mut da = 0.0;
            for (y, &u) in upstream.iter().enumerate() {
                g[base + y] += a * u;
                da += w[base + y] * u;
            }
            dz[j] = da * (1.0 - a * a);
        }
        for (db, &d) in g[lay.b1..lay.b1 + s.hidden].iter_mut().zip(&dz) {
            *db += d;
        }
        let mut dx = vec![0.0; s.input_dim()];
        for (i, &x) in output.input.iter().enumerate() {
            let base = lay.w1 + i * s.hidden;
            let mut acc = 0.0;
            for (j, &d) in dz.iter().enumerate() {
                g[base + j] += x * d;
                acc += w[base + j] * d;
            }
            dx[i] = acc;
        }
        for (slot, &tok) in output.tokens.iter().enumerate() {
            let row = lay.embedding + tok as usize * s.embed;
            for k in 0..s.embed {
                g[row + k] += dx[slot * s.embed + k];
            }
        }
        if let Some(f) = &output.feature {
            let dxf = &dx[s.context * s.embed..];
            for (fi, &fv) in f.iter().enumerate() {
                if fv != 0.0 {
                    let row = lay.feature_proj + fi * s.embed;
                    for k in 0..s.embed {
                        g[row + k] += fv * dxf[k];
                    }
                }
            }
        }
        Ok(())
    }
}

impl DraftPolicy for DrafterParameters {
    fn vocab_size(&self) -> usize {
        self.shape.vocab
    }

    fn feature_dim(&self) -> Option<usize> {
        (self.shape.feature > 0).then_some(self.shape.feature)
    }

    fn draft_dist(&self, context: &[TokenId], feature: Option<&FeatureVector>) -> ProbVector {
        self.forward(context, feature).expect("draft context matches drafter shape").dist
    }
}

/// Forward result plus the activations backward needs.
#[derive(Debug, Clone)]
pub struct DrafterOutput {
    pub dist: ProbVector,
    pub logits: Vec<f64>,
    tokens: Vec<TokenId>,
    feature: Option<Vec<f64>>,
    input: Vec<f64>,
    hidden: Vec<f64>,
    stamp: u64,
}

/// Upstream logit gradient of `log π(token)`: `onehot(token) − π`.
pub fn logprob_upstream(dist: &ProbVector, token: TokenId) -> Vec<f64> {
    let mut g: Vec<f64> = dist.as_slice().iter().map(|p| -p).collect();
    g[token as usize] += 1.0;
    g
}

/// One cross-entropy descent step on `−log π(next_token | prefix)`.
/// Returns the loss before the update.
pub fn sft_step(
    params: &mut DrafterParameters,
    prefix: &[TokenId],
    next_token: TokenId,
    feature: Option<&FeatureVector>,
    lr: f64,
) -> Result<f64> {
    let out = params.forward(prefix, feature)?;
    let loss = -out.dist.log_prob(next_token);
    if lr != 0.0 {
        let grad = params.backward(&out, &logprob_upstream(&out.dist, next_token))?;
        // Ascend log-likelihood.
        params.axpy(lr, &grad);
    }
    Ok(loss)
}
