//! Divergence-aware window selection: target confidence, token criticality,
//! window scores, and curriculum-weighted sampling of training window starts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{DraftPolicy, TargetAdapter};
use crate::prob::{floored_ln, ProbVector};
use crate::rng::RngStream;
use crate::TokenId;

/// `1 − H(p)/ln|V|`, clamped to `[0, 1]`.
pub fn confidence(p: &ProbVector) -> f64 {
    let n = p.len();
    assert!(n >= 2, "confidence needs |V| ≥ 2");
    let c = 1.0 - p.entropy() / (n as f64).ln();
    // Rounding in H for a uniform row can leave ±1e-16 behind.
    if c.abs() < 1e-12 {
        0.0
    } else {
        c.clamp(0.0, 1.0)
    }
}

/// `KL(p‖q) = Σ p ln(p/q)` with `0·ln(0/q) = 0` and `q` floored.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> f64 {
    assert_eq!(p.len(), q.len(), "KL over different vocabularies");
    p.as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - floored_ln(qi)))
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CriticalityProfile {
    pub v: Vec<f64>,
    pub c: Vec<f64>,
    pub kl: Vec<f64>,
}

#[derive(Serialize)]
struct ProfileRecord {
    position: usize,
    c: f64,
    kl: f64,
    v: f64,
}

impl CriticalityProfile {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// One JSON line per position: `{position, c, kl, v}`.
    pub fn to_records(&self) -> Vec<String> {
        (0..self.len())
            .map(|i| {
                serde_json::to_string(&ProfileRecord {
                    position: i,
                    c: self.c[i],
                    kl: self.kl[i],
                    v: self.v[i],
                })
                .expect("profile record")
            })
            .collect()
    }
}

/// Criticality `v_t = C(P_t)·KL(P_t‖Q_t)` at every position of `sequence`
/// with a non-empty prefix: entry `i` scores the prediction of
/// `sequence[i + 1]` from `sequence[..=i]`.
pub fn criticality_profile<T, D>(target: &T, drafter: &D, sequence: &[TokenId]) -> Result<CriticalityProfile>
where
    T: TargetAdapter + ?Sized,
    D: DraftPolicy + ?Sized,
{
    if sequence.len() < 2 {
        return Err(Error::InvalidInput("criticality profile needs at least two tokens".into()));
    }
    Ok(criticality_profile_from(target, drafter, sequence, 1))
}

/// Profile over prefixes `sequence[..t]` for `t` in `first..len`.
pub fn criticality_profile_from<T, D>(target: &T, drafter: &D, sequence: &[TokenId], first: usize) -> CriticalityProfile
where
    T: TargetAdapter + ?Sized,
    D: DraftPolicy + ?Sized,
{
    let mut prof = CriticalityProfile::default();
    for t in first..sequence.len() {
        let ctx = &sequence[..t];
        let p = target.next_dist(ctx);
        let feature = drafter.feature_dim().map(|_| target.feature(ctx));
        let q = drafter.draft_dist(ctx, feature.as_ref());
        let c = confidence(&p);
        let kl = kl_divergence(&p, &q);
        prof.c.push(c);
        prof.kl.push(kl);
        prof.v.push(c * kl);
    }
    prof
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowScores {
    pub s: Vec<f64>,
    pub k: usize,
}

/// Mean criticality of every length-`k` slice of the profile.
pub fn window_scores(profile: &CriticalityProfile, k: usize) -> Result<WindowScores> {
    if k == 0 || profile.len() < k {
        return Err(Error::InvalidInput(format!(
            "profile of length {} too short for windows of {k}",
            profile.len()
        )));
    }
    let s = profile.v.windows(k).map(|w| w.iter().sum::<f64>() / k as f64).collect();
    Ok(WindowScores { s, k })
}

/// How the ADAW share of draws picks a start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionMode {
    /// Sample proportional to `s_j`.
    Proportional,
    /// Sample uniformly among the top `quantile` fraction of starts by score.
    TopQuantile(f64),
}

/// Step function from training progress to the probability of drawing an
/// ADAW-selected window (otherwise the start is uniform).
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumSchedule {
    points: Vec<(f64, f64)>,
    pub mode: SelectionMode,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            points: vec![(0.0, 0.2), (1.0 / 3.0, 0.4), (2.0 / 3.0, 0.6)],
            mode: SelectionMode::Proportional,
        }
    }
}

impl CurriculumSchedule {
    pub fn new(points: Vec<(f64, f64)>, mode: SelectionMode) -> Result<Self> {
        if points.first().map(|p| p.0) != Some(0.0) {
            return Err(Error::Config("curriculum must start at progress 0".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("curriculum progress fractions must increase".into()));
        }
        if points.iter().any(|&(f, p)| !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&f)) {
            return Err(Error::Config("curriculum entries must lie in [0, 1]".into()));
        }
        if let SelectionMode::TopQuantile(q) = mode {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Config(format!("quantile {q} outside (0, 1]")));
            }
        }
        Ok(Self { points, mode })
    }

    /// Fixed mixing probability for the whole run.
    pub fn constant(p: f64) -> Self {
        Self::new(vec![(0.0, p)], SelectionMode::Proportional).expect("valid constant schedule")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn mix_at(&self, progress: f64) -> f64 {
        self.points
            .iter()
            .take_while(|(f, _)| *f <= progress)
            .last()
            .map_or(self.points[0].1, |&(_, p)| p)
    }
}

/// Zero-based window start. With probability `p(progress)` the start is
/// ADAW-selected (uniform fallback when every score is zero), otherwise
/// uniform.
pub fn sample_window_start(scores: &WindowScores, progress: f64, schedule: &CurriculumSchedule, rng: &mut RngStream) -> usize {
    let n = scores.s.len();
    assert!(n > 0, "no window starts to sample");
    let p = schedule.mix_at(progress.clamp(0.0, 1.0));
    if rng.uniform() >= p {
        return rng.below(n);
    }
    if scores.s.iter().all(|&s| s <= 0.0) {
        return rng.below(n);
    }
    match schedule.mode {
        SelectionMode::Proportional => rng.weighted(&scores.s),
        SelectionMode::TopQuantile(q) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores.s[b].total_cmp(&scores.s[a]));
            let top = ((q * n as f64).ceil() as usize).clamp(1, n);
            order[rng.below(top)]
        }
    }
}
