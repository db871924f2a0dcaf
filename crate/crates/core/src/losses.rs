//! Ranking and contrastive losses over a batch of query-document instances.
//!
//! Every loss returns its value together with the exact gradient with
//! respect to each instance's representation and prediction, so the ranker
//! only has to back-propagate through the encoder.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::dot;
use crate::error::{Error, LossTerm, Result};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before taking logs.
pub const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingKind {
    Pointwise,
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContrastiveKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "scl", alias = "SCL")]
    Scl,
    #[serde(rename = "ctriplet", alias = "CTriplet")]
    CTriplet,
    #[serde(rename = "infonce", alias = "InfoNCE")]
    InfoNce,
    #[serde(rename = "nca", alias = "NCA")]
    Nca,
}

impl ContrastiveKind {
    pub const ALL: [ContrastiveKind; 4] = [
        ContrastiveKind::Scl,
        ContrastiveKind::CTriplet,
        ContrastiveKind::InfoNce,
        ContrastiveKind::Nca,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub ranking_kind: RankingKind,
    pub contrastive_kind: ContrastiveKind,
    pub lambda: f64,
    /// Temperature of SCL and InfoNCE.
    pub tau: f64,
    /// Pairwise hinge margin.
    pub margin: f64,
    /// Centroid-triplet margin.
    pub centroid_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ranking_kind: RankingKind::Pointwise,
            contrastive_kind: ContrastiveKind::None,
            lambda: 0.3,
            tau: 0.5,
            margin: 0.2,
            centroid_margin: 0.5,
        }
    }
}

impl LossConfig {
    /// Every violated constraint, keyed by its JSON name.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.lambda) {
            errs.push(format!("lambda: {} is outside [0, 1]", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            errs.push(format!("tau: {} must be > 0", self.tau));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            errs.push(format!("margin: {} must be >= 0", self.margin));
        }
        if !(self.centroid_margin >= 0.0 && self.centroid_margin.is_finite()) {
            errs.push(format!("centroid_margin: {} must be >= 0", self.centroid_margin));
        }
        errs
    }

    /// Interpolation weight actually applied: without a contrastive family
    /// the objective is the ranking loss alone.
    pub fn effective_lambda(&self) -> f64 {
        match self.contrastive_kind {
            ContrastiveKind::None => 0.0,
            _ => self.lambda,
        }
    }
}

/// Parallel per-instance sequences of one (possibly augmented) batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchView {
    pub reps: Vec<Vec<f64>>,
    pub preds: Vec<f64>,
    pub labels: Vec<bool>,
    pub query_ids: Vec<String>,
    pub augmented: Vec<bool>,
    /// `(positive, negative)` instance indices of each triple.
    pub pairs: Vec<(usize, usize)>,
    /// For positives: the instance holding the other view (original or
    /// augmented) of the same relevant document.
    pub partners: Vec<Option<usize>>,
}

impl BatchView {
    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.reps.len();
        if [
            self.preds.len(),
            self.labels.len(),
            self.query_ids.len(),
            self.augmented.len(),
            self.partners.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::InvalidBatch("per-instance sequences differ in length".into()));
        }
        if let Some(d) = self.reps.first().map(Vec::len) {
            if self.reps.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidBatch("representations differ in length".into()));
            }
        }
        for &(p, q) in &self.pairs {
            if p >= n || q >= n {
                return Err(Error::InvalidBatch("pair index out of range".into()));
            }
        }
        if self.partners.iter().flatten().any(|&p| p >= n) {
            return Err(Error::InvalidBatch("partner index out of range".into()));
        }
        Ok(())
    }

    fn query_groups(&self) -> Vec<usize> {
        let mut ids: HashMap<&str, usize> = HashMap::new();
        self.query_ids
            .iter()
            .map(|q| {
                let next = ids.len();
                *ids.entry(q.as_str()).or_insert(next)
            })
            .collect()
    }

    fn dim(&self) -> usize {
        self.reps.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossDiagnostics {
    /// SCL saw no positive instance.
    pub no_positives: bool,
    /// Anchors skipped for lack of a partner / same-query positive.
    pub skipped_anchors: usize,
}

/// A loss value with its gradient w.r.t. every representation and prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub d_reps: Vec<Vec<f64>>,
    pub d_preds: Vec<f64>,
    pub diagnostics: LossDiagnostics,
}

impl LossOutput {
    fn zeros(view: &BatchView) -> Self {
        LossOutput {
            value: 0.0,
            d_reps: vec![vec![0.0; view.dim()]; view.len()],
            d_preds: vec![0.0; view.len()],
            diagnostics: LossDiagnostics::default(),
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Binary cross-entropy averaged over all instances.
pub fn pointwise(view: &BatchView) -> Result<LossOutput> {
    view.check()?;
    if view.is_empty() {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    let n = view.len() as f64;
    let mut out = LossOutput::zeros(view);
    for i in 0..view.len() {
        let raw = view.preds[i];
        let p = raw.clamp(P_CLAMP, 1.0 - P_CLAMP);
        let inside = raw == p;
        if view.labels[i] {
            out.value -= p.ln() / n;
            if inside {
                out.d_preds[i] = -1.0 / (p * n);
            }
        } else {
            out.value -= (1.0 - p).ln() / n;
            if inside {
                out.d_preds[i] = 1.0 / ((1.0 - p) * n);
            }
        }
    }
    Ok(out)
}

/// Mean hinge `max(0, m - y+ + y-)` over the batch's triples.
pub fn pairwise(view: &BatchView, margin: f64) -> Result<LossOutput> {
    view.check()?;
    if view.pairs.is_empty() {
        return Err(Error::InvalidBatch("pairwise loss needs at least one pair".into()));
    }
    let n = view.pairs.len() as f64;
    let mut out = LossOutput::zeros(view);
    for &(p, q) in &view.pairs {
        let h = margin - view.preds[p] + view.preds[q];
        if h > 0.0 {
            out.value += h / n;
            out.d_preds[p] -= 1.0 / n;
            out.d_preds[q] += 1.0 / n;
        }
    }
    Ok(out)
}

/// Pairwise hinge on aligned score lists.
pub fn loss_pairwise(pos_scores: &[f64], neg_scores: &[f64], margin: f64) -> Result<f64> {
    if pos_scores.len() != neg_scores.len() {
        return Err(Error::InvalidBatch(format!(
            "{} positive scores vs {} negative scores",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    if pos_scores.is_empty() {
        return Err(Error::InvalidBatch("pairwise loss needs at least one pair".into()));
    }
    let n = pos_scores.len() as f64;
    Ok(pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(p, q)| (margin - p + q).max(0.0))
        .sum::<f64>()
        / n)
}

/// Supervised contrastive loss: every positive anchor is pulled towards the
/// other positives of its query against all other instances of the batch.
/// The outer sum is not normalised; each anchor is weighted by `1 / N+`.
pub fn scl(view: &BatchView, tau: f64) -> Result<LossOutput> {
    view.check()?;
    let n = view.len();
    if n < 2 {
        return Err(Error::InvalidBatch("SCL needs at least two instances".into()));
    }
    let mut out = LossOutput::zeros(view);
    let n_pos = view.labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        out.diagnostics.no_positives = true;
        return Ok(out);
    }
    let groups = view.query_groups();
    let c = 1.0 / n_pos as f64;
    for i in 0..n {
        if !view.labels[i] {
            continue;
        }
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && view.labels[j] && groups[j] == groups[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let sims: Vec<f64> = (0..n)
            .map(|k| if k == i { f64::NEG_INFINITY } else { dot(&view.reps[i], &view.reps[k]) / tau })
            .collect();
        let lse = log_sum_exp(sims.iter().copied());
        for &j in &positives {
            out.value -= c * (sims[j] - lse);
        }
        // dL/ds_ik = c * (|P_i| softmax_ik - [k in P_i])
        let np = positives.len() as f64;
        let mut coef: Vec<f64> = sims
            .iter()
            .enumerate()
            .map(|(k, s)| if k == i { 0.0 } else { c * np * (s - lse).exp() })
            .collect();
        for &j in &positives {
            coef[j] -= c;
        }
        for k in 0..n {
            if k == i || coef[k] == 0.0 {
                continue;
            }
            let (ri, rk) = (view.reps[i].clone(), view.reps[k].clone());
            axpy(&mut out.d_reps[i], coef[k] / tau, &rk);
            axpy(&mut out.d_reps[k], coef[k] / tau, &ri);
        }
    }
    Ok(out)
}

/// Centroid triplet loss. For each query the positive and negative centroids
/// are the means of its positive and negative representations; every triple
/// contributes `[|p - c_P|^2 - |n - c_N|^2 + alpha]_+`, averaged per query
/// and then over queries.
pub fn ctriplet(view: &BatchView, alpha: f64) -> Result<LossOutput> {
    view.check()?;
    if view.pairs.is_empty() {
        return Err(Error::InvalidBatch("centroid triplet loss needs at least one pair".into()));
    }
    let groups = view.query_groups();
    let n_groups = groups.iter().copied().max().map_or(0, |m| m + 1);
    let d = view.dim();
    let mut pos_members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    let mut neg_members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for (i, &g) in groups.iter().enumerate() {
        if view.labels[i] {
            pos_members[g].push(i);
        } else {
            neg_members[g].push(i);
        }
    }
    let centroid = |members: &[usize]| {
        let mut c = vec![0.0; d];
        for &m in members {
            axpy(&mut c, 1.0 / members.len() as f64, &view.reps[m]);
        }
        c
    };
    let mut pairs_of: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_groups];
    for &(p, q) in &view.pairs {
        pairs_of[groups[p]].push((p, q));
    }
    let active_groups: Vec<usize> = (0..n_groups).filter(|&g| !pairs_of[g].is_empty()).collect();
    let mut out = LossOutput::zeros(view);
    for &g in &active_groups {
        if pos_members[g].is_empty() || neg_members[g].is_empty() {
            return Err(Error::InvalidBatch(format!(
                "query {} lacks a positive or a negative instance",
                view.query_ids[pos_members[g].first().or(neg_members[g].first()).copied().unwrap_or(0)]
            )));
        }
        let c_pos = centroid(&pos_members[g]);
        let c_neg = centroid(&neg_members[g]);
        let w = 1.0 / (pairs_of[g].len() * active_groups.len()) as f64;
        let mut pull_pos = vec![0.0; d];
        let mut pull_neg = vec![0.0; d];
        for &(p, q) in &pairs_of[g] {
            let h = sq_dist(&view.reps[p], &c_pos) - sq_dist(&view.reps[q], &c_neg) + alpha;
            if h <= 0.0 {
                continue;
            }
            out.value += w * h;
            let gp: Vec<f64> = view.reps[p].iter().zip(&c_pos).map(|(x, c)| 2.0 * w * (x - c)).collect();
            let gn: Vec<f64> = view.reps[q].iter().zip(&c_neg).map(|(x, c)| 2.0 * w * (x - c)).collect();
            axpy(&mut out.d_reps[p], 1.0, &gp);
            axpy(&mut out.d_reps[q], -1.0, &gn);
            axpy(&mut pull_pos, 1.0, &gp);
            axpy(&mut pull_neg, 1.0, &gn);
        }
        // centroid terms
        let np = pos_members[g].len() as f64;
        for &k in &pos_members[g] {
            axpy(&mut out.d_reps[k], -1.0 / np, &pull_pos);
        }
        let nn = neg_members[g].len() as f64;
        for &k in &neg_members[g] {
            axpy(&mut out.d_reps[k], 1.0 / nn, &pull_neg);
        }
    }
    Ok(out)
}

/// InfoNCE: each positive anchor must pick out its partner view among all
/// other instances of its query, with `f(x, a) = exp(Φ(x)·Φ(a) / tau)`.
/// Averaged over anchors; anchors without a partner are skipped.
pub fn infonce(view: &BatchView, tau: f64) -> Result<LossOutput> {
    view.check()?;
    let groups = view.query_groups();
    let n = view.len();
    let mut out = LossOutput::zeros(view);
    let mut anchors = Vec::new();
    for i in 0..n {
        if !view.labels[i] {
            continue;
        }
        match view.partners[i] {
            Some(p) if p != i && groups[p] == groups[i] => anchors.push((i, p)),
            _ => out.diagnostics.skipped_anchors += 1,
        }
    }
    if anchors.is_empty() {
        return Ok(out);
    }
    let w = 1.0 / anchors.len() as f64;
    for &(i, p) in &anchors {
        let cands: Vec<usize> = (0..n).filter(|&k| k != i && groups[k] == groups[i]).collect();
        let sims: Vec<f64> = cands.iter().map(|&k| dot(&view.reps[i], &view.reps[k]) / tau).collect();
        let lse = log_sum_exp(sims.iter().copied());
        let s_pos = dot(&view.reps[i], &view.reps[p]) / tau;
        out.value -= w * (s_pos - lse);
        for (idx, &k) in cands.iter().enumerate() {
            let mut coef = w * (sims[idx] - lse).exp();
            if k == p {
                coef -= w;
            }
            let (ri, rk) = (view.reps[i].clone(), view.reps[k].clone());
            axpy(&mut out.d_reps[i], coef / tau, &rk);
            axpy(&mut out.d_reps[k], coef / tau, &ri);
        }
    }
    Ok(out)
}

/// Neighbourhood component analysis with the identity transform:
/// `p_ij = softmax_k≠i(-|Φi - Φk|^2)`, `p_i = Σ_{j same-query positive} p_ij`
/// and the minimised loss `-mean_i log p_i` over positive anchors.
pub fn nca(view: &BatchView) -> Result<LossOutput> {
    view.check()?;
    let groups = view.query_groups();
    let n = view.len();
    let mut out = LossOutput::zeros(view);
    let mut anchors = Vec::new();
    for i in 0..n {
        if !view.labels[i] {
            continue;
        }
        let same: Vec<usize> = (0..n)
            .filter(|&j| j != i && view.labels[j] && groups[j] == groups[i])
            .collect();
        if same.is_empty() {
            out.diagnostics.skipped_anchors += 1;
        } else {
            anchors.push((i, same));
        }
    }
    if anchors.is_empty() {
        return Err(Error::InvalidBatch(
            "NCA needs a query with at least two positive instances".into(),
        ));
    }
    let w = 1.0 / anchors.len() as f64;
    let log_floor = P_CLAMP.ln();
    for (i, same) in &anchors {
        let i = *i;
        let logits: Vec<f64> = (0..n)
            .map(|k| if k == i { f64::NEG_INFINITY } else { -sq_dist(&view.reps[i], &view.reps[k]) })
            .collect();
        let lse_all = log_sum_exp(logits.iter().copied());
        let lse_same = log_sum_exp(same.iter().map(|&j| logits[j]));
        let log_p = lse_same - lse_all;
        if log_p < log_floor {
            out.value -= w * log_floor;
            continue;
        }
        out.value -= w * log_p;
        // dL/dl_ik = w * (softmax_ik - [k in C_i] * q_ik)
        let mut coef: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(k, l)| if k == i { 0.0 } else { w * (l - lse_all).exp() })
            .collect();
        for &j in same {
            coef[j] -= w * (logits[j] - lse_same).exp();
        }
        for k in 0..n {
            if k == i || coef[k] == 0.0 {
                continue;
            }
            // l_ik = -|Φi - Φk|^2
            let diff: Vec<f64> = view.reps[i].iter().zip(&view.reps[k]).map(|(a, b)| a - b).collect();
            axpy(&mut out.d_reps[i], -2.0 * coef[k], &diff);
            axpy(&mut out.d_reps[k], 2.0 * coef[k], &diff);
        }
    }
    Ok(out)
}

/// `(1 - λ) ranking + λ contrastive`.
pub fn combine(ranking: f64, contrastive: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * ranking + lambda * contrastive
}

pub fn ranking_loss(view: &BatchView, config: &LossConfig) -> Result<LossOutput> {
    match config.ranking_kind {
        RankingKind::Pointwise => pointwise(view),
        RankingKind::Pairwise => pairwise(view, config.margin),
    }
}

/// The configured contrastive family; `None` when there is none.
pub fn contrastive_loss(view: &BatchView, config: &LossConfig) -> Result<Option<LossOutput>> {
    Ok(Some(match config.contrastive_kind {
        ContrastiveKind::None => return Ok(None),
        ContrastiveKind::Scl => scl(view, config.tau)?,
        ContrastiveKind::CTriplet => ctriplet(view, config.centroid_margin)?,
        ContrastiveKind::InfoNce => infonce(view, config.tau)?,
        ContrastiveKind::Nca => nca(view)?,
    }))
}

/// Combined objective of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub ranking: f64,
    pub contrastive: f64,
    pub d_reps: Vec<Vec<f64>>,
    pub d_preds: Vec<f64>,
}

/// Interpolates the ranking and contrastive terms. With an effective λ of 0
/// the contrastive term is not evaluated at all.
pub fn combined_loss(view: &BatchView, config: &LossConfig) -> Result<CombinedLoss> {
    let lambda = config.effective_lambda();
    let rank = ranking_loss(view, config)?;
    if !rank.value.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: LossTerm::Ranking,
            value: rank.value,
        });
    }
    let mut d_reps: Vec<Vec<f64>> = rank
        .d_reps
        .iter()
        .map(|r| r.iter().map(|g| (1.0 - lambda) * g).collect())
        .collect();
    let mut d_preds: Vec<f64> = rank.d_preds.iter().map(|g| (1.0 - lambda) * g).collect();
    let mut contrastive = 0.0;
    if lambda > 0.0 {
        if let Some(c) = contrastive_loss(view, config)? {
            if !c.value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: LossTerm::Contrastive,
                    value: c.value,
                });
            }
            contrastive = c.value;
            for (dst, src) in d_reps.iter_mut().zip(&c.d_reps) {
                axpy(dst, lambda, src);
            }
            for (dst, src) in d_preds.iter_mut().zip(&c.d_preds) {
                *dst += lambda * src;
            }
        }
    }
    Ok(CombinedLoss {
        total: combine(rank.value, contrastive, lambda),
        ranking: rank.value,
        contrastive,
        d_reps,
        d_preds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(reps: Vec<Vec<f64>>, labels: Vec<bool>, queries: Vec<&str>) -> BatchView {
        let n = reps.len();
        BatchView {
            preds: vec![0.5; n],
            labels,
            query_ids: queries.into_iter().map(String::from).collect(),
            augmented: vec![false; n],
            pairs: Vec::new(),
            partners: vec![None; n],
            reps,
        }
    }

    #[test]
    fn pointwise_values() {
        let mut v = view(vec![vec![0.0]], vec![true], vec!["q"]);
        assert!((pointwise(&v).unwrap().value - 2f64.ln()).abs() < 1e-12);
        v = view(vec![vec![0.0], vec![0.0]], vec![true, false], vec!["q", "q"]);
        assert!((pointwise(&v).unwrap().value - 2f64.ln()).abs() < 1e-12);
        v.preds = vec![1.0, 0.0];
        let out = pointwise(&v).unwrap();
        assert!(out.value < 1e-11);
        assert_eq!(out.d_preds, vec![0.0, 0.0]);
    }

    #[test]
    fn pairwise_values() {
        assert_eq!(loss_pairwise(&[0.9], &[0.2], 0.2).unwrap(), 0.0);
        assert!((loss_pairwise(&[0.5], &[0.6], 0.2).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(loss_pairwise(&[0.4], &[0.4], 0.0).unwrap(), 0.0);
        assert!(loss_pairwise(&[0.4], &[], 0.0).is_err());
    }

    #[test]
    fn scl_worked_case() {
        let v = view(
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![true, true, false],
            vec!["q", "q", "q"],
        );
        let got = scl(&v, 1.0).unwrap().value;
        assert!((got - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn scl_single_positive_and_none() {
        let v = view(vec![vec![1.0], vec![0.5]], vec![true, false], vec!["q", "q"]);
        assert_eq!(scl(&v, 1.0).unwrap().value, 0.0);
        let v = view(vec![vec![1.0], vec![0.5]], vec![false, false], vec!["q", "q"]);
        let out = scl(&v, 1.0).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.diagnostics.no_positives);
        assert!(scl(&view(vec![vec![1.0]], vec![true], vec!["q"]), 1.0).is_err());
    }

    #[test]
    fn scl_large_tau_limit() {
        // 2 positives of one query among N = 4: each anchor term -> -(1/2) ln(1/3)
        let v = view(
            vec![vec![0.3, 0.1], vec![-0.2, 0.4], vec![0.5, 0.5], vec![0.0, -1.0]],
            vec![true, true, false, false],
            vec!["q", "q", "q", "r"],
        );
        let got = scl(&v, 1e12).unwrap().value;
        assert!((got - 3f64.ln()).abs() < 1e-9, "{got}");
    }

    #[test]
    fn ctriplet_cases() {
        let mut v = view(
            vec![vec![1.0, 1.0], vec![-1.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.0]],
            vec![true, false, true, false],
            vec!["q", "q", "q", "q"],
        );
        v.pairs = vec![(0, 1), (2, 3)];
        assert!((ctriplet(&v, 0.7).unwrap().value - 0.7).abs() < 1e-12);
        assert_eq!(ctriplet(&v, 0.0).unwrap().value, 0.0);
        // missing class
        let mut w = view(vec![vec![1.0], vec![2.0]], vec![true, true], vec!["q", "q"]);
        w.pairs = vec![(0, 1)];
        assert!(ctriplet(&w, 0.1).is_err());
    }

    #[test]
    fn ctriplet_hinge_clips() {
        // |p - c_P|^2 = 0.1, |n - c_N|^2 = 0.5 with a 0.2 margin: -0.2 -> 0
        let a = 0.1f64.sqrt();
        let b = 0.5f64.sqrt();
        let mut v = view(
            vec![vec![a], vec![b], vec![-a], vec![-b]],
            vec![true, false, true, false],
            vec!["q", "q", "q", "q"],
        );
        v.pairs = vec![(0, 1), (2, 3)];
        assert_eq!(ctriplet(&v, 0.2).unwrap().value, 0.0);
    }

    #[test]
    fn infonce_cases() {
        let mut v = view(
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![true, true, false],
            vec!["q", "q", "q"],
        );
        v.partners = vec![Some(1), None, None];
        let got = infonce(&v, 1.0).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((got.value - expected).abs() < 1e-12);
        assert!((expected - 0.31326).abs() < 1e-5);
        assert_eq!(got.diagnostics.skipped_anchors, 1);
        // partner only
        let mut w = view(vec![vec![1.0], vec![3.0]], vec![true, true], vec!["q", "q"]);
        w.partners = vec![Some(1), Some(0)];
        assert!(infonce(&w, 1.0).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn infonce_tau_scaling() {
        let mut a = view(
            vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![2.0, 0.0]],
            vec![true, true, false],
            vec!["q", "q", "q"],
        );
        a.partners = vec![Some(1), Some(0), None];
        let mut b = a.clone();
        let s = 0.5f64.sqrt();
        b.reps = a.reps.iter().map(|r| r.iter().map(|x| x * s).collect()).collect();
        let la = infonce(&a, 2.0).unwrap().value;
        let lb = infonce(&b, 1.0).unwrap().value;
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn nca_cases() {
        let v = view(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0]],
            vec![true, true, false],
            vec!["q", "q", "q"],
        );
        let out = nca(&v).unwrap();
        let p12 = (-1f64).exp() / ((-1f64).exp() + (-9f64).exp());
        // anchor 2: |Φ2-Φ1|^2 = 1, |Φ2-Φ3|^2 = 10
        let p21 = (-1f64).exp() / ((-1f64).exp() + (-10f64).exp());
        assert!((-p12.ln() - 0.00034).abs() < 1e-5);
        assert!((out.value - (-p12.ln() - p21.ln()) / 2.0).abs() < 1e-12);
        let lonely = view(vec![vec![0.0], vec![1.0]], vec![true, true], vec!["a", "b"]);
        assert!(nca(&lonely).is_err());
        let coincident = view(
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![50.0, 0.0]],
            vec![true, true, false],
            vec!["q", "q", "q"],
        );
        assert!(nca(&coincident).unwrap().value < 1e-12);
    }

    #[test]
    fn combine_values() {
        assert_eq!(combine(1.0, 2.0, 0.0), 1.0);
        assert_eq!(combine(1.0, 2.0, 1.0), 2.0);
        assert!((combine(1.0, 2.0, 0.3) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn config_validation_names_keys() {
        let c = LossConfig {
            lambda: 1.2,
            tau: 0.0,
            ..Default::default()
        };
        let errs = c.validate();
        assert!(errs.iter().any(|e| e.starts_with("lambda")));
        assert!(errs.iter().any(|e| e.starts_with("tau")));
        assert!(LossConfig::default().validate().is_empty());
    }

    #[test]
    fn config_json_keys() {
        let c: LossConfig = serde_json::from_str(
            r#"{"ranking_kind":"pairwise","contrastive_kind":"infonce","lambda":0.5,"tau":0.1,"margin":0.3,"centroid_margin":1.0}"#,
        )
        .unwrap();
        assert_eq!(c.ranking_kind, RankingKind::Pairwise);
        assert_eq!(c.contrastive_kind, ContrastiveKind::InfoNce);
        let back = serde_json::to_value(c).unwrap();
        assert_eq!(back["contrastive_kind"], "infonce");
    }
}
