//! Saliency and moment losses over one sample.
//!
//! Components are unweighted sums; `total` applies the λ weights:
//!
//! ```text
//! total = λ_bce·l_bce + λ_rank·l_rank + λ_L1·l_span_l1 + λ_IoU·l_span_iou + λ_cls·l_cls
//! ```
//!
//! Every index decision (matching, rank clips) is taken from forward values
//! first and recorded in a [`LossPlan`], so the graph itself is a fixed
//! function of the outputs and gradient checks can hold the plan constant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::config::LossConfig;
use crate::decoder::MomentOutputs;
use crate::error::{Error, Result};
use crate::matching::{hungarian_match, CostWeights, MatchResult};
use crate::model::ForwardOutput;
use crate::nn::Ctx;
use crate::span::MomentSpan;
use crate::tensor::Tensor;

/// Targets for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub moments: Vec<MomentSpan>,
    /// Binary highlight label per real clip.
    pub saliency_labels: Vec<bool>,
}

impl GroundTruth {
    pub fn validate(&self, num_queries: usize) -> Result<()> {
        if self.moments.is_empty() || self.moments.len() > num_queries {
            return Err(Error::data(format!(
                "sample has {} moments, need 1..={num_queries}",
                self.moments.len()
            )));
        }
        for m in &self.moments {
            if !(0.0 <= m.start && m.start <= m.end && m.end <= 1.0) {
                return Err(Error::data(format!("moment [{}, {}] is not a valid normalized span", m.start, m.end)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bce: f64,
    pub l_rank: f64,
    pub l_span_l1: f64,
    pub l_span_iou: f64,
    pub l_cls: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// λ-weighted sum of the enabled components.
    pub fn weighted_total(&self, c: &LossConfig) -> f64 {
        let mut t = 0.0;
        if c.use_bce {
            t += c.lambda_bce * self.l_bce;
        }
        if c.use_rank {
            t += c.lambda_rank * self.l_rank;
        }
        if c.use_l1 {
            t += c.lambda_l1 * self.l_span_l1;
        }
        if c.use_iou {
            t += c.lambda_iou * self.l_span_iou;
        }
        if c.use_cls {
            t += c.lambda_cls * self.l_cls;
        }
        t
    }

    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("l_bce", self.l_bce),
            ("l_rank", self.l_rank),
            ("l_span_l1", self.l_span_l1),
            ("l_span_iou", self.l_span_iou),
            ("l_cls", self.l_cls),
            ("total", self.total),
        ]
    }

    pub fn add_scaled(&mut self, o: &LossBreakdown, k: f64) {
        self.l_bce += k * o.l_bce;
        self.l_rank += k * o.l_rank;
        self.l_span_l1 += k * o.l_span_l1;
        self.l_span_iou += k * o.l_span_iou;
        self.l_cls += k * o.l_cls;
        self.total += k * o.total;
    }
}

/// Clip positions (in padded sequence coordinates) for the rank hinge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankPlan {
    pub high: usize,
    pub low: usize,
    pub inside: usize,
    /// `None` when every real clip lies inside a moment; the second hinge is skipped.
    pub outside: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossPlan {
    /// Matching for the final head outputs, then one per auxiliary layer.
    pub matches: Vec<MatchResult>,
    /// `None` when the sample has no highlight clip.
    pub rank: Option<RankPlan>,
}

pub fn cost_weights(c: &LossConfig) -> CostWeights {
    CostWeights {
        cls: c.lambda_cls,
        l1: c.lambda_l1,
        iou: c.lambda_iou,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn real_positions(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

fn match_outputs(ctx: &Ctx, m: &MomentOutputs, gt: &GroundTruth, w: &CostWeights) -> Result<MatchResult> {
    let spans = ctx.tape.value(m.spans);
    let logp = ctx.tape.value(m.class_logp);
    let pred: Vec<MomentSpan> = (0..spans.rows()).map(|i| MomentSpan::new(spans.at(i, 0), spans.at(i, 1))).collect();
    let fg: Vec<f64> = (0..logp.rows()).map(|i| logp.at(i, 0).exp()).collect();
    hungarian_match(&pred, &fg, &gt.moments, w)
}

impl LossPlan {
    /// Matches every head output and picks rank clips from the current scores.
    pub fn build(ctx: &Ctx, out: &ForwardOutput, gt: &GroundTruth, cfg: &LossConfig, rng: &mut impl Rng) -> Result<Self> {
        let w = cost_weights(cfg);
        let mut matches = vec![match_outputs(ctx, &out.moments, gt, &w)?];
        for aux in &out.aux {
            matches.push(match_outputs(ctx, aux, gt, &w)?);
        }
        let real = real_positions(&out.video_mask);
        if real.len() != gt.saliency_labels.len() {
            return Err(Error::data(format!(
                "{} saliency labels for {} real clips",
                gt.saliency_labels.len(),
                real.len()
            )));
        }
        let logits = ctx.tape.value(out.saliency_logits).data();
        let inside: Vec<usize> = real.iter().zip(&gt.saliency_labels).filter(|(_, &y)| y).map(|(&p, _)| p).collect();
        let outside: Vec<usize> = real.iter().zip(&gt.saliency_labels).filter(|(_, &y)| !y).map(|(&p, _)| p).collect();
        let rank = if inside.is_empty() {
            None
        } else {
            // first index wins ties
            let mut high = inside[0];
            let mut low = inside[0];
            for &p in &inside {
                if logits[p] > logits[high] {
                    high = p;
                }
                if logits[p] < logits[low] {
                    low = p;
                }
            }
            let pick = inside[rng.random_range(0..inside.len())];
            let out_pick = (!outside.is_empty()).then(|| outside[rng.random_range(0..outside.len())]);
            Some(RankPlan {
                high,
                low,
                inside: pick,
                outside: out_pick,
            })
        };
        Ok(LossPlan { matches, rank })
    }
}

fn sum_all(ctx: &mut Ctx, terms: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &t in terms {
        acc = Some(match acc {
            None => t,
            Some(a) => ctx.tape.add(a, t)?,
        });
    }
    Ok(acc)
}

fn scalar(ctx: &mut Ctx, v: f64) -> Result<Var> {
    ctx.constant(Tensor::scalar(v))
}

/// Weighted BCE over real clips, via the stable form
/// `−log σ(x) = softplus(−x)` and `−log(1−σ(x)) = softplus(x)`.
pub fn bce_graph(ctx: &mut Ctx, logits: Var, mask: &[bool], labels: &[bool], pos_weight: f64) -> Result<Var> {
    let real = real_positions(mask);
    let n = mask.len();
    let mut w_pos = vec![0.0; n];
    let mut w_neg = vec![0.0; n];
    for (&p, &y) in real.iter().zip(labels) {
        if y {
            w_pos[p] = pos_weight;
        } else {
            w_neg[p] = 1.0;
        }
    }
    let neg = ctx.tape.scale(logits, -1.0)?;
    let sp_neg = ctx.tape.softplus(neg)?;
    let sp_pos = ctx.tape.softplus(logits)?;
    let a = ctx.tape.mul_const(sp_neg, w_pos)?;
    let b = ctx.tape.mul_const(sp_pos, w_neg)?;
    let a = ctx.tape.sum(a)?;
    let b = ctx.tape.sum(b)?;
    ctx.tape.add(a, b)
}

/// `max(0, Δ + s_low − s_high) + max(0, Δ + s_out − s_in)` on sigmoid scores.
pub fn rank_graph(ctx: &mut Ctx, logits: Var, plan: &RankPlan, margin: f64) -> Result<Var> {
    let s = ctx.tape.sigmoid(logits)?;
    let hinge = |ctx: &mut Ctx, lo: usize, hi: usize| -> Result<Var> {
        let a = ctx.tape.index(s, lo)?;
        let b = ctx.tape.index(s, hi)?;
        let d = ctx.tape.sub(a, b)?;
        let d = ctx.tape.add_scalar(d, margin)?;
        ctx.tape.relu(d)
    };
    let first = hinge(ctx, plan.low, plan.high)?;
    match plan.outside {
        Some(out) => {
            let second = hinge(ctx, out, plan.inside)?;
            ctx.tape.add(first, second)
        }
        None => Ok(first),
    }
}

/// `|ŝ − s| + |ê − e|` for one matched pair.
pub fn l1_pair(ctx: &mut Ctx, spans: Var, pred: usize, g: &MomentSpan) -> Result<Var> {
    let s = ctx.tape.index(spans, 2 * pred)?;
    let e = ctx.tape.index(spans, 2 * pred + 1)?;
    let ds = ctx.tape.add_scalar(s, -g.start)?;
    let de = ctx.tape.add_scalar(e, -g.end)?;
    let ds = ctx.tape.abs(ds)?;
    let de = ctx.tape.abs(de)?;
    ctx.tape.add(ds, de)
}

/// Differentiable gIoU between predicted span `pred` and a fixed valid span.
/// Branches on forward values where the closed form is undefined.
pub fn giou_graph(ctx: &mut Ctx, spans: Var, pred: usize, g: &MomentSpan) -> Result<Var> {
    let s = ctx.tape.index(spans, 2 * pred)?;
    let e = ctx.tape.index(spans, 2 * pred + 1)?;
    let gs = scalar(ctx, g.start)?;
    let ge = scalar(ctx, g.end)?;
    let len = ctx.tape.sub(e, s)?;
    let len = ctx.tape.relu(len)?;
    let lo = ctx.tape.maximum(s, gs)?;
    let hi = ctx.tape.minimum(e, ge)?;
    let inter = ctx.tape.sub(hi, lo)?;
    let inter = ctx.tape.relu(inter)?;
    let union = ctx.tape.add_scalar(len, g.length())?;
    let union = ctx.tape.sub(union, inter)?;
    let h_hi = ctx.tape.maximum(s, e)?;
    let h_hi = ctx.tape.maximum(h_hi, ge)?;
    let h_lo = ctx.tape.minimum(s, e)?;
    let h_lo = ctx.tape.minimum(h_lo, gs)?;
    let hull = ctx.tape.sub(h_hi, h_lo)?;
    if ctx.tape.scalar_value(hull) <= 0.0 {
        return scalar(ctx, 0.0);
    }
    let iou = if ctx.tape.scalar_value(union) <= 0.0 {
        scalar(ctx, 0.0)?
    } else {
        ctx.tape.div(inter, union)?
    };
    let gap = ctx.tape.sub(hull, union)?;
    let frac = ctx.tape.div(gap, hull)?;
    ctx.tape.sub(iou, frac)
}

/// `−Σ_i [w_p·z_i·log p_i + (1 − z_i)·log(1 − p_i)]` over all queries.
pub fn cls_graph(ctx: &mut Ctx, class_logp: Var, matched: &[bool], fg_weight: f64) -> Result<Var> {
    let w: Vec<f64> = matched
        .iter()
        .flat_map(|&z| if z { [-fg_weight, 0.0] } else { [0.0, -1.0] })
        .collect();
    let t = ctx.tape.mul_const(class_logp, w)?;
    ctx.tape.sum(t)
}

struct MomentTerms {
    l1: Option<Var>,
    iou: Option<Var>,
    cls: Option<Var>,
}

fn moment_terms(ctx: &mut Ctx, m: &MomentOutputs, gt: &GroundTruth, mr: &MatchResult, cfg: &LossConfig) -> Result<MomentTerms> {
    let mut l1s = Vec::new();
    let mut ious = Vec::new();
    for &(p, g) in &mr.pairs {
        let gspan = &gt.moments[g];
        if cfg.use_l1 {
            l1s.push(l1_pair(ctx, m.spans, p, gspan)?);
        }
        if cfg.use_iou {
            let giou = giou_graph(ctx, m.spans, p, gspan)?;
            let neg = ctx.tape.scale(giou, -1.0)?;
            ious.push(ctx.tape.add_scalar(neg, 1.0)?);
        }
    }
    let cls = if cfg.use_cls {
        let rows = ctx.tape.shape(m.class_logp)[0];
        let matched: Vec<bool> = (0..rows).map(|i| mr.is_matched(i)).collect();
        Some(cls_graph(ctx, m.class_logp, &matched, cfg.fg_weight)?)
    } else {
        None
    };
    Ok(MomentTerms {
        l1: sum_all(ctx, &l1s)?,
        iou: sum_all(ctx, &ious)?,
        cls,
    })
}

/// Builds the total loss for one sample under a fixed plan.
pub fn loss_graph(ctx: &mut Ctx, out: &ForwardOutput, gt: &GroundTruth, plan: &LossPlan, cfg: &LossConfig) -> Result<(Var, LossBreakdown)> {
    if plan.matches.len() != 1 + out.aux.len() {
        return Err(Error::Contract(format!(
            "plan has {} matchings for {} head outputs",
            plan.matches.len(),
            1 + out.aux.len()
        )));
    }
    let mut bd = LossBreakdown::default();
    let mut weighted = Vec::new();
    let mut push = |ctx: &mut Ctx, v: Option<Var>, lambda: f64, slot: Option<&mut f64>| -> Result<()> {
        if let Some(v) = v {
            if let Some(slot) = slot {
                *slot = ctx.tape.scalar_value(v);
            }
            weighted.push(ctx.tape.scale(v, lambda)?);
        }
        Ok(())
    };

    if cfg.use_bce {
        let v = bce_graph(ctx, out.saliency_logits, &out.video_mask, &gt.saliency_labels, cfg.saliency_pos_weight)?;
        push(ctx, Some(v), cfg.lambda_bce, Some(&mut bd.l_bce))?;
    }
    if cfg.use_rank {
        if let Some(rp) = &plan.rank {
            let v = rank_graph(ctx, out.saliency_logits, rp, cfg.rank_margin)?;
            push(ctx, Some(v), cfg.lambda_rank, Some(&mut bd.l_rank))?;
        }
    }
    let main = moment_terms(ctx, &out.moments, gt, &plan.matches[0], cfg)?;
    push(ctx, main.l1, cfg.lambda_l1, Some(&mut bd.l_span_l1))?;
    push(ctx, main.iou, cfg.lambda_iou, Some(&mut bd.l_span_iou))?;
    push(ctx, main.cls, cfg.lambda_cls, Some(&mut bd.l_cls))?;
    for (aux, mr) in out.aux.iter().zip(&plan.matches[1..]) {
        let t = moment_terms(ctx, aux, gt, mr, cfg)?;
        push(ctx, t.l1, cfg.lambda_l1, None)?;
        push(ctx, t.iou, cfg.lambda_iou, None)?;
        push(ctx, t.cls, cfg.lambda_cls, None)?;
    }
    let total = match sum_all(ctx, &weighted)? {
        Some(t) => t,
        None => return Err(Error::config("every loss term is disabled")),
    };
    bd.total = ctx.tape.scalar_value(total);
    if !bd.total.is_finite() {
        return Err(Error::NonFinite(format!("loss is not finite: {bd:?}")));
    }
    Ok((total, bd))
}

/// Plan then loss, in one call.
pub fn compute_loss(ctx: &mut Ctx, out: &ForwardOutput, gt: &GroundTruth, cfg: &LossConfig, rng: &mut impl Rng) -> Result<(Var, LossBreakdown, LossPlan)> {
    let plan = LossPlan::build(ctx, out, gt, cfg, rng)?;
    let (v, bd) = loss_graph(ctx, out, gt, &plan, cfg)?;
    Ok((v, bd, plan))
}

/// Plain-value BCE, for checks.
pub fn bce_value(logits: &[f64], labels: &[bool], pos_weight: f64) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| {
            let s = sigmoid(x);
            if y {
                -pos_weight * s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    fn ctx(store: &ParamStore) -> Ctx<'_> {
        Ctx::eval(store)
    }

    #[test]
    fn bce_single_positive_at_half() {
        let store = ParamStore::new();
        let mut c = ctx(&store);
        let x = c.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap()).unwrap();
        let v = bce_graph(&mut c, x, &[true], &[true], 5.0).unwrap();
        assert!((c.tape.scalar_value(v) - 5.0 * 2f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn bce_matches_naive_form() {
        let store = ParamStore::new();
        let mut c = ctx(&store);
        let logits = vec![-2.0, 0.3, 1.7, 4.0];
        let labels = vec![true, false, true, false];
        let x = c.constant(Tensor::new(vec![4, 1], logits.clone()).unwrap()).unwrap();
        let v = bce_graph(&mut c, x, &[true; 4], &labels, 5.0).unwrap();
        assert!((c.tape.scalar_value(v) - bce_value(&logits, &labels, 5.0)).abs() <= 1e-12);
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn rank_examples() {
        let store = ParamStore::new();
        let mut c = ctx(&store);
        // clips: low 0.3, high 0.9, in 0.8, out 0.1
        let x = c
            .constant(Tensor::new(vec![4, 1], [0.3, 0.9, 0.8, 0.1].iter().map(|&p| logit(p)).collect()).unwrap())
            .unwrap();
        let plan = RankPlan { high: 1, low: 0, inside: 2, outside: Some(3) };
        let v = rank_graph(&mut c, x, &plan, 0.2).unwrap();
        assert_eq!(c.tape.scalar_value(v), 0.0);
        let single = RankPlan { high: 2, low: 2, inside: 2, outside: None };
        let v = rank_graph(&mut c, x, &single, 0.2).unwrap();
        assert!((c.tape.scalar_value(v) - 0.2).abs() <= 1e-15);
    }

    #[test]
    fn l1_and_giou_pair_values() {
        let store = ParamStore::new();
        let mut c = ctx(&store);
        let spans = c.constant(Tensor::new(vec![2, 2], vec![0.0, 0.5, 0.0, 0.2]).unwrap()).unwrap();
        let l1 = l1_pair(&mut c, spans, 0, &MomentSpan::new(0.25, 0.75)).unwrap();
        assert!((10.0 * c.tape.scalar_value(l1) - 5.0).abs() <= 1e-12);
        let g = giou_graph(&mut c, spans, 1, &MomentSpan::new(0.8, 1.0)).unwrap();
        assert!((c.tape.scalar_value(g) + 0.6).abs() <= 1e-12);
    }

    #[test]
    fn cls_all_half() {
        let store = ParamStore::new();
        let mut c = ctx(&store);
        let lp = c.constant(Tensor::full(&[10, 2], 0.5f64.ln())).unwrap();
        let mut matched = vec![false; 10];
        matched[3] = true;
        matched[7] = true;
        let v = cls_graph(&mut c, lp, &matched, 10.0).unwrap();
        assert!((c.tape.scalar_value(v) - 28.0 * 2f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn giou_graph_agrees_with_plain_giou() {
        use crate::span::span_giou;
        let store = ParamStore::new();
        let cases = [(0.1, 0.4), (0.5, 0.2), (0.3, 0.3), (0.0, 1.0), (0.7, 0.9)];
        let g = MomentSpan::new(0.25, 0.6);
        for &(s, e) in &cases {
            let mut c = ctx(&store);
            let spans = c.constant(Tensor::new(vec![1, 2], vec![s, e]).unwrap()).unwrap();
            let v = giou_graph(&mut c, spans, 0, &g).unwrap();
            assert!((c.tape.scalar_value(v) - span_giou(&MomentSpan::new(s, e), &g)).abs() <= 1e-15);
        }
    }

    #[test]
    fn ground_truth_validation() {
        let gt = GroundTruth { moments: vec![], saliency_labels: vec![] };
        assert!(gt.validate(3).is_err());
        let gt = GroundTruth { moments: vec![MomentSpan::new(0.5, 0.2)], saliency_labels: vec![] };
        assert!(gt.validate(3).is_err());
        let gt = GroundTruth { moments: vec![MomentSpan::new(0.2, 0.5); 4], saliency_labels: vec![] };
        assert!(gt.validate(3).is_err());
    }
}
