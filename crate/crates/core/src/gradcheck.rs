//! Finite-difference gradient checking.
//!
//! Dropout and drop-path are off, the loss plan (matching and rank clips) is
//! taken once from the unperturbed forward pass and held fixed, and each
//! selected weight is nudged by `±h` to form a central difference.
//!
//! Relative error is `|a − n| / max(|a|, |n|, floor)`. Below `floor` the
//! check is effectively absolute; it keeps exactly-zero gradients (key
//! biases under softmax) from dividing rounding noise by zero.

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::autodiff::Var;
use crate::config::LossConfig;
use crate::encoder::FeatureSequence;
use crate::error::Result;
use crate::loss::{loss_graph, GroundTruth, LossPlan};
use crate::model::MhDetr;
use crate::nn::{Ctx, ParamId, ParamStore};
use crate::rng::stream;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub floor: f64,
    /// Weights checked per module (all of them when the module is smaller).
    pub per_module: usize,
    pub seed: u64,
    /// Tape op whose backward rule is deliberately scaled (mutation testing).
    pub corrupt: Option<&'static str>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-3,
            per_module: 200,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModuleCheck {
    pub module: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub modules: Vec<ModuleCheck>,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Module of a parameter: the first two dotted name components.
pub fn module_of(name: &str) -> String {
    name.split('.').take(2).collect::<Vec<_>>().join(".")
}

/// Adds `N(0, std²)` to every weight, moving the check off special points
/// such as zero biases feeding a zero-variance layer norm.
pub fn jitter(params: &mut ParamStore, std: f64, seed: u64) {
    let mut rng = stream(seed, &[2]);
    let d = Normal::new(0.0, std).expect("finite std");
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        params.get_mut(id).data_mut().iter_mut().for_each(|v| *v += d.sample(&mut rng));
    }
}

/// Checks the gradient of the scalar built by `build` with respect to the
/// weights in `params`. `build` must be deterministic.
pub fn check_graph(
    params: &ParamStore,
    build: &dyn Fn(&mut Ctx) -> Result<Var>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut ctx = Ctx::deterministic_with_grads(params);
    if let Some(op) = opts.corrupt {
        ctx.tape.corrupt_backward(op);
    }
    let loss = build(&mut ctx)?;
    ctx.backward(loss)?;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; params.len()];
    for (id, g) in ctx.param_grads() {
        grads[id.index()] = Some(g);
    }
    drop(ctx);

    let mut modules: Vec<(String, Vec<(ParamId, usize)>)> = Vec::new();
    for (id, name, t) in params.iter() {
        let m = module_of(name);
        let slots = (0..t.len()).map(|i| (id, i));
        match modules.iter_mut().find(|(n, _)| *n == m) {
            Some((_, v)) => v.extend(slots),
            None => modules.push((m, slots.collect())),
        }
    }
    let mut rng = stream(opts.seed, &[1]);
    let mut work = params.clone();
    let value = |p: &ParamStore| -> Result<f64> {
        let mut ctx = Ctx::eval(p);
        let v = build(&mut ctx)?;
        Ok(ctx.tape.scalar_value(v))
    };
    let mut report = GradCheckReport {
        modules: Vec::new(),
        max_rel_err: 0.0,
        checked: 0,
    };
    for (module, slots) in modules {
        let picks: Vec<(ParamId, usize)> = if slots.len() <= opts.per_module {
            slots
        } else {
            let mut idx = sample(&mut rng, slots.len(), opts.per_module).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| slots[i]).collect()
        };
        let mut mc = ModuleCheck {
            module,
            checked: picks.len(),
            max_rel_err: 0.0,
            worst_param: String::new(),
        };
        for (id, i) in picks {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.step;
            let up = value(&work)?;
            work.get_mut(id).data_mut()[i] = orig - opts.step;
            let down = value(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grads[id.index()].as_ref().map_or(0.0, |g| g[i]);
            let e = rel_err(a, numeric, opts.floor);
            if e > mc.max_rel_err || mc.worst_param.is_empty() {
                mc.max_rel_err = mc.max_rel_err.max(e);
                mc.worst_param = format!("{}[{i}] analytic {a:.6e} numeric {numeric:.6e}", work.name(id));
            }
        }
        report.max_rel_err = report.max_rel_err.max(mc.max_rel_err);
        report.checked += mc.checked;
        report.modules.push(mc);
    }
    Ok(report)
}

pub struct Sample<'a> {
    pub video: &'a FeatureSequence,
    pub text: &'a FeatureSequence,
    pub gt: &'a GroundTruth,
}

/// Full-model check of the total loss under a plan fixed at the start.
pub fn grad_check(model: &MhDetr, s: &Sample, cfg: &LossConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let plan = {
        let mut ctx = Ctx::eval(&model.params);
        let out = model.forward(&mut ctx, s.video, s.text)?;
        LossPlan::build(&ctx, &out, s.gt, cfg, &mut stream(opts.seed, &[0]))?
    };
    let build = |ctx: &mut Ctx| -> Result<Var> {
        let out = model.forward(ctx, s.video, s.text)?;
        Ok(loss_graph(ctx, &out, s.gt, &plan, cfg)?.0)
    };
    check_graph(&model.params, &build, opts)
}
