use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use scenesync::hyperlearn::{
    hyper_loss, learn_hyper as learn, margin_violation_rate, pick_best, recovery_score, HyperLearnConfig,
    ValidationSet,
};
use scenesync::io::{self, load_scene_file, save_edges, save_hyper, save_priors, HyperDoc};
use scenesync::lbfgs::LbfgsStatus;
use scenesync::likelihood::HyperParams;
use scenesync::metrics::{attribute_l2, indicator_pr, penetration_rate, relative_histogram_kl, PrecisionRecall};
use scenesync::optimizer::{synchronize, OptimizeConfig, StepRecord};
use scenesync::priors::{fit_priors as fit, PriorFitConfig, TrainingStats};
use scenesync::relative::E_TRANSLATION;
use scenesync::synthgen::{corrupt as corrupt_scene, corruption_seed, generate_one, CorruptionConfig, GrammarConfig};
use scenesync::{Error, Hyper, Predictions, Priors, Report, Scene};

use crate::util::*;
use crate::{CorruptArgs, EvalArgs, FitArgs, GenArgs, LearnArgs, OptimizeArgs};

fn cfg_value<C: serde::Serialize>(c: &C) -> Value {
    serde_json::to_value(c).expect("config serializes")
}

fn sidecar_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn abs(p: &Path) -> String {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

pub fn gen(a: GenArgs) -> CliResult<()> {
    let base = GrammarConfig::by_name(&a.grammar)?;
    let mut g: GrammarConfig = load_config(&base, a.common.config.as_deref(), vec![("seed", opt(a.common.seed))])?;
    g.validate()?;
    let n = a.n.unwrap_or(100);
    let seed = g.seed;
    let scenes = with_jobs(a.common.jobs, || {
        (0..n)
            .into_par_iter()
            .map(|i| generate_one::<f64>(&g, seed, i as u64))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let mut out = Outputs::into_dir(&a.out)?;
    let width = n.saturating_sub(1).to_string().len().max(5);
    let mut files = Vec::with_capacity(n);
    for (i, s) in scenes.iter().enumerate() {
        let stem = format!("scene_{i:0width$}");
        out.write_scene(&scene_path(&a.out, &stem), s)?;
        files.push(json!({ "stem": stem, "scene": format!("{stem}.json") }));
    }
    g.seed = seed;
    let mut m = manifest("gen", seed, cfg_value(&g), files);
    m["n"] = json!(n);
    out.write_json(&a.out.join(MANIFEST), &m)?;
    out.commit();
    log::info!("generated {n} scenes into {}", a.out.display());
    Ok(())
}

pub fn fit_priors(a: FitArgs) -> CliResult<()> {
    let cfg: PriorFitConfig = load_config(
        &PriorFitConfig::default(),
        a.common.config.as_deref(),
        vec![("seed", opt(a.common.seed))],
    )?;
    let (_, scenes) = load_corpus(&a.train)?;
    let prior: Priors = fit(&scenes, &cfg)?;
    let mut out = Outputs::default();
    out.write(&a.out, &save_priors(&prior)?)?;
    let mut files = vec![json!(a.out.display().to_string())];
    if let Some(h) = &a.hyper_out {
        out.write(h, &save_hyper(&HyperParams::with_defaults(prior.clone()), false)?)?;
        files.push(json!(h.display().to_string()));
    }
    let mut m = manifest("fit-priors", cfg.seed, cfg_value(&cfg), files);
    m["train"] = json!(abs(&a.train));
    m["n_scenes"] = json!(scenes.len());
    out.write_json(&sidecar_manifest(&a.out), &m)?;
    out.commit();
    Ok(())
}

pub fn corrupt(a: CorruptArgs) -> CliResult<()> {
    let base = if a.benchmark { CorruptionConfig::benchmark() } else { CorruptionConfig::none() };
    let c: CorruptionConfig = load_config(
        &base,
        a.common.config.as_deref(),
        vec![
            ("seed", opt(a.common.seed)),
            ("sigma_t", opt(a.sigma_t)),
            ("sigma_r", opt(a.sigma_r)),
            ("sigma_s", opt(a.sigma_s)),
            ("p_z", opt(a.p_z)),
            ("p_out", opt(a.p_out)),
        ],
    )?;
    c.validate()?;
    let (stems, scenes) = load_corpus(&a.gt)?;
    let bundles = with_jobs(a.common.jobs, || {
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, s)| corrupt_scene(s, &c, corruption_seed(c.seed, i as u64)))
            .collect::<Result<Vec<Predictions>, _>>()
    })??;
    let mut out = Outputs::into_dir(&a.out)?;
    let mut files = Vec::with_capacity(stems.len());
    for (stem, b) in stems.iter().zip(&bundles) {
        out.write_scene(&scene_path(&a.out, stem), &b.node_preds)?;
        out.write(&edges_path(&a.out, stem), &save_edges(&b.edge_preds)?)?;
        files.push(json!({
            "stem": stem,
            "pred": format!("{stem}.json"),
            "edges": format!("{stem}{EDGES_SUFFIX}"),
            "gt": abs(&scene_path(&a.gt, stem)),
        }));
    }
    out.write_json(&a.out.join(MANIFEST), &manifest("corrupt", c.seed, cfg_value(&c), files))?;
    out.commit();
    Ok(())
}

fn load_hyper_args(hyper: &Path, priors: Option<&Path>) -> CliResult<Hyper> {
    let doc: HyperDoc = io::from_json(&io::read_text(hyper)?)?;
    let prior = priors.map(|p| io::load_priors(&io::read_text(p)?)).transpose()?;
    if prior.is_none() && !doc.has_prior() {
        return usage(format!("{} embeds no prior; pass --priors", hyper.display()));
    }
    if prior.is_some() && doc.has_prior() {
        log::warn!("{} embeds a prior; using --priors instead", hyper.display());
    }
    Ok(doc.to_hyper(prior)?)
}

fn status_name(s: LbfgsStatus) -> &'static str {
    match s {
        LbfgsStatus::GradientConverged => "gradient_converged",
        LbfgsStatus::ObjectiveConverged => "objective_converged",
        LbfgsStatus::MaxEvaluations => "max_evaluations",
        LbfgsStatus::LineSearchFailed => "line_search_failed",
    }
}

fn steps_json(steps: &[StepRecord<f64>]) -> Value {
    steps
        .iter()
        .map(|s| {
            json!({
                "before": s.before,
                "after": s.after,
                "accepted": s.accepted,
                "status": status_name(s.status),
                "evals": s.evals,
            })
        })
        .collect()
}

/// Report without wall-clock time, so repeated runs write identical files.
fn report_json(r: &Report, cfg: &OptimizeConfig) -> Value {
    json!({
        "format": io::FORMAT_VERSION,
        "objective": r.objective,
        "attribute_steps": steps_json(&r.attribute_steps),
        "indicator_steps": steps_json(&r.indicator_steps),
        "hardened_objective": r.hardened_objective,
        "stopped_early": r.stopped_early,
        "line_search_failures": r.line_search_failures,
        "config": cfg_value(cfg),
    })
}

pub fn optimize(a: OptimizeArgs) -> CliResult<()> {
    let cfg: OptimizeConfig = load_config(
        &OptimizeConfig::default(),
        a.common.config.as_deref(),
        vec![("seed", opt(a.common.seed)), ("outer_iters", opt(a.outer_iters))],
    )?;
    cfg.validate()?;
    let hyper = load_hyper_args(&a.hyper, a.priors.as_deref())?;
    if a.pred.is_dir() {
        return optimize_dir(&a, &cfg, &hyper);
    }
    let edges = match &a.edges {
        Some(e) => e.clone(),
        None => {
            let stem = a.pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            edges_path(a.pred.parent().unwrap_or(Path::new(".")), &stem)
        }
    };
    let b = Predictions {
        node_preds: load_scene_file(&a.pred)?,
        edge_preds: io::load_edges_file(&edges)?,
    };
    let (scene, report) = synchronize(&hyper, &b, &cfg)?;
    log::info!("synchronized in {:.3}s", report.wall_clock_secs);
    let mut out = Outputs::default();
    out.write_scene(&a.out, &scene)?;
    if let Some(r) = &a.report {
        out.write_json(r, &report_json(&report, &cfg))?;
    }
    out.commit();
    Ok(())
}

fn optimize_dir(a: &OptimizeArgs, cfg: &OptimizeConfig, hyper: &Hyper) -> CliResult<()> {
    if a.edges.is_some() || a.report.is_some() {
        return usage("--edges and --report apply to a single scene; directory mode reads sidecars and writes a report per scene");
    }
    let stems = scene_stems(&a.pred)?;
    let bundles = stems.iter().map(|s| load_bundle(&a.pred, s)).collect::<CliResult<Vec<_>>>()?;
    let results = with_jobs(a.common.jobs, || {
        bundles
            .par_iter()
            .map(|b| synchronize(hyper, b, cfg))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let secs: f64 = results.iter().map(|r| r.1.wall_clock_secs).sum();
    log::info!("synchronized {} scenes, {secs:.3}s of optimizer time", results.len());
    let mut out = Outputs::into_dir(&a.out)?;
    let mut files = Vec::with_capacity(stems.len());
    for (stem, (scene, report)) in stems.iter().zip(&results) {
        out.write_scene(&scene_path(&a.out, stem), scene)?;
        out.write_json(&report_path(&a.out, stem), &report_json(report, cfg))?;
        files.push(json!({ "stem": stem, "scene": format!("{stem}.json"), "report": format!("{stem}{REPORT_SUFFIX}") }));
    }
    let mut m = manifest("optimize", cfg.seed, cfg_value(cfg), files);
    m["pred"] = json!(abs(&a.pred));
    m["hyper"] = json!(abs(&a.hyper));
    if let Some(p) = &a.priors {
        m["priors"] = json!(abs(p));
    }
    out.write_json(&a.out.join(MANIFEST), &m)?;
    out.commit();
    Ok(())
}

fn load_validation(dir: &Path) -> CliResult<ValidationSet<f64>> {
    let m: Value = io::from_json(&io::read_text(&dir.join(MANIFEST))?)?;
    let entries = m["files"]
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{}: manifest has no file list", dir.display())))?;
    let mut inst = Vec::with_capacity(entries.len());
    for e in entries {
        let (Some(stem), Some(gt)) = (e["stem"].as_str(), e["gt"].as_str()) else {
            return Err(Error::Schema(format!("{}: manifest entries need \"stem\" and \"gt\"", dir.display())).into());
        };
        inst.push((load_bundle(dir, stem)?, load_scene_file(Path::new(gt))?));
    }
    Ok(ValidationSet::new(inst)?)
}

pub fn learn_hyper(a: LearnArgs) -> CliResult<()> {
    let cfg: HyperLearnConfig = load_config(
        &HyperLearnConfig::default(),
        a.common.config.as_deref(),
        vec![("seed", opt(a.common.seed)), ("epochs", opt(a.epochs))],
    )?;
    cfg.validate()?;
    let init = load_hyper_args(&a.init, a.priors.as_deref())?;
    let val = load_validation(&a.val)?;
    if val.is_empty() {
        return Err(Error::Schema(format!("{}: empty validation set", a.val.display())).into());
    }
    let train: Vec<Scene> = match &a.train {
        Some(d) => load_corpus(d)?.1,
        None => val.instances.iter().map(|(_, g)| g.clone()).collect(),
    };
    let stats = TrainingStats::from_scenes(&train)?;
    let mut m = manifest("learn-hyper", cfg.seed, cfg_value(&cfg), vec![json!(a.out.display().to_string())]);
    m["val"] = json!(abs(&a.val));
    m["init"] = json!(abs(&a.init));
    let learned = if a.grid {
        if !(a.heldout > 0.0 && a.heldout < 1.0) {
            return usage("--heldout must lie in (0, 1)");
        }
        let opt_cfg: OptimizeConfig = load_config(&OptimizeConfig::default(), a.opt_config.as_deref(), vec![])?;
        opt_cfg.validate()?;
        let n_held = ((val.len() as f64) * a.heldout).round().max(1.0) as usize;
        if n_held >= val.len() {
            return usage("--heldout leaves no training instances");
        }
        let (fit_set, held) = val.clone().split_tail(n_held);
        let grid = cfg.default_grid();
        let runs = with_jobs(a.common.jobs, || {
            grid.par_iter()
                .map(|c| {
                    let h = learn(c, &fit_set, Some(&stats), &init)?.hyper;
                    let s = recovery_score(&h, &held, &opt_cfg)?;
                    Ok((h, s))
                })
                .collect::<Result<Vec<_>, Error>>()
        })??;
        let search = pick_best(&grid, runs)?;
        m["grid"] = grid
            .iter()
            .zip(&search.scores)
            .map(|(c, s)| json!({ "margin_radius": c.margin_radius, "smooth_radius": c.smooth_radius, "margin": c.margin, "smooth_weight": c.smooth_weight, "score": s }))
            .collect();
        m["best_index"] = json!(search.best_index);
        m["selected"] = cfg_value(&search.best);
        m["optimizer"] = cfg_value(&opt_cfg);
        search.best_hyper
    } else {
        let rep = learn(&cfg, &val, Some(&stats), &init)?;
        m["initial_loss"] = json!(rep.initial_loss);
        m["best_loss"] = json!(rep.best_loss);
        m["history"] = json!(rep.history);
        m["restarts"] = json!(rep.restarts);
        rep.hyper
    };
    let final_loss = hyper_loss(&learned, &cfg, &val, Some(&stats));
    m["violation_rate"] = json!({
        "initial": margin_violation_rate(&init, &val, cfg.margin_radius, cfg.margin, cfg.samples_per_instance, cfg.perturb_indicators, cfg.seed),
        "learned": final_loss.violation_rate,
    });
    let mut out = Outputs::default();
    out.write(&a.out, &save_hyper(&learned, true)?)?;
    out.write_json(&sidecar_manifest(&a.out), &m)?;
    out.commit();
    Ok(())
}

fn pr_json(p: &PrecisionRecall) -> Value {
    json!({
        "true_positives": p.true_positives,
        "false_positives": p.false_positives,
        "false_negatives": p.false_negatives,
        "precision": p.precision(),
        "recall": p.recall(),
        "f1": p.f1(),
    })
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    if a.bins == 0 {
        return usage("--bins must be at least 1");
    }
    let (ps, pred) = load_corpus(&a.pred)?;
    let (gs, gt) = load_corpus(&a.gt)?;
    let gset: BTreeSet<&String> = gs.iter().collect();
    let pset: BTreeSet<&String> = ps.iter().collect();
    if gset != pset {
        let missing: Vec<_> = pset.symmetric_difference(&gset).take(5).collect();
        return Err(Error::Schema(format!("prediction and ground-truth directories hold different scenes, e.g. {missing:?}")).into());
    }
    let pred: Vec<Scene> = pred.iter().map(|s| s.hardened(scenesync::optimizer::DEFAULT_HARDEN_THRESHOLD)).collect();
    let active = attribute_l2(&pred, &gt, true)?;
    let all = attribute_l2(&pred, &gt, false)?;
    let l2 = |e: &scenesync::metrics::AttributeL2<f64>| {
        json!({ "size": e.size, "rotation": e.rotation, "translation": e.translation, "count": e.count })
    };
    let pr = indicator_pr(&pred, &gt)?;
    let table = &gt[0].class_table;
    let per_class: serde_json::Map<String, Value> = pr
        .per_class
        .iter()
        .enumerate()
        .map(|(c, p)| (table.name(c).to_string(), pr_json(p)))
        .collect();
    let mut kl = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..table.num_classes() {
        for d in 0..table.num_classes() {
            for (k, axis) in ["x", "y", "z"].iter().enumerate() {
                let pair = [table.name(c), table.name(d)];
                match relative_histogram_kl(&pred, &gt, (c, d), E_TRANSLATION + k, a.bins) {
                    Ok(v) => kl.push(json!({ "pair": pair, "axis": axis, "kl": v })),
                    Err(Error::Degenerate(_)) => {
                        if k == 0 {
                            skipped.push(json!(pair));
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    let doc = json!({
        "format": io::FORMAT_VERSION,
        "scenes": gt.len(),
        "attribute_l2": { "active": l2(&active), "all": l2(&all) },
        "indicator": { "overall": pr_json(&pr.overall), "per_class": per_class },
        "penetration_rate": { "pred": penetration_rate(&pred), "gt": penetration_rate(&gt) },
        "relative_translation_kl": { "bins": a.bins, "values": kl, "skipped_pairs": skipped },
        "pred": abs(&a.pred),
        "gt": abs(&a.gt),
    });
    let mut out = Outputs::default();
    out.write_json(&a.out, &doc)?;
    out.commit();
    Ok(())
}
