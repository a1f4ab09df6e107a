use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ArchSection, RunConfig};
use super::{
    ArchArgs, Cli, Command, CriticalityArgs, DataArgs, EstimateArgs, Failure, MergeArgs, ReduceArgs, TrainArgs,
    TrainFlags, THREADS_ENV,
};
use crate::criticality::{criticality_scores, measurements_csv, parse_measurements_csv, CriticalityReport};
use crate::data::{ingest, DatasetDescriptor, DatasetKind};
use crate::engine::{checkpoint_bytes, checkpoint_from_bytes, evaluate, train, Model, Teacher, TrainConfig};
use crate::error::{Error, Result};
use crate::netir::{build_architecture, validate, Family, NetworkGraph, StageId};
use crate::passes::{equivalence_check, merge_for_inference};
use crate::pipeline::{
    candidates_csv, culling_order, estimate_latency, fit_latency_model_weighted, manifest_json, measure_criticality,
    pareto_csv, parse_candidates_csv, plan_candidates, run_deepreduce, FitWeighting, LatencyModel, PipelineConfig,
};
use crate::profile::{distribution_csv, distribution_report, layer_csv, relu_total, stage_csv};

// stdout may be a closed pipe (`| head`); that is not an error worth a panic
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

type CmdResult = std::result::Result<(), Failure>;

pub(super) fn dispatch(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.threads = match cli.threads {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim().parse().map_err(|_| Failure::new(2, format!("{THREADS_ENV}=`{v}` is not a thread count")))?,
            ),
            Err(_) => cfg.threads,
        },
    };
    if cfg.threads == Some(0) {
        return Err(Failure::new(2, "--threads must be positive"));
    }
    if let Some(d) = cli.out_dir {
        cfg.io.out_dir = Some(d);
    }
    cfg.train.seed = cfg.seed;
    let dry = cli.dry_run;
    match cli.command {
        Command::Profile(a) => profile(cfg, &a, dry),
        Command::Criticality(a) => criticality(cfg, &a, dry),
        Command::Reduce(a) => reduce(cfg, &a, dry),
        Command::Merge(a) => merge(cfg, &a, dry),
        Command::Estimate(a) => estimate(cfg, &a, dry),
        Command::Train(a) => train_cmd(cfg, &a, dry),
    }
}

fn apply_arch(cfg: &mut RunConfig, a: &ArchArgs) -> Result<()> {
    if let Some(name) = &a.arch {
        let family: Family = name.parse()?;
        match &mut cfg.arch {
            Some(s) => s.family = family,
            None => cfg.arch = Some(ArchSection::new(family)),
        }
    }
    let touched = a.input.is_some() || a.classes.is_some() || a.alpha.is_some() || a.rho.is_some() || a.strip_residuals;
    if touched && cfg.arch.is_none() {
        return Err(Error::Config("architecture flags need --arch".into()));
    }
    if let Some(s) = &mut cfg.arch {
        if let Some(v) = a.input {
            s.input = v;
        }
        if let Some(v) = a.classes {
            s.classes = v;
        }
        if let Some(v) = &a.alpha {
            s.alpha = v.parse()?;
        }
        if let Some(v) = &a.rho {
            s.rho = v.parse()?;
        }
        s.strip_residuals |= a.strip_residuals;
    }
    Ok(())
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) -> Result<()> {
    let any = d.dataset.is_some()
        || d.data_dir.is_some()
        || d.train_size.is_some()
        || d.test_size.is_some()
        || d.noise.is_some();
    if !any {
        return Ok(());
    }
    let mut desc = cfg.dataset()?;
    if let Some(k) = &d.dataset {
        desc.kind = serde_json::from_value::<DatasetKind>(serde_json::Value::String(k.clone()))
            .map_err(|_| Error::Config(format!("unknown dataset kind `{k}`")))?;
        desc.classes = match desc.kind {
            DatasetKind::Cifar10Binary => 10,
            DatasetKind::Cifar100Binary => 100,
            DatasetKind::SyntheticBlobs => desc.classes,
        };
    }
    if let Some(p) = &d.data_dir {
        desc.path = Some(p.clone());
    }
    if let Some(n) = d.train_size {
        desc.train_size = n;
    }
    if let Some(n) = d.test_size {
        desc.test_size = n;
    }
    if let Some(n) = d.noise {
        desc.noise = n;
    }
    cfg.io.dataset = Some(desc);
    Ok(())
}

fn apply_train(cfg: &mut RunConfig, t: &TrainFlags) {
    if let Some(e) = t.epochs {
        cfg.train.epochs = e;
    }
    if let Some(l) = t.lr {
        cfg.train.lr0 = l;
    }
    if let Some(b) = t.batch_size {
        cfg.train.batch_size = b;
    }
}

/// Writes through a sibling temp file and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct DryRun<'a> {
    command: &'static str,
    config: &'a RunConfig,
    plan: Vec<String>,
}

fn print_dry(command: &'static str, cfg: &RunConfig, plan: Vec<String>) {
    let d = DryRun { command, config: cfg, plan };
    outln!("{}", serde_json::to_string_pretty(&d).expect("serializable"));
}

fn checked_graph(cfg: &RunConfig) -> Result<NetworkGraph> {
    let g = build_architecture(&cfg.arch()?.spec()?)?;
    let report = validate(&g);
    if !report.is_pass() {
        return Err(Error::InvalidGraph(report.to_string()));
    }
    Ok(g)
}

fn check_dataset(desc: &DatasetDescriptor) -> Result<()> {
    desc.check()?;
    if let Some(p) = &desc.path {
        if !p.is_dir() {
            return Err(Error::Config(format!("dataset directory {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn profile(mut cfg: RunConfig, a: &ArchArgs, dry: bool) -> CmdResult {
    apply_arch(&mut cfg, a)?;
    let g = checked_graph(&cfg)?;
    let out = cfg.out_dir();
    let files = [
        ("layers.csv", layer_csv(&g)?),
        ("stages.csv", stage_csv(&g)?),
        ("distribution.csv", distribution_csv(&distribution_report(&g)?)),
    ];
    if dry {
        let plan = files.iter().map(|(f, _)| format!("write {}", out.join(f).display())).collect();
        print_dry("profile", &cfg, plan);
        return Ok(());
    }
    for (name, body) in &files {
        write_atomic(&out.join(name), body.as_bytes())?;
    }
    outln!("{}: {} ReLUs", g.name, relu_total(&g)?);
    out!("{}", files[1].1);
    Ok(())
}

fn order_line(r: &CriticalityReport) -> String {
    r.order.iter().map(ToString::to_string).collect::<Vec<_>>().join(" < ")
}

fn criticality(mut cfg: RunConfig, a: &CriticalityArgs, dry: bool) -> CmdResult {
    apply_arch(&mut cfg, &a.arch)?;
    apply_data(&mut cfg, &a.data)?;
    apply_train(&mut cfg, &a.train);
    if let Some(w) = a.w {
        cfg.pipeline.w = Some(w);
    }
    if let Some(p) = &a.from_csv {
        cfg.io.from_csv = Some(p.clone());
    }
    let out = cfg.out_dir();
    let w = cfg.pipeline.w.unwrap_or(crate::criticality::DEFAULT_W);
    let (report, measurements) = match &cfg.io.from_csv {
        Some(p) => {
            let ms = parse_measurements_csv(&read_text(p)?)?;
            let report = criticality_scores(&ms, w)?;
            if dry {
                print_dry(
                    "criticality",
                    &cfg,
                    vec![
                        format!("order {}", order_line(&report)),
                        format!("write {}", out.join("criticality.csv").display()),
                    ],
                );
                return Ok(());
            }
            (report, None)
        }
        None => {
            let pc = cfg.pipeline_config()?;
            pc.check()?;
            check_dataset(&pc.dataset)?;
            let g = checked_graph(&cfg)?;
            if dry {
                let d = crate::netir::stage_view(&g)?.depth();
                print_dry(
                    "criticality",
                    &cfg,
                    vec![
                        "train teacher".into(),
                        format!("train {d} probes"),
                        format!("write {}", out.join("criticality.csv").display()),
                        format!("write {}", out.join("measurements.csv").display()),
                    ],
                );
                return Ok(());
            }
            let run = measure_criticality(&pc)?;
            (run.report, Some(run.measurements))
        }
    };
    write_atomic(&out.join("criticality.csv"), report.to_csv().as_bytes())?;
    if let Some(ms) = measurements {
        write_atomic(&out.join("measurements.csv"), measurements_csv(&ms).as_bytes())?;
    }
    outln!("order: {}", order_line(&report));
    for (s, c) in &report.scores {
        outln!("{s}: {c:.2}");
    }
    Ok(())
}

fn reduce(mut cfg: RunConfig, a: &ReduceArgs, dry: bool) -> CmdResult {
    apply_arch(&mut cfg, &a.arch)?;
    apply_data(&mut cfg, &a.data)?;
    apply_train(&mut cfg, &a.train);
    if let Some(w) = a.w {
        cfg.pipeline.w = Some(w);
    }
    if let Some(p) = &a.parity {
        cfg.pipeline.parity = Some(p.parse()?);
    }
    if let Some(list) = &a.stages_override {
        cfg.pipeline.stages_override = Some(list.iter().map(|s| s.parse()).collect::<Result<Vec<StageId>>>()?);
    }
    cfg.pipeline.keep_going |= a.keep_going;
    if let Some(p) = &a.from_csv {
        cfg.io.from_csv = Some(p.clone());
    }
    if let Some(p) = &a.accuracy_from_csv {
        cfg.io.accuracy_from_csv = Some(p.clone());
    }
    let out = cfg.out_dir();
    let latency = cfg.pipeline.latency.clone().unwrap_or_else(LatencyModel::reference);

    if let Some(p) = &cfg.io.accuracy_from_csv {
        let points = parse_candidates_csv(&read_text(p)?, |r| estimate_latency(&latency, r))?;
        if dry {
            print_dry(
                "reduce",
                &cfg,
                vec![
                    format!("{} candidates from {}", points.len(), p.display()),
                    format!("write {}", out.join("candidates.csv").display()),
                    format!("write {}", out.join("pareto.csv").display()),
                ],
            );
            return Ok(());
        }
        write_atomic(&out.join("candidates.csv"), candidates_csv(&points).as_bytes())?;
        let pareto = pareto_csv(&points);
        write_atomic(&out.join("pareto.csv"), pareto.as_bytes())?;
        out!("{pareto}");
        return Ok(());
    }

    let mut pc: PipelineConfig = cfg.pipeline_config()?;
    if let Some(p) = &cfg.io.from_csv {
        pc.measurements = Some(parse_measurements_csv(&read_text(p)?)?);
    }
    pc.check()?;
    check_dataset(&pc.dataset)?;
    let g = checked_graph(&cfg)?;
    let view = crate::netir::stage_view(&g)?;
    // with measurements the order is known up front, so the override guard
    // fires before any training
    let known_order = match &pc.measurements {
        Some(ms) => {
            let r = criticality_scores(ms, pc.w)?;
            Some(culling_order(&r, pc.stages_override.as_deref())?)
        }
        None => None,
    };
    if let Some(o) = &pc.stages_override {
        for s in o {
            if !view.contains(*s) {
                return Err(Error::UnknownStage(s.to_string()).into());
            }
        }
    }
    if dry {
        let mut plan = vec!["train teacher".to_string()];
        if pc.measurements.is_none() {
            plan.push(format!("train {} probes", view.depth()));
        }
        match &known_order {
            Some(order) => {
                let parity = pc.parity.unwrap_or_else(|| crate::passes::default_thin_rule(&g));
                for c in plan_candidates(&view.stage_ids(), order, &pc.ladder, parity) {
                    plan.push(format!("train {}", c.label));
                }
            }
            None => plan
                .push(format!("train {} candidates in criticality order", (2 + pc.ladder.len()) * (view.depth() - 1))),
        }
        for f in ["candidates.csv", "pareto.csv", "criticality.csv", "manifest.json"] {
            plan.push(format!("write {}", out.join(f).display()));
        }
        print_dry("reduce", &cfg, plan);
        return Ok(());
    }

    let run = run_deepreduce(&pc)?;
    let points = run.points();
    write_atomic(&out.join("candidates.csv"), candidates_csv(&points).as_bytes())?;
    write_atomic(&out.join("pareto.csv"), pareto_csv(&points).as_bytes())?;
    write_atomic(&out.join("criticality.csv"), run.criticality.to_csv().as_bytes())?;
    write_atomic(&out.join("manifest.json"), manifest_json(&pc, &run)?.as_bytes())?;
    outln!(
        "teacher {:.2}%, order {}, {} candidates, {} failed",
        run.teacher_accuracy,
        order_line(&run.criticality),
        run.candidates.len(),
        run.failures.len()
    );
    for f in &run.failures {
        eprintln!("candidate {} failed: {}", f.label, f.error);
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn merge(mut cfg: RunConfig, a: &MergeArgs, dry: bool) -> CmdResult {
    if let Some(p) = &a.input {
        cfg.io.checkpoint_in = Some(p.clone());
    }
    if let Some(p) = &a.output {
        cfg.io.checkpoint_out = Some(p.clone());
    }
    let input = cfg.io.checkpoint_in.clone().ok_or_else(|| Failure::new(2, "merge needs --input"))?;
    let output = cfg.io.checkpoint_out.clone().unwrap_or_else(|| cfg.out_dir().join("merged.rrdk"));
    let bytes = std::fs::read(&input).map_err(|e| Error::io(&input, e))?;
    let model = checkpoint_from_bytes(&bytes)?;
    let wide = model.cast::<f64>();
    let outcome = merge_for_inference(&wide)?;
    let merged = outcome.model.cast::<f32>();
    let report = equivalence_check(&wide, &merged.cast::<f64>(), a.samples, a.tolerance, cfg.seed)?;
    let out_bytes = checkpoint_bytes(&merged)?;
    outln!(
        "convs {} -> {}, max relative error {:.3e} over {} samples (tolerance {:.1e})",
        outcome.convs_before, outcome.convs_after, report.max_rel_error, report.n_samples, report.tolerance
    );
    outln!("input sha256 {}", sha256_hex(&bytes));
    outln!("output sha256 {}", sha256_hex(&out_bytes));
    if !report.pass {
        return Err(Failure::new(5, "merged model is not equivalent within tolerance"));
    }
    if dry {
        print_dry("merge", &cfg, vec![format!("write {}", output.display())]);
        return Ok(());
    }
    write_atomic(&output, &out_bytes)?;
    Ok(())
}

fn parse_kilo(s: &str) -> Result<f64> {
    let t = s.trim().trim_end_matches(['K', 'k']);
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
        .ok_or_else(|| Error::format("ReLU count", format!("`{s}` is not a non-negative number")))
}

fn fit_points_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format("latency csv", e.to_string()))?;
        if rec.len() < 2 {
            return Err(Error::format("latency csv", "expected `kilo_relus,latency_s`"));
        }
        let y: f64 = rec[1].parse().map_err(|_| Error::format("latency csv", format!("bad latency `{}`", &rec[1])))?;
        pts.push((parse_kilo(&rec[0])?, y));
    }
    Ok(pts)
}

fn pareto_relus(text: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let col = rdr
        .headers()
        .map_err(|e| Error::format("pareto csv", e.to_string()))?
        .iter()
        .position(|h| h == "relus")
        .ok_or_else(|| Error::format("pareto csv", "missing `relus` column"))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format("pareto csv", e.to_string()))?;
        let raw: u64 = rec
            .get(col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("pareto csv", "bad `relus` value"))?;
        out.push(raw as f64 / 1000.0);
    }
    Ok(out)
}

fn estimate(cfg: RunConfig, a: &EstimateArgs, dry: bool) -> CmdResult {
    let weighting = if a.relative { FitWeighting::Relative } else { FitWeighting::Ordinary };
    let model = match (&a.fit, &cfg.pipeline.latency) {
        (Some(p), _) => fit_latency_model_weighted(&fit_points_csv(&read_text(p)?)?, weighting)?,
        (None, Some(m)) => m.clone(),
        (None, None) => fit_latency_model_weighted(&crate::pipeline::REFERENCE_POINTS, weighting)?,
    };
    let mut inputs: Vec<f64> = a.kilo_relus.iter().map(|s| parse_kilo(s)).collect::<Result<_>>()?;
    if let Some(p) = &a.pareto {
        inputs.extend(pareto_relus(&read_text(p)?)?);
    }
    if inputs.is_empty() {
        return Err(Failure::new(2, "no ReLU counts given"));
    }
    if dry {
        print_dry("estimate", &cfg, vec![format!("estimate {} inputs", inputs.len())]);
        return Ok(());
    }
    eprintln!("latency_s = {:.6} * kilo_relus + {:.6} (R^2 {:.4})", model.slope, model.intercept, model.r_squared);
    outln!("kilo_relus,latency_s");
    for k in inputs {
        outln!("{k},{:.4}", model.estimate_kilo(k));
    }
    Ok(())
}

fn train_cmd(mut cfg: RunConfig, a: &TrainArgs, dry: bool) -> CmdResult {
    apply_arch(&mut cfg, &a.arch)?;
    apply_data(&mut cfg, &a.data)?;
    apply_train(&mut cfg, &a.train);
    if let Some(p) = &a.teacher {
        cfg.io.teacher = Some(p.clone());
    }
    if let Some(p) = &a.output {
        cfg.io.checkpoint_out = Some(p.clone());
    }
    let g = checked_graph(&cfg)?;
    let desc = cfg.dataset()?;
    check_dataset(&desc)?;
    let tcfg: TrainConfig = cfg.train.clone();
    tcfg.check()?;
    cfg.kd.check()?;
    let out = cfg.out_dir();
    let ckpt = cfg.io.checkpoint_out.clone().unwrap_or_else(|| out.join("model.rrdk"));
    let teacher = match &cfg.io.teacher {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Some(checkpoint_from_bytes(&bytes)?)
        }
        None => None,
    };
    if dry {
        print_dry(
            "train",
            &cfg,
            vec![
                format!("train {} for {} epochs", g.name, tcfg.epochs),
                format!("write {}", ckpt.display()),
                format!("write {}", out.join("history.csv").display()),
            ],
        );
        return Ok(());
    }
    let (tr, te) = ingest(&desc)?;
    let (tr, te) = if tr.shape == g.input_shape {
        (tr, te)
    } else {
        (tr.resized(g.input_shape.height), te.resized(g.input_shape.height))
    };
    let mut model = Model::<f32>::init(g, cfg.seed)?;
    let history = train(&mut model, &tr, Some(&te), &tcfg, teacher.as_ref().map(|t| Teacher::new(t, cfg.kd)))?;
    write_atomic(&ckpt, &checkpoint_bytes(&model)?)?;
    write_atomic(&out.join("history.csv"), history.to_csv().as_bytes())?;
    outln!(
        "loss {:.4} -> {:.4}, test accuracy {:.2}%",
        history.initial_loss,
        history.final_loss(),
        evaluate(&model, &te)? * 100.0
    );
    Ok(())
}
