use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::latency::{estimate_latency, LatencyModel};
use super::pareto::{on_front, CandidatePoint};
use crate::criticality::{criticality_scores, probe_networks, CriticalityReport, StageMeasurement, DEFAULT_W};
use crate::data::{ingest, Dataset, DatasetDescriptor};
use crate::engine::{evaluate, train, KdConfig, Model, Teacher, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::netir::{build_architecture, stage_view, ArchitectureSpec, NetworkGraph, Scale, StageId};
use crate::passes::{apply_step, default_thin_rule, ReduceStep, ThinRule};
use crate::profile::{count_relus, relu_total};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rung {
    pub alpha: Scale,
    pub rho: Scale,
}

pub fn default_ladder() -> Vec<Rung> {
    vec![
        Rung { alpha: Scale::HALF, rho: Scale::ONE },
        Rung { alpha: Scale::ONE, rho: Scale::HALF },
        Rung { alpha: Scale::HALF, rho: Scale::HALF },
    ]
}

fn default_w() -> f64 {
    DEFAULT_W
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub arch: ArchitectureSpec,
    pub dataset: DatasetDescriptor,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub kd: KdConfig,
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<Rung>,
    /// Thinning rule; the family default when absent.
    #[serde(default)]
    pub parity: Option<ThinRule>,
    /// Culling order replacing the criticality ranking.
    #[serde(default)]
    pub stages_override: Option<Vec<StageId>>,
    /// Precomputed probe accuracies; skips probe training.
    #[serde(default)]
    pub measurements: Option<Vec<StageMeasurement>>,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Record failed candidates and continue instead of aborting.
    #[serde(default)]
    pub keep_going: bool,
    #[serde(default)]
    pub latency: Option<LatencyModel>,
}

impl PipelineConfig {
    pub fn new(arch: ArchitectureSpec, dataset: DatasetDescriptor, train: TrainConfig) -> Self {
        Self {
            arch,
            dataset,
            train,
            kd: KdConfig::default(),
            w: DEFAULT_W,
            ladder: default_ladder(),
            parity: None,
            stages_override: None,
            measurements: None,
            threads: None,
            keep_going: false,
            latency: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.train.check()?;
        self.kd.check()?;
        self.dataset.check()?;
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::Config(format!("criticality exponent {} must be non-negative", self.w)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.dataset.classes != self.arch.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, architecture {}",
                self.dataset.classes, self.arch.num_classes
            )));
        }
        Ok(())
    }

    pub fn latency_model(&self) -> LatencyModel {
        self.latency.clone().unwrap_or_else(LatencyModel::reference)
    }
}

/// splitmix64 over the base seed and an FNV-1a hash of the job label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = base ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedCandidate {
    pub label: String,
    pub iteration: usize,
    pub step: ReduceStep,
}

/// Culling order: `override_order` when given, else ascending criticality.
/// The most critical stage is never culled.
pub fn culling_order(report: &CriticalityReport, override_order: Option<&[StageId]>) -> Result<Vec<StageId>> {
    let most = report.most_critical();
    match override_order {
        None => Ok(report.order.iter().copied().filter(|&s| s != most).collect()),
        Some(o) => {
            let known: BTreeSet<StageId> = report.order.iter().copied().collect();
            let mut seen = BTreeSet::new();
            for &s in o {
                if !known.contains(&s) {
                    return Err(Error::UnknownStage(s.to_string()));
                }
                if s == most {
                    return Err(Error::Config(format!("override culls {s}, the most critical stage")));
                }
                if !seen.insert(s) {
                    return Err(Error::Config(format!("override lists {s} twice")));
                }
            }
            Ok(o.to_vec())
        }
    }
}

/// Candidate steps: for each prefix of `order`, cull it alone, cull and thin
/// every other stage, then each ladder rung on top of the latter.
pub fn plan_candidates(
    stages: &[StageId],
    order: &[StageId],
    ladder: &[Rung],
    parity: ThinRule,
) -> Vec<PlannedCandidate> {
    let mut out = Vec::new();
    for i in 1..=order.len() {
        let culled: BTreeSet<StageId> = order[..i].iter().copied().collect();
        let thinned: BTreeSet<StageId> = stages.iter().copied().filter(|s| !culled.contains(s)).collect();
        let base = ReduceStep { culled: culled.clone(), parity, ..ReduceStep::default() };
        out.push(PlannedCandidate { label: format!("it{i}-cull"), iteration: i, step: base.clone() });
        let thin = ReduceStep { thinned, ..base };
        out.push(PlannedCandidate { label: format!("it{i}-thin"), iteration: i, step: thin.clone() });
        for r in ladder {
            out.push(PlannedCandidate {
                label: format!("it{i}-a{}-r{}", r.alpha, r.rho),
                iteration: i,
                step: ReduceStep { alpha: r.alpha, rho: r.rho, ..thin.clone() },
            });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateRecord {
    pub label: String,
    pub iteration: usize,
    pub seed: u64,
    pub point: CandidatePoint,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedCandidate {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRecord {
    pub stage: StageId,
    pub seed: u64,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineRun {
    pub baseline_relus: u64,
    pub teacher_seed: u64,
    pub teacher_accuracy: f64,
    pub teacher_history: TrainHistory,
    pub probes: Vec<ProbeRecord>,
    pub criticality: CriticalityReport,
    pub culling_order: Vec<StageId>,
    pub candidates: Vec<CandidateRecord>,
    pub failures: Vec<FailedCandidate>,
    pub train_checksum: String,
    pub test_checksum: String,
}

impl PipelineRun {
    pub fn points(&self) -> Vec<CandidatePoint> {
        self.candidates.iter().map(|c| c.point.clone()).collect()
    }

    pub fn pareto_flags(&self) -> Vec<bool> {
        on_front(&self.points())
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        m.insert("teacher".to_string(), self.teacher_seed);
        for p in &self.probes {
            m.insert(format!("probe-{}", p.stage), p.seed);
        }
        for c in &self.candidates {
            m.insert(c.label.clone(), c.seed);
        }
        m
    }
}

struct Ctx<'a> {
    train_set: &'a Dataset,
    test_set: &'a Dataset,
    cfg: &'a PipelineConfig,
    teacher: &'a Model<f32>,
}

impl Ctx<'_> {
    /// Trains `graph` from scratch with distillation; returns (accuracy %, history).
    fn fit(&self, graph: NetworkGraph, seed: u64) -> Result<(f64, TrainHistory)> {
        let side = graph.input_shape.height;
        let resized;
        let (tr, te) = if side == self.train_set.shape.height {
            (self.train_set, self.test_set)
        } else {
            resized = (self.train_set.resized(side), self.test_set.resized(side));
            (&resized.0, &resized.1)
        };
        let mut model = Model::<f32>::init(graph, seed)?;
        let tcfg = TrainConfig { seed, ..self.cfg.train.clone() };
        let mut t = Teacher::new(self.teacher, self.cfg.kd);
        if side != self.teacher.graph.input_shape.height {
            t = t.with_inputs(self.train_set);
        }
        let history = train(&mut model, tr, None, &tcfg, Some(t))?;
        Ok((evaluate(&model, te)? * 100.0, history))
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

struct Prepared {
    base: NetworkGraph,
    stages: Vec<StageId>,
    parity: ThinRule,
    train_set: Dataset,
    test_set: Dataset,
    pool: rayon::ThreadPool,
    teacher: Model<f32>,
    teacher_seed: u64,
    teacher_history: TrainHistory,
    teacher_accuracy: f64,
}

fn at_resolution(ds: Dataset, g: &NetworkGraph) -> Dataset {
    if ds.shape == g.input_shape {
        ds
    } else {
        ds.resized(g.input_shape.height)
    }
}

fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.check()?;
    let base = build_architecture(&cfg.arch)?;
    let stages = stage_view(&base)?.stage_ids();
    let parity = cfg.parity.unwrap_or_else(|| default_thin_rule(&base));
    let (train_set, test_set) = ingest(&cfg.dataset)?;
    let train_set = at_resolution(train_set, &base);
    let test_set = at_resolution(test_set, &base);
    let pool = pool(cfg.threads)?;

    let teacher_seed = derive_seed(cfg.train.seed, "teacher");
    let mut teacher = Model::<f32>::init(base.clone(), teacher_seed)?;
    let tcfg = TrainConfig { seed: teacher_seed, ..cfg.train.clone() };
    let teacher_history = pool
        .install(|| train(&mut teacher, &train_set, None, &tcfg, None))
        .map_err(|e| Error::Candidate { label: "teacher".into(), source: Box::new(e) })?;
    let teacher_accuracy = evaluate(&teacher, &test_set)? * 100.0;
    Ok(Prepared {
        base,
        stages,
        parity,
        train_set,
        test_set,
        pool,
        teacher,
        teacher_seed,
        teacher_history,
        teacher_accuracy,
    })
}

impl Prepared {
    fn ctx<'a>(&'a self, cfg: &'a PipelineConfig) -> Ctx<'a> {
        Ctx { train_set: &self.train_set, test_set: &self.test_set, cfg, teacher: &self.teacher }
    }

    /// Trains one probe per stage, concurrently.
    fn measure(&self, cfg: &PipelineConfig) -> Result<(Vec<StageMeasurement>, Vec<ProbeRecord>)> {
        let ctx = self.ctx(cfg);
        let stage_relus = count_relus(&self.base)?;
        let nets = probe_networks(&self.base)?;
        let results: Vec<Result<(StageMeasurement, ProbeRecord)>> = self.pool.install(|| {
            nets.into_par_iter()
                .map(|(stage, g)| {
                    let seed = derive_seed(cfg.train.seed, &format!("probe-{stage}"));
                    let (acc, history) = ctx
                        .fit(g, seed)
                        .map_err(|e| Error::Candidate { label: format!("probe-{stage}"), source: Box::new(e) })?;
                    let m = StageMeasurement::new(stage, stage_relus.stage(stage) as f64 / 1000.0, acc);
                    Ok((m, ProbeRecord { stage, seed, history }))
                })
                .collect()
        });
        let mut ms = Vec::new();
        let mut ps = Vec::new();
        for r in results {
            let (m, p) = r?;
            ms.push(m);
            ps.push(p);
        }
        Ok((ms, ps))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalityRun {
    pub teacher_accuracy: f64,
    pub measurements: Vec<StageMeasurement>,
    pub probes: Vec<ProbeRecord>,
    pub report: CriticalityReport,
}

/// Trains the teacher and one distilled probe per stage, then scores them.
pub fn measure_criticality(cfg: &PipelineConfig) -> Result<CriticalityRun> {
    let prep = prepare(cfg)?;
    let (measurements, probes) = prep.measure(cfg)?;
    let report = criticality_scores(&measurements, cfg.w)?;
    Ok(CriticalityRun { teacher_accuracy: prep.teacher_accuracy, measurements, probes, report })
}

/// Teacher, per-stage probes, criticality ranking, then every planned
/// candidate, each trained from scratch with distillation.
pub fn run_deepreduce(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let prep = prepare(cfg)?;
    let (measurements, probes) = match &cfg.measurements {
        Some(ms) => (ms.clone(), Vec::new()),
        None => prep.measure(cfg)?,
    };
    let criticality = criticality_scores(&measurements, cfg.w)?;
    let order = culling_order(&criticality, cfg.stages_override.as_deref())?;
    let plan = plan_candidates(&prep.stages, &order, &cfg.ladder, prep.parity);
    let latency = cfg.latency_model();
    let ctx = prep.ctx(cfg);
    let base = &prep.base;

    let results: Vec<Result<CandidateRecord>> = prep.pool.install(|| {
        plan.par_iter()
            .map(|p| {
                let seed = derive_seed(cfg.train.seed, &p.label);
                let run = || -> Result<CandidateRecord> {
                    let g = apply_step(base, &p.step)?;
                    let relus = relu_total(&g)?;
                    let (acc, history) = ctx.fit(g, seed)?;
                    let point = CandidatePoint::new(p.step.clone(), relus, acc, estimate_latency(&latency, relus))?;
                    Ok(CandidateRecord { label: p.label.clone(), iteration: p.iteration, seed, point, history })
                };
                run().map_err(|e| Error::Candidate { label: p.label.clone(), source: Box::new(e) })
            })
            .collect()
    });
    let mut candidates = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => candidates.push(c),
            Err(Error::Candidate { label, source }) if cfg.keep_going => {
                failures.push(FailedCandidate { label, error: source.to_string() })
            }
            Err(e) => return Err(e),
        }
    }

    Ok(PipelineRun {
        baseline_relus: relu_total(base)?,
        teacher_seed: prep.teacher_seed,
        teacher_accuracy: prep.teacher_accuracy,
        teacher_history: prep.teacher_history.clone(),
        probes,
        criticality,
        culling_order: order,
        candidates,
        failures,
        train_checksum: prep.train_set.checksum(),
        test_checksum: prep.test_set.checksum(),
    })
}

/// Run metadata without wall-clock fields, so reruns compare byte-for-byte.
pub fn manifest_json(cfg: &PipelineConfig, run: &PipelineRun) -> Result<String> {
    let candidates: Vec<serde_json::Value> = run
        .candidates
        .iter()
        .map(|c| {
            serde_json::json!({
                "label": c.label,
                "iteration": c.iteration,
                "seed": c.seed,
                "step": c.point.step,
                "relus": c.point.relu_count,
                "accuracy": c.point.accuracy,
                "initial_loss": c.history.initial_loss,
                "final_loss": c.history.final_loss(),
            })
        })
        .collect();
    let v = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "dataset": { "train_sha256": run.train_checksum, "test_sha256": run.test_checksum },
        "baseline_relus": run.baseline_relus,
        "teacher_accuracy": run.teacher_accuracy,
        "criticality": run.criticality,
        "culling_order": run.culling_order,
        "seeds": run.seeds(),
        "candidates": candidates,
        "failures": run.failures,
    });
    serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))
}
