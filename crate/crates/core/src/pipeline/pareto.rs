use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netir::{Scale, StageId};
use crate::passes::ReduceStep;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePoint {
    pub step: ReduceStep,
    pub relu_count: u64,
    /// Top-1 accuracy in percent.
    pub accuracy: f64,
    pub latency_est: f64,
    pub acc_per_kilorelu: f64,
}

impl CandidatePoint {
    pub fn new(step: ReduceStep, relu_count: u64, accuracy: f64, latency_est: f64) -> Result<Self> {
        Ok(Self { acc_per_kilorelu: acc_per_kilorelu(accuracy, relu_count)?, step, relu_count, accuracy, latency_est })
    }

    /// Fewer-or-equal ReLUs and higher-or-equal accuracy, strictly better in one.
    pub fn dominates(&self, other: &CandidatePoint) -> bool {
        self.relu_count <= other.relu_count
            && self.accuracy >= other.accuracy
            && (self.relu_count < other.relu_count || self.accuracy > other.accuracy)
    }
}

pub fn acc_per_kilorelu(accuracy: f64, relu_count: u64) -> Result<f64> {
    if relu_count == 0 {
        return Err(Error::Config("accuracy per kilo-ReLU is undefined for zero ReLUs".into()));
    }
    Ok(accuracy / (relu_count as f64 / 1000.0))
}

/// Non-dominated points, by descending ReLU count (ties keep input order).
pub fn pareto_front(points: &[CandidatePoint]) -> Vec<CandidatePoint> {
    let mut front: Vec<CandidatePoint> =
        points.iter().filter(|p| !points.iter().any(|q| q.dominates(p))).cloned().collect();
    front.sort_by(|a, b| b.relu_count.cmp(&a.relu_count));
    front
}

pub fn on_front(points: &[CandidatePoint]) -> Vec<bool> {
    points.iter().map(|p| !points.iter().any(|q| q.dominates(p))).collect()
}

fn stages_field(s: &BTreeSet<StageId>) -> String {
    if s.is_empty() {
        "NA".into()
    } else {
        ReduceStep::stage_list(s)
    }
}

fn row(out: &mut String, p: &CandidatePoint) {
    let _ = write!(
        out,
        "{},{},{},{},{},{:.4},{:.4},{:.6}",
        stages_field(&p.step.culled),
        stages_field(&p.step.thinned),
        p.step.alpha,
        p.step.rho,
        p.relu_count,
        p.accuracy,
        p.latency_est,
        p.acc_per_kilorelu
    );
}

pub const PARETO_HEADER: &str = "culled,thinned,alpha,rho,relus,accuracy,latency_s,acc_per_kilorelu";

/// Pareto rows in front order.
pub fn pareto_csv(points: &[CandidatePoint]) -> String {
    let mut out = format!("{PARETO_HEADER}\n");
    for p in pareto_front(points) {
        row(&mut out, &p);
        out.push('\n');
    }
    out
}

/// Every candidate in input order, with a trailing `pareto` flag column.
pub fn candidates_csv(points: &[CandidatePoint]) -> String {
    let mut out = format!("{PARETO_HEADER},pareto\n");
    for (p, front) in points.iter().zip(on_front(points)) {
        row(&mut out, p);
        let _ = writeln!(out, ",{}", u8::from(front));
    }
    out
}

fn parse_stages(s: &str) -> Result<BTreeSet<StageId>> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return Ok(BTreeSet::new());
    }
    t.split('+').map(|p| p.trim().trim_end_matches('*').parse()).collect()
}

fn parse_scale(s: &str) -> Result<Scale> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        Ok(Scale::ONE)
    } else {
        t.parse()
    }
}

fn parse_count(s: &str) -> Result<u64> {
    let t = s.trim();
    let bad = || Error::format("candidate csv", format!("bad ReLU count `{s}`"));
    match t.strip_suffix(['K', 'k']) {
        Some(k) => k.trim().parse::<f64>().map(|v| (v * 1000.0).round() as u64).map_err(|_| bad()),
        None => t.parse().map_err(|_| bad()),
    }
}

/// Reads externally measured candidates: `culled,thinned,alpha,rho,relus,accuracy`
/// with optional `latency_s`. ReLU counts may be raw or `229.38K`; a missing
/// latency is filled by `estimate`.
pub fn parse_candidates_csv(text: &str, estimate: impl Fn(u64) -> f64) -> Result<Vec<CandidatePoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::format("candidate csv", e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::format("candidate csv", format!("missing column `{name}`")));
    let (c_culled, c_thin, c_alpha, c_rho, c_relus, c_acc) =
        (need("culled")?, need("thinned")?, need("alpha")?, need("rho")?, need("relus")?, need("accuracy")?);
    let c_lat = col("latency_s");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format("candidate csv", e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let step = ReduceStep {
            culled: parse_stages(field(c_culled))?,
            thinned: parse_stages(field(c_thin))?,
            alpha: parse_scale(field(c_alpha))?,
            rho: parse_scale(field(c_rho))?,
            ..ReduceStep::default()
        };
        let relus = parse_count(field(c_relus))?;
        let accuracy: f64 = field(c_acc)
            .parse()
            .map_err(|_| Error::format("candidate csv", format!("bad accuracy `{}`", field(c_acc))))?;
        let latency = match c_lat.map(field).filter(|s| !s.is_empty()) {
            Some(l) => l.parse().map_err(|_| Error::format("candidate csv", format!("bad latency `{l}`")))?,
            None => estimate(relus),
        };
        out.push(CandidatePoint::new(step, relus, accuracy, latency)?);
    }
    if out.is_empty() {
        return Err(Error::format("candidate csv", "no candidate rows"));
    }
    Ok(out)
}
