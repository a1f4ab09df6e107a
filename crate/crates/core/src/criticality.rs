//! Stage criticality: how much accuracy a stage's ReLUs buy per ReLU.
//!
//! `C_k = (acc_k - min_i acc_i) / kilo_relus_k ^ w`, with accuracies measured
//! on probe networks that keep ReLUs in stage `k` only.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netir::{stage_view, NetworkGraph, StageId};
use crate::passes::cull;

pub const DEFAULT_W: f64 = 0.07;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeasurement {
    pub stage: StageId,
    /// Stage ReLU count divided by 1000.
    pub relu_count_kilo: f64,
    /// Percent.
    pub acc_with_kd: Option<f64>,
    pub acc_without_kd: Option<f64>,
}

impl StageMeasurement {
    pub fn new(stage: StageId, relu_count_kilo: f64, acc_with_kd: f64) -> Self {
        Self { stage, relu_count_kilo, acc_with_kd: Some(acc_with_kd), acc_without_kd: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub w: f64,
    pub scores: Vec<(StageId, f64)>,
    /// Least to most critical.
    pub order: Vec<StageId>,
    pub relu_count_kilo: Vec<(StageId, f64)>,
}

impl CriticalityReport {
    pub fn score(&self, s: StageId) -> Option<f64> {
        self.scores.iter().find(|(id, _)| *id == s).map(|(_, c)| *c)
    }

    /// The stage that is never culled.
    pub fn most_critical(&self) -> StageId {
        *self.order.last().expect("at least two stages")
    }

    /// `stage,relus_kilo,score,rank` with rank 1 = least critical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,relus_kilo,score,rank\n");
        for (s, c) in &self.scores {
            let rank = self.order.iter().position(|o| o == s).expect("ranked") + 1;
            let kilo = self.relu_count_kilo.iter().find(|(id, _)| id == s).map_or(0.0, |(_, k)| *k);
            let _ = writeln!(out, "{s},{kilo},{c:.4},{rank}");
        }
        out
    }
}

/// One graph per stage with ReLUs left only in that stage. Conv1 ReLUs are
/// always removed; classifier ReLUs are kept.
pub fn probe_networks(g: &NetworkGraph) -> Result<Vec<(StageId, NetworkGraph)>> {
    let view = stage_view(g)?;
    let all: BTreeSet<StageId> = view.stage_ids().into_iter().collect();
    all.iter()
        .map(|&k| {
            let others: BTreeSet<StageId> = all.iter().copied().filter(|&s| s != k).collect();
            let mut probe = cull(g, &others)?;
            probe.name = format!("{}-probe-{k}", g.name);
            Ok((k, probe))
        })
        .collect()
}

pub fn criticality_scores(ms: &[StageMeasurement], w: f64) -> Result<CriticalityReport> {
    if ms.len() < 2 {
        return Err(Error::Criticality(format!("need at least two stage measurements, got {}", ms.len())));
    }
    let mut seen = BTreeSet::new();
    let mut acc = Vec::with_capacity(ms.len());
    for m in ms {
        if !seen.insert(m.stage) {
            return Err(Error::Criticality(format!("stage {} measured twice", m.stage)));
        }
        if !(m.relu_count_kilo > 0.0) {
            return Err(Error::Criticality(format!("stage {} has no ReLUs", m.stage)));
        }
        let a = m.acc_with_kd.ok_or_else(|| Error::Criticality(format!("stage {} lacks a KD accuracy", m.stage)))?;
        if !(0.0..=100.0).contains(&a) {
            return Err(Error::Criticality(format!("accuracy {a} of stage {} outside [0, 100]", m.stage)));
        }
        acc.push(a);
    }
    let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let scores: Vec<(StageId, f64)> =
        ms.iter().zip(&acc).map(|(m, a)| (m.stage, (a - min) / m.relu_count_kilo.powf(w))).collect();
    let mut report = CriticalityReport {
        w,
        scores,
        order: Vec::new(),
        relu_count_kilo: ms.iter().map(|m| (m.stage, m.relu_count_kilo)).collect(),
    };
    report.order = rank_stages(&report);
    Ok(report)
}

/// Ascending score; equal scores put the stage with more ReLUs first.
pub fn rank_stages(report: &CriticalityReport) -> Vec<StageId> {
    let kilo = |s: StageId| report.relu_count_kilo.iter().find(|(id, _)| *id == s).map_or(0.0, |(_, k)| *k);
    let mut order = report.scores.clone();
    order.sort_by(|(sa, ca), (sb, cb)| ca.total_cmp(cb).then(kilo(*sb).total_cmp(&kilo(*sa))).then(sa.cmp(sb)));
    order.into_iter().map(|(s, _)| s).collect()
}

/// `786K` is read as kilo-ReLUs, a bare number as a raw count.
fn parse_relus(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, scale) = match t.strip_suffix(['K', 'k']) {
        Some(n) => (n, 1.0),
        None => (t, 1e-3),
    };
    num.trim()
        .parse::<f64>()
        .map(|v| v * scale)
        .map_err(|_| Error::format("measurement csv", format!("bad ReLU count `{s}`")))
}

fn parse_acc(s: &str) -> Result<Option<f64>> {
    let t = s.trim().trim_end_matches('%');
    if t.is_empty() || t == "-" {
        return Ok(None);
    }
    t.parse().map(Some).map_err(|_| Error::format("measurement csv", format!("bad accuracy `{s}`")))
}

/// Reads `stage,relus,acc_wo_kd,acc_w_kd`.
pub fn parse_measurements_csv(text: &str) -> Result<Vec<StageMeasurement>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::format("measurement csv", e.to_string()))?.clone();
    let expected = ["stage", "relus", "acc_wo_kd", "acc_w_kd"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::format("measurement csv", format!("header must be `{}`", expected.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format("measurement csv", e.to_string()))?;
        out.push(StageMeasurement {
            stage: rec[0].parse()?,
            relu_count_kilo: parse_relus(&rec[1])?,
            acc_without_kd: parse_acc(&rec[2])?,
            acc_with_kd: parse_acc(&rec[3])?,
        });
    }
    if out.is_empty() {
        return Err(Error::format("measurement csv", "no measurement rows"));
    }
    Ok(out)
}

pub fn measurements_csv(ms: &[StageMeasurement]) -> String {
    let mut out = String::from("stage,relus,acc_wo_kd,acc_w_kd\n");
    let fmt = |v: Option<f64>| v.map(|a| format!("{a}")).unwrap_or_default();
    for m in ms {
        let _ = writeln!(out, "{},{}K,{},{}", m.stage, m.relu_count_kilo, fmt(m.acc_without_kd), fmt(m.acc_with_kd));
    }
    out
}
