//! Acceptance checks. One PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails.

use std::collections::BTreeSet;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use relureduce::criticality::{criticality_scores, StageMeasurement, DEFAULT_W};
use relureduce::data::{parse_cifar10, parse_cifar100, DatasetDescriptor};
use relureduce::engine::{
    checkpoint_bytes, checkpoint_from_bytes, grad_check, kd_loss, param_name, Batch, KdConfig, Model, Schedule,
    TrainConfig, BETA, GAMMA, RUNNING_MEAN, RUNNING_VAR,
};
use relureduce::netir::{
    build_architecture, ArchitectureSpec, Family, LayerKind, LayerNode, NetworkGraph, Scale, StageId, TensorShape,
};
use relureduce::passes::{apply_step, equivalence_check, fold_bn, merge_for_inference, ReduceStep, ThinRule};
use relureduce::pipeline::{
    candidates_csv, fit_latency_model, pareto_csv, pareto_front, parse_candidates_csv, run_deepreduce, CandidatePoint,
    PipelineConfig,
};
use relureduce::profile::{count_relus, relu_total};

#[derive(Default)]
struct Check(Vec<String>);

impl Check {
    fn ok(&mut self, cond: bool, what: impl FnOnce() -> String) {
        if !cond {
            self.0.push(what());
        }
    }

    fn eq<T: PartialEq + std::fmt::Debug>(&mut self, what: &str, got: T, want: T) {
        self.ok(got == want, || format!("{what}: got {got:?}, want {want:?}"));
    }

    fn near(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        self.ok((got - want).abs() <= tol, || format!("{what}: got {got:.4}, want {want} ± {tol}"));
    }

    fn rel(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        let r = (got - want) / want;
        self.ok(r.abs() <= tol, || {
            format!("{what}: got {got:.4}, want {want} ± {:.0}% (off {:+.1}%)", tol * 100.0, r * 100.0)
        });
    }
}

type Outcome = Result<Check, String>;

fn spec(f: Family, side: usize, classes: usize) -> NetworkGraph {
    build_architecture(&ArchitectureSpec::new(f, side, classes)).unwrap()
}

fn stage_counts(g: &NetworkGraph) -> Vec<u64> {
    count_relus(g).unwrap().per_stage.iter().map(|(_, n)| *n).collect()
}

fn relu_accounting() -> Outcome {
    let mut c = Check::default();
    let r18 = spec(Family::ResNet18, 32, 100);
    let r = count_relus(&r18).map_err(|e| e.to_string())?;
    c.eq("ResNet18@32 total", r.total, 557_056);
    c.eq("ResNet18@32 Conv1", r.conv1, 65_536);
    c.eq("ResNet18@32 stages", stage_counts(&r18), vec![262_144, 131_072, 65_536, 32_768]);
    c.eq("ResNet18@64 total", relu_total(&spec(Family::ResNet18, 64, 200)).unwrap(), 2_228_224);
    c.eq("ResNet34@64 total", relu_total(&spec(Family::ResNet34, 64, 200)).unwrap(), 3_866_624);
    c.eq(
        "MobileNetV1@32 stages",
        stage_counts(&spec(Family::MobileNetV1, 32, 100)),
        vec![131_072, 114_688, 57_344, 94_208, 14_336],
    );
    let vgg = count_relus(&spec(Family::Vgg16, 32, 10)).unwrap();
    let rows: Vec<u64> = vgg.per_stage.iter().map(|(_, n)| n + vgg.classifier).collect();
    c.eq("VGG16@32 stage+FC rows", rows, vec![139_264, 73_728, 57_344, 32_768, 14_336]);
    Ok(c)
}

fn pass_arithmetic() -> Outcome {
    let mut c = Check::default();
    let g = spec(Family::ResNet18, 32, 100);
    let half = Scale::new(1, 2).unwrap();
    let s1: BTreeSet<StageId> = [StageId(1)].into();
    let rest: BTreeSet<StageId> = (2..=4).map(StageId).collect();
    let steps = [
        ("cull S1", ReduceStep { culled: s1.clone(), ..ReduceStep::default() }, 229_376),
        ("+thin", ReduceStep { culled: s1.clone(), thinned: rest.clone(), ..ReduceStep::default() }, 114_688),
        (
            "+alpha 0.5",
            ReduceStep { culled: s1.clone(), thinned: rest.clone(), alpha: half, ..ReduceStep::default() },
            57_344,
        ),
        (
            "+rho 0.5",
            ReduceStep { culled: s1.clone(), thinned: rest.clone(), rho: half, ..ReduceStep::default() },
            28_672,
        ),
        (
            "+compound",
            ReduceStep { culled: s1.clone(), thinned: rest.clone(), alpha: half, rho: half, parity: ThinRule::KeepOdd },
            14_336,
        ),
    ];
    for (name, step, want) in steps {
        let got = apply_step(&g, &step).and_then(|g| relu_total(&g)).map_err(|e| format!("{name}: {e}"))?;
        c.eq(name, got, want);
    }
    Ok(c)
}

fn measurements(rows: &[(f64, f64)]) -> Vec<StageMeasurement> {
    rows.iter().enumerate().map(|(i, &(k, a))| StageMeasurement::new(StageId(i as u8 + 1), k, a)).collect()
}

fn criticality() -> Outcome {
    let mut c = Check::default();
    let cases: [(&str, &[(f64, f64)], &[f64]); 3] = [
        ("ResNet34", &[(1573.0, 39.4), (1049.0, 51.74), (786.0, 60.83), (197.0, 54.41)], &[0.0, 7.58, 13.44, 10.37]),
        (
            "MobileNetV1",
            &[(131.1, 34.16), (114.7, 50.65), (57.3, 54.20), (94.2, 61.10), (14.3, 45.45)],
            &[0.0, 11.83, 15.09, 19.60, 9.37],
        ),
        ("ResNet56", &[(311.3, 59.45), (147.5, 67.97), (73.73, 69.22)], &[0.0, 6.0, 7.2]),
    ];
    for (name, rows, want) in cases {
        let r = criticality_scores(&measurements(rows), DEFAULT_W).map_err(|e| e.to_string())?;
        for ((s, got), w) in r.scores.iter().zip(want) {
            c.near(&format!("{name} {s}"), *got, *w, 0.05);
        }
    }
    let orders: [(&str, &[(f64, f64)], [u8; 4]); 2] = [
        ("ResNet18/CIFAR-100", &[(262.0, 59.85), (131.0, 68.79), (66.0, 69.92), (33.0, 63.16)], [1, 4, 2, 3]),
        ("ResNet18/TinyImageNet", &[(1049.0, 39.61), (524.0, 49.44), (262.0, 54.34), (131.0, 51.46)], [1, 2, 4, 3]),
    ];
    for (name, rows, want) in orders {
        let r = criticality_scores(&measurements(rows), DEFAULT_W).map_err(|e| e.to_string())?;
        let got: Vec<u8> = r.order.iter().map(|s| s.0).collect();
        c.eq(&format!("{name} order"), got, want.to_vec());
    }
    Ok(c)
}

const R18_C100_FRONT: &str = "\
culled,thinned,alpha,rho,relus,accuracy,latency_s
S1,NA,NA,NA,229.38K,76.22,4.61
S1+S4,NA,NA,NA,196.61K,75.51,3.94
S1,S2+S3+S4,NA,NA,114.69K,74.72,2.38
S1,S2+S3+S4,0.5,NA,57.34K,72.68,1.37
S1+S4,S2+S3,0.5,NA,49.15K,69.50,1.19
S1,S2+S3+S4,NA,0.5,28.67K,68.68,0.74
S1+S4,S2+S3,0.5,NA,24.57K,68.41,0.56
S1,S2+S3+S4,0.5,0.5,14.33K,65.36,0.52
S1+S4,S2+S3,0.5,0.5,12.28K,64.97,0.45
S1,S2*+S3*+S4*,0.5,0.5,7.17K,62.30,0.21
";

const R18_C100_RATIOS: [f64; 10] = [0.332, 0.384, 0.651, 1.27, 1.45, 2.40, 2.78, 4.56, 5.29, 8.69];

const R18_TINY_LATENCY: [(f64, f64); 12] = [
    (917.52, 17.16),
    (458.76, 8.87),
    (393.24, 7.77),
    (229.38, 4.61),
    (196.62, 4.16),
    (114.69, 2.47),
    (98.31, 2.64),
    (57.35, 1.85),
    (49.16, 1.325),
    (28.67, 0.678),
    (24.58, 0.579),
    (12.29, 0.455),
];

fn r18_front() -> Result<Vec<CandidatePoint>, String> {
    parse_candidates_csv(R18_C100_FRONT, |_| 0.0).map_err(|e| e.to_string())
}

fn pareto() -> Outcome {
    let mut c = Check::default();
    let t = r18_front()?;
    c.ok(pareto_front(&t) == t, || "published rows are not returned unchanged".into());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..50 {
        let base = &t[rng.random_range(0..t.len())];
        let relus = base.relu_count + rng.random_range(0..5_000);
        let acc = base.accuracy - rng.random_range(0.0..5.0);
        let p = CandidatePoint::new(ReduceStep::default(), relus, acc, 0.0).unwrap();
        let mut with = t.clone();
        with.insert(i % (t.len() + 1), p);
        c.ok(pareto_front(&with) == t, || format!("dominated point ({relus}, {acc:.2}) survived"));
    }
    for (p, want) in t.iter().zip(R18_C100_RATIOS) {
        c.near(&format!("acc/kReLU at {}", p.relu_count), p.acc_per_kilorelu, want, 0.005);
    }
    Ok(c)
}

fn latency() -> Outcome {
    let mut c = Check::default();
    let t4: Vec<(f64, f64)> = R18_C100_FRONT
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[4].trim_end_matches('K').parse().unwrap(), f[6].parse().unwrap())
        })
        .collect();
    c.eq("fit points", t4.len(), 10);
    let m = fit_latency_model(&t4).map_err(|e| e.to_string())?;
    c.ok(m.r_squared >= 0.95, || format!("R² {:.4} < 0.95", m.r_squared));
    for (k, s) in &t4 {
        c.rel(&format!("fit point {k}K"), m.estimate_kilo(*k), *s, 0.25);
    }
    for (k, s) in R18_TINY_LATENCY {
        c.rel(&format!("cross-check {k}K"), m.estimate_kilo(k), s, 0.30);
    }
    Ok(c)
}

fn conv(id: &str, input: &str, out: usize, k: usize, stride: usize, pad: usize, groups: usize) -> LayerNode {
    LayerNode::new(
        id,
        LayerKind::Conv2d { out_channels: out, kernel: k, stride, padding: pad, groups, bias: false },
        vec![input.into()],
    )
}

fn node(id: &str, kind: LayerKind, inputs: &[&str]) -> LayerNode {
    LayerNode::new(id, kind, inputs.iter().map(|s| s.to_string()).collect())
}

fn toy(body: Vec<LayerNode>, last: &str) -> NetworkGraph {
    let mut g = NetworkGraph::new("toy", TensorShape::image(3, 8), 5);
    g.nodes.push(node("in", LayerKind::Input, &[]));
    g.nodes.extend(body);
    g.nodes.push(node("gap", LayerKind::GlobalAvgPool, &[last]));
    g.nodes.push(node("flat", LayerKind::Flatten, &["gap"]));
    g.nodes.push(node("fc", LayerKind::FullyConnected { out_features: 5, bias: true }, &["flat"]));
    g.infer_shapes().unwrap();
    g
}

fn randomized(g: NetworkGraph, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::init(g, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let bns: Vec<String> =
        m.graph.nodes.iter().filter(|n| n.kind == LayerKind::BatchNorm).map(|n| n.id.clone()).collect();
    for id in bns {
        for (suffix, lo, hi) in
            [(RUNNING_MEAN, -0.5, 0.5), (RUNNING_VAR, 0.5, 2.0), (GAMMA, 0.5, 1.5), (BETA, -0.3, 0.3)]
        {
            for v in m.params.get_mut(&param_name(&id, suffix)).unwrap().data_mut() {
                *v = rng.random_range(lo..hi);
            }
        }
    }
    m
}

fn merge_equivalence() -> Outcome {
    let mut c = Check::default();
    let bn = |id: &str, x: &str| node(id, LayerKind::BatchNorm, &[x]);
    let relu = |id: &str, x: &str| node(id, LayerKind::Relu, &[x]);
    let fold = toy(vec![conv("c1", "in", 8, 3, 1, 1, 1), bn("bn", "c1"), relu("r", "bn")], "r");
    let chain = toy(
        vec![
            conv("c1", "in", 6, 3, 1, 1, 1),
            bn("b1", "c1"),
            conv("c2", "b1", 8, 1, 1, 0, 1),
            bn("b2", "c2"),
            relu("r", "b2"),
        ],
        "r",
    );
    let dw_pw = toy(
        vec![
            conv("stem", "in", 8, 3, 1, 1, 1),
            relu("r0", "stem"),
            conv("dw", "r0", 8, 3, 2, 1, 8),
            bn("b1", "dw"),
            conv("pw", "b1", 16, 1, 1, 0, 1),
            bn("b2", "pw"),
            relu("r", "b2"),
        ],
        "r",
    );
    let projection = toy(
        vec![
            conv("stem", "in", 8, 3, 1, 1, 1),
            relu("r0", "stem"),
            conv("main", "r0", 16, 3, 2, 1, 1),
            bn("bm", "main"),
            conv("short", "r0", 16, 1, 2, 0, 1),
            bn("bs", "short"),
            node("sum", LayerKind::Add, &["bm", "bs"]),
            relu("r", "sum"),
        ],
        "r",
    );
    let identity = toy(
        vec![
            conv("stem", "in", 8, 3, 1, 1, 1),
            relu("r0", "stem"),
            conv("main", "r0", 8, 3, 1, 1, 1),
            bn("bm", "main"),
            node("sum", LayerKind::Add, &["bm", "r0"]),
            relu("r", "sum"),
        ],
        "r",
    );
    let mv1 =
        build_architecture(&ArchitectureSpec::new(Family::MobileNetV1, 16, 4).with_alpha(Scale::new(1, 8).unwrap()))
            .map_err(|e| e.to_string())?;
    let culled = ReduceStep { culled: (1..=4).map(StageId).collect(), ..ReduceStep::default() };
    let mv1 = apply_step(&mv1, &culled).map_err(|e| e.to_string())?;

    // (name, graph, has a mergeable ReLU-free chain)
    let cases = [
        ("conv-BN fold", fold, false),
        ("conv∘conv", chain, true),
        ("depthwise∘pointwise", dw_pw, true),
        ("projection residual", projection, true),
        ("identity residual", identity, false),
        ("culled MobileNetV1", mv1, true),
    ];
    for (i, (name, g, chain)) in cases.into_iter().enumerate() {
        let m = randomized(g, 100 + i as u64);
        let merged = if i == 0 {
            let (g, w) = fold_bn(&m.graph, &m.params).map_err(|e| e.to_string())?;
            c.eq("BN left after fold", g.count_kind(|k| *k == LayerKind::BatchNorm), 0);
            Model::new(g, w).map_err(|e| e.to_string())?
        } else {
            let out = merge_for_inference(&m).map_err(|e| format!("{name}: {e}"))?;
            if chain {
                c.ok(out.convs_after < out.convs_before, || {
                    format!("{name}: convs {} -> {}", out.convs_before, out.convs_after)
                });
            }
            if name.contains("residual") {
                c.eq(&format!("{name} adds left"), out.model.graph.count_kind(|k| *k == LayerKind::Add), 0);
            }
            out.model
        };
        let r = equivalence_check(&m, &merged, 100, 1e-4, i as u64).map_err(|e| e.to_string())?;
        c.eq(&format!("{name} samples"), r.n_samples, 100);
        c.ok(r.pass, || format!("{name}: relative L∞ {:.2e} > 1e-4", r.max_rel_error));
    }
    Ok(c)
}

fn cnn3() -> NetworkGraph {
    let conv = |id: &str, input: &str, out: usize, stride: usize| {
        LayerNode::new(
            id,
            LayerKind::Conv2d { out_channels: out, kernel: 3, stride, padding: 1, groups: 1, bias: true },
            vec![input.into()],
        )
    };
    let mut g = NetworkGraph::new("cnn3", TensorShape::image(2, 6), 3);
    g.nodes.push(node("in", LayerKind::Input, &[]));
    g.nodes.push(conv("c1", "in", 4, 1));
    g.nodes.push(node("bn1", LayerKind::BatchNorm, &["c1"]));
    g.nodes.push(node("r1", LayerKind::Relu, &["bn1"]));
    g.nodes.push(conv("c2", "r1", 6, 2));
    g.nodes.push(node("r2", LayerKind::Relu, &["c2"]));
    g.nodes.push(node("gap", LayerKind::GlobalAvgPool, &["r2"]));
    g.nodes.push(node("flat", LayerKind::Flatten, &["gap"]));
    g.nodes.push(node("fc", LayerKind::FullyConnected { out_features: 3, bias: true }, &["flat"]));
    g.infer_shapes().unwrap();
    g
}

fn engine() -> Outcome {
    let mut c = Check::default();
    let m = Model::<f64>::init(cnn3(), 4).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..5 * m.input_len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let labels = [0, 1, 2, 1, 0];
    let err = grad_check(&m, &Batch { x: &x, labels: &labels }, 1e-6, 40).map_err(|e| e.to_string())?;
    c.ok(err < 1e-5, || format!("grad check max relative error {err:.2e}"));

    let zeros = vec![0.0f64; 4 * 6];
    let kd = kd_loss(&zeros, &zeros, &[0, 1, 2, 3, 0, 1], 4, &KdConfig::default()).map_err(|e| e.to_string())?;
    c.eq("uniform KD loss", kd, 0.9 * 4f64.ln());

    for (e, want) in [(0, 0.1), (29, 0.1), (30, 0.01), (59, 0.01), (60, 0.001)] {
        c.near(&format!("step lr at epoch {e}"), Schedule::default().lr(0.1, e, 120), want, 1e-15 * want);
    }
    for e in [0, 29, 30, 59, 60] {
        let want = 0.05 * (1.0 + (std::f64::consts::PI * e as f64 / 120.0).cos());
        c.near(&format!("cosine lr at epoch {e}"), Schedule::Cosine.lr(0.1, e, 120), want, 1e-15);
    }
    Ok(c)
}

fn desk_config() -> PipelineConfig {
    let mut data = DatasetDescriptor::synthetic(4, 16, 2000, 500, 7);
    data.noise = 5.0;
    let arch = ArchitectureSpec::new(Family::ResNet10, 16, 4).with_alpha(Scale::new(1, 16).unwrap());
    let train = TrainConfig {
        lr0: 0.05,
        batch_size: 32,
        epochs: 4,
        schedule: Schedule::Cosine,
        seed: 3,
        ..TrainConfig::default()
    };
    PipelineConfig::new(arch, data, train)
}

fn desk_pipeline() -> Outcome {
    let mut c = Check::default();
    let cfg = desk_config();
    let a = run_deepreduce(&cfg).map_err(|e| e.to_string())?;
    let b = run_deepreduce(&cfg).map_err(|e| e.to_string())?;
    c.eq("candidates", a.candidates.len(), 15);
    for it in a.candidates.chunks(5) {
        let counts: Vec<u64> = it.iter().map(|r| r.point.relu_count).collect();
        c.ok(counts.windows(2).all(|w| w[0] > w[1]), || {
            format!("iteration {} not decreasing: {counts:?}", it[0].iteration)
        });
    }
    let front = pareto_front(&a.points());
    for p in &front {
        c.ok(!front.iter().any(|q| q.dominates(p)), || format!("front point at {} is dominated", p.relu_count));
    }
    c.ok(candidates_csv(&a.points()) == candidates_csv(&b.points()), || "candidates.csv differs between runs".into());
    c.ok(pareto_csv(&front) == pareto_csv(&pareto_front(&b.points())), || "pareto.csv differs between runs".into());
    c.ok(a.criticality.to_csv() == b.criticality.to_csv(), || "criticality.csv differs between runs".into());
    for r in &a.candidates {
        let (i, f) = (r.history.initial_loss, r.history.final_loss());
        c.ok(f < 0.5 * i, || format!("{}: loss {i:.3} -> {f:.3}", r.label));
    }
    Ok(c)
}

fn record(label: &[u8], fill: u8) -> Vec<u8> {
    let mut r = label.to_vec();
    r.extend(std::iter::repeat_n(fill, 3072));
    r
}

fn round_trips() -> Outcome {
    let mut c = Check::default();
    let g = build_architecture(&ArchitectureSpec::new(Family::ResNet10, 16, 4).with_alpha(Scale::new(1, 8).unwrap()))
        .map_err(|e| e.to_string())?;
    let m = Model::<f32>::init(g, 9).map_err(|e| e.to_string())?;
    let bytes = checkpoint_bytes(&m).map_err(|e| e.to_string())?;
    let again = checkpoint_from_bytes(&bytes).and_then(|m| checkpoint_bytes(&m)).map_err(|e| e.to_string())?;
    c.ok(bytes == again, || "checkpoint save/load/save changed bytes".into());

    let mut ten = record(&[3], 17);
    ten.extend(record(&[9], 200));
    c.eq("CIFAR-10 labels", parse_cifar10(&ten).map(|d| d.labels).ok(), Some(vec![3, 9]));
    c.ok(parse_cifar10(&ten[..ten.len() - 1]).is_err(), || "truncated CIFAR-10 accepted".into());
    let hundred = record(&[4, 77], 0);
    c.eq("CIFAR-100 fine label", parse_cifar100(&hundred, false).map(|d| d.labels).ok(), Some(vec![77]));
    c.ok(parse_cifar100(&hundred[..100], false).is_err(), || "truncated CIFAR-100 accepted".into());

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = r#"{"seed": 11, "threads": 1, "arch": {"family": "mobilenetv1", "input": 32, "classes": 10, "alpha": "1/2"},
        "train": {"epochs": 7, "lr0": 0.02}, "pipeline": {"w": 0.05, "parity": "keep-even"}}"#;
    std::fs::write(dir.path().join("in.json"), cfg).map_err(|e| e.to_string())?;
    let dry = |file: &str| -> Result<String, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_relureduce"))
            .current_dir(dir.path())
            .args(["--config", file, "--dry-run", "reduce"])
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    };
    let first = dry("in.json")?;
    let v: serde_json::Value = serde_json::from_str(&first).map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("out.json"), v["config"].to_string()).map_err(|e| e.to_string())?;
    c.ok(dry("out.json")? == first, || "dry-run manifest changed after round trip".into());
    c.eq("seed kept", v["config"]["seed"].as_u64(), Some(11));
    Ok(c)
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("exact ReLU accounting", Duration::from_secs(1), relu_accounting),
        ("pass arithmetic", Duration::from_secs(1), pass_arithmetic),
        ("criticality scores and orderings", Duration::from_secs(1), criticality),
        ("Pareto front and accuracy per kilo-ReLU", Duration::from_secs(1), pareto),
        ("latency model fit", Duration::from_secs(1), latency),
        ("merge equivalence", Duration::from_secs(30), merge_equivalence),
        ("engine correctness", Duration::from_secs(60), engine),
        ("desk-scale pipeline", Duration::from_secs(15 * 60), desk_pipeline),
        ("format round trips", Duration::from_secs(5), round_trips),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let mut problems = match f() {
            Ok(c) => c.0,
            Err(e) => vec![format!("error: {e}")],
        };
        let took = start.elapsed();
        if took > budget {
            problems.push(format!("took {took:.2?}, budget {budget:.0?}"));
        }
        let verdict = if problems.is_empty() { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {name} ({took:.2?})", i + 1);
        for p in &problems {
            println!("     {p}");
        }
        failed += usize::from(!problems.is_empty());
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
