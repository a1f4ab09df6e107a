//! Trains a full-ReLU teacher, then a culled student with and without
//! distillation from it.

use std::collections::BTreeSet;

use relureduce::data::{ingest, DatasetDescriptor};
use relureduce::engine::{evaluate, train, KdConfig, Model, Schedule, Teacher, TrainConfig};
use relureduce::netir::{build_architecture, ArchitectureSpec, Family, Scale, StageId};
use relureduce::passes::cull;

fn main() -> relureduce::Result<()> {
    let mut desc = DatasetDescriptor::synthetic(4, 16, 1000, 400, 11);
    desc.noise = 5.0;
    let (train_set, test_set) = ingest(&desc)?;

    let g = build_architecture(&ArchitectureSpec::new(Family::ResNet10, 16, 4).with_alpha(Scale::new(1, 16)?))?;
    let cfg =
        TrainConfig { lr0: 0.05, batch_size: 32, epochs: 4, schedule: Schedule::Cosine, ..TrainConfig::default() };

    let mut teacher = Model::<f32>::init(g.clone(), 1)?;
    let h = train(&mut teacher, &train_set, Some(&test_set), &cfg, None)?;
    print!("{}", h.to_csv());
    println!("teacher {:.1}%", evaluate(&teacher, &test_set)? * 100.0);

    let student_graph = cull(&g, &BTreeSet::from([StageId(1), StageId(2), StageId(3)]))?;
    for kd in [None, Some(KdConfig::default())] {
        let mut student = Model::<f32>::init(student_graph.clone(), 2)?;
        let t = kd.map(|kd| Teacher::new(&teacher, kd));
        let h = train(&mut student, &train_set, None, &cfg, t)?;
        println!(
            "student {}: loss {:.3} -> {:.3}, accuracy {:.1}%",
            if kd.is_some() { "with KD" } else { "without KD" },
            h.initial_loss,
            h.final_loss(),
            evaluate(&student, &test_set)? * 100.0
        );
    }
    Ok(())
}
