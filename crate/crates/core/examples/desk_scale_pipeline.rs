//! The full search on a small synthetic task: teacher, stage probes,
//! criticality ranking and 5 candidates per culling iteration.
//!
//! Runs for a couple of minutes on one core.

use relureduce::data::DatasetDescriptor;
use relureduce::engine::{Schedule, TrainConfig};
use relureduce::netir::{ArchitectureSpec, Family, Scale};
use relureduce::pipeline::{candidates_csv, run_deepreduce, PipelineConfig};

fn main() -> relureduce::Result<()> {
    let mut data = DatasetDescriptor::synthetic(4, 16, 2000, 500, 7);
    data.noise = 5.0;
    let arch = ArchitectureSpec::new(Family::ResNet10, 16, 4).with_alpha(Scale::new(1, 16)?);
    let train = TrainConfig {
        lr0: 0.05,
        batch_size: 32,
        epochs: 4,
        schedule: Schedule::Cosine,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = run_deepreduce(&PipelineConfig::new(arch, data, train))?;

    println!("teacher {:.1}% with {} ReLUs", run.teacher_accuracy, run.baseline_relus);
    print!("{}", run.criticality.to_csv());
    print!("{}", candidates_csv(&run.points()));
    Ok(())
}
