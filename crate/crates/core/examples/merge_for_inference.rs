//! Folds batch norm and collapses ReLU-free linear chains in a briefly
//! trained MobileNetV1 with four of its five stages culled.

use relureduce::data::SyntheticBlobs;
use relureduce::engine::{train, Model, TrainConfig};
use relureduce::netir::{build_architecture, ArchitectureSpec, Family, Scale, StageId};
use relureduce::passes::{apply_step, equivalence_check, merge_for_inference, ReduceStep};

fn main() -> relureduce::Result<()> {
    let spec = ArchitectureSpec::new(Family::MobileNetV1, 16, 4).with_alpha(Scale::new(1, 8)?);
    let base = build_architecture(&spec)?;
    let step = ReduceStep { culled: [StageId(1), StageId(2), StageId(3), StageId(4)].into(), ..ReduceStep::default() };
    let g = apply_step(&base, &step)?;

    // a couple of epochs so the running statistics are not trivial
    let data = SyntheticBlobs::new(4, 16, 1).generate(256, 0)?;
    let mut model = Model::<f32>::init(g, 1)?;
    let cfg = TrainConfig { epochs: 2, batch_size: 32, lr0: 0.05, ..TrainConfig::default() };
    train(&mut model, &data, None, &cfg, None)?;

    let wide = model.cast::<f64>();
    let merged = merge_for_inference(&wide)?;
    println!("convolutions {} -> {}", merged.convs_before, merged.convs_after);
    let report = equivalence_check(&wide, &merged.model, 100, 1e-4, 7)?;
    println!("max relative error {:.2e} (pass: {})", report.max_rel_error, report.pass);
    for entry in merged.model.graph.metadata.provenance.iter().skip(1).take(6) {
        println!("  {entry}");
    }
    Ok(())
}
