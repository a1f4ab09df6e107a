//! Culling, thinning and reshaping on ResNet18, one step at a time.

use std::collections::BTreeSet;

use relureduce::netir::{build_architecture, validate, ArchitectureSpec, Family, Scale, StageId};
use relureduce::passes::{apply_step, cull, reshape, thin, ReduceStep, ThinRule};
use relureduce::profile::relu_total;

fn main() -> relureduce::Result<()> {
    let g = build_architecture(&ArchitectureSpec::new(Family::ResNet18, 32, 100))?;
    println!("baseline            {:>7}", relu_total(&g)?);

    let s1: BTreeSet<StageId> = [StageId(1)].into();
    let rest: BTreeSet<StageId> = [StageId(2), StageId(3), StageId(4)].into();
    let culled = cull(&g, &s1)?;
    println!("cull S1             {:>7}", relu_total(&culled)?);
    let thinned = thin(&culled, &rest, ThinRule::KeepOdd)?;
    println!("+ thin S2..S4       {:>7}", relu_total(&thinned)?);
    for (alpha, rho) in [(Scale::HALF, Scale::ONE), (Scale::ONE, Scale::HALF), (Scale::HALF, Scale::HALF)] {
        let r = reshape(&thinned, alpha, rho)?;
        println!("+ alpha {alpha:<4} rho {rho:<4} {:>7}", relu_total(&r)?);
    }

    // the same compound step as one declarative value
    let step = ReduceStep {
        culled: [StageId(1), StageId(4)].into(),
        thinned: [StageId(2), StageId(3)].into(),
        alpha: Scale::HALF,
        rho: Scale::HALF,
        ..ReduceStep::default()
    };
    let out = apply_step(&g, &step)?;
    println!(
        "{}: {} ReLUs, valid: {}",
        serde_json::to_string(&step).unwrap(),
        relu_total(&out)?,
        validate(&out).is_pass()
    );
    for entry in &out.metadata.provenance {
        println!("  {entry}");
    }
    Ok(())
}
