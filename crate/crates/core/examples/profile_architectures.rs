//! ReLU, FLOP and parameter budgets for every supported family at 32x32.

use relureduce::netir::{build_architecture, stage_view, ArchitectureSpec, Family};
use relureduce::profile::{count_flops, count_params, count_relus, distribution_report};

fn main() -> relureduce::Result<()> {
    println!("{:<12} {:>10} {:>14} {:>12}  per stage", "family", "relus", "flops", "params");
    for family in Family::ALL {
        let g = build_architecture(&ArchitectureSpec::new(family, 32, 100))?;
        let relus = count_relus(&g)?;
        let stages: Vec<String> = relus.per_stage.iter().map(|(s, n)| format!("{s}={n}")).collect();
        println!(
            "{:<12} {:>10} {:>14} {:>12}  {}",
            family,
            relus.total,
            count_flops(&g)?.total,
            count_params(&g)?.total,
            stages.join(" ")
        );
    }

    // where the ReLUs sit relative to the compute in ResNet18
    let g = build_architecture(&ArchitectureSpec::new(Family::ResNet18, 32, 100))?;
    println!("\nresnet18 has {} stages; first layers by ReLU share:", stage_view(&g)?.depth());
    for row in distribution_report(&g)?.per_layer_percent.iter().take(6) {
        println!("  {:<14} relu {:5.2}%  flops {:5.2}%", row.layer, row.relu_pct, row.flops_pct);
    }
    Ok(())
}
