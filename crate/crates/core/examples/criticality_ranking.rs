//! Ranks stages from measured probe accuracies, then shows the probe networks
//! that would be trained to obtain those accuracies.

use relureduce::criticality::{criticality_scores, parse_measurements_csv, probe_networks, DEFAULT_W};
use relureduce::netir::{build_architecture, ArchitectureSpec, Family};
use relureduce::profile::relu_total;

const MOBILENET: &str = "\
stage,relus,acc_wo_kd,acc_w_kd
S1,131.1K,33.06,34.16
S2,114.7K,49.64,50.65
S3,57.3K,55.56,54.20
S4,94.2K,57.37,61.10
S5,14.3K,42.32,45.45
";

fn main() -> relureduce::Result<()> {
    let ms = parse_measurements_csv(MOBILENET)?;
    let report = criticality_scores(&ms, DEFAULT_W)?;
    print!("{}", report.to_csv());
    let order: Vec<String> = report.order.iter().map(|s| s.to_string()).collect();
    println!("cull first: {}", order.join(" < "));
    println!("never culled: {}", report.most_critical());

    let g = build_architecture(&ArchitectureSpec::new(Family::MobileNetV1, 32, 100))?;
    for (stage, probe) in probe_networks(&g)? {
        println!("probe {stage}: {} ReLUs left", relu_total(&probe)?);
    }
    Ok(())
}
