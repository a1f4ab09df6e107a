//! Pareto selection and the linear latency model over published ResNet18
//! measurements.

use relureduce::pipeline::{
    estimate_latency, fit_latency_model, fit_latency_model_weighted, pareto_csv, pareto_front, parse_candidates_csv,
    FitWeighting, LatencyModel, REFERENCE_POINTS,
};

const MEASURED: &str = "\
culled,thinned,alpha,rho,relus,accuracy,latency_s
S1,NA,NA,NA,229.38K,76.22,4.61
S1+S4,NA,NA,NA,196.61K,75.51,3.94
S1,S2+S3+S4,NA,NA,114.69K,74.72,2.38
S1,S2+S3+S4,0.5,NA,57.34K,72.68,1.37
S1,S2+S3+S4,NA,0.5,28.67K,68.68,0.74
S1,S2+S3+S4,0.5,0.5,14.33K,65.36,0.52
S1,S2+S3+S4,0.5,NA,57.34K,70.00,
";

fn main() -> relureduce::Result<()> {
    let ols = fit_latency_model(&REFERENCE_POINTS)?;
    let rel = fit_latency_model_weighted(&REFERENCE_POINTS, FitWeighting::Relative)?;
    for (name, m) in [("ols", &ols), ("relative", &rel)] {
        println!("{name:<9} {:.5} s/kReLU + {:.4} s, R^2 {:.4}", m.slope, m.intercept, m.r_squared);
    }
    println!("\n kReLU  measured      ols  relative");
    for &(k, y) in &REFERENCE_POINTS {
        println!("{k:6.2}  {y:8.2} {:8.2} {:9.2}", ols.estimate_kilo(k), rel.estimate_kilo(k));
    }

    // the last row has no latency, so the model fills it in; it is dominated
    let points = parse_candidates_csv(MEASURED, |r| estimate_latency(&LatencyModel::reference(), r))?;
    println!("\n{} of {} points on the front", pareto_front(&points).len(), points.len());
    print!("{}", pareto_csv(&points));
    Ok(())
}
