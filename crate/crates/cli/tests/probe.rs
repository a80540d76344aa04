// Temporary exploration harness; deleted before release.
use nalgebra::DVector;
use securesim_cli::config::{parse_config, ScenarioConfig};
use securesim_cli::BUNDLED_VEHICLE;
use securesim_core::attack::InfeasiblePolicy;

fn bundled() -> ScenarioConfig {
    parse_config(BUNDLED_VEHICLE).unwrap()
}

#[test]
#[ignore]
fn probe_noiseless() {
    let mut cfg = bundled();
    cfg.attack.noise_std = 0.0;
    let built = cfg.build().unwrap();
    let t0 = std::time::Instant::now();
    let trace = built.run(InfeasiblePolicy::Halt, false).unwrap();
    println!("noiseless: {} steps in {:?}", trace.records.len(), t0.elapsed());
    println!("outcome {:?} premise {:?}", trace.outcome, trace.premise_ok);
    println!("min margin true {:.6} fake {:.6}", trace.min_margin_true(), trace.min_margin_fake());
    for &step in &[3usize, 100, 300, 600, 900, 1500, 2000, 2500, 2999] {
        if step < trace.records.len() {
            let r = &trace.records[step];
            println!(
                "step {:4} status {:?} n_plausible {} pts: {:?}",
                step,
                r.status,
                r.plausible_points.len(),
                r.plausible_points
                    .iter()
                    .map(|p| p.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            );
        }
    }
}

#[test]
#[ignore]
fn probe_noisy() {
    let cfg = bundled();
    let built = cfg.build().unwrap();
    let t0 = std::time::Instant::now();
    let trace = built.run(InfeasiblePolicy::Halt, false).unwrap();
    println!("noisy: {} steps in {:?}", trace.records.len(), t0.elapsed());
    println!("outcome {:?} premise {:?}", trace.outcome, trace.premise_ok);
    println!("min margin true {:.6} fake {:.6}", trace.min_margin_true(), trace.min_margin_fake());
    let mut counts = std::collections::BTreeMap::new();
    for r in &trace.records {
        if r.step >= 3 {
            *counts.entry(r.plausible_points.len()).or_insert(0usize) += 1;
        }
    }
    println!("plausible-count histogram: {counts:?}");
    for &step in &[3usize, 100, 600, 1500, 2000, 2500, 2999] {
        if step < trace.records.len() {
            let r = &trace.records[step];
            println!(
                "step {:4} status {:?} n {} pts {:?}",
                step,
                r.status,
                r.plausible_points.len(),
                r.plausible_points
                    .iter()
                    .map(|p| p.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            );
        }
    }
    // Completeness: propagate the four initial candidates through the
    // applied inputs and measure how well each is matched per step.
    let sys = &built.sys;
    let four = [
        DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]),
        DVector::from_vec(vec![1.0, 1.0, 2.0, 1.0]),
        DVector::from_vec(vec![2.0, 2.0, 1.0, 1.0]),
        DVector::from_vec(vec![2.0, 2.0, 2.0, 1.0]),
    ];
    let mut states: Vec<DVector<f64>> = four.to_vec();
    let mut worst_completeness: f64 = 0.0;
    let mut worst_excess: f64 = 0.0;
    let mut worst_excess_late: f64 = 0.0;
    for r in &trace.records {
        if r.step >= 3 {
            for exp in &states {
                let best = r
                    .plausible_points
                    .iter()
                    .map(|p| (p - exp).amax())
                    .fold(f64::INFINITY, f64::min);
                worst_completeness = worst_completeness.max(best);
            }
            for p in &r.plausible_points {
                let best = states.iter().map(|e| (p - e).amax()).fold(f64::INFINITY, f64::min);
                worst_excess = worst_excess.max(best);
                if r.step >= 2000 {
                    worst_excess_late = worst_excess_late.max(best);
                }
            }
        }
        for s in states.iter_mut() {
            *s = sys.a() * &*s + sys.b() * &r.u_applied;
        }
    }
    println!("worst per-coordinate distance expected->nearest reconstructed: {worst_completeness:.6}");
    println!("worst per-coordinate distance reconstructed->nearest expected (all steps): {worst_excess:.6}");
    println!("worst per-coordinate distance reconstructed->nearest expected (steps >= 2000): {worst_excess_late:.6}");
}
