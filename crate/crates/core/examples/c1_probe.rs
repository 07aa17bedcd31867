use qmckt::model::{grad_check, GradCheckConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let check = GradCheckConfig::micro(8, 2);
    let report = grad_check(&check).unwrap();
    let worst = report
        .checks
        .iter()
        .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
        .unwrap();
    println!(
        "pass={} params={} worst={} rel_err={:.3e} elapsed={:.2?}",
        report.pass,
        report.checks.len(),
        worst.name,
        worst.max_rel_err,
        t0.elapsed()
    );
}
