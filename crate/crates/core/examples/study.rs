//! Runs the nine-seed simulation study for one lens and several candidate
//! models, then prints the failure table and box-plot statistics.
//!
//! cargo run --release --example study [lens]
//!
//! `lens` is one of S04525, BM4218, MTV185, BT2120 (default MTV185).

use wacal::catalog;
use wacal::study::{run_study, StudyConfig};
use wacal::ModelKind;

fn main() {
    let wanted = std::env::args().nth(1).unwrap_or_else(|| "MTV185".to_string());
    let case = catalog::lens_cases()
        .into_iter()
        .find(|c| c.name.eq_ignore_ascii_case(&wanted))
        .unwrap_or_else(|| panic!("unknown lens {wanted}"));

    let mut config = StudyConfig::new(case.name, case.spec.clone());
    config.models = vec![ModelKind::KB8, ModelKind::DS, ModelKind::EUCM, ModelKind::UCM];
    let outcome = run_study(&config).expect("study");

    println!("{} ({} deg), {} seeds\n", case.name, case.daov_deg, config.seeds.len());
    print!("{}", outcome.summary.failure_table());
    println!();
    for group in &outcome.summary.groups {
        match group
            .params
            .iter()
            .find(|p| p.param == "rms")
            .and_then(|p| p.quantiles.as_ref())
        {
            Some(q) => println!(
                "{:<6} rms median {:.3}  range {:.3}..{:.3}",
                group.model.name(),
                q.median,
                q.min,
                q.max
            ),
            None => println!("{:<6} every run failed", group.model.name()),
        }
    }
}
