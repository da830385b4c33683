//! Runs the full operator/adjoint verification suite: every forward map is
//! checked against its adjoint on seeded random instances and by dense
//! materialization against the transpose.

fn main() -> cfcnn::Result<()> {
    let reports = cfcnn::verify::adjoint_suite(6, 100, 1e-10, 1e-12, 42)?;
    println!("operator/adjoint suite, dims <= 6, 100 random instances per pair\n");
    for report in &reports {
        println!("{report}");
    }
    println!();
    for report in &reports {
        for line in report.check_lines() {
            println!("{line}");
        }
    }
    let all_pass = reports.iter().all(|r| r.pass());
    println!(
        "\n{} pairs: {}",
        reports.len(),
        if all_pass {
            "all PASS"
        } else {
            "FAILURES present"
        }
    );
    std::process::exit(if all_pass { 0 } else { 1 });
}
