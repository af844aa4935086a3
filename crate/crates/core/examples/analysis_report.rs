//! Result aggregation: mean ± sample std per configuration, cross-task
//! averages with exclusions, least-squares sweep slopes and the report
//! files.
//!
//! ```text
//! cargo run --release --example analysis_report [OUT_DIR]
//! ```

use hicl::analysis::{aggregate_runs, emit_report, lls_slope, render_text, ReportOptions, RunResult, SweepResult};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run_example(&args) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

pub fn run_example(args: &[String]) -> hicl::Result<()> {
    let mut results = Vec::new();
    for (task, base) in [("stance", 68.0), ("emotion", 74.0), ("hate", 51.0)] {
        for (cfg, gain) in [("baseline", 0.0), ("hicl", 1.2)] {
            for seed in 0..3u64 {
                results.push(RunResult {
                    task: task.into(),
                    config_digest: cfg.into(),
                    seed,
                    metric: base + gain + 0.4 * seed as f64,
                });
            }
        }
    }
    for a in aggregate_runs(&results)? {
        println!("{:<8} {:<9} n={} mean={:.2} std={:.3}", a.task, a.config_digest, a.n, a.mean, a.std);
    }

    let ks = vec![0.0, 1.0, 2.0, 3.0];
    let scores = vec![70.1, 70.4, 70.3, 70.9];
    println!("k_retrieved slope: {:.4}", lls_slope(&ks, &scores)?);
    let sweeps = vec![SweepResult::new("stance", "k_retrieved", ks, scores)?];

    let opts = ReportOptions {
        exclude_tasks: vec!["hate".into()],
    };
    print!("{}", render_text(&results, &sweeps, &[], &opts)?);
    if let Some(dir) = args.first() {
        emit_report(&results, &sweeps, &[], &opts, dir)?;
        println!("wrote {dir}/report.txt and {dir}/report.jsonl");
    }
    Ok(())
}
