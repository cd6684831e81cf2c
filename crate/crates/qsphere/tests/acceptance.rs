//! Acceptance run at desk scale: q = 0.5, k ∈ [-6, 6], 64 principal nodes, n_max = 4.
//!
//! Prints one `[PASS]` / `[FAIL]` line per criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use qsphere::config::RunConfig;
use qsphere::verify::{run, run_all, Check, Suite, SuiteReport};

struct Outcome {
    id: &'static str,
    title: &'static str,
    passed: bool,
    summary: String,
}

fn timed(suite: Suite, cfg: &RunConfig) -> (SuiteReport, Duration) {
    let t = Instant::now();
    let r = run(suite, cfg).unwrap_or_else(|e| panic!("{suite} suite did not run: {e}"));
    (r, t.elapsed())
}

fn describe(c: &Check) -> String {
    let op = if c.bound == "max" { "<=" } else { ">=" };
    format!("{}={:.3e} ({op} {:.0e})", c.name, c.value, c.threshold)
}

fn judge(
    id: &'static str,
    title: &'static str,
    report: &SuiteReport,
    names: &[&str],
    elapsed: Duration,
    limit: Option<Duration>,
) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for name in names {
        let matching: Vec<&Check> = if name.ends_with('*') {
            let prefix = name.trim_end_matches('*');
            report
                .checks
                .iter()
                .filter(|c| c.name.starts_with(prefix))
                .collect()
        } else {
            report.check(name).into_iter().collect()
        };
        if matching.is_empty() {
            passed = false;
            parts.push(format!("{name}=missing"));
        }
        for c in matching {
            passed &= c.passed;
            parts.push(describe(c));
        }
    }
    if let Some(limit) = limit {
        let ok = elapsed < limit;
        passed &= ok;
        parts.push(format!(
            "runtime={:.2}s (< {}s)",
            elapsed.as_secs_f64(),
            limit.as_secs()
        ));
    } else {
        parts.push(format!("runtime={:.2}s", elapsed.as_secs_f64()));
    }
    Outcome {
        id,
        title,
        passed,
        summary: parts.join(", "),
    }
}

fn main() -> ExitCode {
    let cfg = RunConfig::default();
    let secs = Duration::from_secs;
    let mut out = Vec::new();

    let (qs, t_qs) = timed(Suite::Qseries, &cfg);
    out.push(judge(
        "1",
        "q-series identities",
        &qs,
        &[
            "q_binomial",
            "pochhammer_splitting",
            "index_shift",
            "evaluation_failures",
        ],
        t_qs,
        Some(secs(5)),
    ));
    out.push(judge(
        "2",
        "continuation consistency",
        &qs,
        &["continuation"],
        t_qs,
        Some(secs(5)),
    ));

    let (sym, t_sym) = timed(Suite::Symmetry, &cfg);
    out.push(judge(
        "3",
        "removable singularity",
        &sym,
        &[
            "removable_lower_positive_nonfinite",
            "removable_lower_negative_abs",
            "sweep_nonfinite",
        ],
        t_sym,
        None,
    ));
    out.push(judge(
        "4",
        "magnitude symmetry",
        &sym,
        &["magnitude_symmetry"],
        t_sym,
        Some(secs(30)),
    ));

    let (triv, t_triv) = timed(Suite::Triviality, &cfg);
    out.push(judge(
        "5",
        "discrete-series vanishing",
        &triv,
        &["discrete_vanishing"],
        t_triv,
        None,
    ));

    let (prod, t_prod) = timed(Suite::Product, &cfg);
    out.push(judge(
        "6",
        "product-formula held-out fit",
        &prod,
        &["heldout_*", "off_support_*", "coefficients_nonnegative_I"],
        t_prod,
        Some(secs(120)),
    ));
    out.push(judge(
        "7",
        "normalization",
        &prod,
        &["normalization_I"],
        t_prod,
        None,
    ));

    let (pl, t_pl) = timed(Suite::Plancherel, &cfg);
    let fitted = RunConfig {
        phase_provider: "fitted".into(),
        ..cfg.clone()
    };
    let (pl_fit, t_pl_fit) = timed(Suite::Plancherel, &fitted);
    let mut c8 = judge(
        "8",
        "Plancherel surrogate",
        &pl,
        &["density_nonnegative", "gram_even_fixed_sign"],
        t_pl + t_pl_fit,
        Some(secs(120)),
    );
    let full = judge("8", "", &pl_fit, &["gram_full"], t_pl_fit, None);
    c8.passed &= full.passed;
    c8.summary = format!("{}, fitted phases: {}", c8.summary, full.summary);
    out.push(c8);
    out.push(judge(
        "9",
        "structural grading",
        &pl,
        &["grading_preserved"],
        t_pl,
        None,
    ));

    let t = Instant::now();
    let a = run_all(&cfg).expect("verify --all").to_json();
    let b = run_all(&cfg).expect("verify --all").to_json();
    out.push(Outcome {
        id: "10",
        title: "determinism",
        passed: a == b,
        summary: format!(
            "{} report bytes, identical={}, runtime={:.2}s",
            a.len(),
            a == b,
            t.elapsed().as_secs_f64()
        ),
    });

    for o in &out {
        println!(
            "[{}] C{:<2} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.summary
        );
    }
    let failed = out.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", out.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
