use std::fmt::Write as _;

use super::experiment::RunRecord;
use super::metrics::binomial_se;

/// Markdown summary of an experiment's `runs.csv`.
pub fn render_report(runs: &[RunRecord]) -> String {
    let mut out = String::from("# Decoding runs\n\n");
    if runs.is_empty() {
        out.push_str("No runs recorded.\n");
        return out;
    }
    let hashes: std::collections::BTreeSet<&str> =
        runs.iter().map(|r| r.config_hash.as_str()).collect();
    writeln!(
        out,
        "Config hash: {}\n",
        hashes.into_iter().collect::<Vec<_>>().join(", ")
    )
    .unwrap();
    out.push_str(
        "| cell | model | mode | B | tau | scope | cond | n/step | samples | validity | exact | tokens/step | steps | entropy |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in runs {
        writeln!(
            out,
            "| {} | {:?} | {} | {} | {} | {} | {} | {} | {} | {:.3} ± {:.3} | {:.3} | {:.2} | {:.1} | {:.3} |",
            r.cell,
            r.model,
            r.mode,
            r.block,
            r.tau,
            r.scope,
            r.conditioning,
            r.blocks_per_step,
            r.samples,
            r.validity_rate,
            binomial_se(r.validity_rate, r.samples),
            r.exact_match_rate,
            r.tokens_per_step,
            r.steps,
            r.mean_entropy
        )
        .unwrap();
    }
    if let Some(best) = pareto(runs)
        .into_iter()
        .map(|i| &runs[i])
        .max_by(|a, b| a.tokens_per_step.total_cmp(&b.tokens_per_step))
    {
        writeln!(
            out,
            "\nFastest non-dominated cell: {} ({} B={} tau={}), {:.2} tokens/step at validity {:.3}.",
            best.cell, best.mode, best.block, best.tau, best.tokens_per_step, best.validity_rate
        )
        .unwrap();
    }
    out
}

/// Indices of cells not dominated in (validity, tokens per step).
pub fn pareto(runs: &[RunRecord]) -> Vec<usize> {
    (0..runs.len())
        .filter(|&i| {
            let a = &runs[i];
            !runs.iter().any(|b| {
                b.validity_rate >= a.validity_rate
                    && b.tokens_per_step >= a.tokens_per_step
                    && (b.validity_rate > a.validity_rate || b.tokens_per_step > a.tokens_per_step)
            })
        })
        .collect()
}
