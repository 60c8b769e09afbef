use std::fmt::Write;

use super::monte_carlo::EvalResult;

const REPORT_RANKS: [usize; 3] = [1, 5, 10];

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// Plain-text table: one row per split, then mean and standard deviation.
pub fn render_report(title: &str, result: &EvalResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out, "# splits: {}  (values in %)", result.n_splits);
    let _ = writeln!(
        out,
        "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
        "split", "rank-1", "rank-5", "rank-10", "mAP", "queries", "gallery"
    );
    for s in &result.per_split {
        let r = |k: usize| s.cmc.get(k - 1).copied();
        let _ = writeln!(
            out,
            "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
            s.split_index,
            pct(r(1)),
            pct(r(5)),
            pct(r(10)),
            pct(Some(s.map)),
            s.n_queries,
            s.gallery_size
        );
    }
    let row = |label: &str, cmc: &[f64], map: f64, out: &mut String| {
        let cells: Vec<String> = REPORT_RANKS.iter().map(|k| pct(cmc.get(k - 1).copied())).collect();
        let _ = writeln!(out, "{:<8}{:>10}{:>10}{:>10}{:>10}", label, cells[0], cells[1], cells[2], pct(Some(map)));
    };
    row("mean", &result.cmc, result.map, &mut out);
    row("std", &result.cmc_std, result.map_std, &mut out);
    out
}
