//! Plain-text tables and CSV for metrics, sweeps and ablations.

use std::fmt::Write as _;

use super::{AblationRow, AblationTables, MetricsReport, SweepRow};

const METRIC_HEAD: [&str; 5] = ["R@1", "R@5", "R@10", "R@100", "SumR"];

fn metric_cells(m: &MetricsReport) -> Vec<String> {
    [m.r1, m.r5, m.r10, m.r100, m.sumr].iter().map(|v| format!("{v:.1}")).collect()
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Right-aligned columns, one space of padding, a rule under the header.
fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

pub fn metrics_table(m: &MetricsReport) -> String {
    let mut head = METRIC_HEAD.to_vec();
    head.push("queries");
    let mut row = metric_cells(m);
    row.push(m.query_count.to_string());
    render(&head, &[row])
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut head = vec!["epsilon"];
    head.extend(METRIC_HEAD);
    head.extend(["events", "F1"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![format!("{}", r.epsilon)];
            cells.extend(metric_cells(&r.report));
            cells.push(format!("{:.2}", r.mean_event_count));
            cells.push(opt(r.boundary_f1, 3));
            cells
        })
        .collect();
    render(&head, &body)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("epsilon,r1,r5,r10,r100,sumr,query_count,mean_event_count,boundary_f1\n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epsilon,
            m.r1,
            m.r5,
            m.r10,
            m.r100,
            m.sumr,
            m.query_count,
            r.mean_event_count,
            r.boundary_f1.map_or(String::new(), |f| f.to_string())
        );
    }
    out
}

fn ablation_rows(rows: &[AblationRow], with_flags: bool) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let mut head = if with_flags {
        vec!["No.", "PGVS", "CAER"]
    } else {
        vec!["Method"]
    };
    head.extend(METRIC_HEAD);
    head.extend(["events", "F1"]);
    let body = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.label.clone()];
            if with_flags {
                let mark = |b: bool| if b { "yes" } else { "no" }.to_string();
                cells.push(mark(r.segmentation.starts_with("pgvs")));
                cells.push(mark(r.refine));
            }
            cells.extend(metric_cells(&r.report));
            cells.push(format!("{:.2}", r.mean_event_count));
            cells.push(opt(r.boundary_f1, 3));
            cells
        })
        .collect();
    (head, body)
}

pub fn ablation_table(t: &AblationTables) -> String {
    let (h1, b1) = ablation_rows(&t.components, true);
    let (h2, b2) = ablation_rows(&t.methods, false);
    format!("Components\n{}\nEvent construction (no refinement)\n{}", render(&h1, &b1), render(&h2, &b2))
}

pub fn ablation_csv(t: &AblationTables) -> String {
    let mut out = String::from("table,label,segmentation,refine,r1,r5,r10,r100,sumr,query_count,mean_event_count,boundary_f1\n");
    for (table, rows) in [("components", &t.components), ("methods", &t.methods)] {
        for r in rows {
            let m = &r.report;
            let _ = writeln!(
                out,
                "{table},{},{},{},{},{},{},{},{},{},{},{}",
                r.label,
                r.segmentation,
                r.refine,
                m.r1,
                m.r5,
                m.r10,
                m.r100,
                m.sumr,
                m.query_count,
                r.mean_event_count,
                r.boundary_f1.map_or(String::new(), |f| f.to_string())
            );
        }
    }
    out
}
