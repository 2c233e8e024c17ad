//! Closed-form cost evaluator.
//!
//! Encodes the published computation/communication/byte cost table for all
//! six schemes exactly as printed (including the cells with typographical
//! defects, which are flagged and excluded from pass/fail gating), sweeps
//! the four figure scenarios, and reconciles measured simulator ledgers
//! against the analytic byte model.

use std::fmt::Write as _;

use thiserror::Error;

use crate::simnet::{Counters, EventLedger, SizeModel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticError {
    #[error("figure {0} is not one of 10..=13")]
    UnknownFigure(u8),
    #[error("no {1:?} row for {0:?} in the cost table")]
    MissingRow(Scheme, ProtocolKind),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, PartialOrd, Ord)]
pub enum Scheme {
    Kim,
    Lv,
    Chen,
    Mehdizadeh,
    Zhong,
    Sgrs,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Kim,
        Scheme::Lv,
        Scheme::Chen,
        Scheme::Mehdizadeh,
        Scheme::Zhong,
        Scheme::Sgrs,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Kim => "Kim et al.",
            Scheme::Lv => "Lv et al.",
            Scheme::Chen => "Chen",
            Scheme::Mehdizadeh => "Mehdizadeh et al.",
            Scheme::Zhong => "Zhong et al.",
            Scheme::Sgrs => "SGRS",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ProtocolKind {
    Join,
    Leave,
    Merge,
    Partition,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [
        ProtocolKind::Join,
        ProtocolKind::Leave,
        ProtocolKind::Merge,
        ProtocolKind::Partition,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ProtocolKind::Join => "Join",
            ProtocolKind::Leave => "Leave",
            ProtocolKind::Merge => "Merge",
            ProtocolKind::Partition => "Partition",
        }
    }
}

/// Free parameters of a table cell: group size N and group count K.
#[derive(Clone, Copy, Debug)]
pub struct Params {
    pub n: f64,
    pub k: f64,
}

/// Message counts by mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommCount {
    pub uc: f64,
    pub bc: f64,
    pub mc: f64,
}

/// One table row, carrying the printed cell text plus evaluators.
pub struct CostFormula {
    pub scheme: Scheme,
    pub protocol: ProtocolKind,
    pub comp_text: &'static str,
    pub comm_text: &'static str,
    pub bytes_text: &'static str,
    pub comm: fn(&Params) -> CommCount,
    pub bytes: fn(&Params, &SizeModel) -> f64,
    /// Transcription notes for cells that are defective as printed; such
    /// cells are rendered verbatim but excluded from pass/fail gating.
    pub as_printed_issues: &'static [&'static str],
}

fn lg(n: f64) -> f64 {
    n.log2()
}

/// The full printed cost table.
pub fn cost_table() -> Vec<CostFormula> {
    use ProtocolKind::*;
    use Scheme::*;
    vec![
        CostFormula {
            scheme: Kim,
            protocol: Join,
            comp_text: "(3 log2 N + 9)Ex + (4 + 2N)E",
            comm_text: "2BC",
            bytes_text: "N CK + N CK (2N - 1)",
            comm: |_| CommCount { uc: 0.0, bc: 2.0, mc: 0.0 },
            bytes: |p, s| {
                let ck = s.key_bytes as f64;
                p.n * ck + p.n * ck * (2.0 * p.n - 1.0)
            },
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Kim,
            protocol: Leave,
            comp_text: "(3 log2 N + 9)Ex + (2 + 2N)E",
            comm_text: "1BC",
            bytes_text: "N CK log2 N",
            comm: |_| CommCount { uc: 0.0, bc: 1.0, mc: 0.0 },
            bytes: |p, s| p.n * s.key_bytes as f64 * lg(p.n),
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Kim,
            protocol: Merge,
            comp_text: "(3 log2 N + 9)Ex + (2k(1 + N) + 1 + N)E",
            comm_text: "(1 + 2k)BC",
            bytes_text: "(CK/k)(kN - N)(2N - k) + N(2n - 1) CK",
            comm: |p| CommCount { uc: 0.0, bc: 1.0 + 2.0 * p.k, mc: 0.0 },
            bytes: |p, s| {
                let ck = s.key_bytes as f64;
                (ck / p.k) * (p.k * p.n - p.n) * (2.0 * p.n - p.k)
                    + p.n * (2.0 * p.n - 1.0) * ck
            },
            as_printed_issues: &["second addend prints lowercase n, read as N"],
        },
        CostFormula {
            scheme: Kim,
            protocol: Partition,
            comp_text: "(3 log2 N + 9)Ex + miN(2k, N/2)E",
            comm_text: "min(2k, N/2)BC",
            bytes_text: "k N CK log2 N",
            comm: |p| CommCount {
                uc: 0.0,
                bc: (2.0 * p.k).min(p.n / 2.0),
                mc: 0.0,
            },
            bytes: |p, s| p.k * p.n * s.key_bytes as f64 * lg(p.n),
            as_printed_issues: &["comp prints miN for min"],
        },
        CostFormula {
            scheme: Lv,
            protocol: Join,
            comp_text: "(2N^2 + N)Mu + (5 + N)E",
            comm_text: "2UC + 1BC",
            bytes_text: "(2N + 1)Int + N CK",
            comm: |_| CommCount { uc: 2.0, bc: 1.0, mc: 0.0 },
            bytes: |p, s| {
                (2.0 * p.n + 1.0) * s.int_bytes as f64 + p.n * s.key_bytes as f64
            },
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Lv,
            protocol: Leave,
            comp_text: "(2N^2 + N)Mu + (1 + N)E",
            comm_text: "1BC",
            bytes_text: "N Int",
            comm: |_| CommCount { uc: 0.0, bc: 1.0, mc: 0.0 },
            bytes: |p, s| p.n * s.int_bytes as f64,
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Lv,
            protocol: Merge,
            comp_text: "(2N^3 + N2 + N)Mu + (5 + N)E",
            comm_text: "kBC + 2kUC",
            bytes_text: "(N^2 - N^2/K)(CK - Int)",
            comm: |p| CommCount { uc: 2.0 * p.k, bc: p.k, mc: 0.0 },
            bytes: |p, s| {
                (p.n * p.n - p.n * p.n / p.k) * (s.key_bytes as f64 - s.int_bytes as f64)
            },
            as_printed_issues: &["comp prints N2 for N^2"],
        },
        CostFormula {
            scheme: Lv,
            protocol: Partition,
            comp_text: "(2 Gi^2 + Gi)Mu + (5 + N)E",
            comm_text: "kBC",
            bytes_text: "(N^2 - N^2/K)Int",
            comm: |p| CommCount { uc: 0.0, bc: p.k, mc: 0.0 },
            bytes: |p, s| (p.n * p.n - p.n * p.n / p.k) * s.int_bytes as f64,
            as_printed_issues: &["comp is stated in the per-group size Gi"],
        },
        CostFormula {
            scheme: Chen,
            protocol: Join,
            comp_text: "(4 log2 N)Ex + (5 + 2N log2 N)E",
            comm_text: "(2 log2 N)MC + 2BC",
            bytes_text: "CK(2 log2 N + 2) + N CK(log2 N + 1)",
            comm: |p| CommCount { uc: 0.0, bc: 2.0, mc: 2.0 * lg(p.n) },
            bytes: |p, s| {
                let ck = s.key_bytes as f64;
                ck * (2.0 * lg(p.n) + 2.0) + p.n * ck * (lg(p.n) + 1.0)
            },
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Chen,
            protocol: Leave,
            comp_text: "(2 log2 N)Ex + 2h(2 + 2N log2 N)E",
            comm_text: "(2 log2 N)MC",
            bytes_text: "CK 2 log2 N + N CK(log2 N + 1)",
            comm: |p| CommCount { uc: 0.0, bc: 0.0, mc: 2.0 * lg(p.n) },
            bytes: |p, s| {
                let ck = s.key_bytes as f64;
                ck * 2.0 * lg(p.n) + p.n * ck * (lg(p.n) + 1.0)
            },
            as_printed_issues: &["comp carries a stray 2h factor"],
        },
        CostFormula {
            scheme: Mehdizadeh,
            protocol: Join,
            comp_text: "(6N^2 + 3N)Mu + (8 + 4N)E",
            comm_text: "3UC + 2MC",
            bytes_text: "2Int + CK(K + N/K + 1 + log2 K)",
            comm: |_| CommCount { uc: 3.0, bc: 0.0, mc: 2.0 },
            bytes: |p, s| {
                2.0 * s.int_bytes as f64
                    + s.key_bytes as f64 * (p.k + p.n / p.k + 1.0 + lg(p.k))
            },
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Mehdizadeh,
            protocol: Leave,
            comp_text: "(6N^2 + 3N)Mu + (6 + 4N)E",
            comm_text: "4UC + 2MC",
            bytes_text: "4Int + CK(K + N/K - 3 + log2 K)",
            comm: |_| CommCount { uc: 4.0, bc: 0.0, mc: 2.0 },
            bytes: |p, s| {
                4.0 * s.int_bytes as f64
                    + s.key_bytes as f64 * (p.k + p.n / p.k - 3.0 + lg(p.k))
            },
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Zhong,
            protocol: Join,
            comp_text: "(8 + N/K + 2^(K+1) + log2 K)E + 2Ex",
            comm_text: "1UC + 3BC",
            bytes_text: "5N CK + 1Int",
            comm: |_| CommCount { uc: 1.0, bc: 3.0, mc: 0.0 },
            bytes: |p, s| 5.0 * p.n * s.key_bytes as f64 + s.int_bytes as f64,
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Zhong,
            protocol: Leave,
            comp_text: "(9 + N/K + 2^(K+1) + log2 K)E + Ex",
            comm_text: "3BC",
            bytes_text: "5N CK",
            comm: |_| CommCount { uc: 0.0, bc: 3.0, mc: 0.0 },
            bytes: |p, s| 5.0 * p.n * s.key_bytes as f64,
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Sgrs,
            protocol: Join,
            comp_text: "(N - 1)H + (N + 2)E",
            comm_text: "2UC + 1BC",
            bytes_text: "N Int + CK",
            comm: |_| CommCount { uc: 2.0, bc: 1.0, mc: 0.0 },
            bytes: |p, s| p.n * s.int_bytes as f64 + s.key_bytes as f64,
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Sgrs,
            protocol: Leave,
            comp_text: "2NH + 2NE",
            comm_text: "2UC + 1BC",
            bytes_text: "(N - 1)Int + CK",
            comm: |_| CommCount { uc: 2.0, bc: 1.0, mc: 0.0 },
            bytes: |p, s| (p.n - 1.0) * s.int_bytes as f64 + s.key_bytes as f64,
            as_printed_issues: &[],
        },
        CostFormula {
            scheme: Sgrs,
            protocol: Merge,
            comp_text: "(2K - 1)[(7 + N/K) + (N/K - 1)H]",
            comm_text: "(3K - 3)UC + (3K - 3)BC",
            bytes_text: "4K CK + (3 + N/K)(N/K) Int",
            comm: |p| CommCount {
                uc: 3.0 * p.k - 3.0,
                bc: 3.0 * p.k - 3.0,
                mc: 0.0,
            },
            bytes: |p, s| {
                4.0 * p.k * s.key_bytes as f64
                    + (3.0 + p.n / p.k) * (p.n / p.k) * s.int_bytes as f64
            },
            as_printed_issues: &["comp first addend carries no operation unit"],
        },
        CostFormula {
            scheme: Sgrs,
            protocol: Partition,
            comp_text: "(N + 2K)E + (K + N - 2)H",
            comm_text: "KBC + KUC",
            bytes_text: "N Int + K CK",
            comm: |p| CommCount { uc: p.k, bc: p.k, mc: 0.0 },
            bytes: |p, s| p.n * s.int_bytes as f64 + p.k * s.key_bytes as f64,
            as_printed_issues: &[],
        },
    ]
}

pub fn formula(scheme: Scheme, protocol: ProtocolKind) -> Option<CostFormula> {
    cost_table()
        .into_iter()
        .find(|f| f.scheme == scheme && f.protocol == protocol)
}

/// Evaluates a byte-cost cell. Cells with log terms are not integral;
/// callers format with [`format_bytes`].
pub fn eval_bytes(
    scheme: Scheme,
    protocol: ProtocolKind,
    n: f64,
    k: f64,
    sizes: &SizeModel,
) -> Result<f64, AnalyticError> {
    let f = formula(scheme, protocol).ok_or(AnalyticError::MissingRow(scheme, protocol))?;
    Ok((f.bytes)(&Params { n, k }, sizes))
}

pub fn eval_comm(
    scheme: Scheme,
    protocol: ProtocolKind,
    n: f64,
    k: f64,
) -> Result<CommCount, AnalyticError> {
    let f = formula(scheme, protocol).ok_or(AnalyticError::MissingRow(scheme, protocol))?;
    Ok((f.comm)(&Params { n, k }))
}

/// Analytic hash-operation count for the scheme's own rows, used by the
/// reconciliation report (H column).
pub fn sgrs_hash_term(protocol: ProtocolKind, n: f64, k: f64) -> f64 {
    match protocol {
        ProtocolKind::Join => n - 1.0,
        ProtocolKind::Leave => 2.0 * n,
        ProtocolKind::Merge => (2.0 * k - 1.0) * (n / k - 1.0),
        ProtocolKind::Partition => k + n - 2.0,
    }
}

/// Analytic encryption-operation count for the scheme's own rows.
pub fn sgrs_crypt_term(protocol: ProtocolKind, n: f64, k: f64) -> f64 {
    match protocol {
        ProtocolKind::Join => n + 2.0,
        ProtocolKind::Leave => 2.0 * n,
        ProtocolKind::Merge => (2.0 * k - 1.0) * (7.0 + n / k),
        ProtocolKind::Partition => n + 2.0 * k,
    }
}

pub fn format_bytes(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Renders the encoded table; a unit test diffs this against the
/// checked-in transcription.
pub fn render_table() -> String {
    let mut out = String::new();
    out.push_str("scheme\tprotocol\tcomputation\tmessages\tbytes\tnotes\n");
    for f in cost_table() {
        let notes = if f.as_printed_issues.is_empty() {
            String::new()
        } else {
            format!("as-printed: {}", f.as_printed_issues.join("; "))
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            f.scheme.label(),
            f.protocol.label(),
            f.comp_text,
            f.comm_text,
            f.bytes_text,
            notes
        );
    }
    out
}

/// Group count used for the subgroup-based schemes when a figure fixes
/// N = 100 but the formula needs K.
pub const FIGURE_SUBGROUP_K: f64 = 10.0;

/// Number of equal-size groups merged (figure 12) or produced by the
/// partition sweep (figure 13).
pub const FIGURE_GROUP_COUNT: f64 = 15.0;

#[derive(Debug)]
pub struct FigureSeries {
    pub scheme: Scheme,
    pub values: Vec<f64>,
}

#[derive(Debug)]
pub struct FigureData {
    pub figure: u8,
    pub x_label: &'static str,
    pub xs: Vec<u32>,
    pub series: Vec<FigureSeries>,
    pub notes: Vec<String>,
}

impl FigureData {
    pub fn series_for(&self, scheme: Scheme) -> Option<&FigureSeries> {
        self.series.iter().find(|s| s.scheme == scheme)
    }
}

/// Data behind the four published figures.
///
/// 10: cumulative bytes for 5..=25 joins into a group of 100 (N grows).
/// 11: cumulative bytes for 5..=25 leaves from a group of 100 (N shrinks).
/// 12: bytes to merge 15 equal groups, per-group size 7..=34.
/// 13: bytes to partition a group into 15 equal groups of size 7..=34.
pub fn figure_data(figure: u8, sizes: &SizeModel) -> Result<FigureData, AnalyticError> {
    match figure {
        10 | 11 => {
            let protocol = if figure == 10 {
                ProtocolKind::Join
            } else {
                ProtocolKind::Leave
            };
            let xs: Vec<u32> = (5..=25).collect();
            let schemes: Vec<Scheme> = Scheme::ALL
                .iter()
                .copied()
                .filter(|s| formula(*s, protocol).is_some())
                .collect();
            let mut series = Vec::new();
            for scheme in &schemes {
                let mut values = Vec::new();
                for events in &xs {
                    let mut total = 0.0;
                    for t in 0..*events {
                        let n = if figure == 10 {
                            100.0 + t as f64
                        } else {
                            100.0 - t as f64
                        };
                        total +=
                            eval_bytes(*scheme, protocol, n, FIGURE_SUBGROUP_K, sizes)?;
                    }
                    values.push(total);
                }
                series.push(FigureSeries {
                    scheme: *scheme,
                    values,
                });
            }
            Ok(FigureData {
                figure,
                x_label: if figure == 10 {
                    "join_requests"
                } else {
                    "leave_requests"
                },
                xs,
                series,
                notes: vec![format!(
                    "subgroup count K = {FIGURE_SUBGROUP_K} for the subgroup-based schemes"
                )],
            })
        }
        12 | 13 => {
            let protocol = if figure == 12 {
                ProtocolKind::Merge
            } else {
                ProtocolKind::Partition
            };
            let xs: Vec<u32> = (7..=34).collect();
            let schemes: Vec<Scheme> = Scheme::ALL
                .iter()
                .copied()
                .filter(|s| formula(*s, protocol).is_some())
                .collect();
            let omitted: Vec<&str> = Scheme::ALL
                .iter()
                .filter(|s| formula(**s, protocol).is_none())
                .map(|s| s.label())
                .collect();
            let mut series = Vec::new();
            for scheme in &schemes {
                let mut values = Vec::new();
                for s in &xs {
                    let n = FIGURE_GROUP_COUNT * *s as f64;
                    values.push(eval_bytes(*scheme, protocol, n, FIGURE_GROUP_COUNT, sizes)?);
                }
                series.push(FigureSeries {
                    scheme: *scheme,
                    values,
                });
            }
            let mut notes = vec![format!(
                "{} equal groups; total N = {} x group size",
                FIGURE_GROUP_COUNT, FIGURE_GROUP_COUNT
            )];
            if figure == 12 {
                notes.push("merge sweep over per-group size 7..=34 (inferred)".into());
            }
            if !omitted.is_empty() {
                notes.push(format!(
                    "no {} rows published for: {}",
                    protocol.label(),
                    omitted.join(", ")
                ));
            }
            Ok(FigureData {
                figure,
                x_label: "group_size",
                xs,
                series,
                notes,
            })
        }
        other => Err(AnalyticError::UnknownFigure(other)),
    }
}

/// Comma-separated emission: header row of scheme names, one row per
/// sweep point.
pub fn figure_csv(data: &FigureData) -> String {
    let mut out = String::new();
    out.push_str(data.x_label);
    for s in &data.series {
        let _ = write!(out, ",{}", s.scheme.label().replace(' ', "_"));
    }
    out.push('\n');
    for (i, x) in data.xs.iter().enumerate() {
        let _ = write!(out, "{x}");
        for s in &data.series {
            let _ = write!(out, ",{}", format_bytes(s.values[i]));
        }
        out.push('\n');
    }
    out
}

pub fn figure_metadata(data: &FigureData, sizes: &SizeModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "figure = {}", data.figure);
    let _ = writeln!(out, "int_bytes = {}", sizes.int_bytes);
    let _ = writeln!(out, "key_bytes = {}", sizes.key_bytes);
    for n in &data.notes {
        let _ = writeln!(out, "note = {n}");
    }
    for f in cost_table() {
        if !f.as_printed_issues.is_empty() {
            let _ = writeln!(
                out,
                "as_printed = {} {}: {}",
                f.scheme.label(),
                f.protocol.label(),
                f.as_printed_issues.join("; ")
            );
        }
    }
    out
}

/// One reconciliation row: a measured column against its analytic value.
#[derive(Debug, Clone)]
pub struct ReconcileRow {
    pub column: &'static str,
    pub measured: f64,
    pub analytic: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Informational rows never gate the overall verdict.
    pub gating: bool,
}

/// Reconciliation of one measured event against the analytic model.
#[derive(Debug)]
pub struct ReconcileReport {
    pub event_label: String,
    pub protocol: ProtocolKind,
    pub n: usize,
    pub rows: Vec<ReconcileRow>,
    /// Per-step byte attribution explaining any persistent delta.
    pub step_attribution: Vec<(String, Counters)>,
    pub pass: bool,
}

impl std::fmt::Display for ReconcileReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "reconcile {} ({}, N={}): {}",
            self.event_label,
            self.protocol.label(),
            self.n,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "  {:<12} measured {:>10} analytic {:>10} (tol {:>6}) {}{}",
                r.column,
                format_bytes(r.measured),
                format_bytes(r.analytic),
                format_bytes(r.tolerance),
                if r.pass { "ok" } else { "DELTA" },
                if r.gating { "" } else { " [informational]" }
            )?;
        }
        for (step, c) in &self.step_attribution {
            writeln!(f, "    step {step}: {c}")?;
        }
        Ok(())
    }
}

/// Compares a measured per-event ledger against the analytic row for the
/// same (protocol, N, K). Passes iff message counts are within one message
/// and bytes within one key payload plus one member-id list; hash and
/// crypt counts are reported with their own tolerances but do not gate.
/// Merge rows are entirely informational: the printed merge computation
/// cell is defective and the byte model has no single-event reading.
pub fn compare_event(
    ev: &EventLedger,
    protocol: ProtocolKind,
    n: usize,
    k: usize,
    sizes: &SizeModel,
) -> Result<ReconcileReport, AnalyticError> {
    let p = Params {
        n: n as f64,
        k: k as f64,
    };
    let f = formula(Scheme::Sgrs, protocol)
        .ok_or(AnalyticError::MissingRow(Scheme::Sgrs, protocol))?;
    let bytes_analytic = (f.bytes)(&p, sizes);
    let comm = (f.comm)(&p);
    let byte_tol = sizes.key_bytes as f64 + sizes.int_bytes as f64 * n as f64;
    let gated = protocol != ProtocolKind::Merge;

    let mut rows = Vec::new();
    let m = &ev.totals;
    rows.push(ReconcileRow {
        column: "bytes",
        measured: m.bytes_total as f64,
        analytic: bytes_analytic,
        tolerance: byte_tol,
        pass: (m.bytes_total as f64 - bytes_analytic).abs() <= byte_tol,
        gating: gated,
    });
    rows.push(ReconcileRow {
        column: "unicasts",
        measured: m.uc_count as f64,
        analytic: comm.uc,
        tolerance: 1.0,
        pass: (m.uc_count as f64 - comm.uc).abs() <= 1.0,
        gating: gated,
    });
    rows.push(ReconcileRow {
        column: "broadcasts",
        measured: m.bc_count as f64,
        analytic: comm.bc,
        tolerance: 1.0,
        pass: (m.bc_count as f64 - comm.bc).abs() <= 1.0,
        gating: gated,
    });
    let h_analytic = sgrs_hash_term(protocol, p.n, p.k);
    rows.push(ReconcileRow {
        column: "hash_ops",
        measured: m.hash_ops as f64,
        analytic: h_analytic,
        tolerance: 2.0,
        pass: (m.hash_ops as f64 - h_analytic).abs() <= 2.0,
        gating: false,
    });
    let e_analytic = sgrs_crypt_term(protocol, p.n, p.k);
    rows.push(ReconcileRow {
        column: "crypt_ops",
        measured: m.crypt_ops as f64,
        analytic: e_analytic,
        tolerance: 2.0,
        pass: (m.crypt_ops as f64 - e_analytic).abs() <= 2.0,
        gating: false,
    });

    let pass = rows.iter().filter(|r| r.gating).all(|r| r.pass);
    let step_attribution = ev
        .per_step
        .iter()
        .map(|(s, c)| (s.to_string(), *c))
        .collect();
    Ok(ReconcileReport {
        event_label: ev.label.clone(),
        protocol,
        n,
        rows,
        step_attribution,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes() -> SizeModel {
        SizeModel::default()
    }

    #[test]
    fn byte_cells_match_hand_arithmetic() {
        let s = sizes();
        assert_eq!(
            eval_bytes(Scheme::Sgrs, ProtocolKind::Join, 100.0, 1.0, &s).unwrap(),
            432.0
        );
        assert_eq!(
            eval_bytes(Scheme::Sgrs, ProtocolKind::Leave, 100.0, 1.0, &s).unwrap(),
            428.0
        );
        assert_eq!(
            eval_bytes(Scheme::Lv, ProtocolKind::Leave, 100.0, 1.0, &s).unwrap(),
            400.0
        );
        assert_eq!(
            eval_bytes(Scheme::Zhong, ProtocolKind::Join, 100.0, 10.0, &s).unwrap(),
            16004.0
        );
        assert_eq!(
            eval_bytes(Scheme::Kim, ProtocolKind::Join, 100.0, 1.0, &s).unwrap(),
            640_000.0
        );
    }

    #[test]
    fn missing_rows_are_reported() {
        assert!(formula(Scheme::Chen, ProtocolKind::Merge).is_none());
        assert!(matches!(
            eval_bytes(Scheme::Chen, ProtocolKind::Merge, 10.0, 2.0, &sizes()),
            Err(AnalyticError::MissingRow(_, _))
        ));
    }

    /// Checked-in transcription of the cost table; the renderer must
    /// reproduce it byte for byte.
    const TABLE_TRANSCRIPTION: &str = "\
scheme\tprotocol\tcomputation\tmessages\tbytes\tnotes
Kim et al.\tJoin\t(3 log2 N + 9)Ex + (4 + 2N)E\t2BC\tN CK + N CK (2N - 1)\t
Kim et al.\tLeave\t(3 log2 N + 9)Ex + (2 + 2N)E\t1BC\tN CK log2 N\t
Kim et al.\tMerge\t(3 log2 N + 9)Ex + (2k(1 + N) + 1 + N)E\t(1 + 2k)BC\t(CK/k)(kN - N)(2N - k) + N(2n - 1) CK\tas-printed: second addend prints lowercase n, read as N
Kim et al.\tPartition\t(3 log2 N + 9)Ex + miN(2k, N/2)E\tmin(2k, N/2)BC\tk N CK log2 N\tas-printed: comp prints miN for min
Lv et al.\tJoin\t(2N^2 + N)Mu + (5 + N)E\t2UC + 1BC\t(2N + 1)Int + N CK\t
Lv et al.\tLeave\t(2N^2 + N)Mu + (1 + N)E\t1BC\tN Int\t
Lv et al.\tMerge\t(2N^3 + N2 + N)Mu + (5 + N)E\tkBC + 2kUC\t(N^2 - N^2/K)(CK - Int)\tas-printed: comp prints N2 for N^2
Lv et al.\tPartition\t(2 Gi^2 + Gi)Mu + (5 + N)E\tkBC\t(N^2 - N^2/K)Int\tas-printed: comp is stated in the per-group size Gi
Chen\tJoin\t(4 log2 N)Ex + (5 + 2N log2 N)E\t(2 log2 N)MC + 2BC\tCK(2 log2 N + 2) + N CK(log2 N + 1)\t
Chen\tLeave\t(2 log2 N)Ex + 2h(2 + 2N log2 N)E\t(2 log2 N)MC\tCK 2 log2 N + N CK(log2 N + 1)\tas-printed: comp carries a stray 2h factor
Mehdizadeh et al.\tJoin\t(6N^2 + 3N)Mu + (8 + 4N)E\t3UC + 2MC\t2Int + CK(K + N/K + 1 + log2 K)\t
Mehdizadeh et al.\tLeave\t(6N^2 + 3N)Mu + (6 + 4N)E\t4UC + 2MC\t4Int + CK(K + N/K - 3 + log2 K)\t
Zhong et al.\tJoin\t(8 + N/K + 2^(K+1) + log2 K)E + 2Ex\t1UC + 3BC\t5N CK + 1Int\t
Zhong et al.\tLeave\t(9 + N/K + 2^(K+1) + log2 K)E + Ex\t3BC\t5N CK\t
SGRS\tJoin\t(N - 1)H + (N + 2)E\t2UC + 1BC\tN Int + CK\t
SGRS\tLeave\t2NH + 2NE\t2UC + 1BC\t(N - 1)Int + CK\t
SGRS\tMerge\t(2K - 1)[(7 + N/K) + (N/K - 1)H]\t(3K - 3)UC + (3K - 3)BC\t4K CK + (3 + N/K)(N/K) Int\tas-printed: comp first addend carries no operation unit
SGRS\tPartition\t(N + 2K)E + (K + N - 2)H\tKBC + KUC\tN Int + K CK\t
";

    #[test]
    fn rendered_table_matches_transcription() {
        assert_eq!(render_table(), TABLE_TRANSCRIPTION);
    }

    #[test]
    fn figure_10_has_21_points_and_six_series() {
        let data = figure_data(10, &sizes()).unwrap();
        assert_eq!(data.xs.len(), 21);
        assert_eq!(data.series.len(), 6);
        let csv = figure_csv(&data);
        assert_eq!(csv.lines().count(), 22);
    }

    #[test]
    fn figure_10_sgrs_is_strictly_minimal() {
        let data = figure_data(10, &sizes()).unwrap();
        let sgrs = data.series_for(Scheme::Sgrs).unwrap();
        for other in data.series.iter().filter(|s| s.scheme != Scheme::Sgrs) {
            for (i, v) in other.values.iter().enumerate() {
                assert!(
                    sgrs.values[i] < *v,
                    "{} beats SGRS at point {}",
                    other.scheme.label(),
                    data.xs[i]
                );
            }
        }
    }

    #[test]
    fn figure_11_lv_wins_by_less_than_ten_percent() {
        let data = figure_data(11, &sizes()).unwrap();
        let sgrs = data.series_for(Scheme::Sgrs).unwrap();
        let lv = data.series_for(Scheme::Lv).unwrap();
        for i in 0..data.xs.len() {
            assert!(lv.values[i] < sgrs.values[i]);
            let gap = (sgrs.values[i] - lv.values[i]) / sgrs.values[i];
            assert!(gap < 0.10, "gap {gap} at point {}", data.xs[i]);
        }
    }

    #[test]
    fn figures_12_13_sgrs_beats_kim_and_lv() {
        for fig in [12u8, 13] {
            let data = figure_data(fig, &sizes()).unwrap();
            assert_eq!(data.series.len(), 3);
            let sgrs = data.series_for(Scheme::Sgrs).unwrap();
            for scheme in [Scheme::Kim, Scheme::Lv] {
                let other = data.series_for(scheme).unwrap();
                for i in 0..data.xs.len() {
                    assert!(sgrs.values[i] < other.values[i]);
                }
            }
        }
    }

    #[test]
    fn unknown_figure_is_an_error() {
        assert_eq!(
            figure_data(9, &sizes()).unwrap_err(),
            AnalyticError::UnknownFigure(9)
        );
    }

    #[test]
    fn reconcile_flags_a_missized_event() {
        let mut ev = EventLedger {
            index: 0,
            label: "join test".into(),
            group: crate::id::GroupId(0),
            n_before: 10,
            totals: Counters::default(),
            per_step: Default::default(),
        };
        ev.totals.uc_count = 2;
        ev.totals.bc_count = 1;
        ev.totals.bytes_total = 144; // measured model value at N = 10
        let ok = compare_event(&ev, ProtocolKind::Join, 10, 1, &sizes()).unwrap();
        assert!(ok.pass, "{ok}");

        // Mutation: a payload grows far beyond the tolerance and the
        // reconciler must fail, attributing the step.
        ev.totals.bytes_total += 500;
        let mut step = Counters::default();
        step.bytes_total = 500;
        ev.per_step.insert("join.request", step);
        let bad = compare_event(&ev, ProtocolKind::Join, 10, 1, &sizes()).unwrap();
        assert!(!bad.pass);
        assert!(bad
            .step_attribution
            .iter()
            .any(|(s, c)| s == "join.request" && c.bytes_total == 500));
    }
}
