//! Per-system metric table.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub system: String,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    pub per: Option<f64>,
    pub mel_l1: Option<f64>,
    /// Distance of time-averaged spectra to the target speaker's rendering.
    pub speaker_distance: Option<f64>,
    pub f0_rmse: Option<f64>,
    pub duration_deviation: Option<f64>,
}

impl SystemMetrics {
    pub fn new(system: &str) -> Self {
        Self {
            system: system.to_string(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SystemMetrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "-".to_string(),
    }
}

/// Rows in input order. Rates (CER, WER, PER) print with one decimal; the
/// acoustic distances with three.
pub fn build_report(systems: &[SystemMetrics]) -> (EvalReport, String) {
    let header = ["System", "CER (%)", "WER (%)", "PER (%)", "Mel L1", "Spk dist", "F0 RMSE", "Dur dev"];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for s in systems {
        rows.push(vec![
            s.system.clone(),
            cell(s.cer, 1),
            cell(s.wer, 1),
            cell(s.per, 1),
            cell(s.mel_l1, 3),
            cell(s.speaker_distance, 3),
            cell(s.f0_rmse, 3),
            cell(s.duration_deviation, 3),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for (n, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
        if n == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            text.push_str(&rule.join("  "));
            text.push('\n');
        }
    }
    (
        EvalReport {
            rows: systems.to_vec(),
        },
        text,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_keep_order_and_round_to_one_decimal() {
        let a = SystemMetrics {
            cer: Some(42.64),
            wer: Some(61.66),
            ..SystemMetrics::new("Enc-CM")
        };
        let b = SystemMetrics {
            cer: Some(90.2),
            wer: Some(91.0),
            mel_l1: Some(0.12345),
            ..SystemMetrics::new("Original")
        };
        let (report, text) = build_report(&[a.clone(), b.clone()]);
        assert_eq!(report.rows, vec![a, b]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("Enc-CM") && lines[2].contains("42.6") && lines[2].contains("61.7"));
        assert!(lines[3].contains("90.2") && lines[3].contains("0.123"));
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert_eq!(build_report(&[SystemMetrics::new("x")]).0.rows.len(), 1);
    }
}
