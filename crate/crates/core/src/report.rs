use std::fmt::Write;

use thiserror::Error;

use crate::metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Aligned, human-readable table.
    Text,
    /// TOML with stable key names.
    Toml,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot parse report: {0}")]
    Parse(#[from] toml::de::Error),
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => text(report),
        ReportFormat::Toml => structured(report),
    }
}

pub fn parse_report(text: &str) -> Result<MetricsReport, ReportError> {
    Ok(toml::from_str(text)?)
}

fn scalars(r: &MetricsReport) -> Vec<(&'static str, String)> {
    vec![
        ("requests", r.requests.to_string()),
        ("done", r.done.to_string()),
        ("failed", r.failed.to_string()),
        ("satisfaction_rate", format!("{:.4}", r.satisfaction_rate)),
        ("mean_migrations", format!("{:.4}", r.mean_migrations)),
        ("max_migrations", r.max_migrations.to_string()),
        ("mean_paid", r.mean_paid.to_string()),
        ("local_optimality_violations", r.local_optimality_violations.to_string()),
        ("global_gap", format!("{:.4}", r.global_gap)),
        ("global_gap_samples", r.global_gap_samples.to_string()),
        ("workload_std", format!("{:.4}", r.workload_std)),
        ("dropped_messages", r.dropped_messages.to_string()),
    ]
}

fn structured(r: &MetricsReport) -> String {
    let mut out = String::new();
    for (key, value) in scalars(r) {
        writeln!(out, "{key} = {value}").unwrap();
    }
    out.push_str("\n[messages]\n");
    for (name, count) in &r.messages {
        writeln!(out, "{name} = {count}").unwrap();
    }
    out.push_str("\n[brokers]\n");
    for (name, load) in &r.brokers {
        writeln!(out, "{name} = {{ peak = {}, mean = {:.4} }}", load.peak, load.mean).unwrap();
    }
    out
}

fn text(r: &MetricsReport) -> String {
    let mut out = String::new();
    for (key, value) in scalars(r) {
        writeln!(out, "{key:<28} {value:>12}").unwrap();
    }
    writeln!(out, "\n{:<12} {:>6} {:>10}", "broker", "peak", "mean").unwrap();
    for (name, load) in &r.brokers {
        writeln!(out, "{name:<12} {:>6} {:>10.4}", load.peak, load.mean).unwrap();
    }
    writeln!(out, "\n{:<16} {:>8}", "performative", "count").unwrap();
    for (name, count) in &r.messages {
        writeln!(out, "{name:<16} {count:>8}").unwrap();
    }
    if r.done + r.failed == 0 {
        out.push_str("\nwarning: no request finished; satisfaction_rate reported as 0\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::BrokerLoad;
    use crate::model::Money;

    fn sample() -> MetricsReport {
        MetricsReport {
            requests: 2,
            done: 1,
            failed: 1,
            satisfaction_rate: 0.5,
            mean_migrations: 0.3333,
            max_migrations: 1,
            mean_paid: Money::from_cents(1234),
            local_optimality_violations: 0,
            global_gap: -0.125,
            global_gap_samples: 1,
            workload_std: 0.0,
            dropped_messages: 0,
            brokers: [("B0".to_string(), BrokerLoad { peak: 2, mean: 0.75 })].into_iter().collect(),
            messages: [("CFP".to_string(), 3), ("REJECT_PROPOSAL".to_string(), 0)].into_iter().collect(),
        }
    }

    #[test]
    fn rate_printed_with_four_decimals() {
        let r = sample();
        assert!(emit_report(&r, ReportFormat::Toml).contains("satisfaction_rate = 0.5000\n"));
        assert!(emit_report(&r, ReportFormat::Text).contains("0.5000"));
        assert!(emit_report(&r, ReportFormat::Text).contains("12.34"));
    }

    #[test]
    fn structured_round_trip() {
        let r = sample();
        assert_eq!(parse_report(&emit_report(&r, ReportFormat::Toml)).unwrap(), r);
        let whole = MetricsReport { mean_paid: Money::from_cents(900), ..r };
        assert_eq!(parse_report(&emit_report(&whole, ReportFormat::Toml)).unwrap(), whole);
    }

    #[test]
    fn empty_report_is_all_zero_and_parses() {
        let r = MetricsReport::default();
        let toml = emit_report(&r, ReportFormat::Toml);
        assert!(toml.contains("satisfaction_rate = 0.0000"));
        assert_eq!(parse_report(&toml).unwrap(), r);
        assert!(emit_report(&r, ReportFormat::Text).contains("warning"));
    }
}
