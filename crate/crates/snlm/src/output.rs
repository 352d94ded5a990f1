//! CSV writers for every report the tool emits. Floats are written in
//! shortest round-trip form, so equal values always print identically.

use std::io::Write;

use snlm_core::corpus::CompletionItem;
use snlm_core::diagnostics::{CompletionOutcome, Histogram2d};
use snlm_core::theory::AuditRow;
use snlm_core::trainer::TrainLog;

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_train_log<W: Write>(out: W, log: &TrainLog) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TrainLog::HEADER.split(','))?;
    for r in &log.records {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            opt(r.ppl),
            opt(r.mu_z),
            opt(r.sigma_z),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics<W: Write>(out: W, rows: &[(&str, f64)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "value"])?;
    for (name, value) in rows {
        w.write_record([name.to_string(), value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(out: W, h: &Histogram2d) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h_bin_lo", "h_bin_hi", "z_bin_lo", "z_bin_hi", "count"])?;
    for i in 0..h.h_bins() {
        for j in 0..h.z_bins() {
            w.write_record([
                h.h_edges[i].to_string(),
                h.h_edges[i + 1].to_string(),
                h.z_edges[j].to_string(),
                h.z_edges[j + 1].to_string(),
                h.counts[i * h.z_bins() + j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `correct` is left empty for items without a known answer.
pub fn write_completions<W: Write>(out: W, items: &[CompletionItem], outcome: &CompletionOutcome) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "choice", "correct", "score_gap"])?;
    for i in 0..items.len() {
        let correct = outcome.correct[i].map(|c| u8::from(c).to_string()).unwrap_or_default();
        w.write_record([i.to_string(), outcome.choices[i].to_string(), correct, outcome.score_gap(i).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_audit<W: Write>(out: W, rows: &[AuditRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AuditRow::HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.instance_seed.to_string(),
            r.words.to_string(),
            r.contexts.to_string(),
            r.k.to_string(),
            r.sigma.to_string(),
            r.epsilon.to_string(),
            r.observed.to_string(),
            r.slack.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
