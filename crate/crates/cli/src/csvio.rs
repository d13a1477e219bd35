//! CSV artifacts: comma-separated, header row, floats printed with 17
//! significant digits so every file is a lossless serialization of the f64
//! values it came from.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cladapter_core::finetune::EpochMetrics;
use cladapter_core::interface::FeatureBlock;
use cladapter_core::synth::Sample;

use crate::error::Result;

/// 17 significant digits: round-trip-exact for 64-bit floats.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,stage,train_loss,val_id_acc,val_ood_acc")?;
    for m in metrics {
        writeln!(
            w,
            "{},{},{},{},{}",
            m.epoch,
            m.stage,
            fmt_f64(m.train_loss),
            fmt_f64(m.val_id_acc),
            fmt_f64(m.val_ood_acc)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One row per token of adapter output: sample_id, token_index, label, then
/// the D feature columns.
pub fn write_features_csv(
    path: &Path,
    rows: impl Iterator<Item = (usize, usize, FeatureBlock)>,
    d: usize,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = String::from("sample_id,token_index,label");
    for j in 0..d {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{header}")?;
    for (sample_id, label, block) in rows {
        for t in 0..block.n() {
            let mut line = format!("{sample_id},{t},{label}");
            for v in block.matrix().row(t) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per raw input token: sample_id, token_index, label, then the
/// input-space coordinates.
pub fn write_dataset_csv(path: &Path, split: &[Sample], input_dim: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = String::from("sample_id,token_index,label");
    for j in 0..input_dim {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}")?;
    for (sample_id, sample) in split.iter().enumerate() {
        for t in 0..sample.tokens.rows() {
            let mut line = format!("{sample_id},{t},{}", sample.label);
            for v in sample.tokens.row(t) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}
