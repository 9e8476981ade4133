//! Delimiter-separated report emission: loss curves, Recall@K tables, and
//! ablation sweeps. All files carry a header row and are written atomically.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::mcfa::{Recalls, TrainReport};

fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".into())
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Per-epoch loss curves for every stage, one row per (stage, epoch).
/// Wall-clock timings stay out of the file so identical runs produce
/// bit-identical reports.
pub fn write_loss_curves(path: &Path, reports: &[TrainReport]) -> Result<()> {
    let mut out = String::from("stage,active_modality,epoch,l_aaml,l_infonce,l_triplet,l_total\n");
    for (si, report) in reports.iter().enumerate() {
        for e in &report.epochs {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                si,
                report.active_modality.tag(),
                e.epoch,
                e.l_aaml,
                e.l_infonce,
                e.l_triplet,
                e.l_total
            ));
        }
    }
    write_atomic(path, &out)
}

/// A labelled-rows Recall@K table in the R@1/R@5/R@10 column layout.
pub fn format_recall_table(rows: &[(String, Recalls)]) -> String {
    let mut out = String::from("setting,r_at_1,r_at_5,r_at_10\n");
    for (label, r) in rows {
        out.push_str(&format!("{label},{:.4},{:.4},{:.4}\n", r.r1, r.r5, r.r10));
    }
    out
}

pub fn write_recall_table(path: &Path, rows: &[(String, Recalls)]) -> Result<()> {
    write_atomic(path, &format_recall_table(rows))
}
