//! Markdown summary and plot-data CSVs built from the evaluation outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::evaluate::{evaluation_dir, Evaluation, EVALUATION_FILE};
use crate::error::{HarnessError, Result};

pub const SUMMARY_FILE: &str = "summary.md";
pub const AUC_FILE: &str = "auc.csv";
pub const FIDELITY_FILE: &str = "fidelity.csv";

pub struct ReportFiles {
    pub summary: PathBuf,
    pub auc: PathBuf,
    pub fidelity: PathBuf,
}

/// Reads one evaluation per dose level; lists every missing input at once.
pub fn collect(out: &Path, doses: &[f64]) -> Result<Vec<Evaluation>> {
    let mut missing = Vec::new();
    let mut evals = Vec::new();
    for &d in doses {
        let p = evaluation_dir(out, d).join(EVALUATION_FILE);
        match std::fs::read_to_string(&p) {
            Ok(t) => evals.push(serde_json::from_str::<Evaluation>(&t)?),
            Err(_) => missing.push(p.display().to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::Data(format!("missing evaluation outputs: {}", missing.join(", "))));
    }
    Ok(evals)
}

pub fn auc_csv(evals: &[Evaluation]) -> String {
    let mut s = String::from("dose_level,wall,method,auc,ci_low,ci_high,n_present,n_absent\n");
    for e in evals {
        for r in &e.auc {
            let _ = writeln!(s, "{},{},{},{},{},{},{},{}", r.dose_level, r.wall, r.method.as_str(), r.auc, r.ci_low, r.ci_high, r.n_present, r.n_absent);
        }
    }
    s
}

pub fn fidelity_csv(evals: &[Evaluation]) -> String {
    let mut s = String::from("dose_level,method,rmse,ssim,n_images\n");
    for e in evals {
        for r in &e.fidelity {
            let _ = writeln!(s, "{},{},{},{},{}", r.dose_level, r.method.as_str(), r.rmse, r.ssim, r.n_images);
        }
    }
    s
}

pub fn summary_md(evals: &[Evaluation]) -> String {
    let mut s = String::from("# Evaluation summary\n\n## Observer AUC (95% bootstrap interval)\n\n");
    s.push_str("| dose | wall | method | AUC | CI |\n|---|---|---|---|---|\n");
    for e in evals {
        for r in &e.auc {
            let _ = writeln!(s, "| {} | {} | {} | {:.3} | [{:.3}, {:.3}] |", r.dose_level, r.wall, r.method.as_str(), r.auc, r.ci_low, r.ci_high);
        }
    }
    s.push_str("\n## Paired AUC differences\n\n| dose | wall | comparison | difference | one-sided lower bound |\n|---|---|---|---|---|\n");
    for e in evals {
        for r in &e.paired {
            let _ = writeln!(s, "| {} | {} | {} - {} | {:+.3} | {:+.3} |", r.dose_level, r.wall, r.b.as_str(), r.a.as_str(), r.paired.diff, r.one_sided_low);
        }
    }
    s.push_str("\n## Fidelity against the normal-dose images\n\n| dose | method | RMSE | SSIM |\n|---|---|---|---|\n");
    for e in evals {
        for r in &e.fidelity {
            let _ = writeln!(s, "| {} | {} | {:.4} | {:.4} |", r.dose_level, r.method.as_str(), r.rmse, r.ssim);
        }
    }
    s.push_str("\n## Defect contrast, most severe defects\n\n| dose | method | contrast | images |\n|---|---|---|---|\n");
    for e in evals {
        for r in &e.contrast {
            let _ = writeln!(s, "| {} | {} | {:.4} | {} |", r.dose_level, r.method.as_str(), r.mean_contrast, r.n_images);
        }
    }
    s.push_str("\n## Selected lambda\n\n");
    for e in evals {
        let _ = writeln!(s, "- dose {}: lambda = {}", e.dose_level, e.selected_lambda);
    }
    s
}

pub fn write_report(out: &Path, doses: &[f64]) -> Result<ReportFiles> {
    let evals = collect(out, doses)?;
    let dir = out.join("report");
    std::fs::create_dir_all(&dir)?;
    let files = ReportFiles { summary: dir.join(SUMMARY_FILE), auc: dir.join(AUC_FILE), fidelity: dir.join(FIDELITY_FILE) };
    std::fs::write(&files.summary, summary_md(&evals))?;
    std::fs::write(&files.auc, auc_csv(&evals))?;
    std::fs::write(&files.fidelity, fidelity_csv(&evals))?;
    Ok(files)
}
