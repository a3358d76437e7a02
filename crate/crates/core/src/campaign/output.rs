use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::CampaignError;
use crate::oracle::{write_trace, TraceRow};

use super::run::{BaselineRow, CampaignSummary, CaseComparison};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |e| CampaignError::Io(path.display().to_string(), e)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn theta_header(prefix: &str) -> Vec<String> {
    (1..=9).map(|i| format!("{prefix}{i}")).collect()
}

pub fn iterations_csv(summary: &CampaignSummary) -> Result<Vec<u8>, CampaignError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["iteration".to_string()];
    header.extend(theta_header("theta"));
    header.extend(
        [
            "kpi", "H_path", "H_velocity", "H_cost", "target_completed", "path", "trace_P", "trace_Cdtheta",
            "trace_Cv", "c_k", "a_k", "accepted", "safety_ratio",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in &summary.iterations {
        let mut rec = vec![r.iteration.to_string()];
        rec.extend(r.theta.iter().map(f64::to_string));
        rec.extend([
            r.kpi.to_string(),
            r.h_path.to_string(),
            r.h_velocity.to_string(),
            r.h_cost.to_string(),
            r.target_completed.to_string(),
            r.path.clone(),
            opt(r.trace_p),
            opt(r.trace_c_dtheta),
            opt(r.trace_c_v),
            opt(r.c_k),
            opt(r.a_k),
            opt(r.accepted),
            opt(r.safety_ratio),
        ]);
        w.write_record(&rec)?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

pub fn spread_csv(summary: &CampaignSummary) -> Result<Vec<u8>, CampaignError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "H_path_mean",
        "H_path_std",
        "H_velocity_mean",
        "H_velocity_std",
        "H_cost_mean",
        "H_cost_std",
        "diverged",
    ])?;
    for r in &summary.spread {
        w.write_record([
            r.iteration.to_string(),
            r.mean[0].to_string(),
            r.std[0].to_string(),
            r.mean[1].to_string(),
            r.std[1].to_string(),
            r.mean[2].to_string(),
            r.std[2].to_string(),
            r.diverged.to_string(),
        ])?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

pub fn validation_csv(summary: &CampaignSummary) -> Result<Vec<u8>, CampaignError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tuning", "path", "H_path", "H_velocity", "H_cost", "completed"])?;
    for r in &summary.validation {
        w.write_record([
            r.tuning.clone(),
            r.path.clone(),
            r.h_path.to_string(),
            r.h_velocity.to_string(),
            r.h_cost.to_string(),
            r.completed.to_string(),
        ])?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

pub fn baseline_csv(rows: &[BaselineRow]) -> Result<Vec<u8>, CampaignError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["mode", "seed", "iteration", "kpi", "trace_P", "accepted"].map(String::from).into();
    header.extend(theta_header("theta"));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.mode.name().to_string(),
            r.seed.to_string(),
            r.iteration.to_string(),
            r.kpi.to_string(),
            r.trace_p.to_string(),
            r.accepted.to_string(),
        ];
        rec.extend(r.theta.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

pub fn cases_csv(rows: &[CaseComparison]) -> Result<Vec<u8>, CampaignError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["seed", "unity_H_path", "caseA_H_path", "caseB_H_path"].map(String::from).into();
    header.extend(theta_header("caseA_theta"));
    header.extend(theta_header("caseB_theta"));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.seed.to_string(),
            r.unity_h_path.to_string(),
            r.case_a_h_path.to_string(),
            r.case_b_h_path.to_string(),
        ];
        rec.extend(r.case_a_theta.iter().map(f64::to_string));
        rec.extend(r.case_b_theta.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CampaignError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes `iterations.csv`, `spread.csv`, `validation.csv`, `summary.json`
/// and, if given, `traces/target_<i>.csv` into `dir`.
pub fn write_campaign(
    dir: &Path,
    summary: &CampaignSummary,
    traces: &[(usize, Vec<TraceRow>)],
) -> Result<(), CampaignError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("iterations.csv"), &iterations_csv(summary)?)?;
    write_file(&dir.join("spread.csv"), &spread_csv(summary)?)?;
    write_file(&dir.join("validation.csv"), &validation_csv(summary)?)?;
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    write_file(&dir.join("summary.json"), &json)?;
    if !traces.is_empty() {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
        for (i, rows) in traces {
            let file = tdir.join(format!("target_{i}.csv"));
            let mut buf = Vec::new();
            write_trace(&mut buf, rows).map_err(io_err(&file))?;
            buf.flush().map_err(io_err(&file))?;
            write_file(&file, &buf)?;
        }
    }
    Ok(())
}

pub fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CampaignError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(name), bytes)
}
