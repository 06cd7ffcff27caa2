//! `evaluate`: scores one or more attack runs against every trained
//! classifier, building the transfer matrix plus image-quality metrics,
//! and writes report.json + report.csv into the first run directory.
//!
//! Reports identify runs by position and surrogate, never by directory
//! name, so re-running an identically configured pipeline yields
//! byte-identical report files. Quality is measured against each attack's
//! unguided same-seed baseline generation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scoreadv_core::error::{Error, Result};
use scoreadv_core::metrics::{
    attack_success_rate, desk_fid, psnr, ssim, transfer_matrix, TransferCase,
    TransferMatrixResult, FID_MIN_IMAGES,
};
use scoreadv_core::models::checkpoint::save_model;
use scoreadv_core::models::TargetModelAdapter;
use scoreadv_core::tensor::ImageTensor;

use crate::attack::AttackRecord;
use crate::models_io::{load_models, LoadedModels};
use crate::pngio::load_gray;
use crate::rundir::Manifest;

/// Per-run aggregate metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub surrogate: String,
    pub attacks: usize,
    /// ASR over recorded success flags (computed on unquantized images).
    pub recorded_asr: f64,
    /// Mean PSNR/SSIM of adversarial vs baseline PNGs; PSNR is null when
    /// any pair is bit-identical (infinite PSNR has no JSON encoding).
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Fréchet feature distance; null below the minimum set size.
    pub desk_fid: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub targets: Vec<String>,
    pub transfer: TransferMatrixResult,
    pub runs: Vec<RunSummary>,
}

struct LoadedRun {
    surrogate: String,
    records: Vec<AttackRecord>,
    adversarial: Vec<ImageTensor>,
    baselines: Vec<ImageTensor>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest = Manifest::load(dir)?;
    if manifest.command != "attack" {
        return Err(Error::ingestion(format!(
            "{} is a {} run, expected an attack run",
            dir.display(),
            manifest.command
        )));
    }
    let mut records = Vec::new();
    for rel in manifest.outputs.keys() {
        if rel.starts_with("records/") && rel.ends_with(".json") {
            let record: AttackRecord =
                scoreadv_core::models::checkpoint::load_model(&dir.join(rel))?;
            records.push(record);
        }
    }
    if records.is_empty() {
        return Err(Error::ingestion(format!(
            "{} lists no attack records",
            dir.display()
        )));
    }
    records.sort_by_key(|r| r.index);
    let mut adversarial = Vec::with_capacity(records.len());
    let mut baselines = Vec::with_capacity(records.len());
    for r in &records {
        adversarial.push(load_gray(&dir.join(&r.image))?);
        baselines.push(load_gray(&dir.join(&r.baseline))?);
    }
    Ok(LoadedRun {
        surrogate: manifest.config.attack.surrogate.clone(),
        records,
        adversarial,
        baselines,
    })
}

pub fn build_report(run_dirs: &[PathBuf], models: &LoadedModels) -> Result<Report> {
    let targets: Vec<&dyn TargetModelAdapter> = vec![&models.conv, &models.mlp];
    let mut cases_by_surrogate: Vec<(String, Vec<TransferCase>)> = Vec::new();
    let mut runs = Vec::new();

    for (run_idx, dir) in run_dirs.iter().enumerate() {
        let run = load_run(dir)?;
        let mut cases = Vec::with_capacity(run.records.len());
        for (record, image) in run.records.iter().zip(&run.adversarial) {
            let target_class = record.target_class.ok_or_else(|| {
                Error::parameter("evaluate needs classification runs with recorded target classes")
            })?;
            cases.push(TransferCase {
                image: image.clone(),
                target_class,
            });
        }

        let recorded_asr = attack_success_rate(run.records.iter().map(|r| r.success))?;
        let mut psnr_sum = 0.0;
        let mut ssim_sum = 0.0;
        for (a, b) in run.adversarial.iter().zip(&run.baselines) {
            psnr_sum += psnr(a, b)?;
            ssim_sum += ssim(a, b)?;
        }
        let n = run.adversarial.len() as f64;
        let fid = if run.adversarial.len() >= FID_MIN_IMAGES {
            Some(desk_fid(&run.adversarial, &run.baselines, &models.conv)?)
        } else {
            None
        };

        runs.push(RunSummary {
            run: run_idx,
            surrogate: run.surrogate.clone(),
            attacks: run.records.len(),
            recorded_asr,
            mean_psnr: psnr_sum / n,
            mean_ssim: ssim_sum / n,
            desk_fid: fid,
        });
        cases_by_surrogate.push((run.surrogate, cases));
    }

    let transfer = transfer_matrix(&cases_by_surrogate, &targets)?;
    Ok(Report {
        targets: targets.iter().map(|t| t.id().to_string()).collect(),
        transfer,
        runs,
    })
}

fn csv_number(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Transfer rows first (one per surrogate x target), then metric rows.
pub fn report_csv(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "kind,run,surrogate,target,metric,value,white_box");
    for (i, surrogate) in report.transfer.surrogates.iter().enumerate() {
        for (j, target) in report.transfer.targets.iter().enumerate() {
            let _ = writeln!(
                s,
                "transfer,{i},{surrogate},{target},asr,{},{}",
                csv_number(report.transfer.rates[i][j]),
                report.transfer.is_white_box(i, j)
            );
        }
    }
    for r in &report.runs {
        for (metric, value) in [
            ("recorded_asr", Some(r.recorded_asr)),
            ("mean_psnr", Some(r.mean_psnr)),
            ("mean_ssim", Some(r.mean_ssim)),
            ("desk_fid", r.desk_fid),
        ] {
            let text = value.map(csv_number).unwrap_or_else(|| "na".to_string());
            let _ = writeln!(s, "metric,{},{},,{metric},{text},", r.run, r.surrogate);
        }
    }
    s
}

pub fn run(run_dirs: &[PathBuf], models_override: Option<&Path>) -> Result<()> {
    if run_dirs.is_empty() {
        return Err(Error::parameter("evaluate needs at least one run directory"));
    }
    let primary = &run_dirs[0];
    let mut manifest = Manifest::load(primary)?;
    let models_dir = match models_override {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from(manifest.models_dir.clone().ok_or_else(|| {
            Error::ingestion("run manifest has no models_dir; pass --models")
        })?),
    };
    let models = load_models(&models_dir)?;

    let report = build_report(run_dirs, &models)?;
    save_model(&report, &primary.join("report.json"))?;
    std::fs::write(primary.join("report.csv"), report_csv(&report))?;
    manifest.record(primary, "report.json")?;
    manifest.record(primary, "report.csv")?;
    manifest.save(primary)?;

    for r in &report.runs {
        println!(
            "run {} surrogate {}: recorded_asr {:.3} mean_ssim {:.3} desk_fid {}",
            r.run,
            r.surrogate,
            r.recorded_asr,
            r.mean_ssim,
            r.desk_fid.map(|v| format!("{v:.3}")).unwrap_or_else(|| "na".into()),
        );
    }
    for (i, s) in report.transfer.surrogates.iter().enumerate() {
        for (j, t) in report.transfer.targets.iter().enumerate() {
            println!(
                "transfer {s} -> {t}: {:.3}{}",
                report.transfer.rates[i][j],
                if report.transfer.is_white_box(i, j) {
                    " (white-box)"
                } else {
                    ""
                }
            );
        }
    }
    println!("report: {}", primary.join("report.json").display());
    Ok(())
}
