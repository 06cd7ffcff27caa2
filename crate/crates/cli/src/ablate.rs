//! `ablate-saliency`: reruns the attack batch once per saliency method
//! (ScoreCAM, GradCAM, GradCAM++) over dataset-sourced reference images,
//! emitting a per-method comparison table of ASR, desk-FID, and mask
//! bounds.
//!
//! All methods share the same base seed, so rows are paired: instance `i`
//! sees identical noise draws and reference images under every method.

use std::fmt::Write as _;
use std::time::Instant;

use scoreadv_core::error::{Error, Result};
use scoreadv_core::metrics::{desk_fid, FID_MIN_IMAGES};
use scoreadv_core::models::dataset::generate;
use scoreadv_core::saliency::SaliencyMethod;

use crate::attack::{execute_batch, resolve_guidance, ReferenceSource};
use crate::config::Config;
use crate::models_io::LoadedModels;
use crate::rundir::{create_run_dir, subdir, Manifest};

pub const METHODS: [SaliencyMethod; 3] = [
    SaliencyMethod::ScoreCam,
    SaliencyMethod::GradCam,
    SaliencyMethod::GradCamPp,
];

pub fn method_label(m: SaliencyMethod) -> &'static str {
    match m {
        SaliencyMethod::ScoreCam => "score_cam",
        SaliencyMethod::GradCam => "grad_cam",
        SaliencyMethod::GradCamPp => "grad_cam_pp",
    }
}

#[derive(Clone, Debug)]
pub struct MethodRow {
    pub method: &'static str,
    pub attacks: usize,
    pub asr: f64,
    pub desk_fid: Option<f64>,
    pub mask_min: f64,
    pub mask_max: f64,
}

pub fn ablate_csv(rows: &[MethodRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method,attacks,asr,desk_fid,mask_min,mask_max");
    for r in rows {
        let fid = r
            .desk_fid
            .map(|v| format!("{v}"))
            .unwrap_or_else(|| "na".to_string());
        let _ = writeln!(
            s,
            "{},{},{},{fid},{},{}",
            r.method, r.attacks, r.asr, r.mask_min, r.mask_max
        );
    }
    s
}

/// Reference pool: the test split of the training dataset, grouped by
/// class. Fails if the configured dataset differs from the one the models
/// were trained on.
pub fn dataset_references(cfg: &Config, models: &LoadedModels) -> Result<ReferenceSource> {
    let data = generate(&cfg.dataset.spec())?;
    if data.checksum != models.dataset_checksum {
        return Err(Error::parameter(
            "dataset settings differ from the ones the models were trained on",
        ));
    }
    let mut by_class = vec![Vec::new(); models.classes];
    for sample in &data.test {
        by_class[sample.label].push(sample.image.clone());
    }
    for (c, pool) in by_class.iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::parameter(format!("no test references for class {c}")));
        }
    }
    Ok(ReferenceSource::Dataset(by_class))
}

pub fn run(cfg: &Config, models: &LoadedModels) -> Result<()> {
    cfg.validate()?;
    let t0 = Instant::now();
    let guidance = resolve_guidance(cfg, models)?;
    let reference = dataset_references(cfg, models)?;
    let tag = cfg.output.tag.clone().unwrap_or_else(|| "ablate".to_string());
    let run_dir = create_run_dir(&cfg.output.root, &tag)?;

    let mut rows = Vec::with_capacity(METHODS.len());
    let mut written = Vec::new();
    for method in METHODS {
        let label = method_label(method);
        let mut method_cfg = cfg.clone();
        method_cfg.attack.saliency_method = method;
        let name = format!("method_{label}");
        let base = subdir(&run_dir, &name)?;
        let outcome = execute_batch(&method_cfg, &guidance, models, &reference, None, &base)?;
        let (mask_min, mask_max) = outcome.mask_bounds.ok_or_else(|| {
            Error::capability(format!("{label} produced no saliency masks"))
        })?;
        let fid = if outcome.adversarial.len() >= FID_MIN_IMAGES {
            Some(desk_fid(&outcome.adversarial, &outcome.baselines, &models.conv)?)
        } else {
            None
        };
        eprintln!(
            "{label}: asr {:.3} desk_fid {} mask range [{mask_min:.3}, {mask_max:.3}]",
            outcome.asr,
            fid.map(|v| format!("{v:.3}")).unwrap_or_else(|| "na".into()),
        );
        rows.push(MethodRow {
            method: label,
            attacks: outcome.adversarial.len(),
            asr: outcome.asr,
            desk_fid: fid,
            mask_min,
            mask_max,
        });
        written.extend(outcome.written.into_iter().map(|f| format!("{name}/{f}")));
    }

    std::fs::write(run_dir.join("ablate.csv"), ablate_csv(&rows))?;
    written.push("ablate.csv".to_string());

    let mut manifest = Manifest::new("ablate-saliency", cfg);
    manifest.guidance = guidance;
    manifest.schedule = models.schedule_spec;
    manifest.dataset_checksum = models.dataset_checksum.clone();
    manifest.models_dir = Some(models.dir.display().to_string());
    manifest.model_checksums = models.checksums.clone();
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    for rel in &written {
        manifest.record(&run_dir, rel)?;
    }
    manifest.save(&run_dir)?;
    println!("ablate run: {}", run_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row_per_method() {
        let rows: Vec<MethodRow> = METHODS
            .iter()
            .map(|&m| MethodRow {
                method: method_label(m),
                attacks: 2,
                asr: 0.5,
                desk_fid: None,
                mask_min: 0.0,
                mask_max: 1.0,
            })
            .collect();
        let csv = ablate_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("score_cam"));
        assert!(csv.contains("grad_cam_pp"));
    }
}
