//! `sweep`: reruns the attack batch across a grid of one guidance
//! parameter, emitting per-point ASR and desk-FID as CSV plus SVG plots.
//!
//! Every grid point reuses the same base seed, so paired points differ
//! only in the swept parameter, never in the noise draws. Each point's
//! images and records land in their own `point_NN/` subdirectory of a
//! single run directory.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use scoreadv_core::error::{Error, Result};
use scoreadv_core::metrics::{desk_fid, FID_MIN_IMAGES};

use crate::attack::{execute_batch, reference_from_config, resolve_guidance};
use crate::config::Config;
use crate::models_io::LoadedModels;
use crate::plots::line_plot;
use crate::rundir::{create_run_dir, subdir, Manifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    TStar,
    NCycles,
    SA,
    SN,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::TStar => "t_star",
            SweepParam::NCycles => "n_cycles",
            SweepParam::SA => "s_a",
            SweepParam::SN => "s_n",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t_star" => Ok(SweepParam::TStar),
            "n_cycles" => Ok(SweepParam::NCycles),
            "s_a" => Ok(SweepParam::SA),
            "s_n" => Ok(SweepParam::SN),
            other => Err(Error::parameter(format!(
                "unknown sweep parameter {other}; expected t_star, n_cycles, s_a, or s_n"
            ))),
        }
    }
}

fn as_count(param: SweepParam, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::parameter(format!(
            "{} takes whole non-negative values, got {v}",
            param.name()
        )));
    }
    Ok(v as usize)
}

fn apply(param: SweepParam, value: f64, cfg: &mut Config) -> Result<()> {
    match param {
        SweepParam::TStar => cfg.guidance.adv_window = Some(as_count(param, value)?),
        SweepParam::NCycles => cfg.guidance.cycles = as_count(param, value)?,
        SweepParam::SA => cfg.guidance.adv_scale = value,
        SweepParam::SN => cfg.guidance.noise_scale = value,
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub attacks: usize,
    pub asr: f64,
    pub desk_fid: Option<f64>,
}

pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "param,value,attacks,asr,desk_fid");
    for p in points {
        let fid = p
            .desk_fid
            .map(|v| format!("{v}"))
            .unwrap_or_else(|| "na".to_string());
        let _ = writeln!(s, "{},{},{},{},{fid}", param.name(), p.value, p.attacks, p.asr);
    }
    s
}

/// Runs one grid point into `base` and scores it.
fn run_point(
    cfg: &Config,
    models: &LoadedModels,
    param: SweepParam,
    value: f64,
    base: &Path,
) -> Result<(SweepPoint, Vec<String>)> {
    let mut point_cfg = cfg.clone();
    apply(param, value, &mut point_cfg)?;
    let guidance = resolve_guidance(&point_cfg, models)?;
    let reference = reference_from_config(&point_cfg)?;
    let outcome = execute_batch(&point_cfg, &guidance, models, &reference, None, base)?;
    let fid = if outcome.adversarial.len() >= FID_MIN_IMAGES {
        Some(desk_fid(&outcome.adversarial, &outcome.baselines, &models.conv)?)
    } else {
        None
    };
    Ok((
        SweepPoint {
            value,
            attacks: outcome.adversarial.len(),
            asr: outcome.asr,
            desk_fid: fid,
        },
        outcome.written,
    ))
}

pub fn run(cfg: &Config, models: &LoadedModels, param: SweepParam, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::parameter("sweep needs at least one grid value"));
    }
    cfg.validate()?;
    let t0 = Instant::now();
    let tag = cfg.output.tag.clone().unwrap_or_else(|| "sweep".to_string());
    let run_dir = create_run_dir(&cfg.output.root, &tag)?;

    let mut points = Vec::with_capacity(grid.len());
    let mut written = Vec::new();
    for (i, &value) in grid.iter().enumerate() {
        let name = format!("point_{i:02}");
        let base = subdir(&run_dir, &name)?;
        let (point, files) = run_point(cfg, models, param, value, &base)?;
        eprintln!(
            "{} = {value}: asr {:.3} desk_fid {}",
            param.name(),
            point.asr,
            point
                .desk_fid
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "na".into()),
        );
        written.extend(files.into_iter().map(|f| format!("{name}/{f}")));
        points.push(point);
    }

    std::fs::write(run_dir.join("sweep.csv"), sweep_csv(param, &points))?;
    written.push("sweep.csv".to_string());

    let plots_dir = subdir(&run_dir, "plots")?;
    let asr_points: Vec<(f64, f64)> = points.iter().map(|p| (p.value, p.asr)).collect();
    line_plot(
        &plots_dir.join("sweep_asr.svg"),
        &format!("ASR vs {}", param.name()),
        param.name(),
        "ASR",
        &asr_points,
    )?;
    written.push("plots/sweep_asr.svg".to_string());
    let fid_points: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.desk_fid.map(|f| (p.value, f)))
        .collect();
    if !fid_points.is_empty() {
        line_plot(
            &plots_dir.join("sweep_fid.svg"),
            &format!("desk-FID vs {}", param.name()),
            param.name(),
            "desk-FID",
            &fid_points,
        )?;
        written.push("plots/sweep_fid.svg".to_string());
    }

    let mut manifest = Manifest::new("sweep", cfg);
    manifest.guidance = resolve_guidance(cfg, models)?;
    manifest.schedule = models.schedule_spec;
    manifest.dataset_checksum = models.dataset_checksum.clone();
    manifest.models_dir = Some(models.dir.display().to_string());
    manifest.model_checksums = models.checksums.clone();
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    for rel in &written {
        manifest.record(&run_dir, rel)?;
    }
    manifest.save(&run_dir)?;
    println!("sweep run: {}", run_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_names_round_trip() {
        for p in [SweepParam::TStar, SweepParam::NCycles, SweepParam::SA, SweepParam::SN] {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert!("s_q".parse::<SweepParam>().is_err());
    }

    #[test]
    fn integer_params_reject_fractions() {
        let mut cfg = Config::default();
        assert!(apply(SweepParam::TStar, 1.5, &mut cfg).is_err());
        assert!(apply(SweepParam::NCycles, -1.0, &mut cfg).is_err());
        apply(SweepParam::TStar, 3.0, &mut cfg).unwrap();
        assert_eq!(cfg.guidance.adv_window, Some(3));
        apply(SweepParam::SA, 0.7, &mut cfg).unwrap();
        assert_eq!(cfg.guidance.adv_scale, 0.7);
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let points = vec![
            SweepPoint { value: 0.1, attacks: 4, asr: 0.25, desk_fid: None },
            SweepPoint { value: 1.0, attacks: 4, asr: 0.75, desk_fid: Some(2.5) },
        ];
        let csv = sweep_csv(SweepParam::SA, &points);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("s_a,0.1,4,0.25,na"));
        assert!(lines[2].ends_with("2.5"));
    }
}
