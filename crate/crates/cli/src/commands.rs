use std::fs;
use std::path::{Path, PathBuf};

use gsc_core::analysis::{emit_analysis_csv, analyze_group};
use gsc_core::bench::{load_image_dir, run_bench};
use gsc_core::io::{read_image, read_mask, read_measurements, write_image, write_mask, write_measurements};
use gsc_core::operators::{apply_mask, cs_measure, psnr, random_mask};
use gsc_core::presets::{find_preset, preset_names, Preset};
use gsc_core::restoration::{initial_estimate, restore, LambdaMode, Restoration, Spread};
use gsc_core::{BlockCsOp, Error, GrayImage, Norm, Observation, RestoreConfig, StopRule};
use serde_json::{json, Value};

use crate::args::{AnalyzeArgs, BenchArgs, Common, Degrade, Global, Restore, Stop};

/// Command failure with its exit code class.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Divergence(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Divergence(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => Failure::Divergence(e.to_string()),
            Error::InvalidParameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn preset(name: &str) -> Result<&'static Preset, Failure> {
    find_preset(name).ok_or_else(|| {
        Failure::Usage(format!(
            "unknown preset {name:?}; available presets: {}",
            preset_names().join(", ")
        ))
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("out")
        .to_string()
}

fn ensure_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    artifact.with_file_name(name)
}

/// Writes `<artifact>.json` with the command line, seed and config.
fn write_provenance(artifact: &Path, global: &Global, extra: Value) -> Outcome {
    let doc = json!({
        "tool": "gsc",
        "version": gsc_core::VERSION,
        "argv": std::env::args().collect::<Vec<_>>(),
        "seed": global.seed,
        "threads": global.threads,
        "artifact": artifact.display().to_string(),
        "details": extra,
    });
    let path = sidecar_path(artifact);
    let text = serde_json::to_string_pretty(&doc).expect("json");
    fs::write(&path, text + "\n").map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn config_json(cfg: &RestoreConfig) -> Value {
    let (lambda, spread) = match cfg.lambda {
        LambdaMode::Fixed(l) => (json!(l), Value::Null),
        LambdaMode::Adaptive(s) => (
            json!("adaptive"),
            json!(match s {
                Spread::CodeVariance => "code-variance",
                Spread::SignalStd => "signal-std",
            }),
        ),
    };
    json!({
        "patch_size": cfg.grouping.patch_size,
        "match_count": cfg.grouping.match_count,
        "window": cfg.grouping.window,
        "stride": cfg.grouping.stride,
        "p": cfg.spec.p,
        "weighted": cfg.spec.weighted,
        "eps_weight": cfg.spec.eps_weight,
        "gst_iters": cfg.spec.gst_iters,
        "rho": cfg.rho,
        "lambda": lambda,
        "spread": spread,
        "sigma": cfg.sigma,
        "eps_var": cfg.eps_var,
        "eta": cfg.eta,
        "cs_inner_steps": cfg.cs_inner_steps,
        "max_iters": cfg.max_iters,
        "stop": format!("{:?}", cfg.stop),
    })
}

pub fn degrade(cmd: &Degrade, global: &Global) -> Outcome {
    ensure_dir(&global.out_dir)?;
    match cmd {
        Degrade::Mask { input, missing } => {
            let clean = read_image(input)?;
            let mask = random_mask(clean.height(), clean.width(), *missing, global.seed)?;
            let y = apply_mask(&clean, &mask)?;
            let base = stem(input);
            let y_path = global.out_dir.join(format!("{base}_y.png"));
            let m_path = global.out_dir.join(format!("{base}_mask.png"));
            write_image(&y, &y_path)?;
            write_mask(&mask, &m_path)?;
            let details = json!({ "input": input, "missing": missing, "mask": m_path });
            write_provenance(&y_path, global, details.clone())?;
            write_provenance(&m_path, global, details)?;
            println!("{}\n{}", y_path.display(), m_path.display());
        }
        Degrade::Cs { input, ratio } => {
            let clean = read_image(input)?;
            let op = BlockCsOp::new(*ratio, global.seed)?;
            let meas = cs_measure(&clean, &op);
            let path = global.out_dir.join(format!("{}.gscm", stem(input)));
            write_measurements(&meas, &path)?;
            let details = json!({
                "input": input,
                "ratio": ratio,
                "block": op.block,
                "rows": op.rows,
                "blocks": meas.block_count(),
            });
            write_provenance(&path, global, details)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn restore_config(p: &Preset, norm: Norm, global: &Global, has_oracle: bool) -> Result<RestoreConfig, Failure> {
    let mut cfg = p.config(norm);
    if let Some(n) = global.max_iters {
        cfg.max_iters = n;
    }
    match global.stop {
        Some(Stop::Oracle) if !has_oracle => {
            return Err(Failure::Usage("--stop oracle needs --oracle <clean image>".into()));
        }
        Some(Stop::Oracle) => cfg.stop = StopRule::Oracle,
        Some(Stop::Relchange) | None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish_restore(out: Restoration, source: &Path, common: &Common, cfg: &RestoreConfig, oracle: Option<&GrayImage>, global: &Global) -> Outcome {
    let out_path = common.out.clone().unwrap_or_else(|| {
        global
            .out_dir
            .join(format!("{}_{}_{}.png", stem(source), common.preset, common.norm))
    });
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_image(&out.image, &out_path)?;
    let trace_path = out_path.with_extension("trace.csv");
    let mut buf = Vec::new();
    out.trace.write_csv(&mut buf).expect("in-memory write");
    fs::write(&trace_path, buf).map_err(|e| Failure::Data(format!("{}: {e}", trace_path.display())))?;
    let final_psnr = oracle.map(|t| psnr(&out.image.clamped(), t)).transpose()?;
    let details = json!({
        "input": source,
        "preset": common.preset,
        "norm": common.norm.name(),
        "oracle": common.oracle,
        "config": config_json(cfg),
        "iterations": out.trace.rows.len(),
        "best_iter": out.best_iter,
        "stop_reason": format!("{:?}", out.stop),
        "psnr": final_psnr,
        "trace": trace_path,
    });
    write_provenance(&out_path, global, details)?;
    match final_psnr {
        Some(p) => println!("{} psnr={p:.4}", out_path.display()),
        None => println!("{}", out_path.display()),
    }
    Ok(())
}

fn load_oracle(common: &Common, dims: (usize, usize)) -> Result<Option<GrayImage>, Failure> {
    let Some(path) = &common.oracle else {
        return Ok(None);
    };
    let img = read_image(path)?;
    if img.dims() != dims {
        return Err(Failure::Data(format!(
            "oracle {} is {}x{}, observation is {}x{}",
            path.display(),
            img.height(),
            img.width(),
            dims.0,
            dims.1
        )));
    }
    Ok(Some(img))
}

pub fn restore_cmd(cmd: &Restore, global: &Global) -> Outcome {
    match cmd {
        Restore::Inpaint { input, mask, common } => {
            let p = preset(&common.preset)?;
            if !p.scenario.is_inpaint() {
                return Err(Failure::Usage(format!(
                    "preset {} is for CS recovery, not inpainting",
                    p.name
                )));
            }
            let y = read_image(input)?;
            let mask = read_mask(mask)?;
            let oracle = load_oracle(common, y.dims())?;
            let cfg = restore_config(p, common.norm, global, oracle.is_some())?;
            let out = restore(Observation::Mask { y: &y, mask: &mask }, &cfg, oracle.as_ref())?;
            finish_restore(out, input, common, &cfg, oracle.as_ref(), global)
        }
        Restore::Cs { meas, common } => {
            let p = preset(&common.preset)?;
            if p.scenario.is_inpaint() {
                return Err(Failure::Usage(format!(
                    "preset {} is for inpainting, not CS recovery",
                    p.name
                )));
            }
            let m = read_measurements(meas)?;
            let op = BlockCsOp::from_rows(m.block, m.rows, m.seed)?;
            let oracle = load_oracle(common, m.dims())?;
            let cfg = restore_config(p, common.norm, global, oracle.is_some())?;
            let out = restore(Observation::Cs { meas: &m, op: &op }, &cfg, oracle.as_ref())?;
            finish_restore(out, meas, common, &cfg, oracle.as_ref(), global)
        }
    }
}

pub fn analyze(args: &AnalyzeArgs, global: &Global) -> Outcome {
    let p = preset(&args.preset)?;
    let clean = read_image(&args.clean)?;
    let mut degraded = read_image(&args.degraded)?;
    if let Some(m) = &args.mask {
        let mask = read_mask(m)?;
        degraded = initial_estimate(&Observation::Mask { y: &degraded, mask: &mask })?;
    }
    let cfg = p.analysis();
    let ps = cfg.grouping.patch_size;
    let coords = if args.at.is_empty() {
        vec![(
            (degraded.height() / 2).saturating_sub(ps / 2),
            (degraded.width() / 2).saturating_sub(ps / 2),
        )]
    } else {
        args.at.clone()
    };
    ensure_dir(&global.out_dir)?;
    for &(r, c) in &coords {
        let table = analyze_group(&clean, &degraded, (r, c), &cfg).map_err(|e| match e {
            Error::OutOfBounds { row, col } => Failure::Usage(format!(
                "reference ({row},{col}) is out of bounds: a {ps}x{ps} patch there does not fit in {}x{}",
                degraded.height(),
                degraded.width()
            )),
            other => other.into(),
        })?;
        let path = global.out_dir.join(format!("analysis_{r}_{c}.csv"));
        emit_analysis_csv(&table, &path)?;
        write_provenance(
            &path,
            global,
            json!({
                "clean": args.clean,
                "degraded": args.degraded,
                "mask": args.mask,
                "preset": p.name,
                "reference": [r, c],
            }),
        )?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn bench(args: &BenchArgs, global: &Global) -> Outcome {
    let p = preset(&args.preset)?;
    let images = load_image_dir(&args.images)?;
    let max_iters = global.max_iters.unwrap_or_else(|| RestoreConfig::default().max_iters);
    let report = run_bench(&images, p, &args.norms, global.seed, max_iters)?;
    ensure_dir(&global.out_dir)?;
    let md = global.out_dir.join(format!("bench_{}.md", p.name));
    let csv = global.out_dir.join(format!("bench_{}.csv", p.name));
    let write = |path: &Path, text: String| {
        fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    };
    write(&md, report.to_markdown())?;
    write(&csv, report.to_csv())?;
    let details = json!({
        "images": args.images,
        "preset": p.name,
        "norms": args.norms.iter().map(|n| n.name()).collect::<Vec<_>>(),
        "max_iters": max_iters,
        "stop": "oracle",
    });
    write_provenance(&md, global, details.clone())?;
    write_provenance(&csv, global, details)?;
    print!("{}", report.to_markdown());
    Ok(())
}
