//! Subcommand implementations and the fit-artifact layout shared by the
//! downstream commands.

use crate::args::{
    CoverageArgs, FitArgs, InspectArgs, ResolvedFit, SelectArgs, SimulateArgs, UqArgs,
};
use crate::manifest::{sha256_file, ManifestBuilder};
use crate::CliError;
use dctnn_core::conformal::{
    self, conformity_scores, prob_intervals, roc_bands, smooth_probs, unit_grid, ConformalConfig,
};
use dctnn_core::decomp::{DecompModel, DecompModelFile, Structure};
use dctnn_core::io;
use dctnn_core::network::{DualChannelNet, NetConfig};
use dctnn_core::pipeline::{self, FitOptions, FittedModel, Metrics};
use dctnn_core::selector::{self, SelectorConfig};
use dctnn_core::simgen::{self, SimConfig, SimDataset, Split};
use dctnn_core::tensor::DenseTensor;
use dctnn_core::network::TrainHistory;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("json encoding: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Stable fingerprint of a dataset directory (hash of its meta table),
/// recorded by `fit` and compared by `select`.
fn dataset_fingerprint(dir: &Path) -> Result<String, CliError> {
    sha256_file(&dir.join("meta.csv"))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let config_snapshot = serde_json::to_value(&cfg).unwrap_or_default();
    let mut manifest = ManifestBuilder::new("simulate", config_snapshot, Some(cfg.seed));

    let ds = simgen::gen_dataset(&cfg)?;
    create_dir(&args.out)?;
    simgen::save_dataset(&ds, &args.out)?;
    for name in [
        "tensors.bin",
        "cores.bin",
        "udense.bin",
        "meta.csv",
        "config.json",
        "truth.json",
        "labeler.bin",
    ] {
        manifest.output(&args.out.join(name));
    }
    manifest.write(&args.out)?;
    let n1 = ds.samples.iter().filter(|s| s.y == 1).count();
    println!(
        "simulated {} samples ({} per class) into {} [{} candidates drawn]",
        ds.samples.len(),
        n1,
        args.out.display(),
        ds.candidates_drawn
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

/// Sidecar for a fit directory: everything needed to reload the model
/// and reproduce the run.
#[derive(Serialize, Deserialize)]
struct FitFile {
    options: FitOptions,
    net_config: NetConfig,
    dataset_fingerprint: String,
    history: TrainHistory,
}

#[derive(Serialize, Deserialize)]
struct MetricsFile {
    metrics: Metrics,
    epoch_loss: Vec<f64>,
}

pub fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let resolved = args.resolve()?;
    let ResolvedFit {
        mut options,
        hidden_override,
        link,
    } = resolved;
    if !args.dataset.is_dir() {
        return Err(CliError::Data(format!(
            "dataset directory {} does not exist",
            args.dataset.display()
        )));
    }
    let ds = simgen::load_dataset(&args.dataset)?;
    let config_snapshot = serde_json::to_value(&options).unwrap_or_default();
    let mut manifest =
        ManifestBuilder::new("fit", config_snapshot, Some(options.train.seed));
    manifest.input(&args.dataset);

    // The pipeline builds a sigmoid classifier by default; honor the
    // link and width overrides by fitting through the lower-level path
    // when they deviate.
    let fitted = if hidden_override.is_none() && link == dctnn_core::network::Link::Sigmoid {
        pipeline::fit_on_dataset(&ds, &options)?
    } else {
        fit_with_overrides(&ds, &mut options, hidden_override, link)?
    };
    let metrics = pipeline::evaluate(&fitted, &ds)?;

    create_dir(&args.out)?;
    let mean_path = args.out.join("mean.bin");
    io::save_tensor(&mean_path, fitted.decomp.train_mean())
        .map_err(|e| CliError::Data(format!("mean.bin: {e}")))?;
    let model_file = DecompModelFile::from_model(&fitted.decomp, "mean.bin");
    write_json(&args.out.join("model.json"), &model_file)?;

    let named = fitted.net.to_named_tensors();
    let refs: Vec<(&str, &DenseTensor)> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
    io::save_named_tensors(&args.out.join("net.bin"), &refs)
        .map_err(|e| CliError::Data(format!("net.bin: {e}")))?;
    write_json(&args.out.join("net.json"), &fitted.net.config)?;

    let fit_file = FitFile {
        options: fitted.options.clone(),
        net_config: fitted.net.config.clone(),
        dataset_fingerprint: dataset_fingerprint(&args.dataset)?,
        history: fitted.history.clone(),
    };
    write_json(&args.out.join("fit.json"), &fit_file)?;

    let mut residuals = BufWriter::new(
        File::create(args.out.join("residuals.csv"))
            .map_err(|e| CliError::Data(format!("residuals.csv: {e}")))?,
    );
    writeln!(residuals, "train_index,residual").map_err(|e| CliError::Data(e.to_string()))?;
    for (i, r) in fitted.history.residuals.iter().enumerate() {
        writeln!(residuals, "{},{:.10e}", ds.splits.train[i], r)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    residuals.flush().map_err(|e| CliError::Data(e.to_string()))?;

    write_json(
        &args.out.join("metrics.json"),
        &MetricsFile {
            metrics: metrics.clone(),
            epoch_loss: fitted.history.epoch_loss.clone(),
        },
    )?;

    for name in [
        "model.json",
        "mean.bin",
        "net.bin",
        "net.json",
        "fit.json",
        "residuals.csv",
        "metrics.json",
    ] {
        manifest.output(&args.out.join(name));
    }
    manifest.write(&args.out)?;
    println!(
        "fit {} structure on {}: train acc {:.3}, test acc {:.3}, test mse {:.4}",
        fitted.options.structure,
        args.dataset.display(),
        metrics.train_accuracy,
        metrics.test_accuracy,
        metrics.test_mse
    );
    Ok(())
}

/// Lower-level fit when the CLI overrides the hidden widths or link.
fn fit_with_overrides(
    ds: &SimDataset,
    options: &mut FitOptions,
    hidden_override: Option<(Vec<usize>, Vec<usize>)>,
    link: dctnn_core::network::Link,
) -> Result<FittedModel, CliError> {
    use dctnn_core::network;

    let train_xs_owned: Vec<DenseTensor> = ds.xs(Split::Train).into_iter().cloned().collect();
    let model = match options.structure {
        Structure::Tucker => DecompModel::Tucker(
            dctnn_core::decomp::fit_tucker(
                &train_xs_owned,
                &options.tucker_ranks,
                options.hooi_iters,
                options.decomp_tol,
            )?
            .model,
        ),
        Structure::Cp => DecompModel::Cp(
            dctnn_core::decomp::fit_cp(
                &train_xs_owned,
                options.cp_rank,
                options.als_iters,
                options.decomp_tol,
                options.train.seed,
            )?
            .model,
        ),
    };
    let cores = model.project_batch(&train_xs_owned)?;
    let mut net_config = NetConfig::classifier(
        model.core_shape(),
        options.ref_shape.clone(),
        train_xs_owned[0].shape().to_vec(),
        options.depth,
    );
    net_config.link = link;
    if let Some((core_hidden, ref_hidden)) = hidden_override {
        net_config.core_hidden = core_hidden;
        net_config.ref_hidden = ref_hidden;
    }
    let xs_refs = ds.xs(Split::Train);
    let ys = ds.ys(Split::Train);
    let (net, history) = network::train(
        net_config,
        &cores.cores,
        &xs_refs,
        &ys,
        model.train_mean(),
        &options.train,
    )?;
    Ok(FittedModel {
        decomp: model,
        net,
        history,
        options: options.clone(),
    })
}

/// Reload a fit directory into a working model.
fn load_fit(dir: &Path) -> Result<(FittedModel, String), CliError> {
    let fit_file: FitFile = read_json(&dir.join("fit.json"))?;
    let model_file: DecompModelFile = read_json(&dir.join("model.json"))?;
    let mean = io::load_tensor(&dir.join(&model_file.mean_ref))
        .map_err(|e| CliError::Data(format!("mean tensor: {e}")))?;
    let model = model_file.into_model(mean)?;
    let named = io::load_named_tensors(&dir.join("net.bin"))
        .map_err(|e| CliError::Data(format!("net.bin: {e}")))?;
    let net = DualChannelNet::from_named_tensors(fit_file.net_config.clone(), &named)?;
    Ok((
        FittedModel {
            decomp: model,
            net,
            history: fit_file.history,
            options: fit_file.options,
        },
        fit_file.dataset_fingerprint,
    ))
}

// ---------------------------------------------------------------------------
// uq
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AucFile {
    alpha: f64,
    k_tr: usize,
    k_ca: usize,
    omega: f64,
    grid: usize,
    auc_sens: conformal::AucInterval,
    auc_spec: conformal::AucInterval,
}

pub fn cmd_uq(args: &UqArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    if !args.fit.is_dir() {
        return Err(CliError::Data(format!(
            "fit directory {} does not exist",
            args.fit.display()
        )));
    }
    let (fitted, _) = load_fit(&args.fit)?;
    let ds = simgen::load_dataset(&args.dataset)?;
    let config_snapshot = serde_json::to_value(&cfg).unwrap_or_default();
    let mut manifest = ManifestBuilder::new("uq", config_snapshot, None);
    manifest.input(&args.fit);
    manifest.input(&args.dataset);

    let train = pipeline::latent_points(&fitted, &ds, Split::Train)?;
    let cal = pipeline::latent_points(&fitted, &ds, Split::Cal)?;
    let test = pipeline::latent_points(&fitted, &ds, Split::Test)?;

    let cal_probs: Vec<f64> = cal.iter().map(|p| p.prob).collect();
    let scores = if args.self_smoother {
        vec![0.0; cal.len()]
    } else {
        let smoothed = smooth_probs(&train, &cal, cfg.k_tr.min(train.len()), cfg.omega)?;
        conformity_scores(&smoothed, &cal_probs)
    };
    let intervals = prob_intervals(&test, &cal, &scores, &cfg)?;
    let band = roc_bands(&test, &intervals, &unit_grid(cfg.grid), cfg.alpha)?;
    let (auc_sens, auc_spec) = conformal::auc_intervals(&band);

    create_dir(&args.out)?;
    let band_path = args.out.join("band.csv");
    let mut w = BufWriter::new(
        File::create(&band_path).map_err(|e| CliError::Data(format!("band.csv: {e}")))?,
    );
    conformal::write_band_csv(&mut w, &band).map_err(|e| CliError::Data(e.to_string()))?;
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;

    write_json(
        &args.out.join("auc.json"),
        &AucFile {
            alpha: cfg.alpha,
            k_tr: cfg.k_tr,
            k_ca: cfg.k_ca,
            omega: cfg.omega,
            grid: cfg.grid,
            auc_sens,
            auc_spec,
        },
    )?;
    manifest.output(&band_path);
    manifest.output(&args.out.join("auc.json"));
    manifest.write(&args.out)?;
    println!(
        "uq bands over {} thresholds: AUC(sens) {:.3} [{:.3}, {:.3}], AUC(spec) {:.3} [{:.3}, {:.3}]",
        cfg.grid,
        auc_sens.point,
        auc_sens.lower,
        auc_sens.upper,
        auc_spec.point,
        auc_spec.lower,
        auc_spec.upper
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

pub fn cmd_select(args: &SelectArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let (fit_a, fp_a) = load_fit(&args.fit_a)?;
    let (fit_b, fp_b) = load_fit(&args.fit_b)?;
    if fp_a != fp_b {
        return Err(CliError::Data(
            "fits come from different datasets (fingerprints differ)".into(),
        ));
    }
    if fit_a.decomp.structure() != Structure::Tucker || fit_b.decomp.structure() != Structure::Cp {
        return Err(CliError::Config(
            "select expects --fit-a to be the tucker-structure fit and --fit-b the cp-structure fit"
                .into(),
        ));
    }
    let ds = simgen::load_dataset(&args.dataset)?;
    let actual_fp = dataset_fingerprint(&args.dataset)?;
    if actual_fp != fp_a {
        return Err(CliError::Data(
            "dataset directory does not match the fits' dataset fingerprint".into(),
        ));
    }
    let config_snapshot = serde_json::to_value(&cfg).unwrap_or_default();
    let mut manifest = ManifestBuilder::new("select", config_snapshot, None);
    manifest.input(&args.fit_a);
    manifest.input(&args.fit_b);
    manifest.input(&args.dataset);

    let (outcome, forward_band, reverse_band) =
        selector::select_structure(&fit_a, &fit_b, &ds, &cfg)?;

    create_dir(&args.out)?;
    for (name, band) in [
        ("dband_forward.csv", &forward_band),
        ("dband_reverse.csv", &reverse_band),
    ] {
        let path = args.out.join(name);
        let mut w = BufWriter::new(
            File::create(&path).map_err(|e| CliError::Data(format!("{name}: {e}")))?,
        );
        selector::write_diff_band_csv(&mut w, band).map_err(|e| CliError::Data(e.to_string()))?;
        w.flush().map_err(|e| CliError::Data(e.to_string()))?;
        manifest.output(&path);
    }
    write_json(&args.out.join("decision.json"), &outcome)?;
    manifest.output(&args.out.join("decision.json"));
    manifest.write(&args.out)?;
    println!(
        "selection: forward dAUC(sens) {:.3} [{:.3}, {:.3}] -> {:?}; final decision {:?}",
        outcome.forward.decision.auc_sens.point,
        outcome.forward.decision.auc_sens.lower,
        outcome.forward.decision.auc_sens.upper,
        selector::direction_verdict(&outcome.forward.decision),
        outcome.final_decision
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CoverageFile {
    sim: SimConfig,
    conformal: ConformalConfig,
    coverage: conformal::CoverageReport,
    selection: Option<selector::SelectionReport>,
}

pub fn cmd_coverage(args: &CoverageArgs) -> Result<(), CliError> {
    let file = crate::args::load_file_config(args.config.as_deref())?;
    let sim_section = file.simulate.unwrap_or_default();
    let regime_str = args
        .regime
        .clone()
        .or(sim_section.regime.clone())
        .unwrap_or_else(|| "tucker".into());
    let regime = match regime_str.to_ascii_lowercase().as_str() {
        "tucker" => Structure::Tucker,
        "cp" => Structure::Cp,
        other => {
            return Err(CliError::Config(format!(
                "unknown regime '{other}' (expected tucker or cp)"
            )))
        }
    };
    let seed = args.seed.or(sim_section.seed).unwrap_or(1);
    let mut sim = match regime {
        Structure::Tucker => SimConfig::tucker(seed),
        Structure::Cp => SimConfig::cp(seed),
    };
    crate::args::apply_sim_section(&mut sim, &sim_section);
    sim.seed = seed;
    sim.n = args.n.or(sim_section.n).unwrap_or(600);

    let mut conformal_cfg = ConformalConfig::default();
    if let Some(section) = file.conformal {
        if let Some(v) = section.k_tr {
            conformal_cfg.k_tr = v;
        }
        if let Some(v) = section.k_ca {
            conformal_cfg.k_ca = v;
        }
        if let Some(v) = section.omega {
            conformal_cfg.omega = v;
        }
        if let Some(v) = section.grid {
            conformal_cfg.grid = v;
        }
    }
    if let Some(a) = args.alpha {
        conformal_cfg.alpha = a;
    }
    crate::args::validate_alpha(conformal_cfg.alpha)?;

    let mut fit = FitOptions::new(regime);
    if let Some(section) = &file.fit {
        crate::args::apply_fit_section(&mut fit, section);
    }
    if let Some(e) = args.epochs {
        fit.train.epochs = e;
    }

    let config_snapshot = serde_json::json!({
        "sim": serde_json::to_value(&sim).unwrap_or_default(),
        "conformal": serde_json::to_value(&conformal_cfg).unwrap_or_default(),
        "fit": serde_json::to_value(&fit).unwrap_or_default(),
        "reps": args.reps,
    });
    let mut manifest = ManifestBuilder::new("coverage", config_snapshot, Some(seed));

    let coverage = conformal::coverage_experiment(&sim, &fit, &conformal_cfg, args.reps)?;
    let selection = if args.skip_selector {
        None
    } else {
        let mk_opts = |structure: Structure| {
            let mut o = FitOptions::new(structure);
            if let Some(section) = &file.fit {
                crate::args::apply_fit_section(&mut o, section);
            }
            o.train.epochs = fit.train.epochs;
            o
        };
        let sel_cfg = SelectorConfig {
            alpha: conformal_cfg.alpha,
            ..SelectorConfig::default()
        };
        Some(selector::selection_experiment(
            &sim,
            &mk_opts(Structure::Tucker),
            &mk_opts(Structure::Cp),
            &sel_cfg,
            args.reps,
        )?)
    };

    create_dir(&args.out)?;
    write_json(
        &args.out.join("coverage.json"),
        &CoverageFile {
            sim,
            conformal: conformal_cfg,
            coverage: coverage.clone(),
            selection,
        },
    )?;
    manifest.output(&args.out.join("coverage.json"));
    manifest.write(&args.out)?;
    println!(
        "coverage over {} reps: sens {:.2}, spec {:.2}, auc(sens) {:.2}, auc(spec) {:.2} (target {:.2})",
        coverage.reps,
        coverage.sens_coverage,
        coverage.spec_coverage,
        coverage.auc_sens_coverage,
        coverage.auc_spec_coverage,
        1.0 - 2.0 * coverage.alpha
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

pub fn cmd_inspect(args: &InspectArgs) -> Result<(), CliError> {
    let dir = &args.path;
    if !dir.is_dir() {
        return Err(CliError::Data(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut found = false;
    for name in [
        "manifest.json",
        "config.json",
        "metrics.json",
        "auc.json",
        "decision.json",
        "coverage.json",
    ] {
        let path = dir.join(name);
        if path.is_file() {
            let value: serde_json::Value = read_json(&path)?;
            println!("--- {name} ---");
            println!(
                "{}",
                serde_json::to_string_pretty(&value).unwrap_or_default()
            );
            found = true;
        }
    }
    if !found {
        return Err(CliError::Data(format!(
            "{} holds no recognized artifacts",
            dir.display()
        )));
    }
    Ok(())
}
