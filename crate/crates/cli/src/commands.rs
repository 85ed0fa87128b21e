use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use cmic_core::attacks::{accuracy, curve_csv, robust_accuracy_curve, AttackConfig};
use cmic_core::data::{
    gen_blobs, load_dataset_csv, load_idx, load_probmatrix_csv, write_dataset_csv, write_idx,
    write_probmatrix_csv, BlobSpec, Dataset, FeatureScaler,
};
use cmic_core::reference::table1_report;
use cmic_core::simplex::{project_logits, project_probs};
use cmic_core::trainer::{EpochRecord, TrainConfig, Trainer};
use cmic_core::{Checkpoint, LabelVector, MetricsReport, ProbMatrix, Tensor};

use crate::manifest::RunManifest;
use crate::{Command, DataArgs, Fixture};

/// A problem with how the command was invoked.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// 1 for usage and configuration errors, 3 for numerical failures, 2 for
/// everything else (bad data, formats, I/O).
pub fn exit_code(e: &anyhow::Error) -> u8 {
    use cmic_core::Error as E;
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::Config(_) => 1,
                E::Numerical(_) | E::DegenerateSeparation | E::DegenerateInput(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Metrics {
            probs,
            json,
            csv,
            out,
        } => metrics(&probs, json, csv, out.as_deref()),
        Command::Train {
            config,
            data,
            eval,
            scale,
            out,
        } => train(
            config.as_deref(),
            &data,
            eval.as_deref(),
            scale.into(),
            &out,
        ),
        Command::Attack {
            checkpoint,
            data,
            scaler,
            attack: kind,
            budgets,
            iterations,
            step_size,
            seed,
            no_random_start,
            out,
        } => {
            let template = AttackConfig {
                budget: 0.0,
                iterations,
                step_size,
                random_start: !no_random_start,
                seed,
            };
            attack(
                &checkpoint,
                &data,
                scaler.as_deref(),
                kind.into(),
                &budgets,
                &template,
                out.as_deref(),
            )
        }
        Command::Simplex {
            probs,
            checkpoint,
            data,
            scaler,
            classes,
            out,
        } => {
            let classes: [usize; 3] = classes.try_into().map_err(|c: Vec<usize>| {
                Usage(format!(
                    "--classes needs exactly 3 indices, got {}",
                    c.len()
                ))
            })?;
            simplex(
                probs.as_deref(),
                checkpoint.as_deref(),
                data.as_deref(),
                scaler.as_deref(),
                classes,
                out.as_deref(),
            )
        }
        Command::Table1 { json, .. } => table1(json),
        Command::Gendata {
            blobs: _,
            fixture,
            classes,
            per_class,
            dim,
            spread,
            radius,
            seed,
            out,
        } => match fixture {
            Some(f) => gendata_fixture(f, &out),
            None => gendata_blobs(
                &BlobSpec {
                    classes,
                    per_class,
                    dim,
                    spread,
                    radius,
                    seed,
                },
                &out,
            ),
        },
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn fmt_ncmi(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |v| v.to_string())
}

fn metrics(probs: &Path, json: bool, csv: bool, out: Option<&Path>) -> Result<()> {
    let (p, y) = load_probmatrix_csv(probs)?;
    let r = MetricsReport::compute(&p, &y)?;
    let text = if json {
        serde_json::to_string_pretty(&r)? + "\n"
    } else if csv {
        format!(
            "n,c,cmi,gamma,ncmi,gamma_prime,gamma_double_prime,eps_expected,eps_top1,ce_bound\n{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.c,
            r.cmi,
            r.gamma,
            fmt_ncmi(r.ncmi),
            r.gamma_prime,
            r.gamma_double_prime,
            r.eps_expected,
            r.eps_top1,
            r.ce_bound
        )
    } else {
        let ncmi = r
            .ncmi
            .map_or_else(|| "undefined (gamma = 0)".into(), |v| format!("{v:.6}"));
        format!(
            "samples            {}\nclasses            {}\ncmi                {:.6}\ngamma              {:.6}\n\
             ncmi               {ncmi}\ngamma_prime        {:.6}\ngamma_double_prime {:.6}\n\
             eps_expected       {:.6}\neps_top1           {:.6}\nce_bound           {:.6}\n",
            r.n, r.c, r.cmi, r.gamma, r.gamma_prime, r.gamma_double_prime, r.eps_expected, r.eps_top1, r.ce_bound
        )
    };
    emit(&text, out)
}

fn load_data(args: &DataArgs) -> Result<(Dataset, Vec<PathBuf>)> {
    let (data, paths) = match (&args.data, &args.idx) {
        (Some(csv), _) => (load_dataset_csv(csv, args.num_classes)?, vec![csv.clone()]),
        (None, Some(idx)) => {
            let data = load_idx(&idx[0], &idx[1])?;
            let data = match args.num_classes {
                Some(c) => Dataset::new(data.features, LabelVector::new(data.labels.to_vec(), c)?)?,
                None => data,
            };
            (data, idx.clone())
        }
        (None, None) => bail!(Usage("one of --data or --idx is required".into())),
    };
    Ok((data, paths))
}

fn load_scaler(path: &Path) -> Result<FeatureScaler> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        cmic_core::Error::Format {
            location: format!("{}:{}", path.display(), e.line()),
            message: e.to_string(),
        }
        .into()
    })
}

fn train(
    config_path: Option<&Path>,
    data: &DataArgs,
    eval: Option<&Path>,
    scaling: cmic_core::data::Scaling,
    out: &Path,
) -> Result<()> {
    let config = match config_path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let (train_set, train_paths) = load_data(data)?;
    let eval_set = match eval {
        Some(p) => load_dataset_csv(p, Some(train_set.classes()))?,
        None => train_set.clone(),
    };
    let scaler = FeatureScaler::fit(&train_set, scaling);
    let (train_set, eval_set) = match &scaler {
        Some(s) => (s.apply(&train_set)?, s.apply(&eval_set)?),
        None => (train_set, eval_set),
    };

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = RunManifest::new(
        "train",
        Some(config.seed),
        json!({ "train": config, "scaling": scaling }),
    );
    for p in config_path
        .into_iter()
        .map(Path::to_path_buf)
        .chain(train_paths)
        .chain(eval.map(Path::to_path_buf))
    {
        manifest.add_input(&p)?;
    }

    let curve_path = out.join("curve.csv");
    let mut curve = BufWriter::new(
        File::create(&curve_path).with_context(|| format!("creating {}", curve_path.display()))?,
    );
    writeln!(curve, "{}", EpochRecord::CSV_HEADER)?;
    curve.flush()?;

    let mut trainer = Trainer::new(config.clone(), train_set.dim(), train_set.classes())?;
    let log = trainer.run(&train_set, &eval_set, |record| {
        writeln!(curve, "{}", record.csv_line())
            .and_then(|_| curve.flush())
            .map_err(|e| cmic_core::Error::Io {
                path: curve_path.display().to_string(),
                source: e,
            })
    })?;
    drop(curve);

    let write = |name: &str, text: String| -> Result<()> {
        let path = out.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("curve.json", log.to_json() + "\n")?;
    write("config.toml", config.to_toml())?;
    trainer.checkpoint().save(&out.join("checkpoint.json"))?;
    manifest.outputs = vec![
        "curve.csv".into(),
        "curve.json".into(),
        "config.toml".into(),
        "checkpoint.json".into(),
    ];
    if let Some(s) = &scaler {
        write("scaler.json", serde_json::to_string_pretty(s)? + "\n")?;
        manifest.outputs.push("scaler.json".into());
    }
    manifest.outputs.push("manifest.json".into());
    manifest.write(out)?;

    if let Some(last) = log.last() {
        println!(
            "epoch {}: train_loss {:.6} cmi {:.6} gamma {:.6} ncmi {} top1_error {:.4}",
            last.epoch,
            last.train_loss,
            last.cmi,
            last.gamma,
            last.ncmi
                .map_or_else(|| "undefined".into(), |v| format!("{v:.6}")),
            last.eps_top1
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Loads a checkpoint and a dataset and checks that they fit together.
fn model_and_data(
    checkpoint: &Path,
    data: Dataset,
    scaler: Option<&Path>,
) -> Result<(Checkpoint, Dataset)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = match scaler {
        Some(p) => load_scaler(p)?.apply(&data)?,
        None => data,
    };
    let format = |message: String| cmic_core::Error::Format {
        location: checkpoint.display().to_string(),
        message,
    };
    if data.dim() != ckpt.model.input_dim() {
        bail!(format(format!(
            "model expects {} features, data has {}",
            ckpt.model.input_dim(),
            data.dim()
        )));
    }
    if data.classes() > ckpt.model.output_dim() {
        bail!(format(format!(
            "model has {} outputs, data has {} classes",
            ckpt.model.output_dim(),
            data.classes()
        )));
    }
    let labels = LabelVector::new(data.labels.to_vec(), ckpt.model.output_dim())?;
    let data = Dataset::new(data.features, labels)?;
    Ok((ckpt, data))
}

fn attack(
    checkpoint: &Path,
    data: &DataArgs,
    scaler: Option<&Path>,
    kind: cmic_core::attacks::AttackKind,
    budgets: &[f64],
    template: &AttackConfig,
    out: Option<&Path>,
) -> Result<()> {
    if budgets.is_empty() {
        bail!(Usage("--budgets is empty".into()));
    }
    if budgets.windows(2).any(|w| w[1] < w[0]) || budgets.iter().any(|b| b.is_nan() || *b < 0.0) {
        bail!(Usage("--budgets must be non-negative and ascending".into()));
    }
    AttackConfig {
        budget: budgets[0],
        ..*template
    }
    .validate()
    .map_err(|e| Usage(e.to_string()))?;
    let (data, _) = load_data(data)?;
    let (ckpt, data) = model_and_data(checkpoint, data, scaler)?;
    let curve = robust_accuracy_curve(&ckpt.model, &data, budgets, kind, template)?;
    let clean = accuracy(&ckpt.model, &data.features, data.labels.as_slice())?;
    println!("clean accuracy: {clean}");
    emit(&curve_csv(&curve), out)
}

fn simplex(
    probs: Option<&Path>,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    scaler: Option<&Path>,
    classes: [usize; 3],
    out: Option<&Path>,
) -> Result<()> {
    let projection = match (probs, checkpoint, data) {
        (Some(p), _, _) => {
            let (p, y) = load_probmatrix_csv(p)?;
            project_probs(&p, &y, classes)
        }
        (None, Some(ckpt), Some(data)) => {
            let (ckpt, data) = model_and_data(ckpt, load_dataset_csv(data, None)?, scaler)?;
            let logits = ckpt.model.logits(&data.features)?;
            project_logits(logits.data(), logits.cols(), &data.labels, classes)
        }
        _ => bail!(Usage(
            "give a probability CSV, or --checkpoint with --data".into()
        )),
    }
    .map_err(|e| match e {
        cmic_core::Error::InvalidInput(m) => anyhow::Error::new(Usage(m)),
        other => other.into(),
    })?;
    if projection.skipped > 0 {
        eprintln!(
            "warning: skipped {} rows with no mass on classes {classes:?}",
            projection.skipped
        );
    }
    emit(&projection.to_csv(), out)
}

fn table1(json: bool) -> Result<()> {
    let r = table1_report()?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    let mut text = format!(
        "{:<20} {:>9} {:>11} {:>9} {:>6}\n",
        "model", "published", "recomputed", "diff", "error"
    );
    for row in &r.rows {
        writeln!(
            text,
            "{:<20} {:>9.3} {:>11.5} {:>9.5} {:>6.3}",
            row.model, row.published_ncmi, row.recomputed_ncmi, row.discrepancy, row.error
        )?;
    }
    writeln!(
        text,
        "max discrepancy    {:.5} ({})",
        r.max_discrepancy, r.worst_model
    )?;
    writeln!(
        text,
        "rows within 0.0005 {}/{}",
        r.consistent_rows,
        r.rows.len()
    )?;
    writeln!(
        text,
        "pearson(ncmi, err) {:.4} published, {:.4} recomputed",
        r.pearson_published, r.pearson_recomputed
    )?;
    print!("{text}");
    Ok(())
}

fn gendata_blobs(params: &BlobSpec, out: &Path) -> Result<()> {
    let data = gen_blobs(params)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_dataset_csv(&out.join("blobs.csv"), &data)?;
    let mut manifest = RunManifest::new("gendata", Some(params.seed), json!({ "blobs": params }));
    manifest.outputs = vec!["blobs.csv".into(), "manifest.json".into()];
    manifest.write(out)?;
    println!(
        "wrote {} samples to {}",
        data.len(),
        out.join("blobs.csv").display()
    );
    Ok(())
}

fn gendata_fixture(fixture: Fixture, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (name, outputs) = match fixture {
        Fixture::Ln2Cmi => {
            // Two samples of one class at opposite vertices: CMI = ln 2.
            let p = ProbMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]])?;
            let y = LabelVector::new(vec![0, 0], 2)?;
            write_probmatrix_csv(&out.join("ln2-cmi.csv"), &p, &y)?;
            ("ln2-cmi", vec!["ln2-cmi.csv"])
        }
        Fixture::IdxMini => {
            // One 1x1 image with pixel 255 and label 7.
            let data = Dataset::new(Tensor::scalar(1.0), LabelVector::new(vec![7], 8)?)?;
            write_idx(
                &data,
                1,
                1,
                &out.join("images.idx"),
                &out.join("labels.idx"),
            )?;
            ("idx-mini", vec!["images.idx", "labels.idx"])
        }
    };
    let mut manifest = RunManifest::new("gendata", None, json!({ "fixture": name }));
    manifest.outputs = outputs
        .iter()
        .map(|s| s.to_string())
        .chain(["manifest.json".into()])
        .collect();
    manifest.write(out)?;
    println!("wrote {name} fixture to {}", out.display());
    Ok(())
}
