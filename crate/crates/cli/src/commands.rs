use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use exsplinet::dataio::{self, load_csv, load_idx, normalize_minmax, random_split, stratified_split, CsvSchema};
use exsplinet::pinn::{solution_samples, RiskParts};
use exsplinet::training::train_with;
use exsplinet::{
    extract_rules, load_checkpoint, pinn_train, predict_explain, sample_collocation, save_checkpoint,
    CheckpointMeta, Dataset, DifferentialProblem, ExSpliNet, Loss, Metric, ModelConfig, Spline1D,
    Targets,
};

use crate::config::{data_path, read_config, DataSection, PinnExperiment, SplitMethod, TrainExperiment};
use crate::error::{write_file, CliError};

/// Options shared by every command.
pub struct Common {
    pub out: PathBuf,
    pub no_timestamp: bool,
}

impl Common {
    fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|source| CliError::Write {
            path: self.out.clone(),
            source,
        })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn header(&self, command: &str) -> String {
        let mut s = format!("exsplinet {command} report\nversion: {}\n", env!("CARGO_PKG_VERSION"));
        if !self.no_timestamp {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let _ = writeln!(s, "started: {secs} (unix seconds)");
        }
        s
    }

    fn wall(&self, s: &mut String, seconds: f64) {
        if !self.no_timestamp {
            let _ = writeln!(s, "wall seconds: {seconds:.2}");
        }
    }
}

fn describe(cfg: &ModelConfig) -> String {
    format!(
        "D={} O={} T={} L={} N={:?} M={:?} p={:?} q={:?}",
        cfg.inputs,
        cfg.outputs,
        cfg.trees,
        cfg.levels(),
        cfg.inner_counts,
        cfg.outer_counts,
        cfg.inner_degrees,
        cfg.outer_degrees
    )
}

fn config_error(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn load_data(config: &Path, data: &DataSection, seed: u64) -> Result<(Dataset, Option<Dataset>), CliError> {
    match data {
        DataSection::Csv {
            path,
            test,
            split,
            normalize,
            schema,
        } => {
            let full = load_csv(data_path(config, path), schema)?;
            let test_raw = match test {
                Some(p) => Some(load_csv(data_path(config, p), schema)?),
                None => None,
            };
            if split.is_some() && test_raw.is_some() {
                return Err(config_error(config, "data.split and data.test are mutually exclusive"));
            }
            let (full, record) = if *normalize {
                let (ds, record) = normalize_minmax(&full)?;
                (ds, Some(record))
            } else {
                (full, None)
            };
            let test_set = match (test_raw, &record) {
                (Some(t), Some(r)) => {
                    let (t, clamped) = r.transform(&t)?;
                    if clamped > 0 {
                        eprintln!("note: {clamped} test coordinates fell outside the training range and were clamped");
                    }
                    Some(t)
                }
                (t, _) => t,
            };
            match split {
                Some(s) => {
                    let (tr, te) = match s.method {
                        SplitMethod::Stratified => stratified_split(&full, s.test_fraction, seed)?,
                        SplitMethod::Random => random_split(&full, s.test_fraction, seed)?,
                    };
                    Ok((tr, Some(te)))
                }
                None => Ok((full, test_set)),
            }
        }
        DataSection::Synthetic {
            name,
            train_samples,
            test_samples,
        } => {
            let (tr, te) = dataio::synthetic(name, *train_samples, *test_samples, seed)?;
            Ok((tr, Some(te)))
        }
        DataSection::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            let tr = load_idx(
                data_path(config, train_images),
                data_path(config, train_labels),
                *train_limit,
            )?;
            let te = load_idx(
                data_path(config, test_images),
                data_path(config, test_labels),
                *test_limit,
            )?;
            Ok((tr, Some(te)))
        }
    }
}

pub fn train(config: &Path, seed: Option<u64>, common: &Common) -> Result<(), CliError> {
    let exp: TrainExperiment = read_config(config)?;
    let seed = seed.unwrap_or(exp.seed);
    let (train_set, test_set) = load_data(config, &exp.data, seed)?;
    let cfg = exp
        .model
        .resolve(train_set.dim(), train_set.targets().arity())
        .map_err(|m| config_error(config, m))?;
    let tc = exp.train.resolve(seed, Loss::for_targets(train_set.targets()));
    let model = ExSpliNet::init_random(cfg, seed)?;
    tc.validate(train_set.len())?;
    common.prepare()?;

    let mut metrics = String::from(match &test_set {
        Some(t) => format!("epoch,train_risk,test_{}\n", Metric::for_targets(t.targets()).name()),
        None => "epoch,train_risk\n".to_string(),
    });
    let (model, report) = train_with(model, &train_set, test_set.as_ref(), &tc, |e| {
        let _ = write!(metrics, "{},{:e}", e.epoch, e.train_risk);
        if let Some(v) = e.test_metric {
            let _ = write!(metrics, ",{v:e}");
        }
        metrics.push('\n');
    })?;

    let meta = CheckpointMeta {
        feature_names: train_set.feature_names.clone(),
        class_names: train_set.class_names.clone(),
        normalization: train_set.normalization.clone(),
    };
    save_checkpoint(common.file("checkpoint.esn"), &model, &meta)?;
    write_file(common.file("metrics.csv"), metrics)?;

    let mut s = common.header("train");
    let _ = writeln!(s, "config: {}", config.display());
    let _ = writeln!(s, "seed: {seed}");
    let _ = writeln!(s, "params: {}", report.param_count);
    let _ = writeln!(s, "model: {}", describe(model.config()));
    let _ = writeln!(
        s,
        "data: {} training samples, {} test samples",
        train_set.len(),
        test_set.as_ref().map_or(0, |t| t.len())
    );
    let _ = writeln!(
        s,
        "training: {} epochs, batch size {}, learning rate {}, loss {}, {} Adam steps",
        tc.epochs,
        tc.batch_size,
        tc.learning_rate,
        loss_name(tc.loss),
        report.steps
    );
    let best = report.epoch_risks[report.best_epoch - 1];
    let _ = writeln!(s, "best epoch: {} (train risk {best:.6e})", report.best_epoch);
    for (m, v) in &report.final_metrics {
        match m {
            Metric::Accuracy => writeln!(s, "test accuracy: {v:.4}"),
            _ => writeln!(s, "test {}: {v:.6e}", m.name()),
        }
        .ok();
    }
    common.wall(&mut s, report.wall_seconds);
    write_file(common.file("report.txt"), &s)?;
    print!("{s}");
    Ok(())
}

fn loss_name(loss: Loss) -> &'static str {
    match loss {
        Loss::Squared => "squared",
        Loss::OneHotSquared => "one-hot-squared",
    }
}

pub fn pinn(config: &Path, seed: Option<u64>, common: &Common) -> Result<(), CliError> {
    let exp: PinnExperiment = read_config(config)?;
    let seed = seed.unwrap_or(exp.seed);
    let problem = DifferentialProblem::builtin(&exp.problem.name, exp.problem.egg)?;
    let cfg = exp
        .model
        .resolve(problem.dim, 1)
        .map_err(|m| config_error(config, m))?;
    let degree = cfg.min_inner_degree().min(cfg.min_outer_degree());
    if degree < 3 {
        return Err(config_error(
            config,
            format!(
                "the differential risk needs third derivatives of the inner features and second \
                 derivatives of the outer splines, so every degree must be at least 3 (lowest here: {degree})"
            ),
        ));
    }
    let model = ExSpliNet::init_random(cfg, seed)?;
    let colloc = sample_collocation(
        &problem,
        exp.problem.interior_points,
        exp.problem.boundary_points,
        seed,
    )?;
    common.prepare()?;

    let mut metrics = String::from("epoch,risk,interior,boundary\n");
    let (model, report) = pinn_train(model, &problem, &colloc, &exp.pinn, |epoch, parts: &RiskParts| {
        let _ = writeln!(
            metrics,
            "{epoch},{:e},{:e},{:e}",
            parts.total, parts.interior, parts.boundary
        );
    })?;
    save_checkpoint(common.file("checkpoint.esn"), &model, &CheckpointMeta::default())?;
    write_file(common.file("metrics.csv"), metrics)?;

    let samples = solution_samples(&model, &problem)?;
    let mut csv = String::from(if problem.dim == 1 {
        "x,u_hat,u_exact,error\n"
    } else {
        "x,y,u_hat,u_exact,error\n"
    });
    for smp in &samples {
        for v in &smp.x {
            let _ = write!(csv, "{v:e},");
        }
        match smp.exact {
            Some(e) => {
                let _ = writeln!(csv, "{:e},{e:e},{:e}", smp.predicted, smp.predicted - e);
            }
            None => {
                let _ = writeln!(csv, "{:e},,", smp.predicted);
            }
        }
    }
    write_file(common.file("solution.csv"), csv)?;

    let mut s = common.header("pinn");
    let _ = writeln!(s, "config: {}", config.display());
    let _ = writeln!(s, "problem: {}", problem.name);
    let _ = writeln!(s, "seed: {seed}");
    let _ = writeln!(s, "params: {}", report.param_count);
    let _ = writeln!(s, "model: {}", describe(model.config()));
    let _ = writeln!(
        s,
        "collocation: {} interior, {} boundary",
        colloc.interior_len(),
        colloc.boundary_len()
    );
    let _ = writeln!(s, "lambda: {:e}", report.lambda);
    let _ = writeln!(
        s,
        "training: {} epochs, learning rate {}",
        exp.pinn.epochs, exp.pinn.learning_rate
    );
    let _ = writeln!(
        s,
        "initial risk: {:.6e} (interior {:.6e}, boundary {:.6e})",
        report.initial.total, report.initial.interior, report.initial.boundary
    );
    let _ = writeln!(
        s,
        "final risk: {:.6e} (interior {:.6e}, boundary {:.6e})",
        report.final_risk.total, report.final_risk.interior, report.final_risk.boundary
    );
    let _ = writeln!(s, "best epoch: {}", report.best_epoch);
    if let Some(mse) = report.mse {
        let _ = writeln!(s, "mse vs exact: {mse:.6e} on {} points", report.eval_points);
    }
    common.wall(&mut s, report.wall_seconds);
    write_file(common.file("report.txt"), &s)?;
    print!("{s}");
    Ok(())
}

pub fn interpret(
    checkpoint: &Path,
    data: Option<&Path>,
    threshold: f64,
    common: &Common,
) -> Result<(), CliError> {
    if !(threshold >= 0.0) {
        return Err(CliError::Usage(format!("threshold must be nonnegative, got {threshold}")));
    }
    let ck = load_checkpoint(checkpoint)?;
    let rules = extract_rules(&ck.model, threshold)?.with_names(&ck.meta.class_names, &ck.meta.feature_names);
    common.prepare()?;
    let mut text = format!("checkpoint: {}\n", checkpoint.display());
    text.push_str(&rules.to_text());

    if let Some(path) = data {
        let schema = CsvSchema {
            classes: (!ck.meta.class_names.is_empty()).then(|| ck.meta.class_names.clone()),
            ..CsvSchema::default()
        };
        let raw = load_csv(path, &schema)?;
        let ds = match &ck.meta.normalization {
            Some(r) => r.transform(&raw)?.0,
            None => raw,
        };
        if ds.dim() != ck.model.config().inputs {
            return Err(CliError::Usage(format!(
                "{} has {} features, the model expects {}",
                path.display(),
                ds.dim(),
                ck.model.config().inputs
            )));
        }
        let mut csv = String::from("row,predicted,label,tree,path,probability\n");
        let mut hits = 0;
        for k in 0..ds.len() {
            let e = predict_explain(&ck.model, ds.row(k))?;
            let name = |i: usize| {
                ck.meta
                    .class_names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| (i + 1).to_string())
            };
            let label = match ds.targets() {
                Targets::Labels { labels, .. } => {
                    hits += usize::from(labels[k] == e.label);
                    name(labels[k])
                }
                Targets::Values { .. } => String::new(),
            };
            for p in &e.paths {
                let path: Vec<String> = p.classes.iter().map(|c| c.to_string()).collect();
                let _ = writeln!(
                    csv,
                    "{},{},{label},{},{},{:.6}",
                    k + 1,
                    name(e.label),
                    p.tree,
                    path.join(" "),
                    p.probability
                );
            }
        }
        write_file(common.file("explanations.csv"), csv)?;
        if matches!(ds.targets(), Targets::Labels { .. }) {
            let _ = writeln!(
                text,
                "\naccuracy on {}: {:.4} ({hits}/{})",
                path.display(),
                hits as f64 / ds.len() as f64,
                ds.len()
            );
        }
    }
    write_file(common.file("rules.txt"), &text)?;
    write_file(common.file("rules.json"), rules.to_json()?)?;
    print!("{text}");
    Ok(())
}

pub fn basis(count: usize, degree: usize, samples: usize, out: Option<&Path>) -> Result<(), CliError> {
    if samples < 2 {
        return Err(CliError::Usage(format!("need at least 2 samples, got {samples}")));
    }
    let knots = exsplinet::open_uniform_knots(count, degree)?;
    // validates the pair before any output is produced
    Spline1D::new(knots.clone(), vec![0.0; count])?;
    let mut csv = String::from("x");
    for i in 1..=count {
        let _ = write!(csv, ",B_{i}");
    }
    csv.push('\n');
    for s in 0..samples {
        let x = s as f64 / (samples - 1) as f64;
        let row = exsplinet::basis_dense(&knots, x)?;
        let _ = write!(csv, "{x}");
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
                path: dir.to_path_buf(),
                source,
            })?;
            write_file(dir.join("basis.csv"), csv)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
