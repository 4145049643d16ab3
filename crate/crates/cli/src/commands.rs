use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use wasslip_core::adversarial::{epsilon_sweep, AttackResult, FEASIBILITY_SLACK};
use wasslip_core::data::{gen_data, lattice, read_dataset_csv, write_dataset_csv};
use wasslip_core::measures::empirical_from_samples;
use wasslip_core::models::{read_model, write_model, ModelFile};
use wasslip_core::rng::{derive_seed, stream};
use wasslip_core::robust::certify;
use wasslip_core::train::{train_loop, TrainStatus};
use wasslip_core::verdict::all_passed;
use wasslip_core::{
    Classifier, MetricSpec, Mlp, NormTag, PointSet, RobustCertificate, RobustInstance, Verdict,
};

use crate::config::{load_config, DatasetSection, ExperimentConfig, ModelSection};
use crate::report::{
    bound_curve_csv, sha256_hex, Fingerprint, OutputDir, BOUND_CURVE_FILE, CURVES_FILE,
    DATASET_FILE, MODEL_FILE,
};
use crate::suite::run_suite;
use crate::{Command, Failure, Invocation, EXIT_NUMERICAL, EXIT_OK, EXIT_VERIFICATION};

#[derive(Debug)]
pub struct Outcome {
    pub command: Command,
    pub exit_code: u8,
    /// One line per failing check, empty on success.
    pub failures: Vec<String>,
    pub files: Vec<PathBuf>,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    base: PathBuf,
    seed: u64,
}

struct Finished {
    exit_code: u8,
    failures: Vec<String>,
}

impl Finished {
    fn from_verdicts(verdicts: &[Verdict]) -> Self {
        let failures: Vec<String> = verdicts
            .iter()
            .filter(|v| !v.passed)
            .map(|v| format!("{}: {}", v.name, v.detail))
            .collect();
        Self {
            exit_code: if failures.is_empty() {
                EXIT_OK
            } else {
                EXIT_VERIFICATION
            },
            failures,
        }
    }
}

/// Loads the config, runs the command and writes its files.
pub fn run(inv: &Invocation) -> Result<Outcome, Failure> {
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let config = load_config(&inv.config)?;
    let base = inv
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let out_root = match &inv.out {
        Some(p) => p.clone(),
        None => base.join(
            config
                .output
                .clone()
                .unwrap_or_else(|| PathBuf::from("out")),
        ),
    };
    let ctx = Context {
        config: &config,
        base,
        seed: inv.seed.unwrap_or(config.seed),
    };
    let mut out = OutputDir::create(&out_root)?;
    let finished = match inv.command {
        Command::GenData => gen_data_cmd(&ctx, &mut out)?,
        Command::Train => train_cmd(&ctx, &mut out)?,
        Command::Certify => certify_cmd(&ctx, &mut out)?,
        Command::Attack => attack_cmd(&ctx, &mut out)?,
        Command::Verify => verify_cmd(&ctx, &mut out)?,
    };
    out.write_metadata(
        inv.command.name(),
        started_unix,
        clock.elapsed().as_secs_f64(),
    )?;
    Ok(Outcome {
        command: inv.command,
        exit_code: finished.exit_code,
        failures: finished.failures,
        files: out.into_written(),
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// The dataset and its canonical CSV form.
fn load_dataset(
    ctx: &Context<'_>,
    section: &DatasetSection,
) -> Result<(PointSet, String), Failure> {
    let points = match (&section.generate, &section.path) {
        (Some(spec), _) => gen_data(
            spec,
            section
                .seed
                .unwrap_or_else(|| derive_seed(ctx.seed, "dataset")),
        )?,
        (None, Some(path)) => {
            let path = resolve(&ctx.base, path);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Failure::usage(format!("cannot read dataset {}: {e}", path.display()))
            })?;
            read_dataset_csv(&text, section.label_count)?
        }
        (None, None) => return Err(Failure::usage("config error at `dataset`: no source")),
    };
    let csv = write_dataset_csv(&points);
    Ok((points, csv))
}

/// The model and the norm recorded with it, if loaded from a file.
fn load_model(
    ctx: &Context<'_>,
    section: &ModelSection,
    data: &PointSet,
) -> Result<(Mlp, Option<NormTag>), Failure> {
    let (model, norm) = match (&section.dims, &section.path) {
        (Some(dims), _) => {
            let mut r = stream(ctx.seed, "model-init");
            (
                Mlp::random(dims, section.activation, section.bias, &mut r)?,
                section.norm,
            )
        }
        (None, Some(path)) => {
            let path = resolve(&ctx.base, path);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Failure::usage(format!("cannot read model {}: {e}", path.display()))
            })?;
            let file = read_model(&text)?;
            (file.model, Some(section.norm.unwrap_or(file.norm)))
        }
        (None, None) => return Err(Failure::usage("config error at `model`: no source")),
    };
    if model.input_dim() != data.dim() {
        return Err(Failure::usage(format!(
            "config error at `model`: input size {} does not match the dataset dimension {}",
            model.input_dim(),
            data.dim()
        )));
    }
    if model.label_count() < data.label_count() {
        return Err(Failure::usage(format!(
            "config error at `model`: {} outputs for {} labels",
            model.label_count(),
            data.label_count()
        )));
    }
    Ok((model, norm))
}

#[derive(Serialize)]
struct DatasetSummary {
    rows: usize,
    dim: usize,
    label_count: usize,
    class_counts: Vec<usize>,
}

fn gen_data_cmd(ctx: &Context<'_>, out: &mut OutputDir) -> Result<Finished, Failure> {
    let section = ctx.config.require_dataset("gen-data")?;
    let (points, csv) = load_dataset(ctx, section)?;
    let mut class_counts = vec![0; points.label_count()];
    for p in points.points() {
        class_counts[p.y] += 1;
    }
    let mut fp = Fingerprint::new(ctx.seed);
    fp.dataset_sha256 = Some(sha256_hex(csv.as_bytes()));
    out.write(DATASET_FILE, &csv)?;
    let summary = DatasetSummary {
        rows: points.len(),
        dim: points.dim(),
        label_count: points.label_count(),
        class_counts,
    };
    out.write_report("gen-data", true, &fp, &summary)?;
    Ok(Finished {
        exit_code: EXIT_OK,
        failures: Vec::new(),
    })
}

fn train_cmd(ctx: &Context<'_>, out: &mut OutputDir) -> Result<Finished, Failure> {
    let (points, csv) = load_dataset(ctx, ctx.config.require_dataset("train")?)?;
    let model_section = ctx.config.require_model("train")?;
    let (mut model, norm) = load_model(ctx, model_section, &points)?;
    let mut train = ctx.config.require_train("train")?.clone();
    train.seed = derive_seed(ctx.seed, &format!("train/{}", train.seed));

    let report = train_loop(&mut model, &points, &train)?;
    let mut fp = Fingerprint::new(ctx.seed);
    fp.dataset_sha256 = Some(sha256_hex(csv.as_bytes()));
    fp.rho = Some(train.rho);
    fp.kappa = Some(train.kappa);
    fp.norm = Some(NormTag::L2);
    fp.bound_mode = Some(train.bound_mode);

    let finished = match (&report.status, &report.certificate) {
        (TrainStatus::Diverged, _) => Finished {
            exit_code: EXIT_NUMERICAL,
            failures: vec![format!(
                "training diverged after epoch {}",
                report.last().epoch
            )],
        },
        (TrainStatus::Completed, Some(cert)) => Finished::from_verdicts(&cert.verdicts),
        (TrainStatus::Completed, None) => Finished::from_verdicts(&[]),
    };
    out.write_report("train", finished.exit_code == EXIT_OK, &fp, &report)?;
    out.write(CURVES_FILE, &report.curves_csv())?;
    if report.status == TrainStatus::Completed {
        let file = ModelFile {
            norm: norm.unwrap_or(NormTag::L2),
            model,
        };
        out.write(MODEL_FILE, &write_model(&file))?;
    }
    Ok(finished)
}

fn certify_cmd(ctx: &Context<'_>, out: &mut OutputDir) -> Result<Finished, Failure> {
    let (points, csv) = load_dataset(ctx, ctx.config.require_dataset("certify")?)?;
    let (model, file_norm) = load_model(ctx, ctx.config.require_model("certify")?, &points)?;
    let robust = ctx.config.require_robust("certify")?;
    let norm = robust.norm.or(file_norm).unwrap_or(NormTag::L2);
    let metric = MetricSpec::discrete(norm, robust.kappa, model.label_count())?;
    let instance =
        RobustInstance::new(empirical_from_samples(points.clone())?, metric, robust.rho)?;
    let grid = match &robust.oracle_grid {
        Some(g) => Some(PointSet::with_all_labels(
            &lattice(g.points_per_axis, points.dim(), -g.extent, g.extent),
            model.label_count(),
        )?),
        None => None,
    };
    let cert = certify(&instance, &model, robust.bound_mode, grid.as_ref())?;

    let mut fp = Fingerprint::new(ctx.seed);
    fp.dataset_sha256 = Some(sha256_hex(csv.as_bytes()));
    fp.rho = Some(robust.rho);
    fp.kappa = Some(robust.kappa);
    fp.norm = Some(norm);
    fp.bound_mode = Some(robust.bound_mode);
    let finished = Finished::from_verdicts(&cert.verdicts);
    out.write_report("certify", cert.passed(), &fp, &cert)?;
    Ok(finished)
}

#[derive(Serialize)]
struct SweepRow {
    epsilon: f64,
    adversarial_risk: f64,
    robust_value: f64,
    certificate: RobustCertificate,
    attack: AttackResult,
}

#[derive(Serialize)]
struct AttackReport {
    rows: Vec<SweepRow>,
    verdicts: Vec<Verdict>,
}

fn attack_cmd(ctx: &Context<'_>, out: &mut OutputDir) -> Result<Finished, Failure> {
    let (points, csv) = load_dataset(ctx, ctx.config.require_dataset("attack")?)?;
    let (model, _) = load_model(ctx, ctx.config.require_model("attack")?, &points)?;
    let section = ctx.config.require_attack("attack")?;
    let mu = empirical_from_samples(points)?;
    let cfg = section.attack_config(derive_seed(ctx.seed, "attack"));
    let sweep = epsilon_sweep(&model, &mu, section.norm, &section.epsilons, &cfg)?;
    let metric = MetricSpec::discrete(section.norm, section.kappa, model.label_count())?;

    let mut rows = Vec::with_capacity(sweep.len());
    let mut verdicts = Vec::new();
    for result in sweep {
        let eps = result.ball.epsilon;
        let instance = RobustInstance::new(mu.clone(), metric.clone(), eps)?;
        let cert = certify(&instance, &model, section.bound_mode, None)?;
        let max_norm = result.norms.iter().copied().fold(0.0, f64::max);
        verdicts.push(Verdict::le(
            format!("eps {eps}: attacks inside the ball"),
            max_norm,
            eps,
            FEASIBILITY_SLACK,
        ));
        verdicts.push(Verdict::le(
            format!("eps {eps}: adversarial risk below robust value"),
            result.adversarial_risk,
            cert.robust_value,
            1e-8,
        ));
        rows.push(SweepRow {
            epsilon: eps,
            adversarial_risk: result.adversarial_risk,
            robust_value: cert.robust_value,
            certificate: cert,
            attack: result,
        });
    }
    let curve: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| (r.epsilon, r.adversarial_risk, r.robust_value))
        .collect();

    let mut fp = Fingerprint::new(ctx.seed);
    fp.dataset_sha256 = Some(sha256_hex(csv.as_bytes()));
    fp.kappa = Some(section.kappa);
    fp.norm = Some(section.norm);
    fp.bound_mode = Some(section.bound_mode);
    let passed = all_passed(&verdicts);
    let finished = Finished::from_verdicts(&verdicts);
    out.write_report("attack", passed, &fp, &AttackReport { rows, verdicts })?;
    out.write(BOUND_CURVE_FILE, &bound_curve_csv(&curve))?;
    Ok(finished)
}

fn verify_cmd(ctx: &Context<'_>, out: &mut OutputDir) -> Result<Finished, Failure> {
    let sizes = ctx.config.verify.clone().unwrap_or_default();
    let suite = run_suite(ctx.seed, &sizes);
    let mut fp = Fingerprint::new(ctx.seed);
    fp.bound_mode = Some(sizes.bound_mode);
    out.write_report("verify", suite.passed, &fp, &suite)?;
    let failures = suite.failing();
    Ok(Finished {
        exit_code: if suite.passed {
            EXIT_OK
        } else {
            EXIT_VERIFICATION
        },
        failures,
    })
}
