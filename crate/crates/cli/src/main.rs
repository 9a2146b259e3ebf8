use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use medmimic::eval::{
    configure_threads, emit_report, extract_dataset, make_folds, make_stratified_folds, parse_report_csv,
    render_markdown, run_ablation, run_cv, task_labels, train_full, FoldPlan, HarnessConfig, SWEEP_HIDDEN_DIMS,
};
use medmimic::fusion::Modalities;
use medmimic::io::{load_dataset, synth_generate, write_dataset, Dataset, SyntheticSpec};
use medmimic::resfusion::{save_checkpoint, Variant};
use medmimic::{Error, Result};

#[derive(Parser)]
#[command(name = "medmimic", version, about = "Multimodal fusion classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic cohort.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace pixel slices with PCA projections and save the bases.
    PcaExtract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        components: usize,
        #[arg(long)]
        out: PathBuf,
        /// Fit on the training split of this many folds.
        #[arg(long)]
        folds: Option<usize>,
        /// Held-out fold whose patients are excluded from the fit.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on every patient and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        modalities: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate the network on one task.
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Cross-validate every ablation variant at every hidden width.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "all")]
        variants: String,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_HIDDEN_DIMS)]
        hidden_dims: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render report CSVs as one markdown file.
    Report {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Dataset directory; defaults to `[data] dir` in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=7))]
    task: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Loaded {
    cfg: HarnessConfig,
    ds: Dataset,
}

impl Common {
    fn load(&self) -> Result<Loaded> {
        let mut cfg = HarnessConfig::load(&self.config)?;
        cfg.model.seed = self.seed;
        let dir = self
            .data
            .clone()
            .or_else(|| cfg.data.dir.clone())
            .ok_or_else(|| Error::Config("no dataset: pass --data or set [data] dir".into()))?;
        let ds = load_dataset(&dir)?;
        Ok(Loaded { cfg, ds })
    }

    fn plan(&self, loaded: &Loaded, k: usize) -> Result<FoldPlan> {
        let n = loaded.ds.n_patients();
        if loaded.cfg.data.stratified {
            make_stratified_folds(&task_labels(loaded.ds.etiologies(), self.task)?, k, self.seed)
        } else {
            make_folds(n, k, self.seed)
        }
        .map_err(|e| Error::Config(e.to_string()))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            let spec = SyntheticSpec::from_toml(&text)?;
            synth_generate(&spec, &out)?;
            println!("wrote {} patients to {}", spec.n_patients, out.display());
        }
        Command::PcaExtract {
            data,
            components,
            out,
            folds,
            fold,
            seed,
        } => {
            let ds = load_dataset(&data)?;
            let train = match folds {
                Some(k) => {
                    if fold >= k {
                        return Err(Error::Config(format!("--fold {fold} outside 0..{k}")));
                    }
                    make_folds(ds.n_patients(), k, seed)
                        .map_err(|e| Error::Config(e.to_string()))?
                        .train_indices(fold)
                }
                None => (0..ds.n_patients()).collect(),
            };
            let (projected, ct, pet) = extract_dataset(&ds, components, &train)?;
            write_dataset(&projected, &out)?;
            ct.save(&out.join("pca_ct"))?;
            pet.save(&out.join("pca_pet"))?;
            println!(
                "projected {} patients onto {components} components in {}",
                ds.n_patients(),
                out.display()
            );
        }
        Command::Train {
            common,
            modalities,
            out,
        } => {
            let loaded = common.load()?;
            let modalities = match modalities {
                Some(list) => Modalities::parse(&list)?,
                None => loaded.cfg.modalities()?,
            };
            let (report, bases) = train_full(&loaded.ds, &loaded.cfg, common.task, modalities)?;
            save_checkpoint(&report.model, &out)?;
            if let Some((ct, pet)) = bases {
                ct.save(&out.join("pca_ct"))?;
                pet.save(&out.join("pca_pet"))?;
            }
            let first = report.losses.first().copied().unwrap_or(f64::NAN);
            let last = report.losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} epochs in {:.1}s, loss {first:.4} -> {last:.4}; checkpoint in {}",
                report.losses.len(),
                report.seconds,
                out.display()
            );
        }
        Command::Cv { common, folds, report } => {
            let loaded = common.load()?;
            let plan = common.plan(&loaded, folds)?;
            let metrics = run_cv(&loaded.ds, &loaded.cfg, common.task, &plan, loaded.cfg.modalities()?)?;
            ensure_parent(&report)?;
            let (csv, md) = emit_report(std::slice::from_ref(&metrics), &report)?;
            match metrics.summary() {
                Some((mean, sd)) => println!("task {}: macro-AUROC {mean:.4} ± {sd:.4}", common.task),
                None => println!("task {}: no fold had both classes", common.task),
            }
            println!("wrote {} and {}", csv.display(), md.display());
        }
        Command::Ablate {
            common,
            variants,
            hidden_dims,
            folds,
            report,
        } => {
            let variants = Variant::parse_list(&variants).map_err(|e| Error::Config(e.to_string()))?;
            if hidden_dims.is_empty() || hidden_dims.contains(&0) {
                return Err(Error::Config("hidden dims must be positive".into()));
            }
            let loaded = common.load()?;
            let plan = common.plan(&loaded, folds)?;
            let reports = run_ablation(
                &loaded.ds,
                &loaded.cfg,
                common.task,
                &plan,
                loaded.cfg.modalities()?,
                &variants,
                &hidden_dims,
            )?;
            ensure_parent(&report)?;
            let (csv, md) = emit_report(&reports, &report)?;
            println!(
                "{} configurations; wrote {} and {}",
                reports.len(),
                csv.display(),
                md.display()
            );
        }
        Command::Report { inputs, out } => {
            let mut reports = Vec::new();
            for path in &inputs {
                reports.extend(parse_report_csv(path)?);
            }
            ensure_parent(&out)?;
            std::fs::write(&out, render_markdown(&reports)).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
