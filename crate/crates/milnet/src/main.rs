use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use milnet::checkpoint::Checkpoint;
use milnet::config::{self, RunConfig};
use milnet::{cv, dataset, manifest, pgm, report, viz};
use milnet_core::gradcheck::{self, Report, Tolerance};
use milnet_core::heads::Head;
use milnet_core::metrics::{self, BagMode};
use milnet_core::model::BackboneSpec;
use milnet_core::{folds, stats, train};

/// Deep multi-instance learning for whole-image classification.
#[derive(Parser)]
#[command(name = "milnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-mass dataset (PGM images + manifest.csv).
    Synth {
        /// Spec file with keys size, n_pos, n_neg, mass_frac, lift, noise, seed.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model; stratified fold 0 of the manifest is held out for
    /// validation. Writes the checkpoint and `<out>.metrics.csv`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Choose k from k_grid on the validation split (label_assign only).
        #[arg(long)]
        select_k: bool,
    },
    /// Five-fold cross-validation with per-fold artifacts and summary.csv.
    Cv {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Folds trained in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Score a manifest with a checkpoint: scores.csv, roc.csv, summary.csv.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine several checkpoints by averaging or voting.
    Bag {
        #[arg(long, num_args = 1.., required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Average)]
        mode: Mode,
        #[arg(long)]
        data: PathBuf,
        /// Output directory; scores go to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the response map of one image.
    Viz {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Size histograms and mass-area statistics of a manifest.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks; exits nonzero on failure.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Module::All)]
        module: Module,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Average,
    Vote,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Module {
    All,
    Heads,
    Backbone,
}

fn log(line: &str) {
    eprintln!("{line}");
}

fn load_run(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { spec, out } => {
            let spec = match spec {
                Some(p) => config::parse_synth(&std::fs::read_to_string(&p).with_context(|| p.display().to_string())?)?,
                None => Default::default(),
            };
            let m = dataset::write_synthetic(&spec, &out)?;
            log(&format!("wrote {} images to {}", m.len(), out.display()));
        }
        Command::Train {
            config,
            data,
            out,
            select_k,
        } => {
            let run = load_run(config.as_deref())?;
            if select_k && run.train.mil.head != Head::LabelAssign {
                bail!("--select-k needs head = label_assign");
            }
            let items = dataset::load(&manifest::load(&data)?, run.train.backbone.input_size)?;
            let plan = folds::make_folds(&dataset::labels(&items), cv::N_FOLDS, run.train.seed)?;
            let val_idx = plan.members(0);
            let train_idx: Vec<usize> = (0..items.len()).filter(|i| plan.fold_of[*i] != 0).collect();
            let tr = dataset::samples(&dataset::pick(&items, &train_idx));
            let va = dataset::samples(&dataset::pick(&items, &val_idx));
            let (chosen, outcome) = cv::fit(&run, &tr, &va, select_k, &mut |k, e| {
                log(&format!(
                    "k {k} epoch {} train_loss {:.6} val_auc {:.4} val_acc {:.4}",
                    e.epoch, e.train_loss, e.val_auc, e.val_acc
                ))
            })?;
            Checkpoint {
                run: chosen,
                state: outcome.best,
            }
            .save(&out)?;
            let mut metrics_path = out.clone().into_os_string();
            metrics_path.push(".metrics.csv");
            report::write_metrics(Path::new(&metrics_path), &outcome.log)?;
            log(&format!("best epoch {} val_auc {:.4}", outcome.best_epoch, outcome.best_val_auc));
        }
        Command::Cv {
            config,
            data,
            out,
            workers,
        } => {
            let run = load_run(config.as_deref())?;
            let items = dataset::load(&manifest::load(&data)?, run.train.backbone.input_size)?;
            let folds = cv::run_cv(&run, &items, &out, workers, &log)?;
            let acc: Vec<f64> = folds.iter().map(|f| f.result.accuracy).collect();
            let auc: Vec<f64> = folds.iter().map(|f| f.result.auc).collect();
            let (am, asd) = metrics::mean_std(&acc);
            let (um, usd) = metrics::mean_std(&auc);
            log(&format!("accuracy {am:.4}±{asd:.4} auc {um:.4}±{usd:.4}"));
        }
        Command::Eval { ckpt, data, out } => {
            let c = Checkpoint::load(&ckpt)?;
            let spec = &c.run.train.backbone;
            let items = dataset::load(&manifest::load(&data)?, spec.input_size)?;
            let scores = train::scores(spec, &c.state.params, &dataset::samples(&items))?;
            write_eval(&out, &items, &scores)?;
        }
        Command::Bag { ckpts, mode, data, out } => {
            let mut models = Vec::new();
            let mut items: Option<(usize, Vec<dataset::Item>)> = None;
            let m = manifest::load(&data)?;
            for path in &ckpts {
                let c = Checkpoint::load(path)?;
                let spec = &c.run.train.backbone;
                if items.as_ref().map_or(true, |(s, _)| *s != spec.input_size) {
                    items = Some((spec.input_size, dataset::load(&m, spec.input_size)?));
                }
                let (_, it) = items.as_ref().expect("loaded");
                models.push(train::scores(spec, &c.state.params, &dataset::samples(it))?);
            }
            let mode = match mode {
                Mode::Average => BagMode::Average,
                Mode::Vote => BagMode::Vote,
            };
            let combined = metrics::bagging(&models, mode)?;
            let (_, items) = items.expect("at least one checkpoint");
            match out {
                Some(dir) => write_eval(&dir, &items, &combined)?,
                None => {
                    println!("path,label,score");
                    for (i, s) in items.iter().zip(&combined) {
                        println!("{},{},{}", i.name, u8::from(i.sample.positive), s);
                    }
                }
            }
        }
        Command::Viz { ckpt, image, out } => {
            let c = Checkpoint::load(&ckpt)?;
            mkdir(&out)?;
            let img = pgm::load(&image)?;
            let map = viz::export(&c.run.train.backbone, &c.state.params, &img, &out)?;
            log(&format!("strongest cell {} of {}x{}", map.argmax(), map.grid_h, map.grid_w));
        }
        Command::Stats { data, out } => {
            let m = manifest::load(&data)?;
            mkdir(&out)?;
            let rows: Vec<_> = m.records.iter().map(|r| (r.width, r.height, r.mass)).collect();
            report::write_stats(&out, &stats::dataset_stats(&rows))?;
        }
        Command::Gradcheck { module, draws, seed } => {
            let tol = Tolerance { rel: 1e-5, abs: 1e-8 };
            let mut total = Report::default();
            if module != Module::Backbone {
                let r = gradcheck::check_heads(draws, seed, tol)?;
                print_report("heads", &r);
                total.merge(r);
            }
            if module != Module::Heads {
                for head in Head::ALL {
                    let r = gradcheck::check_backbone(&BackboneSpec::desk(), head, draws, 8, seed, tol)?;
                    print_report(&format!("backbone+{}", head.name()), &r);
                    total.merge(r);
                }
            }
            for f in &total.failures {
                println!("FAIL {f}");
            }
            return Ok(total.passed());
        }
    }
    Ok(true)
}

fn print_report(name: &str, r: &Report) {
    println!(
        "{name}: checked {} skipped {} max_rel_err {:e} failures {}",
        r.checked,
        r.skipped,
        r.max_rel_err,
        r.failures.len()
    );
}

fn write_eval(dir: &Path, items: &[dataset::Item], scores: &[f64]) -> Result<()> {
    mkdir(dir)?;
    let labels = dataset::labels(items);
    let names: Vec<String> = items.iter().map(|i| i.name.clone()).collect();
    report::write_scores(&dir.join("scores.csv"), &names, &labels, scores)?;
    report::write_roc(&dir.join("roc.csv"), &metrics::roc_curve(scores, &labels)?)?;
    report::write_eval_summary(
        &dir.join("summary.csv"),
        metrics::accuracy(scores, &labels, 0.5)?,
        metrics::auc(scores, &labels)?,
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let keys = config::keys_help();
    let matches = Cli::command()
        .after_help(keys.clone())
        .mut_subcommand("train", |c| c.after_help(keys.clone()))
        .mut_subcommand("cv", |c| c.after_help(keys.clone()))
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
