use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mprl::harness::{
    emit_plot, evaluate_checkpoint, read_curve, run_ablation, AblationAxis, ExperimentConfig, Layout, Method, Pipeline,
    PlotSpec,
};
use mprl::Error;

#[derive(Parser)]
#[command(name = "mpr", version, about = "Multi-prior skill transfer experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Restrict to one method instead of the configured list.
    #[arg(long)]
    mode: Option<Method>,
    /// Single-threaded bit-reproducible mode.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate source (and, if needed, target) demonstrations.
    GenDemos(Common),
    /// Train the reference and frozen-decoder skill models.
    TrainSkills(Common),
    /// Train the prior predictor.
    TrainPredictor(Common),
    /// Train agents for every selected method and seed.
    TrainAgent(Common),
    /// Aggregate runs, write eval.csv and plots; re-evaluate checkpoints
    /// with --episodes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Sweep prior count or dataset size.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// prior-count or dataset-size
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Redraw success.svg from the per-method aggregate CSVs.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Column to plot from aggregate.csv.
        #[arg(long, default_value = "success")]
        column: String,
    },
    /// Every stage end to end.
    Pipeline(Common),
}

fn load_config(c: &Common) -> mprl::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.experiment.seeds = vec![s];
    }
    if let Some(m) = c.mode {
        cfg.experiment.modes = vec![m];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline(c: &Common) -> mprl::Result<(Pipeline, Vec<Method>, Vec<u64>)> {
    let cfg = load_config(c)?;
    let methods = cfg.methods(c.mode);
    let seeds = cfg.experiment.seeds.clone();
    let mut p = Pipeline::new(cfg, &c.out)?;
    p.quiet = c.quiet;
    Ok((p, methods, seeds))
}

fn run(verb: Verb) -> mprl::Result<()> {
    match verb {
        Verb::GenDemos(c) => {
            let (mut p, m, _) = pipeline(&c)?;
            p.stage_demos(&m)
        }
        Verb::TrainSkills(c) => {
            let (mut p, m, _) = pipeline(&c)?;
            p.stage_demos(&m)?;
            p.stage_skills(&m)
        }
        Verb::TrainPredictor(c) => {
            let (mut p, m, _) = pipeline(&c)?;
            p.stage_demos(&m)?;
            p.stage_skills(&m)?;
            p.stage_predictor(&m)
        }
        Verb::TrainAgent(c) => {
            let (mut p, m, s) = pipeline(&c)?;
            p.stage_demos(&m)?;
            p.stage_skills(&m)?;
            p.stage_predictor(&m)?;
            p.stage_agent(&m, &s)
        }
        Verb::Eval { common, episodes } => {
            let (mut p, m, s) = pipeline(&common)?;
            p.stage_eval(&m, &s)?;
            if let Some(n) = episodes {
                for &method in &m {
                    for &seed in &s {
                        let e = evaluate_checkpoint(&p.config, &common.out, method, seed, n)
                            .map_err(|e| Error::stage("eval", e))?;
                        println!("{method} seed {seed}: success {:.3} return {:.4}", e.success_rate, e.mean_return);
                    }
                }
            } else {
                for ((method, seed), e) in &p.artifacts().evaluations {
                    println!("{method} seed {seed}: success {:.3} return {:.4}", e.success_rate, e.mean_return);
                }
            }
            Ok(())
        }
        Verb::Ablate { common, axis, values } => {
            let cfg = load_config(&common)?;
            let axis = AblationAxis::parse(&axis, &values)?;
            let method = common.mode.unwrap_or(Method::Adaptive);
            let r = run_ablation(&cfg, &axis, method, &common.out, common.quiet)?;
            for &v in axis.values() {
                if let Some(s) = r.mean_success(v, method) {
                    println!("{}={v}: mean success {s:.3}", r.axis);
                }
            }
            println!("wrote {}", r.csv.display());
            Ok(())
        }
        Verb::Plot { common, column } => {
            let cfg = load_config(&common)?;
            let out = &common.out;
            let curves = cfg
                .methods(common.mode)
                .into_iter()
                .map(|m| Ok((m.name().to_string(), read_curve(&Layout::new(out).method_dir(m).join("aggregate.csv"), &column)?)))
                .collect::<mprl::Result<Vec<_>>>()
                .map_err(|e| Error::stage("plot", e))?;
            let mut spec = PlotSpec::success();
            if column != "success" {
                spec.title = format!("{column} on the target task");
                spec.y_label = column.clone();
                spec.y_range = None;
            }
            let path = out.join(format!("{column}.svg"));
            emit_plot(&curves, &spec, &path).map_err(|e| Error::stage("plot", e))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Verb::Pipeline(c) => {
            let (mut p, m, _) = pipeline(&c)?;
            p.run(&m)?;
            for ((method, seed), e) in &p.artifacts().evaluations {
                println!("{method} seed {seed}: success {:.3} return {:.4}", e.success_rate, e.mean_return);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mpr: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
