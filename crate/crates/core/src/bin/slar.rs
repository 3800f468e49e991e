use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slar::cli::{convergence, run, scale, write_outputs, write_scale_csv, ScanMode, Scenario, ScenarioConfig, WindowMode};
use slar::error::Result;
use slar::implicit_density::PrecondKind;

#[derive(Parser, Debug)]
#[command(version, about = "Low-rank semi-Lagrangian solver for advection and Vlasov-Poisson benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario to its final time.
    Run(Common),
    /// Mesh or CFL refinement study.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Comma-separated mesh sizes (n x n).
        #[arg(long, value_delimiter = ',', conflicts_with = "cfls")]
        meshes: Vec<usize>,
        /// Comma-separated CFL numbers.
        #[arg(long, value_delimiter = ',')]
        cfls: Vec<f64>,
    },
    /// Wall time against mesh size at a fixed step.
    Scale {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        meshes: Vec<usize>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    scenario: String,
    /// key=value file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long)]
    tfinal: Option<f64>,
    /// Fixed time step; overrides the CFL rule.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    eps_c: Option<f64>,
    #[arg(long)]
    eps_s: Option<f64>,
    #[arg(long)]
    rmax: Option<usize>,
    #[arg(long)]
    samples_p: Option<usize>,
    #[arg(long)]
    samples_s: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    vmin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    vmax: Option<f64>,
    #[arg(long)]
    cadence: Option<usize>,
    /// Write pivot files every this many steps.
    #[arg(long)]
    pivots: Option<usize>,
    #[arg(long)]
    no_window: bool,
    #[arg(long)]
    no_precond: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::preset(Scenario::from_name(&self.scenario)?);
        if let Some(path) = &self.config {
            cfg.apply_text(&fs::read_to_string(path)?)?;
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(nx => nx, ny => ny, cfl => cfl, tfinal => t_final, eps_c => eps_c, eps_s => eps_s, rmax => r_max,
             samples_p => p, samples_s => s, seed => seed, cadence => cadence, pivots => pivots);
        if self.dt.is_some() {
            cfg.dt = self.dt;
        }
        if self.vmin.is_some() {
            cfg.vmin = self.vmin;
        }
        if self.vmax.is_some() {
            cfg.vmax = self.vmax;
        }
        if self.no_window {
            cfg.window = WindowMode::Off;
        }
        if self.no_precond {
            cfg.precond = PrecondKind::None;
        }
        cfg.out = Some(self.out.clone());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let out = run(&cfg)?;
            write_outputs(&common.out, &cfg, &out)?;
            print!("{}", out.summary(&cfg));
        }
        Command::Convergence { common, meshes, cfls } => {
            let cfg = common.resolve()?;
            let mode = if meshes.is_empty() { ScanMode::Cfl(cfls) } else { ScanMode::Mesh(meshes) };
            let table = convergence(&cfg, &mode)?;
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("config.txt"), cfg.to_text())?;
            let mut w = BufWriter::new(fs::File::create(common.out.join("convergence.csv"))?);
            table.write_csv(&mut w)?;
            w.flush()?;
            table.write_csv(&mut std::io::stdout())?;
            if let (Some(a), Some(b)) = (table.slope_l1, table.slope_linf) {
                println!("slope_l1={a:.4}\nslope_linf={b:.4}");
            }
        }
        Command::Scale { common, meshes } => {
            let cfg = common.resolve()?;
            let dt = cfg.dt.unwrap_or(0.01);
            let rows = scale(&cfg, &meshes, dt)?;
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("config.txt"), cfg.to_text())?;
            let mut w = BufWriter::new(fs::File::create(common.out.join("scale.csv"))?);
            write_scale_csv(&mut w, &rows)?;
            w.flush()?;
            write_scale_csv(&mut std::io::stdout(), &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
