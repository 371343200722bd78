//! `xct`: phantom generation, scan simulation and reconstruction from a
//! single TOML configuration.
//!
//! Exit codes: 0 ok, 2 config, 3 I/O, 4 geometry, 5 plugin, 6 numerical,
//! 7 selection.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use xct_core::fdk::fdk_reconstruct;
use xct_core::model::io::{read_projections, read_volume, write_projections_with, write_volume_with, ScanInfo};
use xct_core::model::{ConeBeamGeometry, ProjectionSet, Slice, WarmStart};
use xct_core::phantom::{cylinder_mask, make_part_phantom, simulate_scan, BeamHardening};
use xct_core::pipeline::{correct_beam_hardening, initial_reconstruction, reconstruct_with, BetaPolicy, Reference};
use xct_core::prior::plugin::run_plugin_session;
use xct_core::prior::{apply_prior, percentile_window};
use xct_core::projector::restrict_center;
use xct_core::quality::{psnr_masked, ssim_volume, NoRefModel, SliceScorer};
use xct_core::regsel::{regularization_selection, scored_slice};
use xct_core::{Error, ErrorKind, Volume};

use config::{parse_filter, Config, ConfigError};

#[derive(Parser)]
#[command(name = "xct", version, about = "Cone-beam CT simulation and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize the configured part.
    Phantom(Common),
    /// Simulate a scan of the phantom.
    Simulate(Common),
    /// Beam-hardening correction followed by FDK.
    Fdk(Common),
    /// Full reconstruction with automatic weight selection.
    Recon(Common),
    /// Full reconstruction with the configured fixed weight.
    ReconFixed(Common),
    /// One weight search on the FDK start; prints the candidate table.
    Regsel(Common),
    /// PSNR, SSIM and no-reference score of volumes against the phantom.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Volumes to evaluate; defaults to the configured fdk and recon outputs.
        inputs: Vec<PathBuf>,
    },
    /// Handshake and identity round-trip against a plugin command.
    PluginCheck {
        /// Seconds to wait for each response.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
        /// Number of random slices sent.
        #[arg(long, default_value_t = 8)]
        slices: usize,
        /// Plugin program and its arguments.
        #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
        command: Vec<String>,
    },
}

/// Flags shared by the data subcommands; each overrides the config field
/// of the same name.
#[derive(Args)]
struct Common {
    /// Configuration file.
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Outer iterations K.
    #[arg(long = "k")]
    outer_iters: Option<usize>,
    #[arg(long)]
    cg_iters: Option<usize>,
    #[arg(long)]
    center_rows: Option<usize>,
    /// ram_lak or hann.
    #[arg(long, value_parser = parse_filter)]
    filter: Option<xct_core::fdk::RampFilter>,
    /// prior or previous.
    #[arg(long, value_parser = parse_warm_start)]
    warm_start: Option<WarmStart>,
    /// Fixed weight for recon-fixed.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    photons: Option<f64>,
    #[arg(long)]
    bh_coeff: Option<f64>,
    #[arg(long)]
    view_step: Option<usize>,
    /// No-reference model file.
    #[arg(long)]
    scorer_model: Option<PathBuf>,
    #[arg(long)]
    phantom_path: Option<PathBuf>,
    #[arg(long)]
    projections_path: Option<PathBuf>,
    #[arg(long)]
    fdk_path: Option<PathBuf>,
    #[arg(long)]
    recon_path: Option<PathBuf>,
    #[arg(long)]
    trace_path: Option<PathBuf>,
    /// Ground-truth volume; recon then records PSNR/SSIM per iteration.
    #[arg(long)]
    reference: Option<PathBuf>,
}

fn parse_warm_start(s: &str) -> Result<WarmStart, String> {
    match s {
        "prior" => Ok(WarmStart::Prior),
        "previous" => Ok(WarmStart::Previous),
        other => Err(format!("unknown warm start {other:?} (expected prior or previous)")),
    }
}

impl Common {
    fn load(&self) -> Result<Config, Failure> {
        let mut c = Config::load(&self.config)?;
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.seed => c.seed);
        set!(self.threads => c.threads);
        set!(self.outer_iters => c.recon.params.outer_iters);
        set!(self.cg_iters => c.recon.params.cg_iters);
        set!(self.center_rows => c.recon.params.center_rows);
        set!(self.filter => c.recon.params.filter);
        set!(self.warm_start => c.recon.params.warm_start);
        set!(self.photons => c.simulate.photons);
        set!(self.bh_coeff => c.simulate.bh_coeff);
        set!(self.view_step => c.geometry.view_step);
        set!(self.phantom_path => c.paths.phantom);
        set!(self.projections_path => c.paths.projections);
        set!(self.fdk_path => c.paths.fdk);
        set!(self.recon_path => c.paths.recon);
        set!(self.trace_path => c.paths.trace);
        if self.beta.is_some() {
            c.recon.beta = self.beta;
        }
        if self.scorer_model.is_some() {
            c.scorer.model = self.scorer_model.clone();
        }
        if c.threads > 0 {
            // Fails only if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(c.threads).build_global();
        }
        Ok(c)
    }
}

/// A failure with its exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Core(Error),
    Io(String),
    Plugin(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Failure::Io(e.to_string()),
            ConfigError::Parse { .. } => Failure::Config(e.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Plugin(_) => 5,
            Failure::Core(e) => match e.kind() {
                ErrorKind::Parameter => 2,
                ErrorKind::Io => 3,
                ErrorKind::Geometry => 4,
                ErrorKind::Plugin => 5,
                ErrorKind::Numerical => 6,
                ErrorKind::Selection => 7,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Plugin(m) => f.write_str(m),
            // Core errors already print their cause.
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn ensure_parent(path: &Path) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn provenance(cfg: &Config, command: &str) -> toml::Table {
    let mut t = toml::Table::new();
    t.insert("command".into(), command.into());
    t.insert("tool".into(), format!("xct {}", env!("CARGO_PKG_VERSION")).into());
    t.insert("config".into(), toml::Value::Table(cfg.to_table()));
    t
}

fn save_volume(v: &Volume, path: &Path, cfg: &Config, command: &str) -> Outcome {
    ensure_parent(path)?;
    write_volume_with(v, path, Some(&provenance(cfg, command)))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn save_text(path: &Path, text: &str) -> Outcome {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Projections plus the geometry they were acquired with. The volume grid
/// comes from the config; the acquisition from the file itself.
fn load_scan(cfg: &Config) -> Result<(ProjectionSet, ConeBeamGeometry), Failure> {
    let (p, info) = read_projections(&cfg.paths.projections)?;
    let g = info.geometry(&p, cfg.geometry.vol_dims, cfg.geometry.voxel_size);
    g.validate()?;
    Ok((p, g))
}

fn load_scorer(cfg: &Config) -> Result<NoRefModel, Failure> {
    Ok(match &cfg.scorer.model {
        Some(path) => NoRefModel::load(path)?,
        None => NoRefModel::default(),
    })
}

fn cmd_phantom(cfg: &Config) -> Outcome {
    let spec = cfg.phantom.as_ref().ok_or_else(|| Failure::Config("config has no [phantom] section".into()))?;
    let g = &cfg.geometry;
    let v = make_part_phantom(g.vol_dims, g.voxel_size, cfg.seed, spec)?;
    save_volume(&v, &cfg.paths.phantom, cfg, "phantom")
}

fn cmd_simulate(cfg: &Config) -> Outcome {
    let g = cfg.geometry.build();
    g.validate()?;
    let v = read_volume(&cfg.paths.phantom)?;
    let bh = (cfg.simulate.bh_coeff > 0.0).then(|| BeamHardening::new(cfg.simulate.bh_coeff)).transpose()?;
    let p = simulate_scan(&v, &g, cfg.simulate.photons, bh, cfg.seed)?;
    let path = &cfg.paths.projections;
    ensure_parent(path)?;
    write_projections_with(&p, &ScanInfo::from_geometry(&g), path, Some(&provenance(cfg, "simulate")))?;
    println!("wrote {} ({} views)", path.display(), p.n_views());
    Ok(())
}

fn cmd_fdk(cfg: &Config) -> Outcome {
    let (p, g) = load_scan(cfg)?;
    let corrected = correct_beam_hardening(&p, &cfg.recon.bh_coeffs)?;
    let x = fdk_reconstruct(&corrected, &g, cfg.recon.params.filter)?;
    save_volume(&x, &cfg.paths.fdk, cfg, "fdk")
}

fn cmd_recon(cfg: &Config, fixed: bool, reference: Option<&Path>) -> Outcome {
    let (p, g) = load_scan(cfg)?;
    let truth = reference.map(read_volume).transpose()?;
    let roi = truth.as_ref().map(|t| roi(cfg, t)).transpose()?;
    let reference = truth.as_ref().zip(roi.as_ref()).map(|(volume, (mask, peak))| Reference {
        volume,
        mask: Some(mask),
        peak: *peak,
    });
    let rc = cfg.recon_config();
    let scorer;
    let policy = if fixed {
        let beta = cfg.recon.beta.ok_or_else(|| Failure::Config("recon-fixed needs recon.beta or --beta".into()))?;
        BetaPolicy::Fixed(beta)
    } else {
        scorer = load_scorer(cfg)?;
        BetaPolicy::Adaptive(&scorer)
    };
    let (x, trace) = reconstruct_with(&p, &g, &rc, policy, reference, &mut |k, _, rec| {
        let metrics = rec.metrics.map_or(String::new(), |m| format!(", psnr {:.3} dB, ssim {:.4}", m.psnr, m.ssim));
        println!(
            "iteration {}: beta = {:.6e}{}, cg steps = {}, residual {:.3e} -> {:.3e}{metrics}",
            k + 1,
            rec.beta,
            if rec.fallback { " (fallback)" } else { "" },
            rec.cg.iterations,
            rec.cg.initial_residual,
            rec.cg.final_residual
        );
    })?;
    save_volume(&x, &cfg.paths.recon, cfg, if fixed { "recon-fixed" } else { "recon" })?;
    save_text(&cfg.paths.trace, &trace.to_toml())
}

fn cmd_regsel(cfg: &Config) -> Outcome {
    let (p, g) = load_scan(cfg)?;
    let rc = cfg.recon_config();
    let params = &rc.params;
    params.validate(g.det_rows)?;
    let (corrected, x0) = initial_reconstruction(&p, &g, &rc)?;
    let window = rc.prior.window.unwrap_or_else(|| percentile_window(&x0));
    let z = apply_prior(&x0, &rc.prior.clone().with_window(window))?;
    let (y_c, restriction) = restrict_center(&corrected, &g, params.center_rows)?;
    let scorer = load_scorer(cfg)?;
    let sel = regularization_selection(&z, &restriction, &y_c, &params.regsel, params.cg_iters, &scorer as &dyn SliceScorer)?;
    println!("{:>12} {:>8} {:>12} {:>12}", "mu", "score", "res0", "res");
    for c in &sel.candidates {
        let score = c.score.map_or("failed".to_string(), |s| format!("{s:.3}"));
        println!("{:>12.6e} {:>8} {:>12.4e} {:>12.4e}", c.mu, score, c.initial_residual, c.final_residual);
    }
    println!(
        "selected beta = {:.6e} (candidate {}), scored slice z = {}",
        sel.beta,
        sel.index + 1,
        restriction.slab_offset + scored_slice(&restriction)
    );
    save_text(&cfg.paths.trace, &sel.to_toml())
}

/// Evaluation ROI and peak value for a ground-truth volume.
fn roi(cfg: &Config, reference: &Volume) -> Result<(Vec<bool>, f64), Failure> {
    let spec = cfg.phantom.as_ref().ok_or_else(|| Failure::Config("metrics need the [phantom] section for the ROI".into()))?;
    let dims = reference.dims();
    let half_height = 0.5 * cfg.metrics.roi_height * dims[2] as f64 * reference.voxel_size();
    let mask = cylinder_mask(dims, reference.voxel_size(), cfg.metrics.roi_radius * spec.radius, half_height);
    Ok((mask, spec.mu))
}

fn cmd_metrics(cfg: &Config, inputs: &[PathBuf]) -> Outcome {
    let reference = read_volume(&cfg.paths.phantom)?;
    let dims = reference.dims();
    let (mask, peak) = roi(cfg, &reference)?;
    let scorer = load_scorer(cfg)?;
    let defaults = [cfg.paths.fdk.clone(), cfg.paths.recon.clone()];
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        defaults.into_iter().filter(|p| p.exists()).collect()
    } else {
        inputs.to_vec()
    };
    if inputs.is_empty() {
        return Err(Failure::Io("no volumes to evaluate".into()));
    }
    println!("{:<40} {:>10} {:>8} {:>8}", "volume", "psnr_db", "ssim", "noref");
    for path in &inputs {
        let v = read_volume(path)?;
        let psnr = psnr_masked(v.data(), reference.data(), &mask, peak)?;
        let ssim = ssim_volume(&v, &reference, Some(&mask))?;
        let noref = scorer.score(&v.slice(dims[2] / 2))?;
        println!("{:<40} {:>10.3} {:>8.4} {:>8.2}", path.display().to_string(), psnr, ssim, noref);
    }
    Ok(())
}

fn cmd_plugin_check(command: &[String], timeout: f64, n: usize) -> Outcome {
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(Failure::Config(format!("timeout must be positive, got {timeout}")));
    }
    // Deterministic pseudo-random slices of assorted sizes.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 40) as f32 / (1u64 << 24) as f32
    };
    let slices: Vec<Slice> = (0..n)
        .map(|i| {
            let (w, h) = (16 + 3 * i, 16 + 5 * (i % 4));
            Slice { width: w, height: h, data: (0..w * h).map(|_| next()).collect() }
        })
        .collect();
    let out = run_plugin_session(command, &slices, Duration::from_secs_f64(timeout))
        .map_err(|e| Failure::Plugin(format!("plugin check failed: {e}")))?;
    println!("handshake OK, {} frames answered", out.len());
    for (i, (a, b)) in slices.iter().zip(&out).enumerate() {
        let same = a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same {
            return Err(Failure::Plugin(format!("identity round-trip failed: response {i} differs from its request")));
        }
    }
    println!("identity round-trip OK");
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Phantom(c) => cmd_phantom(&c.load()?),
        Command::Simulate(c) => cmd_simulate(&c.load()?),
        Command::Fdk(c) => cmd_fdk(&c.load()?),
        Command::Recon(c) => cmd_recon(&c.load()?, false, c.reference.as_deref()),
        Command::ReconFixed(c) => cmd_recon(&c.load()?, true, c.reference.as_deref()),
        Command::Regsel(c) => cmd_regsel(&c.load()?),
        Command::Metrics { common, inputs } => cmd_metrics(&common.load()?, &inputs),
        Command::PluginCheck { timeout, slices, command } => cmd_plugin_check(&command, timeout, slices),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
