//! Configuration, history files and the command implementations behind the
//! `kelvin-lab` binary.

use crate::action::{standard_family, stationarity_report, StationarityReport};
use crate::circulation::{anti_kelvin_check, kelvin_martingale_check, weber_identities, CirculationEstimate, LoopState};
use crate::flow::EnsembleSpec;
use crate::ns::{energy, ns_residual, solve, NsParams, VelocityHistory};
use crate::spectral::{project_divergence_free, GridSpec, Point, SpectralField, VectorField};
use anyhow::{anyhow, bail, ensure, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const HISTORY_FORMAT: &str = "kelvin-lab-history";
pub const HISTORY_VERSION: u32 = 1;

pub fn version_string() -> String {
    format!("kelvin-lab {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    TaylorGreen,
    RandomLowmode,
    File,
}

/// Where the velocity history of a diagnostic command comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistorySource {
    /// Integrate the initial condition.
    Solve,
    /// Hold the initial condition fixed in time.
    Frozen,
    /// Read `history_file`.
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopKind {
    Square,
    Circle,
    Polyline,
}

/// Flat run configuration. Paths are relative to the directory of the
/// configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    pub nu: f64,
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
    pub snap_stride: usize,

    pub initial: InitialKind,
    pub initial_seed: u64,
    pub initial_max_mode: u32,
    pub initial_amplitude: f64,
    pub initial_file: Option<PathBuf>,

    pub history: HistorySource,
    pub history_file: Option<PathBuf>,

    pub n_samples: usize,
    pub base_seed: u64,
    pub sde_dt: f64,

    pub loop_kind: LoopKind,
    pub loop_x0: f64,
    pub loop_y0: f64,
    pub loop_side: f64,
    pub loop_cx: f64,
    pub loop_cy: f64,
    pub loop_radius: f64,
    pub loop_points: Vec<[f64; 2]>,
    pub loop_h_max: f64,

    /// Loop anchor time. Defaults to `tf` for `kelvin` and `weber`, `t0` for
    /// `reverse-kelvin`.
    pub t_anchor: Option<f64>,
    /// Evaluation time; defaults to the midpoint of `[t0, tf]`.
    pub t_eval: Option<f64>,

    pub stationarity_tol: Option<f64>,
    pub weber_rel_tol: f64,

    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 32,
            nu: 0.05,
            t0: 0.0,
            tf: 1.0,
            dt: 1e-3,
            snap_stride: 10,
            initial: InitialKind::TaylorGreen,
            initial_seed: 0,
            initial_max_mode: 3,
            initial_amplitude: 1.0,
            initial_file: None,
            history: HistorySource::Solve,
            history_file: None,
            n_samples: 4096,
            base_seed: 0,
            sde_dt: 1e-3,
            loop_kind: LoopKind::Square,
            loop_x0: 0.0,
            loop_y0: 0.0,
            loop_side: PI,
            loop_cx: PI,
            loop_cy: PI,
            loop_radius: 1.0,
            loop_points: Vec::new(),
            loop_h_max: PI / 8.0,
            t_anchor: None,
            t_eval: None,
            stationarity_tol: None,
            weber_rel_tol: 1e-2,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        GridSpec::new(self.n).context("field `n`")?;
        self.ns_params().context("time stepping fields")?;
        ensure!(self.n_samples >= 1, "field `n_samples` must be at least 1");
        ensure!(self.sde_dt > 0.0 && self.sde_dt.is_finite(), "field `sde_dt` must be > 0");
        ensure!(self.loop_h_max > 0.0 && self.loop_h_max.is_finite(), "field `loop_h_max` must be > 0");
        ensure!(self.weber_rel_tol > 0.0, "field `weber_rel_tol` must be > 0");
        ensure!(self.initial_amplitude >= 0.0, "field `initial_amplitude` must be >= 0");
        if self.initial == InitialKind::File {
            ensure!(self.initial_file.is_some(), "initial = \"file\" requires `initial_file`");
        }
        if self.history == HistorySource::File {
            ensure!(self.history_file.is_some(), "history = \"file\" requires `history_file`");
        }
        if let Some(tol) = self.stationarity_tol {
            ensure!(tol > 0.0, "field `stationarity_tol` must be > 0");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.initial_file);
        rebase(&mut cfg.history_file);
        rebase(&mut cfg.out_dir);
        Ok(cfg)
    }

    pub fn ns_params(&self) -> crate::Result<NsParams> {
        NsParams::new(self.nu, self.dt, self.t0, self.tf, self.snap_stride)
    }

    pub fn ensemble(&self) -> crate::Result<EnsembleSpec> {
        EnsembleSpec::new(self.n_samples, self.base_seed, self.sde_dt)
    }

    /// Hex SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canon))
    }

    pub fn grid(&self) -> anyhow::Result<GridSpec> {
        Ok(GridSpec::new(self.n)?)
    }

    pub fn initial_field(&self) -> anyhow::Result<SpectralField> {
        let g = self.grid()?;
        Ok(match self.initial {
            InitialKind::TaylorGreen => SpectralField::taylor_green(g, self.t0, self.nu).scaled(self.initial_amplitude),
            InitialKind::RandomLowmode => {
                SpectralField::random_lowmode(g, self.initial_seed, self.initial_max_mode, self.initial_amplitude)?
            }
            InitialKind::File => {
                let path = self.initial_file.as_ref().expect("validated");
                let h = read_history(path)?;
                ensure!(h.grid() == g, "initial_file grid {} does not match n = {}", h.grid().n(), self.n);
                h.first().clone()
            }
        })
    }

    pub fn velocity_history(&self) -> anyhow::Result<VelocityHistory> {
        match self.history {
            HistorySource::Solve => Ok(solve(&self.initial_field()?, &self.ns_params()?)?),
            HistorySource::Frozen => Ok(VelocityHistory::frozen(&self.initial_field()?, self.ns_params()?)?),
            HistorySource::File => {
                let path = self.history_file.as_ref().expect("validated");
                read_history(path)
            }
        }
    }

    pub fn loop_state(&self, anchor: f64) -> anyhow::Result<LoopState> {
        let h = self.loop_h_max;
        Ok(match self.loop_kind {
            LoopKind::Square => LoopState::square(Point::new(self.loop_x0, self.loop_y0), self.loop_side, h, anchor)?,
            LoopKind::Circle => LoopState::circle(Point::new(self.loop_cx, self.loop_cy), self.loop_radius, h, anchor)?,
            LoopKind::Polyline => {
                let v: Vec<Point> = self.loop_points.iter().map(|p| Point::new(p[0], p[1])).collect();
                LoopState::polygon(&v, h, anchor)?
            }
        })
    }

    /// `(anchor, eval)` times, with command-dependent defaults.
    fn times(&self, h: &VelocityHistory, default_anchor: f64) -> (f64, f64) {
        (
            self.t_anchor.unwrap_or(default_anchor),
            self.t_eval.unwrap_or(0.5 * (h.t0() + h.tf())),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct HistoryHeader {
    format: String,
    version: u32,
    n: usize,
    nu: f64,
    t0: f64,
    tf: f64,
    dt: f64,
    snap_stride: usize,
    times: Vec<f64>,
    endianness: String,
}

/// One JSON header line, then for each snapshot the physical-grid values of
/// `u` and then `v` as little-endian `f64`, row-major with `y` outer.
pub fn encode_history(h: &VelocityHistory) -> Vec<u8> {
    let p = h.params();
    let header = HistoryHeader {
        format: HISTORY_FORMAT.into(),
        version: HISTORY_VERSION,
        n: h.grid().n(),
        nu: p.nu,
        t0: p.t0,
        tf: p.tf,
        dt: p.dt,
        snap_stride: p.snap_stride,
        times: h.times().to_vec(),
        endianness: "little".into(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (_, f) in h.snapshots() {
        let (u, v) = f.grid_values();
        for x in u.iter().chain(&v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_history(bytes: &[u8]) -> anyhow::Result<VelocityHistory> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| anyhow!("history file has no header line"))?;
    let header: HistoryHeader = serde_json::from_slice(&bytes[..nl]).context("parsing history header")?;
    ensure!(header.format == HISTORY_FORMAT, "not a history file (format {:?})", header.format);
    ensure!(header.version == HISTORY_VERSION, "unsupported history version {}", header.version);
    ensure!(header.endianness == "little", "unsupported endianness {:?}", header.endianness);
    let grid = GridSpec::new(header.n)?;
    let per = 2 * grid.len() * 8;
    let body = &bytes[nl + 1..];
    ensure!(
        body.len() == per * header.times.len(),
        "history body has {} bytes, expected {} for {} snapshots",
        body.len(),
        per * header.times.len(),
        header.times.len()
    );
    let params = NsParams::new(header.nu, header.dt, header.t0, header.tf, header.snap_stride)?;
    let floats = |chunk: &[u8]| -> Vec<f64> {
        chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect()
    };
    let snaps = header
        .times
        .iter()
        .zip(body.chunks_exact(per))
        .map(|(&t, chunk)| {
            let vals = floats(chunk);
            let (u, v) = vals.split_at(grid.len());
            let f = VectorField::from_grid_values(grid, u, v)?.dealiased();
            Ok((t, project_divergence_free(&f)))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(VelocityHistory::new(params, snaps)?)
}

pub fn write_history(path: &Path, h: &VelocityHistory) -> anyhow::Result<()> {
    fs::write(path, encode_history(h)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_history(path: &Path) -> anyhow::Result<VelocityHistory> {
    let bytes = fs::read(path).with_context(|| format!("reading history {}", path.display()))?;
    decode_history(&bytes).with_context(|| format!("in history file {}", path.display()))
}

/// `f64` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    version: String,
    config_sha256: String,
    runtime_seconds: f64,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, command: &str, cfg: &RunConfig, started: Instant, body: T) -> anyhow::Result<()> {
    let doc = Envelope {
        command,
        version: version_string(),
        config_sha256: cfg.hash(),
        runtime_seconds: started.elapsed().as_secs_f64(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = Vec<String>>) -> anyhow::Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.join(",")).expect("string write");
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(s.as_bytes())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Kelvin,
    Action,
    Weber,
    ReverseKelvin,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Kelvin => "kelvin",
            Command::Action => "action",
            Command::Weber => "weber",
            Command::ReverseKelvin => "reverse-kelvin",
        }
    }
}

/// Result of a command: whether its verdict passed and the files written.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    pub files: Vec<PathBuf>,
}

/// Loads `config`, applies overrides and runs `cmd`, writing into `out` (or
/// the config's `out_dir`, or the current directory).
pub fn run(cmd: Command, config: &Path, out: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Outcome> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    run_config(cmd, &cfg, &dir)
}

pub fn run_config(cmd: Command, cfg: &RunConfig, dir: &Path) -> anyhow::Result<Outcome> {
    let started = Instant::now();
    match cmd {
        Command::Solve => cmd_solve(cfg, dir, started),
        Command::Kelvin => cmd_kelvin(cfg, dir, started, false),
        Command::ReverseKelvin => cmd_kelvin(cfg, dir, started, true),
        Command::Action => cmd_action(cfg, dir, started),
        Command::Weber => cmd_weber(cfg, dir, started),
    }
}

#[derive(Serialize)]
struct SolveSummary {
    n: usize,
    nu: f64,
    times: Vec<f64>,
    energy: Vec<f64>,
    final_energy: f64,
    residual_time: f64,
    final_residual_norm: f64,
}

fn cmd_solve(cfg: &RunConfig, dir: &Path, started: Instant) -> anyhow::Result<Outcome> {
    if cfg.history != HistorySource::Solve {
        bail!("solve requires history = \"solve\"");
    }
    let h = cfg.velocity_history()?;
    let hist = dir.join("history.bin");
    write_history(&hist, &h)?;
    let energies: Vec<f64> = h.snapshots().map(|(_, f)| energy(f)).collect();
    // last snapshot where the centred stencil fits
    let residual_time = h.times()[h.len() - 2];
    let final_residual_norm = ns_residual(&h, residual_time)?.l2_norm();
    let summary = SolveSummary {
        n: cfg.n,
        nu: cfg.nu,
        times: h.times().to_vec(),
        final_energy: *energies.last().expect("two snapshots"),
        energy: energies,
        residual_time,
        final_residual_norm,
    };
    let json = dir.join("solve.json");
    write_json(&json, "solve", cfg, started, summary)?;
    Ok(Outcome {
        pass: true,
        files: vec![hist, json],
    })
}

#[derive(Serialize)]
struct KelvinReport {
    t_anchor: f64,
    t_eval: f64,
    #[serde(flatten)]
    estimate: CirculationEstimate,
    pass: bool,
}

fn cmd_kelvin(cfg: &RunConfig, dir: &Path, started: Instant, reversed: bool) -> anyhow::Result<Outcome> {
    let h = cfg.velocity_history()?;
    let (t_anchor, t_eval) = cfg.times(&h, if reversed { h.t0() } else { h.tf() });
    let lp = cfg.loop_state(t_anchor)?;
    let ens = cfg.ensemble()?;
    let check = if reversed {
        anti_kelvin_check(&h, &lp, t_eval, &ens)?
    } else {
        kelvin_martingale_check(&h, &lp, t_eval, &ens)?
    };
    let name = if reversed { "reverse-kelvin" } else { "kelvin" };
    let csv = dir.join(format!("{name}.csv"));
    write_csv(
        &csv,
        "sample_index,circulation",
        check.samples.iter().enumerate().map(|(i, c)| vec![i.to_string(), fmt_f64(*c)]),
    )?;
    let pass = check.estimate.passes();
    let json = dir.join(format!("{name}.json"));
    write_json(
        &json,
        name,
        cfg,
        started,
        KelvinReport {
            t_anchor,
            t_eval,
            estimate: check.estimate,
            pass,
        },
    )?;
    Ok(Outcome {
        pass,
        files: vec![csv, json],
    })
}

fn cmd_action(cfg: &RunConfig, dir: &Path, started: Instant) -> anyhow::Result<Outcome> {
    let h = cfg.velocity_history()?;
    let family = standard_family(&h)?;
    let report: StationarityReport = stationarity_report(&h, &family, cfg.stationarity_tol)?;
    let json = dir.join("action.json");
    let pass = report.pass;
    write_json(&json, "action", cfg, started, report)?;
    Ok(Outcome {
        pass,
        files: vec![json],
    })
}

#[derive(Serialize)]
struct WeberSample {
    sample_index: usize,
    lhs: f64,
    rhs: f64,
    diff: f64,
    pass: bool,
}

#[derive(Serialize)]
struct WeberReport {
    t_anchor: f64,
    t_eval: f64,
    rel_tol: f64,
    max_diff: f64,
    samples: Vec<WeberSample>,
    pass: bool,
}

fn cmd_weber(cfg: &RunConfig, dir: &Path, started: Instant) -> anyhow::Result<Outcome> {
    let h = cfg.velocity_history()?;
    let (t_anchor, t_eval) = cfg.times(&h, h.tf());
    let lp = cfg.loop_state(t_anchor)?;
    let pairs = weber_identities(&h, &lp, t_eval, &cfg.ensemble()?)?;
    let samples: Vec<WeberSample> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(lhs, rhs))| {
            let diff = (lhs - rhs).abs();
            WeberSample {
                sample_index: i,
                lhs,
                rhs,
                diff,
                pass: diff <= cfg.weber_rel_tol * lhs.abs().max(rhs.abs()).max(1.0),
            }
        })
        .collect();
    let pass = samples.iter().all(|s| s.pass);
    let report = WeberReport {
        t_anchor,
        t_eval,
        rel_tol: cfg.weber_rel_tol,
        max_diff: samples.iter().map(|s| s.diff).fold(0.0, f64::max),
        samples,
        pass,
    };
    let json = dir.join("weber.json");
    write_json(&json, "weber", cfg, started, report)?;
    Ok(Outcome {
        pass,
        files: vec![json],
    })
}
