//! Scenario files.
//!
//! A scenario is a TOML document naming a builtin problem, the ALADIN variant
//! and its parameters:
//!
//! ```toml
//! problem = "robot_ocp"          # quartic_toy | random_qp | robot_ocp
//! variant = "bilevel-cg"
//! seed = 7
//!
//! [outer]
//! rho = 1e2
//! mu = 1e6
//!
//! [inner]
//! cg_iterations = 30
//!
//! [robot_ocp]
//! preset = "desk"
//! ```
//!
//! Every value can be overridden from the command line as `--set key=value`
//! with a dotted key (`outer.rho=1e3`, `robot_ocp.horizon=4`). Values are parsed
//! as TOML and fall back to plain strings.

use std::fs;
use std::path::{Path, PathBuf};

use aladin_core::coordination::EtaSchedule;
use aladin_core::local_solver::{LocalOptions, Regularization};
use aladin_core::outer::{InnerParams, OuterParams, Variant};
use aladin_core::problems::{QuarticConfig, RandomQpConfig, RobotOcpConfig};
use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    QuarticToy,
    RandomQp,
    RobotOcp,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::QuarticToy => "quartic_toy",
            ProblemKind::RandomQp => "random_qp",
            ProblemKind::RobotOcp => "robot_ocp",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub problem: ProblemKind,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outer: OuterSection,
    #[serde(default)]
    pub inner: InnerSection,
    #[serde(default)]
    pub quartic_toy: QuarticSection,
    #[serde(default)]
    pub random_qp: RandomQpSection,
    #[serde(default)]
    pub robot_ocp: RobotSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_variant() -> String {
    Variant::CondensedExact.as_str().into()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterSection {
    pub rho: Option<f64>,
    pub mu: Option<f64>,
    /// Per-agent scaling of `Σ_i = σ_i I`; a single entry applies to all agents.
    pub sigma: Option<Vec<f64>>,
    pub tol_outer: Option<f64>,
    pub max_outer: Option<usize>,
    pub mu_growth: Option<f64>,
    pub mu_max: Option<f64>,
    pub adaptive_floor_cap: Option<f64>,
    pub tol_local: Option<f64>,
    pub max_local_iter: Option<usize>,
    pub eps_act: Option<f64>,
    pub reg_floor: Option<f64>,
    /// `clamp` or `flip`.
    pub regularization: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerSection {
    pub cg_iterations: Option<usize>,
    pub admm_iterations: Option<usize>,
    pub residual_controlled: Option<bool>,
    pub max_inner: Option<usize>,
    /// Constant `η`, or the cap of the adaptive schedule.
    pub eta: Option<f64>,
    /// `constant` or `adaptive` (`η^k = min(eta, ‖m(p^k)‖)`).
    pub eta_schedule: Option<String>,
    pub rho_admm: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuarticSection {
    pub c: Option<[f64; 2]>,
    pub a: Option<[f64; 2]>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub initial: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomQpSection {
    pub n_agents: Option<usize>,
    /// Agent dimensions; one entry applies to all agents.
    pub dims: Option<Vec<usize>>,
    pub n_c: Option<usize>,
    pub n_ineq: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSection {
    /// `desk` (2 s horizon, the default) or `long_horizon` (10 s).
    pub preset: Option<String>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub min_distance: Option<f64>,
    pub q: Option<[f64; 3]>,
    pub r: Option<[f64; 2]>,
    pub starts: Option<[[f64; 3]; 2]>,
    pub targets: Option<[[f64; 3]; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub trace: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, trace: true }
    }
}

fn yes() -> bool {
    true
}

/// Applies `key=value` with a dotted key to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{assignment}' is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed override key '{key}'");
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override '{key}': '{part}' is not a table"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl Scenario {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let sc: Scenario = table.try_into().context("invalid scenario")?;
        sc.variant()?;
        Ok(sc)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("scenario is not valid TOML")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, overrides).with_context(|| format!("in {}", path.display()))
    }

    pub fn variant(&self) -> Result<Variant> {
        self.variant.parse().map_err(|e: String| anyhow!(e))
    }

    /// Outer and inner parameters with problem-specific defaults.
    pub fn params(&self) -> Result<(OuterParams, InnerParams)> {
        let o = &self.outer;
        let robot = self.problem == ProblemKind::RobotOcp;
        let base_local = LocalOptions::default();
        let regularization = match o.regularization.as_deref() {
            None | Some("clamp") => Regularization::Clamp,
            Some("flip") => Regularization::Flip,
            Some(other) => bail!("unknown regularization '{other}' (expected clamp or flip)"),
        };
        let local = LocalOptions {
            tol: o.tol_local.unwrap_or(base_local.tol),
            max_iter: o.max_local_iter.unwrap_or(base_local.max_iter),
            eps_act: o.eps_act.unwrap_or(base_local.eps_act),
            // The robot copies carry no objective weight, so its reduced
            // Hessians need a much larger floor.
            reg_floor: o.reg_floor.unwrap_or(if robot { 0.3 } else { base_local.reg_floor }),
            regularization,
        };
        let base = OuterParams::default();
        let outer = OuterParams {
            rho: o.rho.unwrap_or(base.rho),
            mu: o.mu.unwrap_or(base.mu),
            sigma: o.sigma.clone().unwrap_or_default(),
            tol_outer: o.tol_outer.unwrap_or(base.tol_outer),
            max_outer: o.max_outer.unwrap_or(if robot { 100 } else { base.max_outer }),
            mu_growth: o.mu_growth.unwrap_or(base.mu_growth),
            mu_max: o.mu_max.unwrap_or(base.mu_max),
            adaptive_floor_cap: o.adaptive_floor_cap,
            local,
        };
        if !(outer.rho > 0.0) || !(outer.mu > 0.0) {
            bail!("rho and mu must be positive");
        }
        if outer.sigma.iter().any(|s| !(*s > 0.0)) {
            bail!("sigma entries must be positive");
        }

        let i = &self.inner;
        let base = InnerParams::default();
        let cap = i.eta.unwrap_or(0.1);
        let eta = match i.eta_schedule.as_deref() {
            None | Some("constant") => EtaSchedule::Constant(cap),
            Some("adaptive") => EtaSchedule::Adaptive { cap },
            Some(other) => bail!("unknown eta schedule '{other}' (expected constant or adaptive)"),
        };
        let inner = InnerParams {
            cg_iterations: i.cg_iterations.unwrap_or(if robot { 30 } else { base.cg_iterations }),
            admm_iterations: i.admm_iterations.unwrap_or(base.admm_iterations),
            residual_controlled: i.residual_controlled.unwrap_or(base.residual_controlled),
            max_inner: i.max_inner.unwrap_or(base.max_inner),
            eta,
            rho_admm: i.rho_admm.unwrap_or(if robot { 1e-1 } else { base.rho_admm }),
        };
        if !(inner.rho_admm > 0.0) {
            bail!("rho_admm must be positive");
        }
        Ok((outer, inner))
    }

    pub fn quartic_config(&self) -> QuarticConfig {
        let q = &self.quartic_toy;
        let d = QuarticConfig::default();
        QuarticConfig {
            c: q.c.unwrap_or(d.c),
            a: q.a.unwrap_or(d.a),
            lower: q.lower.unwrap_or(d.lower),
            upper: q.upper.unwrap_or(d.upper),
            initial: q.initial.unwrap_or(d.initial),
        }
    }

    pub fn random_qp_config(&self) -> Result<RandomQpConfig> {
        let r = &self.random_qp;
        let d = RandomQpConfig::default();
        let n_agents = r.n_agents.unwrap_or(d.n_agents);
        let dims = match r.dims.as_deref() {
            None => vec![d.dims[0]; n_agents],
            Some([n]) => vec![*n; n_agents],
            Some(v) if v.len() == n_agents => v.to_vec(),
            Some(v) => bail!("random_qp.dims has {} entries for {n_agents} agents", v.len()),
        };
        if n_agents < 2 || dims.contains(&0) {
            bail!("random_qp needs at least two agents of positive dimension");
        }
        Ok(RandomQpConfig {
            n_agents,
            dims,
            n_c: r.n_c.unwrap_or(d.n_c),
            n_ineq: r.n_ineq.unwrap_or(d.n_ineq),
            seed: self.seed,
        })
    }

    pub fn robot_config(&self) -> Result<RobotOcpConfig> {
        let r = &self.robot_ocp;
        let d = match r.preset.as_deref() {
            None | Some("desk") => RobotOcpConfig::desk(),
            Some("long_horizon") => RobotOcpConfig::long_horizon(),
            Some(other) => bail!("unknown robot preset '{other}' (expected desk or long_horizon)"),
        };
        Ok(RobotOcpConfig {
            horizon: r.horizon.unwrap_or(d.horizon),
            dt: r.dt.unwrap_or(d.dt),
            min_distance: r.min_distance.unwrap_or(d.min_distance),
            q: r.q.unwrap_or(d.q),
            r: r.r.unwrap_or(d.r),
            starts: r.starts.unwrap_or(d.starts),
            targets: r.targets.unwrap_or(d.targets),
        })
    }
}
