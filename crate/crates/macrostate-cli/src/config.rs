//! Scenario configuration: the TOML schema, dot-path overrides, and the
//! resolution pass that makes every default explicit.
//!
//! Parsing is deliberately strict — unknown keys are rejected and per-kind
//! field requirements are checked with messages that name the offending
//! config path. Resolution returns the fully materialized configuration
//! (exactly what the run manifest records) together with the list of config
//! paths that were filled in from defaults, so a manifest always shows
//! which knobs the scenario author left to the tool.

use macrostate::model::DEFAULT_DIM_CAP;
use macrostate::{
    HistoryTerm, InversionSettings, MemorySettings, ModelKind, ModelSpec, PreparationSchedule,
    TestFunction,
};
use serde::{Deserialize, Serialize};

/// Reads and parses the config file; TOML syntax errors keep the parser's
/// line/column diagnostics.
pub fn load_document(path: &str) -> Result<toml::Value, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config `{path}`: {e}"))?;
    text.parse::<toml::Value>()
        .map_err(|e| format!("config `{path}` is not valid TOML:\n{e}"))
}

/// Applies one `--override key=value` to the parsed document before typed
/// deserialization. The key is a dot path into the nested tables; missing
/// intermediate tables are created. The value is parsed as a TOML value
/// (so `mem.dt=0.05`, `model.periodic=true`, and `initial.gibbs=[0.1,0.2]`
/// all work) and falls back to a bare string when that fails.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<(), String> {
    let (path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not of the form key=value"))?;
    if path.is_empty() {
        return Err(format!("override `{spec}` has an empty key"));
    }
    let value = parse_override_value(raw_value);
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(format!("override key `{path}` has an empty path segment"));
    }
    let (parents, last) = segments.split_at(segments.len() - 1);
    let mut node = doc;
    for (i, seg) in parents.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            format!(
                "override key `{path}`: `{}` is not a table",
                segments[..i].join(".")
            )
        })?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node.as_table_mut().ok_or_else(|| {
        format!(
            "override key `{path}`: `{}` is not a table",
            parents.join(".")
        )
    })?;
    table.insert(last[0].to_string(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v was just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// The requested pipelines; names match the config strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Unitary evolution of the initial density operator, projected back
    /// onto the exponential family at every grid time.
    Exact,
    /// The first-order memory-kernel closure for the multipliers.
    Memory,
    /// The coarse-grained time-local generator at lag `mem.tau`.
    Semigroup,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Exact => "exact",
            Pipeline::Memory => "memory",
            Pipeline::Semigroup => "semigroup",
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Raw (as-parsed) schema: every defaultable knob is optional so that
// resolution can tell "user wrote the default" from "default applied".
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    model: RawModel,
    /// Keep density modes up to this wavenumber (capped at `num_sites / 2`).
    mode_cutoff: usize,
    initial: RawInitial,
    pipelines: Vec<Pipeline>,
    mem: Option<RawMem>,
    inversion: Option<RawInversion>,
    t_end: f64,
    output_dir: Option<String>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: String,
    num_sites: usize,
    local_dim: Option<usize>,
    j_coupling: Option<f64>,
    delta: Option<f64>,
    field: Option<f64>,
    transverse_field: Option<f64>,
    periodic: Option<bool>,
    include_h_squared: Option<bool>,
    dim_cap: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    gibbs: Option<Vec<f64>>,
    prepared: Option<RawPrepared>,
    quench: Option<RawQuench>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrepared {
    t_start: f64,
    t0: f64,
    zeta_t0: Vec<f64>,
    gamma_start: Option<Vec<f64>>,
    density_terms: Option<Vec<RawTerm>>,
    current_terms: Option<Vec<RawTerm>>,
    quadrature_step: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    operator_index: usize,
    coefficient: f64,
    function: RawFunction,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    kind: String,
    omega: Option<f64>,
    value: Option<f64>,
    center: Option<f64>,
    width: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuench {
    zeta: Vec<f64>,
    model: RawModel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMem {
    tau: f64,
    dt: f64,
    truncate_history: Option<bool>,
    order: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInversion {
    tol: Option<f64>,
    max_iters: Option<usize>,
    damping: Option<f64>,
    regularization: Option<f64>,
    divergence_bound: Option<f64>,
}

// ---------------------------------------------------------------------------
// Resolved schema: no options left (strictly informative ones aside), and
// serializable into the manifest.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub model: ModelSection,
    pub mode_cutoff: usize,
    pub initial: InitialCondition,
    pub pipelines: Vec<Pipeline>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mem: Option<MemSection>,
    pub inversion: InversionSection,
    pub t_end: f64,
    /// Start of the comparison grid (`prepared.t0`, otherwise 0).
    pub t0: f64,
    /// Shared output grid step for all pipelines.
    pub grid_dt: f64,
    /// Number of grid steps; every series has `steps + 1` rows.
    pub steps: usize,
    pub output_dir: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSection {
    pub kind: String,
    pub num_sites: usize,
    pub local_dim: usize,
    pub j_coupling: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transverse_field: Option<f64>,
    pub periodic: bool,
    pub include_h_squared: bool,
    pub dim_cap: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    Gibbs { zeta: Vec<f64> },
    Prepared(PreparedSection),
    Quench { zeta: Vec<f64>, model: ModelSection },
}

#[derive(Debug, Clone, Serialize)]
pub struct PreparedSection {
    pub t_start: f64,
    pub t0: f64,
    pub zeta_t0: Vec<f64>,
    /// Filled with zeros of the right length during scenario building when
    /// absent — the constraint count is only known once the model exists,
    /// because extras linearly dependent on the densities are dropped.
    pub gamma_start: Option<Vec<f64>>,
    pub density_terms: Vec<TermSection>,
    pub current_terms: Vec<TermSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature_step: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TermSection {
    pub operator_index: usize,
    pub coefficient: f64,
    pub function: FunctionSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemSection {
    pub tau: f64,
    pub dt: f64,
    pub truncate_history: bool,
    pub order: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct InversionSection {
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub regularization: f64,
    pub divergence_bound: f64,
}

impl ModelSection {
    pub fn to_spec(&self) -> Result<ModelSpec, String> {
        let kind = match self.kind.as_str() {
            "xxz_chain" => ModelKind::XxzChain {
                j_coupling: self.j_coupling,
                delta: self.delta.expect("validated at resolve time"),
                field: self.field.expect("validated at resolve time"),
            },
            "transverse_ising_chain" => ModelKind::TransverseIsingChain {
                j_coupling: self.j_coupling,
                transverse_field: self.transverse_field.expect("validated at resolve time"),
            },
            other => return Err(format!("model kind `{other}` is not buildable")),
        };
        Ok(ModelSpec {
            kind,
            num_sites: self.num_sites,
            local_dim: self.local_dim,
            periodic: self.periodic,
            include_h_squared: self.include_h_squared,
            dim_cap: self.dim_cap,
        })
    }

    /// Bonds carrying current observables: nearest-neighbour pairs, plus
    /// the wrap bond on periodic chains of three or more sites.
    pub fn num_bonds(&self) -> usize {
        let open = self.num_sites.saturating_sub(1);
        if self.periodic && self.num_sites > 2 {
            open + 1
        } else {
            open
        }
    }
}

impl InitialCondition {
    /// Dynamics start time implied by the initial condition.
    pub fn t0(&self) -> f64 {
        match self {
            InitialCondition::Prepared(p) => p.t0,
            _ => 0.0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            InitialCondition::Gibbs { .. } => "gibbs",
            InitialCondition::Prepared(_) => "prepared",
            InitialCondition::Quench { .. } => "quench",
        }
    }
}

impl PreparedSection {
    pub fn to_schedule(&self) -> PreparationSchedule {
        PreparationSchedule {
            t_start: self.t_start,
            t0: self.t0,
            gamma_start: self
                .gamma_start
                .clone()
                .expect("gamma_start is filled during scenario building"),
            density_terms: self.density_terms.iter().map(TermSection::to_term).collect(),
            current_terms: self.current_terms.iter().map(TermSection::to_term).collect(),
            zeta_t0: self.zeta_t0.clone(),
            quadrature_step: self.quadrature_step,
        }
    }
}

impl TermSection {
    fn to_term(&self) -> HistoryTerm {
        HistoryTerm {
            operator_index: self.operator_index,
            coefficient: self.coefficient,
            function: self.function.to_test_function(),
        }
    }
}

impl FunctionSection {
    fn to_test_function(&self) -> TestFunction {
        match self.kind.as_str() {
            "cosine" => TestFunction::Cosine {
                omega: self.omega.expect("validated at resolve time"),
            },
            "constant" => TestFunction::Constant {
                value: self.value.expect("validated at resolve time"),
            },
            "gaussian_window" => TestFunction::GaussianWindow {
                center: self.center.expect("validated at resolve time"),
                width: self.width.expect("validated at resolve time"),
            },
            other => unreachable!("function kind `{other}` passed validation"),
        }
    }
}

impl MemSection {
    pub fn to_settings(&self) -> MemorySettings {
        MemorySettings {
            tau: self.tau,
            truncate_history: self.truncate_history,
            dt: self.dt,
            order: self.order,
        }
    }
}

impl InversionSection {
    pub fn to_settings(&self) -> InversionSettings {
        InversionSettings {
            tol: self.tol,
            max_iters: self.max_iters,
            damping: self.damping,
            regularization: self.regularization,
            divergence_bound: self.divergence_bound,
        }
    }
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

fn require<T>(value: Option<T>, path: &str, why: &str) -> Result<T, String> {
    value.ok_or_else(|| format!("missing field `{path}` ({why})"))
}

fn forbid<T>(value: &Option<T>, path: &str, why: &str) -> Result<(), String> {
    if value.is_some() {
        Err(format!("field `{path}` does not apply ({why})"))
    } else {
        Ok(())
    }
}

impl RawConfig {
    pub fn from_document(doc: toml::Value) -> Result<RawConfig, String> {
        doc.try_into()
            .map_err(|e| format!("config schema error: {e}"))
    }

    /// Fills defaults, checks every cross-field rule that does not need the
    /// operators built, and returns the materialized config plus the list
    /// of config paths whose values came from defaults.
    pub fn resolve(self) -> Result<(ResolvedConfig, Vec<String>), String> {
        let mut defaults = Vec::new();
        let model = resolve_model(self.model, "model", &mut defaults)?;

        if self.pipelines.is_empty() {
            return Err(
                "`pipelines` must list at least one of \"exact\", \"memory\", \"semigroup\""
                    .into(),
            );
        }
        for (i, p) in self.pipelines.iter().enumerate() {
            if self.pipelines[..i].contains(p) {
                return Err(format!("`pipelines` lists `{p}` more than once"));
            }
        }

        let needs_mem = self
            .pipelines
            .iter()
            .find(|p| matches!(p, Pipeline::Memory | Pipeline::Semigroup));
        let mem = match (self.mem, needs_mem) {
            (Some(raw), _) => Some(resolve_mem(raw, &mut defaults)?),
            (None, Some(p)) => {
                return Err(format!(
                    "missing section `mem`: the `{p}` pipeline needs `mem.tau` and `mem.dt`"
                ));
            }
            (None, None) => None,
        };

        let inversion = match self.inversion {
            Some(raw) => resolve_inversion(raw, &mut defaults)?,
            None => {
                defaults.push("inversion".into());
                let d = InversionSettings::default();
                InversionSection {
                    tol: d.tol,
                    max_iters: d.max_iters,
                    damping: d.damping,
                    regularization: d.regularization,
                    divergence_bound: d.divergence_bound,
                }
            }
        };

        let initial = resolve_initial(self.initial, &model, self.mode_cutoff, &mut defaults)?;
        let t0 = initial.t0();

        if !self.t_end.is_finite() {
            return Err(format!("`t_end` must be finite, got {}", self.t_end));
        }
        let span = self.t_end - t0;
        if !(span > 0.0) {
            return Err(format!(
                "`t_end` = {} must exceed the start time t0 = {t0}",
                self.t_end
            ));
        }
        let grid_dt = match &mem {
            Some(m) => m.dt,
            None => {
                defaults.push("grid_dt".into());
                span / 100.0
            }
        };
        let steps = (span / grid_dt).round() as usize;
        if steps == 0 || (steps as f64 * grid_dt - span).abs() > 1e-6 * span.max(1.0) {
            return Err(format!(
                "t_end - t0 = {span} is not a whole number of steps of `mem.dt` = {grid_dt}"
            ));
        }

        let output_dir = self.output_dir.unwrap_or_else(|| {
            defaults.push("output_dir".into());
            "out".into()
        });
        let seed = self.seed.unwrap_or_else(|| {
            defaults.push("seed".into());
            0
        });

        Ok((
            ResolvedConfig {
                model,
                mode_cutoff: self.mode_cutoff,
                initial,
                pipelines: self.pipelines,
                mem,
                inversion,
                t_end: self.t_end,
                t0,
                grid_dt,
                steps,
                output_dir,
                seed,
            },
            defaults,
        ))
    }
}

fn resolve_model(
    raw: RawModel,
    prefix: &str,
    defaults: &mut Vec<String>,
) -> Result<ModelSection, String> {
    let kind = raw.kind;
    let (delta, field, transverse_field) = match kind.as_str() {
        "xxz_chain" => {
            forbid(
                &raw.transverse_field,
                &format!("{prefix}.transverse_field"),
                "kind = \"xxz_chain\" has no transverse field",
            )?;
            (
                Some(require(
                    raw.delta,
                    &format!("{prefix}.delta"),
                    "anisotropy of the xxz chain",
                )?),
                Some(require(
                    raw.field,
                    &format!("{prefix}.field"),
                    "longitudinal field of the xxz chain",
                )?),
                None,
            )
        }
        "transverse_ising_chain" => {
            forbid(
                &raw.delta,
                &format!("{prefix}.delta"),
                "kind = \"transverse_ising_chain\" has no anisotropy",
            )?;
            forbid(
                &raw.field,
                &format!("{prefix}.field"),
                "kind = \"transverse_ising_chain\" has no longitudinal field",
            )?;
            (
                None,
                None,
                Some(require(
                    raw.transverse_field,
                    &format!("{prefix}.transverse_field"),
                    "transverse field of the ising chain",
                )?),
            )
        }
        other => {
            return Err(format!(
                "{prefix}.kind `{other}` is not recognized (expected \"xxz_chain\" or \"transverse_ising_chain\")"
            ));
        }
    };
    let j_coupling = require(
        raw.j_coupling,
        &format!("{prefix}.j_coupling"),
        "bond coupling strength",
    )?;
    if raw.num_sites == 0 {
        return Err(format!("{prefix}.num_sites must be at least 1"));
    }
    let local_dim = defaulted(raw.local_dim, 2, &format!("{prefix}.local_dim"), defaults);
    let periodic = defaulted(raw.periodic, false, &format!("{prefix}.periodic"), defaults);
    let include_h_squared = defaulted(
        raw.include_h_squared,
        false,
        &format!("{prefix}.include_h_squared"),
        defaults,
    );
    let dim_cap = defaulted(
        raw.dim_cap,
        DEFAULT_DIM_CAP,
        &format!("{prefix}.dim_cap"),
        defaults,
    );
    Ok(ModelSection {
        kind,
        num_sites: raw.num_sites,
        local_dim,
        j_coupling,
        delta,
        field,
        transverse_field,
        periodic,
        include_h_squared,
        dim_cap,
    })
}

fn defaulted<T>(value: Option<T>, fallback: T, path: &str, defaults: &mut Vec<String>) -> T {
    match value {
        Some(v) => v,
        None => {
            defaults.push(path.to_string());
            fallback
        }
    }
}

fn resolve_mem(raw: RawMem, defaults: &mut Vec<String>) -> Result<MemSection, String> {
    if !(raw.dt > 0.0 && raw.dt.is_finite()) {
        return Err(format!("`mem.dt` must be a positive step, got {}", raw.dt));
    }
    if !(raw.tau >= raw.dt && raw.tau.is_finite()) {
        return Err(format!(
            "`mem.tau` = {} must be at least one step `mem.dt` = {}",
            raw.tau, raw.dt
        ));
    }
    let order = defaulted(raw.order, 1, "mem.order", defaults);
    if order != 1 {
        return Err(format!(
            "`mem.order` = {order}: only the first-order closure is implemented"
        ));
    }
    let truncate_history = defaulted(raw.truncate_history, true, "mem.truncate_history", defaults);
    Ok(MemSection {
        tau: raw.tau,
        dt: raw.dt,
        truncate_history,
        order,
    })
}

fn resolve_inversion(
    raw: RawInversion,
    defaults: &mut Vec<String>,
) -> Result<InversionSection, String> {
    let d = InversionSettings::default();
    let tol = defaulted(raw.tol, d.tol, "inversion.tol", defaults);
    let max_iters = defaulted(raw.max_iters, d.max_iters, "inversion.max_iters", defaults);
    let damping = defaulted(raw.damping, d.damping, "inversion.damping", defaults);
    let regularization = defaulted(
        raw.regularization,
        d.regularization,
        "inversion.regularization",
        defaults,
    );
    let divergence_bound = defaulted(
        raw.divergence_bound,
        d.divergence_bound,
        "inversion.divergence_bound",
        defaults,
    );
    if !(tol > 0.0) {
        return Err(format!("`inversion.tol` must be positive, got {tol}"));
    }
    if max_iters == 0 {
        return Err("`inversion.max_iters` must be at least 1".into());
    }
    Ok(InversionSection {
        tol,
        max_iters,
        damping,
        regularization,
        divergence_bound,
    })
}

fn resolve_initial(
    raw: RawInitial,
    model: &ModelSection,
    mode_cutoff: usize,
    defaults: &mut Vec<String>,
) -> Result<InitialCondition, String> {
    let given =
        raw.gibbs.is_some() as u8 + raw.prepared.is_some() as u8 + raw.quench.is_some() as u8;
    if given != 1 {
        return Err(
            "`initial` must contain exactly one of `gibbs`, `prepared`, `quench`".into(),
        );
    }
    if let Some(zeta) = raw.gibbs {
        check_finite(&zeta, "initial.gibbs")?;
        return Ok(InitialCondition::Gibbs { zeta });
    }
    if let Some(p) = raw.prepared {
        return Ok(InitialCondition::Prepared(resolve_prepared(
            p, model, defaults,
        )?));
    }
    let q = raw.quench.expect("one branch must be present");
    let qmodel = resolve_model(q.model, "initial.quench.model", defaults)?;
    if qmodel.num_sites != model.num_sites || qmodel.local_dim != model.local_dim {
        return Err(format!(
            "`initial.quench.model` must act on the same chain as `model`: \
             {} sites (local dimension {}) vs {} sites (local dimension {})",
            qmodel.num_sites, qmodel.local_dim, model.num_sites, model.local_dim
        ));
    }
    check_finite(&q.zeta, "initial.quench.zeta")?;
    Ok(InitialCondition::Quench {
        zeta: q.zeta,
        model: qmodel,
    })
}

fn resolve_prepared(
    raw: RawPrepared,
    model: &ModelSection,
    defaults: &mut Vec<String>,
) -> Result<PreparedSection, String> {
    if !(raw.t_start.is_finite() && raw.t0.is_finite()) {
        return Err("`initial.prepared` endpoint times must be finite".into());
    }
    if raw.t_start > raw.t0 {
        return Err(format!(
            "`initial.prepared.t_start` = {} must not exceed `t0` = {}",
            raw.t_start, raw.t0
        ));
    }
    let macro_len = model.num_macrostate_ops();
    if raw.zeta_t0.len() != macro_len {
        return Err(format!(
            "`initial.prepared.zeta_t0` has {} entries but the model carries {macro_len} \
             macrostate operators ({} site densities plus the conserved extras)",
            raw.zeta_t0.len(),
            model.num_sites
        ));
    }
    check_finite(&raw.zeta_t0, "initial.prepared.zeta_t0")?;
    let gamma_start = match raw.gamma_start {
        Some(g) => {
            if g.len() != macro_len {
                return Err(format!(
                    "`initial.prepared.gamma_start` has {} entries, expected {macro_len}",
                    g.len()
                ));
            }
            check_finite(&g, "initial.prepared.gamma_start")?;
            g
        }
        None => {
            defaults.push("initial.prepared.gamma_start".into());
            vec![0.0; macro_len]
        }
    };
    let density_terms = resolve_terms(
        raw.density_terms,
        "initial.prepared.density_terms",
        model.num_sites,
        "site densities",
        defaults,
    )?;
    let current_terms = resolve_terms(
        raw.current_terms,
        "initial.prepared.current_terms",
        model.num_bonds(),
        "bond currents",
        defaults,
    )?;
    let span = raw.t0 - raw.t_start;
    let quadrature_step = match raw.quadrature_step {
        Some(h) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(format!(
                    "`initial.prepared.quadrature_step` must be positive, got {h}"
                ));
            }
            Some(h)
        }
        None if span > 0.0 => {
            defaults.push("initial.prepared.quadrature_step".into());
            Some(span / 64.0)
        }
        None => None,
    };
    Ok(PreparedSection {
        t_start: raw.t_start,
        t0: raw.t0,
        zeta_t0: raw.zeta_t0,
        gamma_start,
        density_terms,
        current_terms,
        quadrature_step,
    })
}

fn resolve_terms(
    raw: Option<Vec<RawTerm>>,
    prefix: &str,
    op_count: usize,
    op_kind: &str,
    defaults: &mut Vec<String>,
) -> Result<Vec<TermSection>, String> {
    let raw = match raw {
        Some(terms) => terms,
        None => {
            defaults.push(prefix.to_string());
            return Ok(vec![]);
        }
    };
    raw.into_iter()
        .enumerate()
        .map(|(i, term)| {
            let path = format!("{prefix}[{i}]");
            if term.operator_index >= op_count {
                return Err(format!(
                    "`{path}.operator_index` = {} is out of range: the model has {op_count} {op_kind}",
                    term.operator_index
                ));
            }
            if !term.coefficient.is_finite() {
                return Err(format!("`{path}.coefficient` must be finite"));
            }
            let function = resolve_function(term.function, &format!("{path}.function"))?;
            Ok(TermSection {
                operator_index: term.operator_index,
                coefficient: term.coefficient,
                function,
            })
        })
        .collect()
}

fn resolve_function(raw: RawFunction, path: &str) -> Result<FunctionSection, String> {
    match raw.kind.as_str() {
        "cosine" => {
            forbid(&raw.value, &format!("{path}.value"), "cosine takes `omega`")?;
            forbid(&raw.center, &format!("{path}.center"), "cosine takes `omega`")?;
            forbid(&raw.width, &format!("{path}.width"), "cosine takes `omega`")?;
            let omega = require(raw.omega, &format!("{path}.omega"), "angular frequency")?;
            Ok(FunctionSection {
                kind: raw.kind,
                omega: Some(omega),
                value: None,
                center: None,
                width: None,
            })
        }
        "constant" => {
            forbid(&raw.omega, &format!("{path}.omega"), "constant takes `value`")?;
            forbid(&raw.center, &format!("{path}.center"), "constant takes `value`")?;
            forbid(&raw.width, &format!("{path}.width"), "constant takes `value`")?;
            let value = require(raw.value, &format!("{path}.value"), "constant weight")?;
            Ok(FunctionSection {
                kind: raw.kind,
                omega: None,
                value: Some(value),
                center: None,
                width: None,
            })
        }
        "gaussian_window" => {
            forbid(
                &raw.omega,
                &format!("{path}.omega"),
                "gaussian_window takes `center` and `width`",
            )?;
            forbid(
                &raw.value,
                &format!("{path}.value"),
                "gaussian_window takes `center` and `width`",
            )?;
            let center = require(raw.center, &format!("{path}.center"), "window center")?;
            let width = require(raw.width, &format!("{path}.width"), "window width")?;
            if !(width > 0.0) {
                return Err(format!("`{path}.width` must be positive, got {width}"));
            }
            Ok(FunctionSection {
                kind: raw.kind,
                omega: None,
                value: None,
                center: Some(center),
                width: Some(width),
            })
        }
        other => Err(format!(
            "`{path}.kind` `{other}` is not recognized (expected \"cosine\", \"constant\", or \"gaussian_window\")"
        )),
    }
}

fn check_finite(values: &[f64], path: &str) -> Result<(), String> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(format!("`{path}` contains a non-finite entry"))
    }
}
