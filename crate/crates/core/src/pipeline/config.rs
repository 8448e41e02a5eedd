//! The run configuration, read from a TOML file with sections
//! `[geometry] [phantom] [dose] [sem] [solver] [iem] [io] [eval]`.
//!
//! Every section is optional. A missing `[geometry]` (or a missing key in it)
//! takes the 64³ desk geometry; a missing `[dose]` means noiseless data; missing
//! `[sem]`/`[iem]` sections are identity stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arrays::io::Precision;
use crate::arrays::{Grid3, Sinogram, Volume};
use crate::enhance::{load_enhancer, Domain, EnhancementStage};
use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, GeometryParams, Point3};
use crate::noise::{simulate_dose, DoseModel, DosePreset, DEFAULT_COUNT_FLOOR};
use crate::phantoms::{shepp_logan_3d, sphere_phantom};
use crate::solvers::{FdkConfig, LsSolverConfig, Method};

/// Linear attenuation per unit phantom density, 1/mm.
///
/// Phantoms and sinograms are kept in density units; the dose model sees
/// `attenuation · p`. 0.02/mm puts the Shepp-Logan interior (density ≈ 1) at
/// the attenuation of water and gives line integrals up to ≈ 2.5 at desk scale.
pub const DEFAULT_ATTENUATION: f64 = 0.02;

pub const SIRT_DEFAULT_ITERS: usize = 200;

const SECTIONS: [&str; 8] = ["geometry", "phantom", "dose", "sem", "solver", "iem", "io", "eval"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    #[default]
    SheppLogan,
    Sphere,
}

/// Synthetic ground truth. `center` and `radius` are normalized and only used by `sphere`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub center: Point3,
    pub radius: f64,
    pub value: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec { kind: PhantomKind::SheppLogan, center: [0.0; 3], radius: 0.5, value: 1.0 }
    }
}

impl PhantomSpec {
    pub fn build(&self, geom: &ConeBeamGeometry) -> Result<Volume> {
        let (nx, ny, nz, vs) = (geom.nx(), geom.ny(), geom.nz(), geom.voxel_size());
        match self.kind {
            PhantomKind::SheppLogan => shepp_logan_3d(nx, ny, nz, vs),
            PhantomKind::Sphere => sphere_phantom(self.center, self.radius, self.value, nx, ny, nz, vs),
        }
    }
}

/// A dose model plus the density-to-attenuation scale it is applied at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoseSettings {
    pub model: DoseModel,
    pub attenuation: f64,
}

impl DoseSettings {
    pub fn new(model: DoseModel, attenuation: f64) -> Result<Self> {
        model.validate()?;
        if !(attenuation > 0.0 && attenuation.is_finite()) {
            return Err(Error::invalid("attenuation", format!("must be finite and > 0, got {attenuation}")));
        }
        Ok(DoseSettings { model, attenuation })
    }

    /// Noisy version of a density-unit sinogram, returned in the same units.
    pub fn simulate(&self, clean: &Sinogram) -> Result<Sinogram> {
        let mu = self.attenuation;
        let mut physical = clean.clone();
        physical.data_mut().iter_mut().for_each(|p| *p *= mu);
        let mut noisy = simulate_dose(&physical, &self.model)?;
        noisy.data_mut().iter_mut().for_each(|p| *p /= mu);
        Ok(noisy)
    }
}

/// One dose level of an evaluation sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DoseLevel {
    Preset(DosePreset),
    Counts(f64),
}

impl DoseLevel {
    pub fn i0(self) -> f64 {
        match self {
            DoseLevel::Preset(p) => p.i0(),
            DoseLevel::Counts(i0) => i0,
        }
    }

    pub fn label(self) -> String {
        match self {
            DoseLevel::Preset(DosePreset::Low) => "low".into(),
            DoseLevel::Preset(DosePreset::Clinical) => "clinical".into(),
            DoseLevel::Counts(i0) => format!("i0={i0:e}"),
        }
    }

    fn parse(value: &toml::Value) -> Result<Self> {
        match value {
            toml::Value::String(s) => s.parse().map(DoseLevel::Preset),
            toml::Value::Integer(v) => Ok(DoseLevel::Counts(*v as f64)),
            toml::Value::Float(v) => Ok(DoseLevel::Counts(*v)),
            other => Err(Error::invalid("doses", format!("expected a preset name or a count, got {other}"))),
        }
    }
}

impl std::str::FromStr for DoseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<f64>() {
            Ok(i0) => Ok(DoseLevel::Counts(i0)),
            Err(_) => s.parse().map(DoseLevel::Preset),
        }
    }
}

/// A reconstruction method with or without the enhancement stages around it,
/// written `nag`, `nag+sem`, `nag+sem+iem`, `fdk+iem` and so on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub method: Method,
    pub sem: bool,
    pub iem: bool,
}

impl Variant {
    pub const fn bare(method: Method) -> Self {
        Variant { method, sem: false, iem: false }
    }

    /// Row label in the style of the results table, e.g. `NAG-LS+SEM+IEM`.
    pub fn label(&self) -> String {
        let mut label = self.method.label().to_string();
        if self.sem {
            label.push_str("+SEM");
        }
        if self.iem {
            label.push_str("+IEM");
        }
        label
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}{}", self.method, if self.sem { "+sem" } else { "" }, if self.iem { "+iem" } else { "" })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+').map(str::trim);
        let method: Method = parts.next().unwrap_or_default().parse()?;
        let mut variant = Variant::bare(method);
        for part in parts {
            let flag = match part {
                "sem" => &mut variant.sem,
                "iem" => &mut variant.iem,
                other => {
                    return Err(Error::invalid("method", format!("unknown stage `{other}` in `{s}` (valid: sem, iem)")))
                }
            };
            if *flag {
                return Err(Error::invalid("method", format!("stage `{part}` repeated in `{s}`")));
            }
            *flag = true;
        }
        Ok(variant)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub method: Method,
    pub ls: LsSolverConfig,
    pub fdk: FdkConfig,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { method: Method::Nag, ls: LsSolverConfig::default(), fdk: FdkConfig::default() }
    }
}

impl SolverSettings {
    /// Defaults for `method`: 100 iterations for the gradient methods, 200 for SIRT.
    pub fn for_method(method: Method) -> Self {
        let mut settings = SolverSettings { method, ..Default::default() };
        if method == Method::Sirt {
            settings.ls.max_iters = SIRT_DEFAULT_ITERS;
        }
        settings
    }

    fn parse(section: &toml::Table) -> Result<Self> {
        let mut ls = section.clone();
        let mut fdk = toml::Table::new();
        for key in ["window", "pad_to"] {
            if let Some(v) = ls.remove(key) {
                fdk.insert(key.into(), v);
            }
        }
        let method = match ls.remove("method") {
            None => Method::Nag,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::invalid("method", format!("expected a string, got {other}"))),
        };
        let mut settings = SolverSettings::for_method(method);
        if !ls.contains_key("max_iters") {
            ls.insert("max_iters".into(), toml::Value::Integer(settings.ls.max_iters as i64));
        }
        settings.ls = from_table("solver", ls)?;
        settings.ls.validate()?;
        settings.fdk = from_table("solver", fdk)?;
        Ok(settings)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IoSettings {
    /// Measured sinogram; replaces the phantom → projection → dose chain.
    pub sinogram: Option<PathBuf>,
    /// Ground-truth volume for MSE reporting; the phantom is used when absent.
    pub truth: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Directory receiving the acquired sinogram, the SEM output and the raw reconstruction.
    pub intermediates: Option<PathBuf>,
    pub precision: Precision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub enabled: bool,
    pub methods: Vec<Variant>,
    pub doses: Vec<DoseLevel>,
    pub seeds: Vec<u64>,
    /// Enhancers for `+sem` rows keyed by dose label (`low`, `clinical`, ...), from
    /// `[eval.sem.<label>]`; doses without an entry use the pipeline's SEM.
    pub sem_by_dose: BTreeMap<String, EnhancementStage>,
    pub iem_by_dose: BTreeMap<String, EnhancementStage>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            enabled: false,
            methods: vec![
                Variant::bare(Method::Fdk),
                Variant::bare(Method::Sirt),
                Variant::bare(Method::Nag),
                Variant { method: Method::Nag, sem: true, iem: false },
                Variant { method: Method::Nag, sem: true, iem: true },
            ],
            doses: vec![DoseLevel::Preset(DosePreset::Low), DoseLevel::Preset(DosePreset::Clinical)],
            seeds: vec![0, 1, 2],
            sem_by_dose: BTreeMap::new(),
            iem_by_dose: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub geometry: GeometryParams,
    pub phantom: PhantomSpec,
    pub dose: Option<DoseSettings>,
    pub sem: EnhancementStage,
    pub solver: SolverSettings,
    pub iem: EnhancementStage,
    pub io: IoSettings,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            geometry: GeometryParams::desk(),
            phantom: PhantomSpec::default(),
            dose: None,
            sem: EnhancementStage::identity(Domain::Sinogram),
            solver: SolverSettings::default(),
            iem: EnhancementStage::identity(Domain::Image),
            io: IoSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

fn from_table<T: serde::de::DeserializeOwned>(section: &str, table: toml::Table) -> Result<T> {
    toml::Value::Table(table).try_into().map_err(|e| Error::Config(format!("[{section}] {}", e.to_string().trim())))
}

fn section<'a>(root: &'a toml::Table, name: &str) -> Result<Option<&'a toml::Table>> {
    match root.get(name) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Error::Config(format!("`{name}` must be a [section]"))),
    }
}

fn reject_unknown(name: &str, table: &toml::Table, known: &[&str]) -> Result<()> {
    match table.keys().find(|k| !known.contains(&k.as_str())) {
        Some(key) => Err(Error::Config(format!("[{name}] unknown key `{key}` (known: {})", known.join(", ")))),
        None => Ok(()),
    }
}

fn get_f64(name: &str, table: &toml::Table, key: &str) -> Result<Option<f64>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Float(v)) => Ok(Some(*v)),
        Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
        Some(other) => Err(Error::Config(format!("[{name}] `{key}` must be a number, got {other}"))),
    }
}

fn get_u64(name: &str, table: &toml::Table, key: &str) -> Result<Option<u64>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
        Some(other) => Err(Error::Config(format!("[{name}] `{key}` must be a non-negative integer, got {other}"))),
    }
}

fn get_path(name: &str, table: &toml::Table, key: &str, base: Option<&Path>) -> Result<Option<PathBuf>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::String(s)) => {
            let path = PathBuf::from(s);
            Ok(Some(match base {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path,
            }))
        }
        Some(other) => Err(Error::Config(format!("[{name}] `{key}` must be a path string, got {other}"))),
    }
}

fn get_list<'a>(name: &str, table: &'a toml::Table, key: &str) -> Result<Option<&'a [toml::Value]>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Array(items)) => Ok(Some(items)),
        Some(other) => Err(Error::Config(format!("[{name}] `{key}` must be a list, got {other}"))),
    }
}

fn parse_dose(table: &toml::Table) -> Result<DoseSettings> {
    reject_unknown("dose", table, &["preset", "i0", "count_floor", "seed", "attenuation"])?;
    let preset = match table.get("preset") {
        None => None,
        Some(toml::Value::String(s)) => Some(s.parse::<DosePreset>()?),
        Some(other) => return Err(Error::Config(format!("[dose] `preset` must be a string, got {other}"))),
    };
    let i0 = match (preset, get_f64("dose", table, "i0")?) {
        (Some(_), Some(_)) => return Err(Error::Config("[dose] give either `preset` or `i0`, not both".into())),
        (Some(p), None) => p.i0(),
        (None, Some(i0)) => i0,
        (None, None) => return Err(Error::Config("[dose] needs `preset` (low, clinical) or `i0`".into())),
    };
    let floor = get_f64("dose", table, "count_floor")?.unwrap_or(DEFAULT_COUNT_FLOOR);
    let seed = get_u64("dose", table, "seed")?.unwrap_or(0);
    let attenuation = get_f64("dose", table, "attenuation")?.unwrap_or(DEFAULT_ATTENUATION);
    DoseSettings::new(DoseModel { i0, count_floor: floor, seed }, attenuation)
}

fn parse_io(table: &toml::Table, base: Option<&Path>) -> Result<IoSettings> {
    reject_unknown("io", table, &["sinogram", "truth", "output", "intermediates", "precision"])?;
    let precision = match table.get("precision") {
        None => Precision::default(),
        Some(toml::Value::String(s)) if s == "f32" => Precision::F32,
        Some(toml::Value::String(s)) if s == "f64" => Precision::F64,
        Some(other) => return Err(Error::Config(format!("[io] `precision` must be \"f32\" or \"f64\", got {other}"))),
    };
    Ok(IoSettings {
        sinogram: get_path("io", table, "sinogram", base)?,
        truth: get_path("io", table, "truth", base)?,
        output: get_path("io", table, "output", base)?,
        intermediates: get_path("io", table, "intermediates", base)?,
        precision,
    })
}

fn parse_eval(table: &toml::Table) -> Result<EvalSettings> {
    reject_unknown("eval", table, &["enabled", "methods", "doses", "seeds", "sem", "iem"])?;
    let mut eval = EvalSettings::default();
    for (key, domain) in [("sem", Domain::Sinogram), ("iem", Domain::Image)] {
        let Some(per_dose) = section(table, key)? else { continue };
        let mut stages = BTreeMap::new();
        for (label, value) in per_dose {
            let level: DoseLevel = label.parse()?;
            let toml::Value::Table(t) = value else {
                return Err(Error::Config(format!("[eval.{key}.{label}] must be a section")));
            };
            let stage = load_enhancer(t, Some(domain)).map_err(|e| e.in_stage(format!("eval.{key}.{label}")))?;
            if stage.domain != domain {
                return Err(Error::invalid(format!("eval.{key}.{label}"), format!("must work on the {} domain", if key == "sem" { "sinogram" } else { "image" })));
            }
            stages.insert(level.label(), stage);
        }
        if key == "sem" {
            eval.sem_by_dose = stages;
        } else {
            eval.iem_by_dose = stages;
        }
    }
    match table.get("enabled") {
        None => {}
        Some(toml::Value::Boolean(b)) => eval.enabled = *b,
        Some(other) => return Err(Error::Config(format!("[eval] `enabled` must be true or false, got {other}"))),
    }
    if let Some(items) = get_list("eval", table, "methods")? {
        eval.methods = items
            .iter()
            .map(|v| match v {
                toml::Value::String(s) => s.parse(),
                other => Err(Error::Config(format!("[eval] methods must be strings, got {other}"))),
            })
            .collect::<Result<_>>()?;
    }
    if let Some(items) = get_list("eval", table, "doses")? {
        eval.doses = items.iter().map(DoseLevel::parse).collect::<Result<_>>()?;
    }
    if let Some(items) = get_list("eval", table, "seeds")? {
        eval.seeds = items
            .iter()
            .map(|v| match v {
                toml::Value::Integer(s) if *s >= 0 => Ok(*s as u64),
                other => Err(Error::Config(format!("[eval] seeds must be non-negative integers, got {other}"))),
            })
            .collect::<Result<_>>()?;
    }
    Ok(eval)
}

fn parse_toml(text: &str) -> Result<toml::Table> {
    text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().to_string()))
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn apply_override(root: &mut toml::Table, item: &str) -> Result<()> {
    let bad = || Error::Config(format!("override `{item}` is not of the form section.key=value"));
    let (key, raw) = item.split_once('=').ok_or_else(bad)?;
    let (section, key) = key.trim().split_once('.').ok_or_else(bad)?;
    if section.is_empty() || key.is_empty() {
        return Err(bad());
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    match root.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(Error::Config(format!("`{section}` must be a [section]"))),
    }
}

impl PipelineConfig {
    /// Parses a config; relative `[io]` paths are resolved against `base` when given.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self> {
        Self::from_table(&parse_toml(text)?, base)
    }

    pub fn from_table(root: &toml::Table, base: Option<&Path>) -> Result<Self> {
        if let Some(name) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown section [{name}] (known: {})", SECTIONS.join(", "))));
        }
        let mut cfg = PipelineConfig::default();
        if let Some(t) = section(root, "geometry")? {
            // keys not given keep their desk values
            let mut merged = match toml::Value::try_from(GeometryParams::desk()) {
                Ok(toml::Value::Table(desk)) => desk,
                _ => unreachable!("geometry serializes to a table"),
            };
            merged.extend(t.clone());
            cfg.geometry = from_table("geometry", merged)?;
        }
        if let Some(t) = section(root, "phantom")? {
            cfg.phantom = from_table("phantom", t.clone())?;
        }
        if let Some(t) = section(root, "dose")? {
            cfg.dose = Some(parse_dose(t)?);
        }
        if let Some(t) = section(root, "sem")? {
            cfg.sem = load_enhancer(t, Some(Domain::Sinogram)).map_err(|e| e.in_stage("sem"))?;
        }
        if let Some(t) = section(root, "solver")? {
            cfg.solver = SolverSettings::parse(t)?;
        }
        if let Some(t) = section(root, "iem")? {
            cfg.iem = load_enhancer(t, Some(Domain::Image)).map_err(|e| e.in_stage("iem"))?;
        }
        if let Some(t) = section(root, "io")? {
            cfg.io = parse_io(t, base)?;
        }
        if let Some(t) = section(root, "eval")? {
            cfg.eval = parse_eval(t)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(Some(path.as_ref()), &[])
    }

    /// Reads the config at `path` (defaults when `None`), then applies
    /// `section.key=value` overrides. Override values are TOML literals; anything
    /// that does not parse as one is taken as a string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_toml(&text).map_err(|e| in_file(path, e))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut root, item)?;
        }
        let base = path.and_then(Path::parent);
        Self::from_table(&root, base).map_err(|e| match path {
            Some(path) => in_file(path, e),
            None => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.build()?;
        if self.sem.domain != Domain::Sinogram {
            return Err(Error::invalid("sem", "the SEM stage must work on the sinogram domain"));
        }
        if self.iem.domain != Domain::Image {
            return Err(Error::invalid("iem", "the IEM stage must work on the image domain"));
        }
        self.solver.ls.validate()?;
        Ok(())
    }

    /// Enhancer used for `+sem` evaluation rows at `dose`: a per-dose override, else the
    /// configured stage, else the default when none is set.
    pub fn sem_for_eval(&self, dose: &str) -> EnhancementStage {
        if let Some(stage) = self.eval.sem_by_dose.get(dose) {
            *stage
        } else if self.sem.is_identity() {
            EnhancementStage::default_sem()
        } else {
            self.sem
        }
    }

    pub fn iem_for_eval(&self, dose: &str) -> EnhancementStage {
        if let Some(stage) = self.eval.iem_by_dose.get(dose) {
            *stage
        } else if self.iem.is_identity() {
            EnhancementStage::default_iem()
        } else {
            self.iem
        }
    }
}
