//! Canonical long-format dyadic dataset, role/time codings and CSV I/O.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

pub const RAW_HEADER: [&str; 6] = ["dyadid", "personid", "role", "wave", "belong", "rapport"];

pub const PREPARED_HEADER: [&str; 10] = [
    "dyadid",
    "personid",
    "belong",
    "role_eff",
    "role_dum",
    "time",
    "rapport_actor_within",
    "rapport_partner_within",
    "rapport_actor_agg",
    "rapport_partner_agg",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Expert,
    Novice,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Expert => "expert",
            Role::Novice => "novice",
        }
    }

    pub fn other(self) -> Role {
        match self {
            Role::Expert => Role::Novice,
            Role::Novice => Role::Expert,
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "expert" => Ok(Role::Expert),
            "novice" => Ok(Role::Novice),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodingKind {
    Dummy,
    Effect,
}

impl CodingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CodingKind::Dummy => "dummy",
            CodingKind::Effect => "effect",
        }
    }
}

impl std::str::FromStr for CodingKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dummy" => Ok(CodingKind::Dummy),
            "effect" => Ok(CodingKind::Effect),
            other => Err(format!("unknown coding `{other}` (expected dummy or effect)")),
        }
    }
}

/// Numeric role codes. Dummy: expert 0 / novice 1. Effect: expert -1 / novice +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodingScheme {
    kind: CodingKind,
    expert_code: f64,
    novice_code: f64,
}

impl CodingScheme {
    pub const DUMMY: CodingScheme = CodingScheme {
        kind: CodingKind::Dummy,
        expert_code: 0.0,
        novice_code: 1.0,
    };
    pub const EFFECT: CodingScheme = CodingScheme {
        kind: CodingKind::Effect,
        expert_code: -1.0,
        novice_code: 1.0,
    };

    pub fn of(kind: CodingKind) -> Self {
        match kind {
            CodingKind::Dummy => Self::DUMMY,
            CodingKind::Effect => Self::EFFECT,
        }
    }

    pub fn kind(&self) -> CodingKind {
        self.kind
    }

    pub fn expert_code(&self) -> f64 {
        self.expert_code
    }

    pub fn novice_code(&self) -> f64 {
        self.novice_code
    }

    pub fn code(&self, role: Role) -> f64 {
        match role {
            Role::Expert => self.expert_code,
            Role::Novice => self.novice_code,
        }
    }
}

impl fmt::Display for CodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())
    }
}

/// Mapping from wave index (1-based) to time in years.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    times: [f64; 5],
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            times: [-0.75, -0.5, 0.0, 0.5, 1.0],
        }
    }
}

impl TimeGrid {
    pub fn new(times: [f64; 5]) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite time".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("times must be strictly increasing".into()));
        }
        if !times.contains(&0.0) {
            return Err(Error::InvalidGrid("grid must contain 0".into()));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64; 5] {
        &self.times
    }

    pub fn n_waves(&self) -> u32 {
        self.times.len() as u32
    }

    /// Inverse lookup used when loading prepared files, which carry time but no wave.
    pub fn wave_of(&self, time: f64) -> Option<u32> {
        self.times
            .iter()
            .position(|&t| (t - time).abs() <= 1e-6 * t.abs().max(1.0))
            .map(|i| i as u32 + 1)
    }
}

pub fn code_time(wave: i64, grid: &TimeGrid) -> Result<f64> {
    if wave < 1 || wave > grid.times.len() as i64 {
        return Err(Error::UnknownWave(wave));
    }
    Ok(grid.times[(wave - 1) as usize])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Prepared,
}

/// One person-period observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub dyad_id: u32,
    pub person_id: u32,
    pub role: Role,
    /// Numeric role code under the dataset's current coding.
    pub role_code: f64,
    pub wave: u32,
    pub time: f64,
    pub outcome: f64,
    /// Raw time-varying covariate; prepared files do not carry it.
    pub covariate: Option<f64>,
    pub actor_within: f64,
    pub partner_within: f64,
    pub actor_agg: f64,
    pub partner_agg: f64,
}

impl LongRow {
    /// Raw-stage row; centered columns start at zero.
    pub fn raw(dyad_id: u32, person_id: u32, role: Role, wave: u32, outcome: f64, covariate: f64) -> Self {
        LongRow {
            dyad_id,
            person_id,
            role,
            role_code: 0.0,
            wave,
            time: 0.0,
            outcome,
            covariate: Some(covariate),
            actor_within: 0.0,
            partner_within: 0.0,
            actor_agg: 0.0,
            partner_agg: 0.0,
        }
    }

    fn sort_key(&self) -> (u32, u32, u32) {
        (self.dyad_id, self.person_id, self.wave)
    }
}

/// Validated person-period table in canonical (dyad, person, wave) order.
#[derive(Debug, Clone, PartialEq)]
pub struct LongDataset {
    rows: Vec<LongRow>,
    stage: Stage,
    coding: CodingScheme,
    grid: TimeGrid,
}

impl LongDataset {
    /// Sorts rows canonically, fills `time` and `role_code` from the grid and
    /// coding, and checks the pairing invariants.
    pub fn new(mut rows: Vec<LongRow>, stage: Stage, coding: CodingScheme, grid: TimeGrid) -> Result<Self> {
        rows.sort_by_key(LongRow::sort_key);
        for row in rows.iter_mut() {
            row.time = code_time(row.wave as i64, &grid)?;
            row.role_code = coding.code(row.role);
        }
        validate_rows(&rows)?;
        Ok(LongDataset {
            rows,
            stage,
            coding,
            grid,
        })
    }

    pub fn rows(&self) -> &[LongRow] {
        &self.rows
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn coding(&self) -> CodingScheme {
        self.coding
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct dyad ids in ascending order.
    pub fn dyad_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.dyad_id).collect();
        ids.dedup();
        ids
    }

    pub fn n_dyads(&self) -> usize {
        self.dyad_ids().len()
    }

    pub fn n_persons(&self) -> usize {
        self.rows.iter().map(|r| r.person_id).collect::<HashSet<_>>().len()
    }

    /// Rebuilds the dataset from modified rows, keeping grid and coding.
    pub(crate) fn with_rows(&self, rows: Vec<LongRow>, stage: Stage) -> Result<Self> {
        LongDataset::new(rows, stage, self.coding, self.grid)
    }
}

fn validate_rows(rows: &[LongRow]) -> Result<()> {
    let mut seen = HashSet::with_capacity(rows.len());
    let mut person_info: HashMap<u32, (u32, Role)> = HashMap::new();
    let mut dyads: BTreeMap<u32, Vec<(u32, Role)>> = BTreeMap::new();
    for row in rows {
        if !seen.insert((row.person_id, row.wave)) {
            return Err(Error::DuplicatePersonWave {
                person: row.person_id,
                wave: row.wave,
            });
        }
        match person_info.get(&row.person_id) {
            Some(&(dyad, role)) if dyad != row.dyad_id || role != row.role => {
                return Err(Error::DyadNotPaired(row.dyad_id));
            }
            Some(_) => {}
            None => {
                person_info.insert(row.person_id, (row.dyad_id, row.role));
                dyads.entry(row.dyad_id).or_default().push((row.person_id, row.role));
            }
        }
    }
    for (dyad, members) in &dyads {
        if members.len() != 2 || members[0].1 == members[1].1 {
            return Err(Error::DyadNotPaired(*dyad));
        }
    }
    Ok(())
}

/// Re-codes the numeric role column; the role enum is untouched.
pub fn recode_role(data: &LongDataset, scheme: CodingScheme) -> LongDataset {
    let rows = data
        .rows
        .iter()
        .map(|r| LongRow {
            role_code: scheme.code(r.role),
            ..r.clone()
        })
        .collect();
    LongDataset {
        rows,
        stage: data.stage,
        coding: scheme,
        grid: data.grid,
    }
}

/// Formats a value with six significant digits, trimming redundant zeros.
pub fn format_sig6(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return if value == 0.0 { "0".to_string() } else { value.to_string() };
    }
    let rounded: f64 = format!("{value:.5e}").parse().unwrap_or(value);
    let text = rounded.to_string();
    if text.len() > 24 {
        format!("{rounded:e}")
    } else {
        text
    }
}

fn header_index(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    for name in &names {
        if !required.contains(name) {
            return Err(Error::UnexpectedColumn(name.to_string()));
        }
    }
    required
        .iter()
        .map(|col| {
            names
                .iter()
                .position(|n| n == col)
                .ok_or_else(|| Error::MissingColumn(col.to_string()))
        })
        .collect()
}

struct Fields<'a> {
    record: &'a csv::StringRecord,
    index: &'a [usize],
    names: &'a [&'a str],
    row: usize,
}

impl Fields<'_> {
    fn text(&self, col: usize) -> Result<&str> {
        let value = self.record.get(self.index[col]).map(str::trim).unwrap_or("");
        if value.is_empty() || value.eq_ignore_ascii_case("na") {
            return Err(self.error(col, "missing value"));
        }
        Ok(value)
    }

    fn real(&self, col: usize) -> Result<f64> {
        let text = self.text(col)?;
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(col, &format!("`{text}` is not a finite number"))),
        }
    }

    fn id(&self, col: usize) -> Result<u32> {
        let v = self.real(col)?;
        if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(self.error(col, "expected a positive integer"));
        }
        Ok(v as u32)
    }

    fn error(&self, col: usize, detail: &str) -> Error {
        Error::Parse {
            row: self.row,
            column: self.names[col].to_string(),
            detail: detail.to_string(),
        }
    }
}

/// Loads and validates a raw or prepared CSV. Prepared files carry no coding
/// choice of their own, so the returned dataset uses dummy coding.
pub fn load_csv(path: impl AsRef<Path>, stage: Stage) -> Result<LongDataset> {
    let reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    read_csv(reader, stage, TimeGrid::default())
}

pub fn read_csv<R: std::io::Read>(mut reader: csv::Reader<R>, stage: Stage, grid: TimeGrid) -> Result<LongDataset> {
    let required: &[&str] = match stage {
        Stage::Raw => &RAW_HEADER,
        Stage::Prepared => &PREPARED_HEADER,
    };
    let index = header_index(reader.headers()?, required)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let f = Fields {
            record: &record,
            index: &index,
            names: required,
            row: i + 1,
        };
        let row = match stage {
            Stage::Raw => {
                let role = f.text(2)?.parse::<Role>().map_err(|e| f.error(2, &e))?;
                let wave = f.real(3)?;
                if wave.fract() != 0.0 {
                    return Err(f.error(3, "wave must be an integer"));
                }
                code_time(wave as i64, &grid)?;
                LongRow::raw(f.id(0)?, f.id(1)?, role, wave as u32, f.real(4)?, f.real(5)?)
            }
            Stage::Prepared => {
                let dummy = f.real(4)?;
                let effect = f.real(3)?;
                let role = match dummy {
                    0.0 => Role::Expert,
                    1.0 => Role::Novice,
                    _ => return Err(f.error(4, "role_dum must be 0 or 1")),
                };
                if effect != CodingScheme::EFFECT.code(role) {
                    return Err(f.error(3, "role_eff disagrees with role_dum"));
                }
                let time = f.real(5)?;
                let wave = grid
                    .wave_of(time)
                    .ok_or_else(|| f.error(5, "time is not on the time grid"))?;
                LongRow {
                    dyad_id: f.id(0)?,
                    person_id: f.id(1)?,
                    role,
                    role_code: 0.0,
                    wave,
                    time,
                    outcome: f.real(2)?,
                    covariate: None,
                    actor_within: f.real(6)?,
                    partner_within: f.real(7)?,
                    actor_agg: f.real(8)?,
                    partner_agg: f.real(9)?,
                }
            }
        };
        rows.push(row);
    }
    LongDataset::new(rows, stage, CodingScheme::DUMMY, grid)
}

/// Peeks at a CSV header to decide which schema stage it holds.
pub fn detect_stage(path: impl AsRef<Path>) -> Result<Stage> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?;
    if headers.iter().any(|h| h == "role_dum") {
        Ok(Stage::Prepared)
    } else {
        Ok(Stage::Raw)
    }
}

pub fn write_csv(data: &LongDataset, path: impl AsRef<Path>) -> Result<()> {
    let writer = csv::Writer::from_path(path)?;
    write_to(data, writer)
}

pub fn write_to<W: std::io::Write>(data: &LongDataset, mut writer: csv::Writer<W>) -> Result<()> {
    match data.stage {
        Stage::Raw => {
            writer.write_record(RAW_HEADER)?;
            for r in &data.rows {
                let covariate = r.covariate.ok_or_else(|| Error::Parse {
                    row: 0,
                    column: "rapport".into(),
                    detail: format!("person {} wave {} has no raw covariate", r.person_id, r.wave),
                })?;
                writer.write_record([
                    r.dyad_id.to_string(),
                    r.person_id.to_string(),
                    r.role.as_str().to_string(),
                    r.wave.to_string(),
                    format_sig6(r.outcome),
                    format_sig6(covariate),
                ])?;
            }
        }
        Stage::Prepared => {
            writer.write_record(PREPARED_HEADER)?;
            for r in &data.rows {
                writer.write_record([
                    r.dyad_id.to_string(),
                    r.person_id.to_string(),
                    format_sig6(r.outcome),
                    format_sig6(CodingScheme::EFFECT.code(r.role)),
                    format_sig6(CodingScheme::DUMMY.code(r.role)),
                    format_sig6(r.time),
                    format_sig6(r.actor_within),
                    format_sig6(r.partner_within),
                    format_sig6(r.actor_agg),
                    format_sig6(r.partner_agg),
                ])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}
