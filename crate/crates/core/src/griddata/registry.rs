use serde::{Deserialize, Serialize};

use super::GridError;

/// Pressure levels (hPa) of every upper-air variable in the default registry.
pub const PRESSURE_LEVELS: [u32; 7] = [50, 250, 500, 600, 700, 850, 925];

const SURFACE: [&str; 5] = ["lsm", "orography", "t2m", "u10", "v10"];
const UPPER_AIR: [&str; 6] = ["z", "u", "v", "t", "q", "r"];

/// Forecast targets, in report order.
pub const DEFAULT_TARGETS: [&str; 4] = ["u10", "t2m", "z500", "t850"];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariableEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
}

impl VariableEntry {
    pub fn surface(name: &str) -> Self {
        Self { name: name.to_string(), level: None }
    }

    pub fn upper(name: &str, level: u32) -> Self {
        Self { name: name.to_string(), level: Some(level) }
    }

    /// Short key such as `t2m` or `z500`.
    pub fn key(&self) -> String {
        match self.level {
            Some(l) => format!("{}{l}", self.name),
            None => self.name.clone(),
        }
    }

    /// Display label, e.g. `Z500`, `T2m`, `U10`.
    pub fn label(&self) -> String {
        match (self.name.as_str(), self.level) {
            ("t2m", None) => "T2m".into(),
            ("u10", None) => "U10".into(),
            ("v10", None) => "V10".into(),
            ("lsm", None) => "LSM".into(),
            ("orography", None) => "Orography".into(),
            (n, Some(l)) => format!("{}{l}", n.to_uppercase()),
            (n, None) => n.to_string(),
        }
    }

    /// Physical units of the unstandardized field.
    pub fn units(&self) -> &'static str {
        match self.name.as_str() {
            "t2m" | "t" => "K",
            "u10" | "v10" | "u" | "v" => "m/s",
            "z" | "orography" => "m^2/s^2",
            "q" => "kg/kg",
            "r" => "%",
            _ => "1",
        }
    }
}

/// Ordered variable list; position defines the channel index everywhere.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VariableEntry>", into = "Vec<VariableEntry>")]
pub struct VariableRegistry {
    entries: Vec<VariableEntry>,
}

impl TryFrom<Vec<VariableEntry>> for VariableRegistry {
    type Error = GridError;

    fn try_from(entries: Vec<VariableEntry>) -> Result<Self, GridError> {
        Self::new(entries)
    }
}

impl From<VariableRegistry> for Vec<VariableEntry> {
    fn from(r: VariableRegistry) -> Self {
        r.entries
    }
}

impl VariableRegistry {
    pub fn new(entries: Vec<VariableEntry>) -> Result<Self, GridError> {
        if entries.is_empty() {
            return Err(GridError::EmptyRegistry);
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].contains(e) {
                return Err(GridError::DuplicateVariable(e.key()));
            }
        }
        Ok(Self { entries })
    }

    /// The WeatherBench set: five surface fields plus six upper-air variables
    /// at seven pressure levels (47 channels).
    pub fn weatherbench() -> Self {
        let mut entries: Vec<VariableEntry> = SURFACE.iter().map(|n| VariableEntry::surface(n)).collect();
        for name in UPPER_AIR {
            for level in PRESSURE_LEVELS {
                entries.push(VariableEntry::upper(name, level));
            }
        }
        Self { entries }
    }

    /// `count` channels for synthetic data: the forecast targets first, then the
    /// remaining WeatherBench variables in order, then generic `extraN` fields.
    pub fn synthetic(count: usize) -> Result<Self, GridError> {
        if count == 0 {
            return Err(GridError::EmptyRegistry);
        }
        let full = Self::weatherbench();
        let mut entries: Vec<VariableEntry> =
            DEFAULT_TARGETS.iter().map(|k| full.entries[full.index_of(k).expect("target")].clone()).collect();
        for e in &full.entries {
            if !entries.contains(e) {
                entries.push(e.clone());
            }
        }
        let mut extra = 0;
        while entries.len() < count {
            entries.push(VariableEntry::surface(&format!("extra{extra}")));
            extra += 1;
        }
        entries.truncate(count);
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VariableEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&VariableEntry> {
        self.entries.get(index)
    }

    /// Case-insensitive lookup by key (`z500`, `T2m`, ...).
    pub fn index_of(&self, key: &str) -> Option<usize> {
        let key = key.to_ascii_lowercase();
        self.entries.iter().position(|e| e.key().to_ascii_lowercase() == key)
    }

    pub fn resolve(&self, key: &str) -> Result<usize, GridError> {
        self.index_of(key).ok_or_else(|| GridError::UnknownVariable(key.to_string()))
    }
}
