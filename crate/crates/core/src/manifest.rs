//! Canonical data model and filename parsing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fracture cause. Only the first three variants are trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractureClass {
    GreenBody,
    HardMachining,
    Material,
    UnknownOrigin,
    Unmatchable,
}

impl FractureClass {
    pub const TRAINABLE: [FractureClass; 3] = [
        FractureClass::GreenBody,
        FractureClass::HardMachining,
        FractureClass::Material,
    ];

    pub const ALL: [FractureClass; 5] = [
        FractureClass::GreenBody,
        FractureClass::HardMachining,
        FractureClass::Material,
        FractureClass::UnknownOrigin,
        FractureClass::Unmatchable,
    ];

    #[inline]
    pub fn is_trainable(self) -> bool {
        self.trainable_index().is_some()
    }

    /// Position among the trainable classes (row/column in confusion matrices).
    #[inline]
    pub fn trainable_index(self) -> Option<usize> {
        match self {
            FractureClass::GreenBody => Some(0),
            FractureClass::HardMachining => Some(1),
            FractureClass::Material => Some(2),
            _ => None,
        }
    }

    pub fn from_trainable_index(i: usize) -> Option<FractureClass> {
        Self::TRAINABLE.get(i).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            FractureClass::GreenBody => "green_body",
            FractureClass::HardMachining => "hard_machining",
            FractureClass::Material => "material",
            FractureClass::UnknownOrigin => "unknown_origin",
            FractureClass::Unmatchable => "unmatchable",
        }
    }
}

impl fmt::Display for FractureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FractureClass {
    type Err = ParseTokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.token() == s)
            .ok_or_else(|| ParseTokenError(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognised token {0:?}")]
pub struct ParseTokenError(pub String);

/// SEM magnification level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "50x")]
    X50,
    #[serde(rename = "100x")]
    X100,
    #[serde(rename = "250x")]
    X250,
    #[serde(rename = "500x")]
    X500,
    #[serde(rename = "1000x")]
    X1K,
    #[serde(rename = "2000x")]
    X2K,
    #[serde(rename = "4000x")]
    X4K,
    #[serde(rename = "10000x")]
    X10K,
    #[serde(rename = "unknown")]
    Unknown,
}

impl Magnification {
    pub const KNOWN: [Magnification; 8] = [
        Magnification::X50,
        Magnification::X100,
        Magnification::X250,
        Magnification::X500,
        Magnification::X1K,
        Magnification::X2K,
        Magnification::X4K,
        Magnification::X10K,
    ];

    pub fn factor(self) -> Option<u32> {
        Some(match self {
            Magnification::X50 => 50,
            Magnification::X100 => 100,
            Magnification::X250 => 250,
            Magnification::X500 => 500,
            Magnification::X1K => 1_000,
            Magnification::X2K => 2_000,
            Magnification::X4K => 4_000,
            Magnification::X10K => 10_000,
            Magnification::Unknown => return None,
        })
    }

    pub fn from_factor(factor: u32) -> Option<Magnification> {
        Self::KNOWN.into_iter().find(|m| m.factor() == Some(factor))
    }

    /// Manifest token: `"50x"` .. `"10000x"`, or `"unknown"`.
    pub fn token(self) -> String {
        match self.factor() {
            Some(f) => format!("{f}x"),
            None => "unknown".to_string(),
        }
    }

    /// Short form used in filenames: `50x`, `100x`, `250x`, `500x`, `1k`, `2k`, `4k`, `10k`.
    pub fn filename_token(self) -> Option<String> {
        let f = self.factor()?;
        Some(if f >= 1_000 {
            format!("{}k", f / 1_000)
        } else {
            format!("{f}x")
        })
    }

    /// Accepts both the manifest and the filename spellings (case-insensitive).
    pub fn parse_token(token: &str) -> Option<Magnification> {
        let t = token.to_ascii_lowercase();
        if t == "unknown" {
            return Some(Magnification::Unknown);
        }
        let factor = if let Some(k) = t.strip_suffix('k') {
            k.parse::<u32>().ok()?.checked_mul(1_000)?
        } else {
            t.strip_suffix('x')?.parse::<u32>().ok()?
        };
        Self::from_factor(factor)
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

/// One SEM image in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: String,
    pub foan: String,
    pub serial: String,
    pub instance_tag: String,
    pub fracture_class: FractureClass,
    pub magnification: Magnification,
    pub fold: Option<u32>,
}

/// One label row extracted from a fracture-analysis report table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub foan: String,
    pub serial: String,
    pub fracture_class: FractureClass,
    pub sub_type: String,
    pub source_report: String,
}

impl ReportEntry {
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.foan.is_empty() {
            return Err(ManifestError::EmptyFoan {
                source_report: self.source_report.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("filename {0:?} contains no FOAN token")]
    MalformedFilename(String),
    #[error("report entry from {source_report:?} has an empty FOAN")]
    EmptyFoan { source_report: String },
}

/// Token grammar for identity fields embedded in filenames.
///
/// The default reads `FOAN-<4-digit year>-<5-digit number>`, `SN<digits>` and
/// `f<digit>`; fields are separated by `_`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilenameGrammar {
    pub foan_prefix: String,
    pub year_digits: usize,
    pub number_digits: usize,
    pub serial_prefix: String,
    pub tag_prefix: char,
}

impl Default for FilenameGrammar {
    fn default() -> Self {
        Self {
            foan_prefix: "FOAN".to_string(),
            year_digits: 4,
            number_digits: 5,
            serial_prefix: "SN".to_string(),
            tag_prefix: 'f',
        }
    }
}

impl FilenameGrammar {
    /// Returns the length of a FOAN token starting at `s[0]`, if any.
    fn foan_at(&self, s: &str) -> Option<usize> {
        let rest = s.strip_prefix(self.foan_prefix.as_str())?;
        let bytes = rest.as_bytes();
        let digits = |from: usize, n: usize| {
            bytes.len() >= from + n && bytes[from..from + n].iter().all(u8::is_ascii_digit)
        };
        let y = self.year_digits;
        let n = self.number_digits;
        let ok = bytes.first() == Some(&b'-')
            && digits(1, y)
            && bytes.get(1 + y) == Some(&b'-')
            && digits(2 + y, n)
            && !bytes.get(2 + y + n).is_some_and(u8::is_ascii_digit);
        ok.then(|| self.foan_prefix.len() + 2 + y + n)
    }

    fn serial_of<'a>(&self, token: &'a str) -> Option<&'a str> {
        let digits = token.strip_prefix(self.serial_prefix.as_str())?;
        (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())).then_some(digits)
    }

    fn is_tag(&self, token: &str) -> bool {
        let mut chars = token.chars();
        chars.next() == Some(self.tag_prefix)
            && chars.next().is_some_and(|c| c.is_ascii_digit())
            && chars.next().is_none()
    }
}

/// Identity candidates recovered from an image filename.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedName {
    pub foan_candidate: String,
    pub serial_candidate: String,
    pub instance_tag: String,
    pub magnification: Magnification,
}

impl Default for Magnification {
    fn default() -> Self {
        Magnification::Unknown
    }
}

pub fn parse_filename(name: &str) -> Result<ParsedName, ManifestError> {
    parse_filename_with(name, &FilenameGrammar::default())
}

/// Extracts FOAN, serial, instance tag and magnification tokens.
///
/// The FOAN is the longest grammar match anywhere in the stem (first wins
/// among equals). Serial, tag and magnification are whole `_`-separated
/// tokens; absent fields come back empty (or `Unknown`).
pub fn parse_filename_with(
    name: &str,
    grammar: &FilenameGrammar,
) -> Result<ParsedName, ManifestError> {
    let stem = match name.rfind('.') {
        Some(dot) if dot > 0 => &name[..dot],
        _ => name,
    };

    let mut foan: Option<&str> = None;
    for (i, _) in stem.match_indices(grammar.foan_prefix.as_str()) {
        if let Some(len) = grammar.foan_at(&stem[i..]) {
            if foan.is_none_or(|f| len > f.len()) {
                foan = Some(&stem[i..i + len]);
            }
        }
    }
    let foan = foan.ok_or_else(|| ManifestError::MalformedFilename(name.to_string()))?;

    let mut parsed = ParsedName {
        foan_candidate: foan.to_string(),
        ..ParsedName::default()
    };
    for token in stem.split('_') {
        if parsed.serial_candidate.is_empty() {
            if let Some(serial) = grammar.serial_of(token) {
                parsed.serial_candidate = serial.to_string();
                continue;
            }
        }
        if parsed.instance_tag.is_empty() && grammar.is_tag(token) {
            parsed.instance_tag = token.to_string();
            continue;
        }
        if parsed.magnification == Magnification::Unknown {
            if let Some(m) = Magnification::parse_token(token).filter(|m| m.factor().is_some()) {
                parsed.magnification = m;
            }
        }
    }
    Ok(parsed)
}

/// Canonical filename for an identity; [`parse_filename`] inverts it.
pub fn format_filename(foan: &str, serial: &str, tag: &str, mag: Magnification) -> String {
    let mut name = String::from(foan);
    if !serial.is_empty() {
        name.push_str("_SN");
        name.push_str(serial);
    }
    if !tag.is_empty() {
        name.push('_');
        name.push_str(tag);
    }
    if let Some(t) = mag.filename_token() {
        name.push('_');
        name.push_str(&t);
    }
    name.push_str(".png");
    name
}

/// A manifest invariant that does not hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { image_id: String },
    FoldOnExcludedClass { image_id: String, fold: u32 },
    FoldOutOfRange { image_id: String, fold: u32, k: u32 },
    EmptyFoan { image_id: String },
    MissingFile { image_id: String, path: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { image_id } => write!(f, "duplicate image_id {image_id:?}"),
            Violation::FoldOnExcludedClass { image_id, fold } => {
                write!(f, "{image_id:?} has fold {fold} but its class is excluded from training")
            }
            Violation::FoldOutOfRange { image_id, fold, k } => {
                write!(f, "{image_id:?} has fold {fold}, outside [0, {k})")
            }
            Violation::EmptyFoan { image_id } => write!(f, "{image_id:?} has an empty FOAN"),
            Violation::MissingFile { image_id, path } => {
                write!(f, "{image_id:?} points at missing file {path:?}")
            }
        }
    }
}

/// Optional checks for [`validate_manifest`].
#[derive(Default)]
pub struct ManifestChecks<'a> {
    /// Number of folds; when set, fold indices must lie in `[0, k)`.
    pub k: Option<u32>,
    /// Existence probe for record paths. `None` skips path checking.
    pub path_exists: Option<&'a dyn Fn(&str) -> bool>,
}

/// Collects every invariant violation; an empty result means the manifest is valid.
pub fn validate_manifest(records: &[ImageRecord], checks: &ManifestChecks<'_>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for r in records {
        if seen.insert(r.image_id.as_str(), ()).is_some() {
            out.push(Violation::DuplicateId {
                image_id: r.image_id.clone(),
            });
        }
        // Unmatchable records have no identity to speak of
        if r.foan.is_empty() && r.fracture_class != FractureClass::Unmatchable {
            out.push(Violation::EmptyFoan {
                image_id: r.image_id.clone(),
            });
        }
        if let Some(fold) = r.fold {
            if !r.fracture_class.is_trainable() {
                out.push(Violation::FoldOnExcludedClass {
                    image_id: r.image_id.clone(),
                    fold,
                });
            }
            if let Some(k) = checks.k.filter(|&k| fold >= k) {
                out.push(Violation::FoldOutOfRange {
                    image_id: r.image_id.clone(),
                    fold,
                    k,
                });
            }
        }
        if let Some(exists) = checks.path_exists {
            if !exists(&r.path) {
                out.push(Violation::MissingFile {
                    image_id: r.image_id.clone(),
                    path: r.path.clone(),
                });
            }
        }
    }
    out
}
