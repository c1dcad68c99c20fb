//! Record linkage of filename identity candidates to report-table rows.
//!
//! Matching is exact-first: a verbatim FOAN hit wins. Otherwise the closest
//! FOAN by normalised Levenshtein similarity is accepted when it is strictly
//! above the threshold and unique; ties at the maximum are resolved only by
//! the serial-number substring rule, and anything still ambiguous is left
//! unmatched.

use alloc::borrow::Cow;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::manifest::{FractureClass, ParsedName, ReportEntry};

/// Similarities within this distance of the maximum count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("similarity is undefined for two empty strings")]
    BothEmpty,
    #[error("field {field} contains the reserved separator '|': {value:?}")]
    IllegalCharacter { field: &'static str, value: String },
    #[error("uid requires a non-empty FOAN")]
    EmptyFoan,
    #[error("class {0} cannot carry a uid")]
    ExcludedClass(FractureClass),
    #[error("similarity threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Fuzzy matches must be strictly above this value.
    pub similarity_threshold: f64,
    /// Trim whitespace and uppercase both sides before comparing.
    pub normalize: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.9,
            normalize: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        let t = self.similarity_threshold;
        if t > 0.0 && t <= 1.0 {
            Ok(())
        } else {
            Err(MatchError::InvalidThreshold(t))
        }
    }

    fn prepare<'a>(&self, s: &'a str) -> Cow<'a, str> {
        if !self.normalize {
            return Cow::Borrowed(s);
        }
        let t = s.trim();
        if t.chars().any(|c| c.is_lowercase()) {
            Cow::Owned(t.to_uppercase())
        } else {
            Cow::Borrowed(t)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchOutcome {
    Exact,
    Fuzzy { similarity: f64 },
    TieBroken { similarity: f64 },
    Unmatched,
}

impl MatchOutcome {
    pub fn tag(&self) -> &'static str {
        match self {
            MatchOutcome::Exact => "exact",
            MatchOutcome::Fuzzy { .. } => "fuzzy",
            MatchOutcome::TieBroken { .. } => "tie_broken",
            MatchOutcome::Unmatched => "unmatched",
        }
    }

    /// Similarity to the chosen entry; `1.0` for exact hits.
    pub fn similarity(&self) -> Option<f64> {
        match *self {
            MatchOutcome::Exact => Some(1.0),
            MatchOutcome::Fuzzy { similarity } | MatchOutcome::TieBroken { similarity } => {
                Some(similarity)
            }
            MatchOutcome::Unmatched => None,
        }
    }

    pub fn is_matched(&self) -> bool {
        !matches!(self, MatchOutcome::Unmatched)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub image_id: String,
    pub outcome: MatchOutcome,
    pub entry: Option<ReportEntry>,
    pub uid: Option<String>,
}

impl MatchResult {
    fn unmatched(image_id: &str) -> Self {
        Self {
            image_id: image_id.to_string(),
            outcome: MatchOutcome::Unmatched,
            entry: None,
            uid: None,
        }
    }
}

/// Character-level edit distance (insertions, deletions, substitutions).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = alloc::vec![0usize; short.len() + 1];
    for (i, lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lc != sc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)`, lengths counted in characters.
pub fn similarity(a: &str, b: &str) -> Result<f64, MatchError> {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return Err(MatchError::BothEmpty);
    }
    Ok(1.0 - levenshtein(a, b) as f64 / longest as f64)
}

/// Unique identifier `<foan>|<serial>|<class-token>`.
pub fn assign_uid(foan: &str, serial: &str, class: FractureClass) -> Result<String, MatchError> {
    if foan.is_empty() {
        return Err(MatchError::EmptyFoan);
    }
    if class == FractureClass::Unmatchable {
        return Err(MatchError::ExcludedClass(class));
    }
    for (field, value) in [("foan", foan), ("serial", serial)] {
        if value.contains('|') {
            return Err(MatchError::IllegalCharacter {
                field,
                value: value.to_string(),
            });
        }
    }
    let mut uid = String::with_capacity(foan.len() + serial.len() + 20);
    uid.push_str(foan);
    uid.push('|');
    uid.push_str(serial);
    uid.push('|');
    uid.push_str(class.token());
    Ok(uid)
}

/// Links one filename candidate to the report table.
pub fn match_image(
    image_id: &str,
    candidate: &ParsedName,
    table: &[ReportEntry],
    cfg: &MatchConfig,
) -> MatchResult {
    let probe = cfg.prepare(&candidate.foan_candidate);
    if probe.is_empty() || table.is_empty() {
        return MatchResult::unmatched(image_id);
    }

    let finish = |entry: &ReportEntry, outcome: MatchOutcome| {
        match assign_uid(&entry.foan, &entry.serial, entry.fracture_class) {
            Ok(uid) => MatchResult {
                image_id: image_id.to_string(),
                outcome,
                entry: Some(entry.clone()),
                uid: Some(uid),
            },
            Err(_) => MatchResult::unmatched(image_id),
        }
    };

    if let Some(entry) = table.iter().find(|e| cfg.prepare(&e.foan) == probe) {
        return finish(entry, MatchOutcome::Exact);
    }

    let scores: Vec<f64> = table
        .iter()
        .map(|e| similarity(&probe, &cfg.prepare(&e.foan)).unwrap_or(0.0))
        .collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best <= cfg.similarity_threshold {
        return MatchResult::unmatched(image_id);
    }
    let tied: Vec<usize> = (0..table.len())
        .filter(|&i| best - scores[i] <= TIE_TOLERANCE)
        .collect();
    if let [only] = tied[..] {
        return finish(&table[only], MatchOutcome::Fuzzy { similarity: best });
    }

    let serial = candidate.serial_candidate.as_str();
    let mut survivors = tied
        .into_iter()
        .filter(|&i| table[i].serial.contains(serial));
    match (survivors.next(), survivors.next()) {
        (Some(i), None) => finish(&table[i], MatchOutcome::TieBroken { similarity: best }),
        _ => MatchResult::unmatched(image_id),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use proptest::prelude::*;

    /// Full edit-matrix oracle, independent of the two-row implementation.
    fn dp_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = alloc::vec![alloc::vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    fn entry(foan: &str, serial: &str, class: FractureClass) -> ReportEntry {
        ReportEntry {
            foan: foan.to_string(),
            serial: serial.to_string(),
            fracture_class: class,
            sub_type: String::new(),
            source_report: "r.pdf".to_string(),
        }
    }

    fn cand(foan: &str, serial: &str) -> ParsedName {
        ParsedName {
            foan_candidate: foan.to_string(),
            serial_candidate: serial.to_string(),
            ..ParsedName::default()
        }
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(dp_oracle("kitten", "sitting"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(dp_oracle("FOAN-2021-00042", "FOAN-2021-00043"), 1);
        assert_eq!(levenshtein("FOAN-2021-00042", "FOAN-2021-00043"), 1);
        assert_eq!(levenshtein("", "abc"), 3);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity("FOAN", "FOAN").unwrap(), 1.0);
        let s = similarity("FOAN-2021-00042", "FOAN-2021-00043").unwrap();
        assert!((s - (1.0 - 1.0 / 15.0)).abs() < 1e-15);
        assert!((s - 0.9333).abs() < 1e-4);
        assert_eq!(similarity("ab", "cd").unwrap(), 0.0);
        assert_eq!(similarity("", ""), Err(MatchError::BothEmpty));
    }

    #[test]
    fn exact_match_takes_first_in_table_order() {
        let table = [
            entry("FOAN-2021-00001", "1", FractureClass::Material),
            entry("FOAN-2021-00042", "778", FractureClass::GreenBody),
            entry("FOAN-2021-00042", "779", FractureClass::HardMachining),
        ];
        let r = match_image("img", &cand("FOAN-2021-00042", ""), &table, &MatchConfig::default());
        assert_eq!(r.outcome, MatchOutcome::Exact);
        assert_eq!(r.entry.unwrap().serial, "778");
        assert_eq!(r.uid.unwrap(), "FOAN-2021-00042|778|green_body");
    }

    #[test]
    fn one_corrupted_character_is_fuzzy() {
        let table = [
            entry("FOAN-2021-00042", "778", FractureClass::GreenBody),
            entry("FOAN-2019-31337", "1", FractureClass::Material),
        ];
        let r = match_image("img", &cand("FOAN-2021-00O42", ""), &table, &MatchConfig::default());
        match r.outcome {
            MatchOutcome::Fuzzy { similarity } => {
                assert!((similarity - (1.0 - 1.0 / 15.0)).abs() < 1e-12)
            }
            other => panic!("expected fuzzy, got {other:?}"),
        }
        assert_eq!(r.entry.unwrap().foan, "FOAN-2021-00042");
    }

    #[test]
    fn tie_broken_by_serial_substring() {
        // candidate ...00040 is one edit from both ...00041 and ...00042
        let table = [
            entry("FOAN-2021-00041", "1234", FractureClass::Material),
            entry("FOAN-2021-00042", "SN-7781", FractureClass::GreenBody),
        ];
        let c = cand("FOAN-2021-00040", "778");
        let r = match_image("img", &c, &table, &MatchConfig::default());
        match r.outcome {
            MatchOutcome::TieBroken { similarity } => {
                assert!((similarity - (1.0 - 1.0 / 15.0)).abs() < 1e-12)
            }
            other => panic!("expected tie-broken, got {other:?}"),
        }
        assert_eq!(r.entry.unwrap().foan, "FOAN-2021-00042");
    }

    #[test]
    fn unresolved_tie_is_unmatched() {
        let table = [
            entry("FOAN-2021-00041", "778", FractureClass::Material),
            entry("FOAN-2021-00042", "7780", FractureClass::GreenBody),
        ];
        let r = match_image("img", &cand("FOAN-2021-00040", "778"), &table, &MatchConfig::default());
        assert_eq!(r.outcome, MatchOutcome::Unmatched);
        assert!(r.entry.is_none() && r.uid.is_none());

        let r = match_image("img", &cand("FOAN-2021-00040", ""), &table, &MatchConfig::default());
        assert_eq!(r.outcome, MatchOutcome::Unmatched);
    }

    #[test]
    fn threshold_is_strict() {
        // 10 chars, 1 edit: similarity exactly 0.9 is not above 0.9
        let table = [entry("ABCDEFGHIJ", "", FractureClass::Material)];
        let r = match_image("img", &cand("ABCDEFGHIX", ""), &table, &MatchConfig::default());
        assert_eq!(r.outcome, MatchOutcome::Unmatched);
        let loose = MatchConfig {
            similarity_threshold: 0.85,
            ..MatchConfig::default()
        };
        assert!(match_image("img", &cand("ABCDEFGHIX", ""), &table, &loose).outcome.is_matched());
    }

    #[test]
    fn normalisation_flag() {
        let table = [entry("FOAN-2021-00042", "", FractureClass::Material)];
        let c = cand("  foan-2021-00042 ", "");
        assert_eq!(match_image("i", &c, &table, &MatchConfig::default()).outcome, MatchOutcome::Exact);
        let raw = MatchConfig {
            normalize: false,
            ..MatchConfig::default()
        };
        assert_eq!(match_image("i", &c, &table, &raw).outcome, MatchOutcome::Unmatched);
    }

    #[test]
    fn empty_table_is_unmatched() {
        let r = match_image("i", &cand("FOAN-2021-00042", ""), &[], &MatchConfig::default());
        assert_eq!(r.outcome, MatchOutcome::Unmatched);
    }

    #[test]
    fn uid_format() {
        let a = assign_uid("FOAN-2021-00042", "778", FractureClass::GreenBody).unwrap();
        assert_eq!(a, "FOAN-2021-00042|778|green_body");
        assert_eq!(a, assign_uid("FOAN-2021-00042", "778", FractureClass::GreenBody).unwrap());
        assert_eq!(
            assign_uid("FOAN-2021-00042", "", FractureClass::Material).unwrap(),
            "FOAN-2021-00042||material"
        );
        assert!(matches!(
            assign_uid("FOAN|1", "", FractureClass::Material),
            Err(MatchError::IllegalCharacter { field: "foan", .. })
        ));
        assert_eq!(assign_uid("", "1", FractureClass::Material), Err(MatchError::EmptyFoan));
        assert!(assign_uid("F", "", FractureClass::UnknownOrigin).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::default().validate().is_ok());
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            let cfg = MatchConfig {
                similarity_threshold: bad,
                ..MatchConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
    }

    fn corrupt(s: &str, positions: &[usize]) -> String {
        s.chars()
            .enumerate()
            .map(|(i, c)| if positions.contains(&i) { '#' } else { c })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_dp_oracle(a in "[abc]{0,12}", b in "[abc]{0,12}") {
            prop_assert_eq!(levenshtein(&a, &b), dp_oracle(&a, &b));
        }

        #[test]
        fn is_a_metric(a in "[ab]{0,8}", b in "[ab]{0,8}", c in "[ab]{0,8}") {
            let ab = levenshtein(&a, &b);
            prop_assert_eq!(ab, levenshtein(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        }

        #[test]
        fn similarity_one_iff_equal(a in "[xyz]{1,8}", b in "[xyz]{1,8}") {
            prop_assert_eq!(similarity(&a, &b).unwrap() == 1.0, a == b);
        }

        #[test]
        fn more_corruption_never_raises_similarity(
            number in 0u32..100000,
            positions in proptest::sample::subsequence((0..15).collect::<Vec<usize>>(), 0..15),
        ) {
            let truth = format!("FOAN-2021-{number:05}");
            for n in 0..positions.len() {
                let fewer = similarity(&corrupt(&truth, &positions[..n]), &truth).unwrap();
                let more = similarity(&corrupt(&truth, &positions[..n + 1]), &truth).unwrap();
                prop_assert!(more <= fewer);
            }
        }

        #[test]
        fn fuzzy_never_at_or_below_threshold(
            foans in proptest::collection::vec("F[0-9]{6}", 1..6),
            probe in "F[0-9]{6}",
            serial in "[0-9]{0,2}",
            threshold in 0.5f64..0.99,
        ) {
            let table: Vec<ReportEntry> = foans
                .iter()
                .enumerate()
                .map(|(i, f)| entry(f, &format!("{i}{i}"), FractureClass::GreenBody))
                .collect();
            let cfg = MatchConfig { similarity_threshold: threshold, normalize: true };
            let r = match_image("p", &cand(&probe, &serial), &table, &cfg);
            if let MatchOutcome::Fuzzy { similarity } | MatchOutcome::TieBroken { similarity } = r.outcome {
                prop_assert!(similarity > threshold);
            }
            prop_assert_eq!(r.outcome.is_matched(), r.entry.is_some());
            prop_assert_eq!(r.outcome.is_matched(), r.uid.is_some());
        }
    }
}
