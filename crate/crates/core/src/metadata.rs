//! Questionnaire preprocessing: medical-history categories, smoking merges,
//! age midpoints and the fixed-order one-hot / multi-hot encoding.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetadataError {
    #[error("unknown {field} category '{value}'")]
    UnknownCategory { field: &'static str, value: String },
    #[error("unparseable age '{0}'")]
    UnparseableAge(String),
    #[error("row {row} ({participant}): missing COVID-19 test result")]
    MissingLabel { row: usize, participant: String },
    #[error("{0}: age withheld on a negative record; row must be dropped")]
    RejectedAge(String),
    #[error("{sample}: symptom '{symptom}' is not in the fitted vocabulary")]
    SchemaMismatch { sample: String, symptom: String },
    #[error("schema version {found} does not match {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("duplicate sample id '{0}'")]
    DuplicateSample(String),
    #[error("cannot fit an encoding schema on zero records")]
    EmptyFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    Other,
}

impl Gender {
    pub fn parse(raw: &str) -> Result<Self, MetadataError> {
        match normalize(raw).as_str() {
            "female" | "f" | "woman" => Ok(Gender::Female),
            "male" | "m" | "man" => Ok(Gender::Male),
            // Unprovided gender shares the third column.
            "other" | "pnts" | "prefernottosay" | "nonbinary" | "" => Ok(Gender::Other),
            _ => Err(MetadataError::UnknownCategory {
                field: "gender",
                value: raw.to_string(),
            }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedicalCategory {
    HighBloodPressure,
    Pulmonary,
    Cardiovascular,
    Cancer,
    Diabetes,
    Other,
}

impl MedicalCategory {
    pub const ALL: [MedicalCategory; 6] = [
        MedicalCategory::HighBloodPressure,
        MedicalCategory::Pulmonary,
        MedicalCategory::Cardiovascular,
        MedicalCategory::Cancer,
        MedicalCategory::Diabetes,
        MedicalCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MedicalCategory::HighBloodPressure => "high_blood_pressure",
            MedicalCategory::Pulmonary => "pulmonary",
            MedicalCategory::Cardiovascular => "cardiovascular",
            MedicalCategory::Cancer => "cancer",
            MedicalCategory::Diabetes => "diabetes",
            MedicalCategory::Other => "other",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmokingStatus {
    NonSmoker,
    ExSmoker,
    OneToTenPerDay,
    ElevenPlusPerDay,
    PreferNotToSay,
}

impl SmokingStatus {
    pub const ALL: [SmokingStatus; 5] = [
        SmokingStatus::NonSmoker,
        SmokingStatus::ExSmoker,
        SmokingStatus::OneToTenPerDay,
        SmokingStatus::ElevenPlusPerDay,
        SmokingStatus::PreferNotToSay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SmokingStatus::NonSmoker => "non_smoker",
            SmokingStatus::ExSmoker => "ex_smoker",
            SmokingStatus::OneToTenPerDay => "1_10_per_day",
            SmokingStatus::ElevenPlusPerDay => "11_plus_per_day",
            SmokingStatus::PreferNotToSay => "prefer_not_to_say",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SmokingStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lowercase and drop separators so "21+ cigarettes per day", "21+" and
/// "21+_cigarettes" compare alike.
fn normalize(raw: &str) -> String {
    raw.trim()
        .chars()
        .filter(|c| !matches!(c, ' ' | '-' | '_' | '\t'))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Medical-history table lookup; `None` for codes outside the table.
pub fn lookup_medical(code: &str) -> Option<MedicalCategory> {
    use MedicalCategory::*;
    let category = match normalize(code).as_str() {
        "hpb" | "hbp" => HighBloodPressure,
        "asthma" | "lung" | "copd" | "cystic" => Pulmonary,
        "heart" | "valvular" | "otherheart" => Cardiovascular,
        "cancer" => Cancer,
        "diabetes" => Diabetes,
        "pnts" | "longterm" | "hiv" | "angina" => Other,
        _ => return None,
    };
    Some(category)
}

/// Maps a raw condition code to its category. Codes outside the table fall
/// back to `Other` with a warning.
pub fn categorize_medical(code: &str) -> MedicalCategory {
    lookup_medical(code).unwrap_or_else(|| {
        log::warn!("unknown medical history code '{code}', categorized as other");
        MedicalCategory::Other
    })
}

/// Parses a smoking answer, merging "smoked once" into non-smokers and
/// "21+ per day" into the 11-or-more group.
pub fn parse_smoking(raw: &str) -> Result<SmokingStatus, MetadataError> {
    use SmokingStatus::*;
    let status = match normalize(raw).as_str() {
        "never" | "nonsmoker" | "no" | "none" => NonSmoker,
        "ltonce" | "itonce" | "smokedonce" | "once" => NonSmoker,
        "ex" | "exsmoker" => ExSmoker,
        "1to10" | "110" | "110cigarettesperday" => OneToTenPerDay,
        "11to20" | "1120" | "1120cigarettesperday" => ElevenPlusPerDay,
        "21+" | "21+cigarettesperday" | "11+" | "11ormorecigarettesperday" => ElevenPlusPerDay,
        "prefernot" | "prefernottosay" | "pnts" => PreferNotToSay,
        _ => {
            return Err(MetadataError::UnknownCategory {
                field: "smoking",
                value: raw.to_string(),
            })
        }
    };
    Ok(status)
}

/// One-hot vector over the five merged smoking groups.
pub fn encode_smoking(raw: &str) -> Result<[f64; 5], MetadataError> {
    let mut out = [0.0; 5];
    out[parse_smoking(raw)?.index()] = 1.0;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgeValue {
    Years(f64),
    PreferNotToSay,
}

/// Range strings map to their midpoint ("40-49" is 44.5), an open range such
/// as "90-" or "90+" to its lower bound, plain numbers to themselves.
pub fn parse_age(raw: &str) -> Result<AgeValue, MetadataError> {
    let s = raw.trim();
    let lower = s.to_ascii_lowercase();
    if matches!(lower.as_str(), "pnts" | "prefer not to say" | "prefernottosay") {
        return Ok(AgeValue::PreferNotToSay);
    }
    let bad = || MetadataError::UnparseableAge(raw.to_string());
    let num = |t: &str| -> Result<f64, MetadataError> {
        let v: f64 = t.trim().parse().map_err(|_| bad())?;
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(bad())
        }
    };
    if let Some(open) = s.strip_suffix('+').or_else(|| s.strip_suffix('-')) {
        return num(open).map(AgeValue::Years);
    }
    if let Some((a, b)) = s.split_once('-') {
        let (a, b) = (num(a)?, num(b)?);
        if b < a {
            return Err(bad());
        }
        return Ok(AgeValue::Years((a + b) / 2.0));
    }
    num(s).map(AgeValue::Years)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgeDecision {
    Years(f64),
    /// Withheld age on a negative record: the row is dropped.
    Reject,
    /// Withheld age on a positive record: filled with the training mean.
    Impute,
}

pub fn encode_age(raw: &str, label: u8) -> Result<AgeDecision, MetadataError> {
    Ok(match parse_age(raw)? {
        AgeValue::Years(y) => AgeDecision::Years(y),
        AgeValue::PreferNotToSay if label == 1 => AgeDecision::Impute,
        AgeValue::PreferNotToSay => AgeDecision::Reject,
    })
}

/// Min-max scaling with bounds fitted elsewhere; values outside the bounds
/// are clamped into `[0, 1]`.
pub fn normalize_age(years: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((years - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// One questionnaire row as ingested from the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantRecord {
    pub sample_id: String,
    pub participant_id: String,
    pub audio_path: String,
    pub gender: Gender,
    pub age_field: String,
    pub medical_history: Vec<String>,
    pub smoking: String,
    pub symptoms: Vec<String>,
    pub hospitalized: bool,
    /// 1 = tested positive, 0 = negative.
    pub label: u8,
}

impl ParticipantRecord {
    pub fn medical_categories(&self) -> BTreeSet<MedicalCategory> {
        self.medical_history.iter().map(|c| categorize_medical(c)).collect()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    #[serde(default)]
    sample_id: Option<String>,
    participant_id: String,
    audio_path: String,
    gender: String,
    age: String,
    #[serde(default)]
    medical_history: String,
    smoking: String,
    #[serde(default)]
    symptoms: String,
    hospitalized: String,
    #[serde(default)]
    covid_test: String,
}

fn split_list(raw: &str) -> Vec<String> {
    raw.split(';')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("none"))
        .collect()
}

fn parse_yes_no(field: &'static str, raw: &str) -> Result<bool, MetadataError> {
    match normalize(raw).as_str() {
        "yes" | "y" | "1" | "true" => Ok(true),
        "no" | "n" | "0" | "false" => Ok(false),
        _ => Err(MetadataError::UnknownCategory {
            field,
            value: raw.to_string(),
        }),
    }
}

fn parse_label(raw: &str) -> Option<Result<u8, MetadataError>> {
    match normalize(raw).as_str() {
        "" => None,
        "positive" | "pos" | "1" => Some(Ok(1)),
        "negative" | "neg" | "0" => Some(Ok(0)),
        _ => Some(Err(MetadataError::UnknownCategory {
            field: "covid_test",
            value: raw.to_string(),
        })),
    }
}

fn sample_id_from_path(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// Reads the manifest CSV. Sample ids come from an optional `sample_id`
/// column, else the audio file stem; they must be unique.
pub fn read_manifest<R: Read>(reader: R) -> crate::Result<Vec<ParticipantRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row = row?;
        let label = match parse_label(&row.covid_test) {
            None => {
                return Err(MetadataError::MissingLabel {
                    row: i + 1,
                    participant: row.participant_id,
                }
                .into())
            }
            Some(l) => l?,
        };
        let sample_id = row
            .sample_id
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| sample_id_from_path(&row.audio_path));
        if !seen.insert(sample_id.clone()) {
            return Err(MetadataError::DuplicateSample(sample_id).into());
        }
        out.push(ParticipantRecord {
            sample_id,
            participant_id: row.participant_id,
            audio_path: row.audio_path,
            gender: Gender::parse(&row.gender)?,
            age_field: row.age,
            medical_history: split_list(&row.medical_history),
            smoking: row.smoking,
            symptoms: split_list(&row.symptoms),
            hospitalized: parse_yes_no("hospitalized", &row.hospitalized)?,
            label,
        });
    }
    Ok(out)
}

pub fn read_manifest_file(path: &Path) -> crate::Result<Vec<ParticipantRecord>> {
    let file = std::fs::File::open(path).map_err(|e| crate::Error::io(path, e))?;
    read_manifest(file)
}

pub fn write_manifest<W: Write>(writer: W, records: &[ParticipantRecord]) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(ManifestRow {
            sample_id: Some(r.sample_id.clone()),
            participant_id: r.participant_id.clone(),
            audio_path: r.audio_path.clone(),
            gender: r.gender.as_str().to_string(),
            age: r.age_field.clone(),
            medical_history: r.medical_history.join(";"),
            smoking: r.smoking.clone(),
            symptoms: r.symptoms.join(";"),
            hospitalized: if r.hospitalized { "yes" } else { "no" }.to_string(),
            covid_test: if r.label == 1 { "positive" } else { "negative" }.to_string(),
        })?;
    }
    w.flush().map_err(|e| crate::Error::io("manifest", e))?;
    Ok(())
}

/// Drops rows whose age was withheld on a negative record; returns the kept
/// rows and the dropped sample ids. Unparseable ages are errors.
pub fn ingest(records: Vec<ParticipantRecord>) -> crate::Result<(Vec<ParticipantRecord>, Vec<String>)> {
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = Vec::new();
    for r in records {
        match encode_age(&r.age_field, r.label)? {
            AgeDecision::Reject => dropped.push(r.sample_id),
            _ => kept.push(r),
        }
    }
    Ok((kept, dropped))
}

fn symptom_key(raw: &str) -> String {
    normalize(raw)
}

/// Frozen column layout plus the statistics fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSchema {
    pub version: u32,
    pub symptom_vocab: Vec<String>,
    pub age_min: f64,
    pub age_max: f64,
    pub age_mean: f64,
}

/// Numeric encoding of one record under a fitted schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedRecord {
    pub sample_id: String,
    pub features: Vec<f64>,
    pub label: u8,
    pub schema_version: u32,
}

impl EncodingSchema {
    /// Fits the symptom vocabulary and age statistics on training rows only.
    /// The result does not depend on row order.
    pub fn fit(train: &[ParticipantRecord]) -> Result<Self, MetadataError> {
        if train.is_empty() {
            return Err(MetadataError::EmptyFit);
        }
        let vocab: BTreeSet<String> = train
            .iter()
            .flat_map(|r| r.symptoms.iter().map(|s| symptom_key(s)))
            .collect();
        let mut ages = Vec::new();
        for r in train {
            if let AgeValue::Years(y) = parse_age(&r.age_field)? {
                ages.push(y);
            }
        }
        ages.sort_by(f64::total_cmp);
        let (age_min, age_max, age_mean) = if ages.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                ages[0],
                ages[ages.len() - 1],
                ages.iter().sum::<f64>() / ages.len() as f64,
            )
        };
        Ok(Self {
            version: SCHEMA_VERSION,
            symptom_vocab: vocab.into_iter().collect(),
            age_min,
            age_max,
            age_mean,
        })
    }

    pub fn width(&self) -> usize {
        3 + MedicalCategory::ALL.len() + SmokingStatus::ALL.len() + self.symptom_vocab.len() + 2
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut cols = Vec::with_capacity(self.width());
        for g in [Gender::Female, Gender::Male, Gender::Other] {
            cols.push(format!("gender_{}", g.as_str()));
        }
        for c in MedicalCategory::ALL {
            cols.push(format!("med_{}", c.as_str()));
        }
        for s in SmokingStatus::ALL {
            cols.push(format!("smoke_{}", s.as_str()));
        }
        for s in &self.symptom_vocab {
            cols.push(format!("sym_{s}"));
        }
        cols.push("age".into());
        cols.push("hospitalized".into());
        cols
    }

    /// Column index of a symptom, if it is in the vocabulary.
    pub fn symptom_column(&self, symptom: &str) -> Option<usize> {
        let key = symptom_key(symptom);
        self.symptom_vocab
            .binary_search(&key)
            .ok()
            .map(|i| 3 + MedicalCategory::ALL.len() + SmokingStatus::ALL.len() + i)
    }

    /// Strict check that every symptom of `rec` is in the vocabulary.
    pub fn check(&self, rec: &ParticipantRecord) -> Result<(), MetadataError> {
        for s in &rec.symptoms {
            if self.symptom_column(s).is_none() {
                return Err(MetadataError::SchemaMismatch {
                    sample: rec.sample_id.clone(),
                    symptom: s.clone(),
                });
            }
        }
        Ok(())
    }

    /// Encodes in frozen order: gender (3), medical categories (6), smoking (5),
    /// symptoms (vocabulary), normalized age, hospitalized.
    ///
    /// A symptom outside the vocabulary zeroes the whole symptom block and
    /// logs a warning.
    pub fn encode(&self, rec: &ParticipantRecord) -> Result<EncodedRecord, MetadataError> {
        if self.version != SCHEMA_VERSION {
            return Err(MetadataError::VersionMismatch {
                found: self.version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut v = Vec::with_capacity(self.width());

        let mut gender = [0.0; 3];
        gender[rec.gender as usize] = 1.0;
        v.extend_from_slice(&gender);

        let mut medical = [0.0; 6];
        for c in rec.medical_categories() {
            medical[c.index()] = 1.0;
        }
        v.extend_from_slice(&medical);

        v.extend_from_slice(&encode_smoking(&rec.smoking)?);

        let sym_start = v.len();
        v.resize(sym_start + self.symptom_vocab.len(), 0.0);
        match self.check(rec) {
            Ok(()) => {
                for s in &rec.symptoms {
                    let col = self.symptom_column(s).expect("checked above");
                    v[col] = 1.0;
                }
            }
            Err(e) => log::warn!("{e}; symptom block left empty"),
        }

        let years = match encode_age(&rec.age_field, rec.label)? {
            AgeDecision::Years(y) => y,
            AgeDecision::Impute => self.age_mean,
            AgeDecision::Reject => return Err(MetadataError::RejectedAge(rec.sample_id.clone())),
        };
        v.push(normalize_age(years, self.age_min, self.age_max));
        v.push(if rec.hospitalized { 1.0 } else { 0.0 });

        Ok(EncodedRecord {
            sample_id: rec.sample_id.clone(),
            features: v,
            label: rec.label,
            schema_version: self.version,
        })
    }
}

/// Encoded matrix CSV: `sample_id`, one column per schema column, `label`.
pub fn write_encoded_csv<W: Write>(
    writer: W,
    schema: &EncodingSchema,
    rows: &[EncodedRecord],
) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["sample_id".to_string()];
    header.extend(schema.column_names());
    header.push("label".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.sample_id.clone()];
        rec.extend(r.features.iter().map(|v| v.to_string()));
        rec.push(r.label.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| crate::Error::io("encoded csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str) -> ParticipantRecord {
        ParticipantRecord {
            sample_id: id.into(),
            participant_id: format!("p_{id}"),
            audio_path: format!("{id}.wav"),
            gender: Gender::Female,
            age_field: "40-49".into(),
            medical_history: vec![],
            smoking: "never".into(),
            symptoms: vec![],
            hospitalized: false,
            label: 0,
        }
    }

    #[test]
    fn medical_table() {
        use MedicalCategory::*;
        let table = [
            ("hpb", HighBloodPressure),
            ("asthma", Pulmonary),
            ("pnts", Other),
            ("longterm", Other),
            ("lung", Pulmonary),
            ("heart", Cardiovascular),
            ("valvular", Cardiovascular),
            ("cancer", Cancer),
            ("diabetes", Diabetes),
            ("copd", Pulmonary),
            ("hiv", Other),
            ("otherHeart", Cardiovascular),
            ("cystic", Pulmonary),
            ("angina", Other),
        ];
        for (code, cat) in table {
            assert_eq!(categorize_medical(code), cat, "{code}");
            assert_eq!(lookup_medical(code), Some(cat));
        }
        assert_eq!(categorize_medical("Asthma"), Pulmonary);
        assert_eq!(lookup_medical("unlisted_xyz"), None);
        assert_eq!(categorize_medical("unlisted_xyz"), Other);
    }

    #[test]
    fn smoking_merges() {
        assert_eq!(parse_smoking("ltOnce").unwrap(), SmokingStatus::NonSmoker);
        assert_eq!(
            parse_smoking("21+ cigarettes per day").unwrap(),
            SmokingStatus::ElevenPlusPerDay
        );
        assert_eq!(
            parse_smoking("11-20 cigarettes per day").unwrap(),
            SmokingStatus::ElevenPlusPerDay
        );
        assert_eq!(parse_smoking("ex-smoker").unwrap(), SmokingStatus::ExSmoker);
        assert_eq!(encode_smoking("ex-smoker").unwrap(), [0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(encode_smoking("ltOnce").unwrap(), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            parse_smoking("pipe"),
            Err(MetadataError::UnknownCategory { .. })
        ));
    }

    #[test]
    fn age_parsing() {
        assert_eq!(parse_age("40-49").unwrap(), AgeValue::Years(44.5));
        assert_eq!(parse_age("90-").unwrap(), AgeValue::Years(90.0));
        assert_eq!(parse_age("37").unwrap(), AgeValue::Years(37.0));
        assert_eq!(parse_age("pnts").unwrap(), AgeValue::PreferNotToSay);
        assert!(matches!(parse_age("forty"), Err(MetadataError::UnparseableAge(_))));
        assert!(matches!(parse_age("50-40"), Err(MetadataError::UnparseableAge(_))));
        assert_eq!(encode_age("pnts", 0).unwrap(), AgeDecision::Reject);
        assert_eq!(encode_age("pnts", 1).unwrap(), AgeDecision::Impute);
    }

    #[test]
    fn min_max_age() {
        let v: Vec<f64> = [20.0, 45.0, 70.0]
            .iter()
            .map(|&a| normalize_age(a, 20.0, 70.0))
            .collect();
        assert_eq!(v, vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_age(90.0, 20.0, 70.0), 1.0);
    }

    #[test]
    fn symptom_multi_hot() {
        let mut a = record("a");
        a.symptoms = vec!["drycough".into(), "shortbreath".into()];
        let mut b = record("b");
        b.symptoms = vec!["fever".into(), "drycough".into()];
        let schema = EncodingSchema::fit(&[a.clone(), b]).unwrap();
        assert_eq!(schema.symptom_vocab, vec!["drycough", "fever", "shortbreath"]);
        let enc = schema.encode(&a).unwrap();
        let start = schema.symptom_column("drycough").unwrap();
        assert_eq!(&enc.features[start..start + 3], &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_symptoms_and_one_hot_groups() {
        let schema = EncodingSchema::fit(&[record("a")]).unwrap();
        let mut rec = record("b");
        rec.symptoms.clear();
        let e = schema.encode(&rec).unwrap();
        assert_eq!(e.features.len(), schema.width());
        assert_eq!(e.features[0..3].iter().sum::<f64>(), 1.0);
        assert_eq!(e.features[9..14].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn hospitalized_and_label() {
        let mut r = record("a");
        r.hospitalized = true;
        r.label = 1;
        let schema = EncodingSchema::fit(&[r.clone()]).unwrap();
        let e = schema.encode(&r).unwrap();
        assert_eq!(*e.features.last().unwrap(), 1.0);
        assert_eq!(e.label, 1);
    }

    #[test]
    fn unknown_symptom_zeroes_block() {
        let mut a = record("a");
        a.symptoms = vec!["fever".into()];
        let schema = EncodingSchema::fit(&[a]).unwrap();
        let mut b = record("b");
        b.symptoms = vec!["fever".into(), "hiccups".into()];
        assert!(matches!(
            schema.check(&b),
            Err(MetadataError::SchemaMismatch { .. })
        ));
        let e = schema.encode(&b).unwrap();
        let col = schema.symptom_column("fever").unwrap();
        assert_eq!(e.features[col], 0.0);
    }

    #[test]
    fn imputes_positive_and_rejects_negative_withheld_age() {
        let mut young = record("y");
        young.age_field = "20-29".into();
        let mut old = record("o");
        old.age_field = "60-69".into();
        let schema = EncodingSchema::fit(&[young, old]).unwrap();
        assert_eq!(schema.age_mean, 44.5);
        let mut pos = record("p");
        pos.age_field = "pnts".into();
        pos.label = 1;
        let e = schema.encode(&pos).unwrap();
        assert_eq!(e.features[schema.width() - 2], 0.5);
        pos.label = 0;
        assert!(matches!(schema.encode(&pos), Err(MetadataError::RejectedAge(_))));
    }

    #[test]
    fn manifest_parsing() {
        let csv = "participant_id,audio_path,gender,age,medical_history,smoking,symptoms,hospitalized,covid_test\n\
                   u1,audio/a1.wav,male,40-49,asthma;hpb,ltOnce,drycough;shortbreath,no,positive\n\
                   u2,audio/a2.wav,female,pnts,None,never,None,yes,negative\n";
        let recs = read_manifest(csv.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].sample_id, "a1");
        assert_eq!(recs[0].medical_history, vec!["asthma", "hpb"]);
        assert_eq!(recs[0].label, 1);
        assert!(recs[1].symptoms.is_empty());
        let (kept, dropped) = ingest(recs).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(dropped, vec!["a2".to_string()]);
    }

    #[test]
    fn manifest_without_label_is_rejected() {
        let csv = "participant_id,audio_path,gender,age,medical_history,smoking,symptoms,hospitalized,covid_test\n\
                   u1,a1.wav,male,40-49,,never,,no,\n";
        assert!(matches!(
            read_manifest(csv.as_bytes()),
            Err(crate::Error::Metadata(MetadataError::MissingLabel { row: 1, .. }))
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let mut r = record("s1");
        r.medical_history = vec!["asthma".into()];
        r.symptoms = vec!["fever".into(), "drycough".into()];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &[r.clone()]).unwrap();
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), vec![r]);
    }

    #[test]
    fn fit_ignores_everything_but_training_rows() {
        let train: Vec<_> = (0..20)
            .map(|i| {
                let mut r = record(&format!("t{i}"));
                r.age_field = format!("{}-{}", 10 * (i % 8) + 10, 10 * (i % 8) + 19);
                r.symptoms = if i % 3 == 0 { vec!["fever".into()] } else { vec![] };
                r.label = (i % 2) as u8;
                r
            })
            .collect();
        let mut test: Vec<_> = (0..10).map(|i| record(&format!("x{i}"))).collect();
        let a = EncodingSchema::fit(&train).unwrap();
        // Scramble the held-out rows (labels, ages, symptoms) and the row order.
        for (i, r) in test.iter_mut().enumerate() {
            r.label = 1 - r.label;
            r.age_field = "90-".into();
            r.symptoms = vec![format!("rare{i}")];
        }
        test.reverse();
        let mut shuffled = train.clone();
        shuffled.reverse();
        shuffled.rotate_left(7);
        let b = EncodingSchema::fit(&shuffled).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    fn arb_record() -> impl Strategy<Value = ParticipantRecord> {
        (
            0usize..3,
            proptest::sample::subsequence(vec!["hpb", "asthma", "heart", "cancer", "diabetes", "hiv"], 0..4),
            proptest::sample::select(vec!["never", "ex", "1to10", "11to20", "prefernot"]),
            proptest::sample::subsequence(vec!["drycough", "fever", "headache", "shortbreath"], 0..4),
            proptest::sample::select(vec!["20-29", "30-39", "40-49", "60-69"]),
            any::<bool>(),
        )
            .prop_map(|(g, med, smoke, sym, age, hosp)| ParticipantRecord {
                sample_id: "s".into(),
                participant_id: "p".into(),
                audio_path: "s.wav".into(),
                gender: [Gender::Female, Gender::Male, Gender::Other][g],
                age_field: age.into(),
                medical_history: med.into_iter().map(String::from).collect(),
                smoking: smoke.into(),
                symptoms: sym.into_iter().map(String::from).collect(),
                hospitalized: hosp,
                label: 0,
            })
    }

    fn vocab_schema() -> EncodingSchema {
        let mut a = record("a");
        a.symptoms = ["drycough", "fever", "headache", "shortbreath"].map(String::from).to_vec();
        a.age_field = "20-29".into();
        let mut b = record("b");
        b.age_field = "60-69".into();
        EncodingSchema::fit(&[a, b]).unwrap()
    }

    fn semantic_key(r: &ParticipantRecord) -> String {
        let mut sym: Vec<_> = r.symptoms.clone();
        sym.sort();
        format!(
            "{:?}|{:?}|{:?}|{:?}|{}|{}",
            r.gender,
            r.medical_categories(),
            parse_smoking(&r.smoking).unwrap(),
            sym,
            r.age_field,
            r.hospitalized
        )
    }

    proptest! {
        #[test]
        fn encoding_is_injective(a in arb_record(), b in arb_record()) {
            let schema = vocab_schema();
            let ea = schema.encode(&a).unwrap();
            let eb = schema.encode(&b).unwrap();
            prop_assert_eq!(ea.features.len(), schema.width());
            prop_assert_eq!(eb.features.len(), schema.width());
            prop_assert_eq!(semantic_key(&a) == semantic_key(&b), ea.features == eb.features);
        }

        #[test]
        fn group_invariants(a in arb_record()) {
            let schema = vocab_schema();
            let e = schema.encode(&a).unwrap();
            prop_assert_eq!(e.features[0..3].iter().sum::<f64>(), 1.0);
            prop_assert_eq!(e.features[9..14].iter().sum::<f64>(), 1.0);
            prop_assert!(e.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
