//! Loading raw KCC query logs.
//!
//! Records arrive either as CSV exports (one file per district and month) or
//! as JSON from the KKMS query endpoint. Both paths funnel through the same
//! row validation so that rejected rows are reported with their row number
//! and the rule they broke instead of being dropped.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Base of the KKMS per-district query export.
pub const KKMS_QUERY_ENDPOINT: &str = "http://dackkms.gov.in/Account/API/kKMS_QueryData.aspx";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid fetch spec: {0}")]
    InvalidSpec(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV header is missing required columns: {}", missing.join(", "))]
    HeaderMismatch { missing: Vec<String> },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("request timed out")]
    Timeout,
    #[error("unexpected HTTP status {0}")]
    Status(u16),
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("network error fetching {spec}: {source}")]
    Network {
        spec: FetchSpec,
        #[source]
        source: TransportError,
    },
    #[error("malformed payload for {spec}: {message}")]
    Parse { spec: FetchSpec, message: String },
    #[error(transparent)]
    InvalidSpec(#[from] IngestError),
}

/// One historical query/answer row from the KCC logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KccRecord {
    pub season: String,
    pub sector: String,
    pub category: String,
    pub crop: String,
    pub query_type: String,
    pub query_text: String,
    pub kcc_answer: String,
    pub state_name: String,
    pub district: String,
    pub block_name: String,
    pub created_on: NaiveDate,
}

/// The eleven KCC columns, in export order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Season,
    Sector,
    Category,
    Crop,
    QueryType,
    QueryText,
    KccAnswer,
    StateName,
    District,
    BlockName,
    CreatedOn,
}

impl Field {
    pub const ALL: [Field; 11] = [
        Field::Season,
        Field::Sector,
        Field::Category,
        Field::Crop,
        Field::QueryType,
        Field::QueryText,
        Field::KccAnswer,
        Field::StateName,
        Field::District,
        Field::BlockName,
        Field::CreatedOn,
    ];

    /// Column name used by the KCC CSV exports.
    pub fn header(self) -> &'static str {
        match self {
            Field::Season => "Season",
            Field::Sector => "Sector",
            Field::Category => "Category",
            Field::Crop => "Crop",
            Field::QueryType => "QueryType",
            Field::QueryText => "QueryText",
            Field::KccAnswer => "KccAns",
            Field::StateName => "StateName",
            Field::District => "DistrictName",
            Field::BlockName => "BlockName",
            Field::CreatedOn => "CreatedOn",
        }
    }

    /// Matches a header or JSON key, ignoring case, spaces and underscores.
    pub fn from_header(name: &str) -> Option<Field> {
        let key: String = name
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let field = match key.as_str() {
            "season" => Field::Season,
            "sector" => Field::Sector,
            "category" => Field::Category,
            "crop" => Field::Crop,
            "querytype" => Field::QueryType,
            // the field list in the KCC documentation spells it "Query Test"
            "querytext" | "querytest" => Field::QueryText,
            "kccans" | "kccanswer" | "answer" => Field::KccAnswer,
            "statename" | "state" => Field::StateName,
            "districtname" | "district" => Field::District,
            "blockname" | "block" => Field::BlockName,
            "createdon" | "createddate" => Field::CreatedOn,
            _ => return None,
        };
        Some(field)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectRule {
    Blank,
    InvalidDate,
}

impl fmt::Display for RejectRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectRule::Blank => "blank",
            RejectRule::InvalidDate => "invalid_date",
        })
    }
}

/// A row that failed validation. `row` is the 1-based data row (the header
/// is not counted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub row: usize,
    pub field: Field,
    pub rule: RejectRule,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<KccRecord>,
    pub rejects: Vec<Reject>,
}

impl LoadReport {
    /// Number of data rows seen, accepted or not.
    pub fn rows_seen(&self) -> usize {
        self.records.len() + self.rejects.len()
    }

    pub fn extend(&mut self, other: LoadReport) {
        let offset = self.rows_seen();
        self.records.extend(other.records);
        self.rejects.extend(other.rejects.into_iter().map(|mut r| {
            r.row += offset;
            r
        }));
    }
}

/// Parameters of one KKMS export request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FetchSpec {
    pub state_cd: String,
    pub district_cd: String,
    pub month: String,
    pub year: String,
}

impl FetchSpec {
    pub fn new(
        state_cd: impl Into<String>,
        district_cd: impl Into<String>,
        month: impl Into<String>,
        year: impl Into<String>,
    ) -> Result<Self, IngestError> {
        let spec = FetchSpec {
            state_cd: state_cd.into(),
            district_cd: district_cd.into(),
            month: month.into(),
            year: year.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        check_digits("StateCD", &self.state_cd, 2)?;
        check_digits("DistrictCd", &self.district_cd, 4)?;
        check_digits("Month", &self.month, 2)?;
        check_digits("Year", &self.year, 4)?;
        let month: u32 = self.month.parse().expect("two ascii digits");
        if !(1..=12).contains(&month) {
            return Err(IngestError::InvalidSpec(format!(
                "Month must be 01-12, got {}",
                self.month
            )));
        }
        Ok(())
    }
}

impl fmt::Display for FetchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "StateCD={} DistrictCd={} Month={} Year={}",
            self.state_cd, self.district_cd, self.month, self.year
        )
    }
}

fn check_digits(name: &str, value: &str, width: usize) -> Result<(), IngestError> {
    if value.len() == width && value.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(IngestError::InvalidSpec(format!(
            "{name} must be exactly {width} digits, got {value:?}"
        )))
    }
}

/// Renders the KKMS export URL for `spec`.
pub fn render_fetch_url(spec: &FetchSpec) -> Result<String, IngestError> {
    spec.validate()?;
    Ok(format!(
        "{KKMS_QUERY_ENDPOINT}?StateCD={}&DistrictCd={}&Month={}&Year={}",
        spec.state_cd, spec.district_cd, spec.month, spec.year
    ))
}

/// Minimal blocking HTTP GET used by [`fetch_records`].
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<String, TransportError>;
}

/// Replays recorded response bodies keyed by URL. Unknown URLs are reported
/// as unreachable.
#[derive(Debug, Clone, Default)]
pub struct RecordedTransport {
    responses: HashMap<String, String>,
}

impl RecordedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, url: impl Into<String>, body: impl Into<String>) -> Self {
        self.responses.insert(url.into(), body.into());
        self
    }

    pub fn insert(&mut self, url: impl Into<String>, body: impl Into<String>) {
        self.responses.insert(url.into(), body.into());
    }
}

impl Transport for RecordedTransport {
    fn get(&self, url: &str) -> Result<String, TransportError> {
        self.responses
            .get(url)
            .cloned()
            .ok_or_else(|| TransportError::Unreachable(url.to_string()))
    }
}

/// Fetches and parses one district/month export.
pub fn fetch_records(spec: &FetchSpec, transport: &dyn Transport) -> Result<LoadReport, FetchError> {
    let url = render_fetch_url(spec)?;
    let body = transport.get(&url).map_err(|source| FetchError::Network {
        spec: spec.clone(),
        source,
    })?;
    parse_payload(&body).map_err(|message| FetchError::Parse {
        spec: spec.clone(),
        message,
    })
}

/// Fetches several specs concurrently, returning results in input order.
pub fn fetch_all(
    specs: &[FetchSpec],
    transport: &dyn Transport,
    max_parallel: usize,
) -> Vec<Result<LoadReport, FetchError>> {
    let mut results = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(max_parallel.max(1)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|spec| scope.spawn(move || fetch_records(spec, transport)))
                .collect();
            results.extend(handles.into_iter().map(|h| h.join().expect("fetch thread panicked")));
        });
    }
    results
}

/// Parses an endpoint body: either a bare JSON array of row objects or an
/// object wrapping one under `data`, `records` or `result`. Blank and `null`
/// bodies mean "no rows".
pub fn parse_payload(body: &str) -> Result<LoadReport, String> {
    let trimmed = body.trim();
    if trimmed.is_empty() {
        return Ok(LoadReport::default());
    }
    let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| e.to_string())?;
    let rows = match value {
        serde_json::Value::Null => return Ok(LoadReport::default()),
        serde_json::Value::Array(rows) => rows,
        serde_json::Value::Object(mut obj) => {
            match ["data", "records", "result"].iter().find_map(|k| obj.remove(*k)) {
                Some(serde_json::Value::Array(rows)) => rows,
                Some(serde_json::Value::Null) => return Ok(LoadReport::default()),
                _ => return Err("expected an array of rows".to_string()),
            }
        }
        _ => return Err("expected an array of rows".to_string()),
    };

    let mut report = LoadReport::default();
    for (i, row) in rows.into_iter().enumerate() {
        let serde_json::Value::Object(obj) = row else {
            return Err(format!("row {} is not an object", i + 1));
        };
        let mut fields = RawFields::default();
        for (key, value) in obj {
            if let Some(field) = Field::from_header(&key) {
                let text = match value {
                    serde_json::Value::Null => String::new(),
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                fields.set(field, text);
            }
        }
        match fields.into_record() {
            Ok(record) => report.records.push(record),
            Err((field, rule)) => report.rejects.push(Reject { row: i + 1, field, rule }),
        }
    }
    Ok(report)
}

#[derive(Default)]
struct RawFields {
    values: HashMap<Field, String>,
}

impl RawFields {
    fn set(&mut self, field: Field, value: String) {
        self.values.insert(field, value.trim().to_string());
    }

    fn take(&mut self, field: Field) -> String {
        self.values.remove(&field).unwrap_or_default()
    }

    fn into_record(mut self) -> Result<KccRecord, (Field, RejectRule)> {
        let query_text = self.take(Field::QueryText);
        if query_text.is_empty() {
            return Err((Field::QueryText, RejectRule::Blank));
        }
        let kcc_answer = self.take(Field::KccAnswer);
        if kcc_answer.is_empty() {
            return Err((Field::KccAnswer, RejectRule::Blank));
        }
        let created_raw = self.take(Field::CreatedOn);
        if created_raw.is_empty() {
            return Err((Field::CreatedOn, RejectRule::Blank));
        }
        let created_on =
            parse_date(&created_raw).ok_or((Field::CreatedOn, RejectRule::InvalidDate))?;
        Ok(KccRecord {
            season: self.take(Field::Season),
            sector: self.take(Field::Sector),
            category: self.take(Field::Category),
            crop: self.take(Field::Crop),
            query_type: self.take(Field::QueryType),
            query_text,
            kcc_answer,
            state_name: self.take(Field::StateName),
            district: self.take(Field::District),
            block_name: self.take(Field::BlockName),
            created_on,
        })
    }
}

const DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%d-%m-%Y", "%d/%m/%Y", "%Y/%m/%d"];
const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.fZ",
    "%d-%m-%Y %H:%M:%S",
    "%d-%m-%Y %H:%M",
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %H:%M",
];

/// Parses the date forms seen in KCC exports (ISO dates, ISO timestamps and
/// day-first Indian dates). Time of day is discarded.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(raw, f).ok())
        .or_else(|| {
            DATETIME_FORMATS
                .iter()
                .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
                .map(|dt| dt.date())
        })
        .or_else(|| chrono::DateTime::parse_from_rfc3339(raw).ok().map(|dt| dt.date_naive()))
}

/// Reads a KCC CSV export.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LoadReport, IngestError> {
    read_csv(File::open(path)?)
}

pub fn read_csv<R: Read>(reader: R) -> Result<LoadReport, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut columns: HashMap<Field, usize> = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        if let Some(field) = Field::from_header(name) {
            columns.entry(field).or_insert(i);
        }
    }
    let missing: Vec<String> = Field::ALL
        .iter()
        .filter(|f| !columns.contains_key(f))
        .map(|f| f.header().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::HeaderMismatch { missing });
    }

    let mut report = LoadReport::default();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let mut fields = RawFields::default();
        for (&field, &col) in &columns {
            fields.set(field, row.get(col).unwrap_or_default().to_string());
        }
        match fields.into_record() {
            Ok(record) => report.records.push(record),
            Err((field, rule)) => report.rejects.push(Reject { row: i + 1, field, rule }),
        }
    }
    Ok(report)
}

pub fn save_csv(path: impl AsRef<Path>, records: &[KccRecord]) -> Result<(), IngestError> {
    write_csv(BufWriter::new(File::create(path)?), records)
}

pub fn write_csv<W: Write>(writer: W, records: &[KccRecord]) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(Field::ALL.iter().map(|f| f.header()))?;
    for r in records {
        let date = r.created_on.format("%Y-%m-%d").to_string();
        wtr.write_record([
            r.season.as_str(),
            &r.sector,
            &r.category,
            &r.crop,
            &r.query_type,
            &r.query_text,
            &r.kcc_answer,
            &r.state_name,
            &r.district,
            &r.block_name,
            &date,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the rejects report as `row,field,rule` CSV.
pub fn write_rejects<W: Write>(writer: W, rejects: &[Reject]) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["row", "field", "rule"])?;
    for r in rejects {
        wtr.write_record([r.row.to_string(), r.field.to_string(), r.rule.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(mut writer: W, records: &[KccRecord]) -> Result<(), IngestError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[KccRecord]) -> Result<(), IngestError> {
    write_jsonl(BufWriter::new(File::create(path)?), records)
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<KccRecord>, IngestError> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| IngestError::Jsonl {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<KccRecord>, IngestError> {
    read_jsonl(File::open(path)?)
}

/// Loads a corpus file by extension: `.csv` is read as a KCC export (rejects
/// are returned alongside), anything else as line-delimited JSON.
pub fn load_corpus_file(path: impl AsRef<Path>) -> Result<LoadReport, IngestError> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        load_csv(path)
    } else {
        Ok(LoadReport {
            records: load_jsonl(path)?,
            rejects: Vec::new(),
        })
    }
}

/// Splits records into those inside the most recent `years` calendar years
/// (counting back from the latest `created_on` in the set) and those outside.
pub fn partition_window(records: Vec<KccRecord>, years: u32) -> (Vec<KccRecord>, Vec<KccRecord>) {
    let Some(latest) = records.iter().map(|r| r.created_on.year()).max() else {
        return (Vec::new(), Vec::new());
    };
    let first_year = latest - years as i32 + 1;
    records.into_iter().partition(|r| years > 0 && r.created_on.year() >= first_year)
}

pub fn filter_window(records: Vec<KccRecord>, years: u32) -> Vec<KccRecord> {
    partition_window(records, years).0
}
