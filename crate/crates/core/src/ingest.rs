//! Import-declaration records, CSV ingestion and weekly time slicing.
//!
//! ## CSV column contract
//!
//! | Column         | Type           | Notes                                   |
//! |----------------|----------------|-----------------------------------------|
//! | `sgd.id`       | string         |                                         |
//! | `sgd.date`     | `YYYY-MM-DD`   |                                         |
//! | `importer.id`  | string         |                                         |
//! | `declarant.id` | string         |                                         |
//! | `country`      | ISO-3 string   |                                         |
//! | `office.id`    | string         |                                         |
//! | `tariff.code`  | string         | 10-digit HS code, kept as text          |
//! | `quantity`     | number ≥ 0     |                                         |
//! | `gross.weight` | number ≥ 0     | kg                                      |
//! | `fob.value`    | number ≥ 0     |                                         |
//! | `cif.value`    | number ≥ 0     | must be ≥ `fob.value`                   |
//! | `total.taxes`  | number ≥ 0     |                                         |
//! | `illicit`      | `0` / `1`      | optional label column                   |
//! | `revenue`      | number ≥ 0     | optional label column; blank allowed on licit rows |
//!
//! Rows that violate an invariant are not dropped silently: they are returned
//! as [`Reject`]s carrying the 1-based file line and a short reason.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing required column '{0}'")]
    MissingColumn(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("num_weeks must be at least 1")]
    NoWeeks,
    #[error("window length must be at least 1 day")]
    EmptyWindow,
}

/// One import transaction row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Declaration {
    pub sgd_id: String,
    pub sgd_date: NaiveDate,
    pub importer_id: String,
    pub declarant_id: String,
    pub country: String,
    pub office_id: String,
    pub tariff_code: String,
    pub quantity: f64,
    pub gross_weight: f64,
    pub fob_value: f64,
    pub cif_value: f64,
    pub total_taxes: f64,
}

/// Ground truth revealed by a physical inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InspectionLabel {
    pub illicit: bool,
    pub revenue: f64,
}

impl InspectionLabel {
    pub const LICIT: InspectionLabel = InspectionLabel {
        illicit: false,
        revenue: 0.0,
    };
}

/// Counts reads of hidden labels outside the metrics path.
///
/// Anything that feeds the model, the features or a selection strategy must
/// obtain labels through [`LabeledDeclaration::training_record`], which bumps
/// this counter when the label has not been revealed yet.
#[derive(Debug, Default)]
pub struct LeakageAudit {
    hidden_reads: AtomicU64,
}

impl LeakageAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hidden_reads(&self) -> u64 {
        self.hidden_reads.load(Ordering::Relaxed)
    }

    fn record_hidden_read(&self) {
        self.hidden_reads.fetch_add(1, Ordering::Relaxed);
    }
}

/// A declaration paired with the label a simulated inspection would reveal.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDeclaration {
    /// Position in the source stream (file order or generation order).
    pub item_id: usize,
    pub declaration: Declaration,
    label: InspectionLabel,
    label_visible: bool,
}

/// Borrowed view of an inspected item, the only form in which labels reach
/// training code.
#[derive(Debug, Clone, Copy)]
pub struct TrainingRecord<'a> {
    pub item_id: usize,
    pub declaration: &'a Declaration,
    pub label: &'a InspectionLabel,
}

impl LabeledDeclaration {
    pub fn new(item_id: usize, declaration: Declaration, label: InspectionLabel) -> Self {
        Self {
            item_id,
            declaration,
            label,
            label_visible: false,
        }
    }

    pub fn is_label_visible(&self) -> bool {
        self.label_visible
    }

    /// Marks the item as inspected. Visibility never goes back to hidden.
    pub fn reveal(&mut self) {
        self.label_visible = true;
    }

    /// Label for learning code. Reading a hidden label here is leakage and is
    /// counted on `audit`.
    pub fn training_record<'a>(&'a self, audit: &LeakageAudit) -> TrainingRecord<'a> {
        if !self.label_visible {
            audit.record_hidden_read();
        }
        TrainingRecord {
            item_id: self.item_id,
            declaration: &self.declaration,
            label: &self.label,
        }
    }

    /// Ground truth for scoring and oracle computations only.
    pub fn oracle_label(&self) -> &InspectionLabel {
        &self.label
    }
}

/// Header names for each field. `illicit`/`revenue` are optional; when absent
/// every row gets [`InspectionLabel::LICIT`] and the outcome is marked
/// unlabeled.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub sgd_id: String,
    pub sgd_date: String,
    pub importer_id: String,
    pub declarant_id: String,
    pub country: String,
    pub office_id: String,
    pub tariff_code: String,
    pub quantity: String,
    pub gross_weight: String,
    pub fob_value: String,
    pub cif_value: String,
    pub total_taxes: String,
    pub illicit: Option<String>,
    pub revenue: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            sgd_id: "sgd.id".into(),
            sgd_date: "sgd.date".into(),
            importer_id: "importer.id".into(),
            declarant_id: "declarant.id".into(),
            country: "country".into(),
            office_id: "office.id".into(),
            tariff_code: "tariff.code".into(),
            quantity: "quantity".into(),
            gross_weight: "gross.weight".into(),
            fob_value: "fob.value".into(),
            cif_value: "cif.value".into(),
            total_taxes: "total.taxes".into(),
            illicit: Some("illicit".into()),
            revenue: Some("revenue".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line_number: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub items: Vec<LabeledDeclaration>,
    pub rejects: Vec<Reject>,
    /// False when the source carried no label columns.
    pub labeled: bool,
}

struct ColumnIndex {
    text: [usize; 7],
    numeric: [usize; 5],
    illicit: Option<usize>,
    revenue: Option<usize>,
}

const NUMERIC_NAMES: [&str; 5] = [
    "quantity",
    "gross.weight",
    "fob.value",
    "cif.value",
    "total.taxes",
];

fn locate(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

impl ColumnIndex {
    fn resolve(headers: &csv::StringRecord, map: &ColumnMap) -> Result<Self, IngestError> {
        let text = [
            locate(headers, &map.sgd_id)?,
            locate(headers, &map.sgd_date)?,
            locate(headers, &map.importer_id)?,
            locate(headers, &map.declarant_id)?,
            locate(headers, &map.country)?,
            locate(headers, &map.office_id)?,
            locate(headers, &map.tariff_code)?,
        ];
        let numeric = [
            locate(headers, &map.quantity)?,
            locate(headers, &map.gross_weight)?,
            locate(headers, &map.fob_value)?,
            locate(headers, &map.cif_value)?,
            locate(headers, &map.total_taxes)?,
        ];
        // Label columns come as a pair: one without the other is a schema error.
        let (illicit, revenue) = match (&map.illicit, &map.revenue) {
            (Some(i), Some(r)) => {
                let has_i = headers.iter().any(|h| h.trim() == i);
                let has_r = headers.iter().any(|h| h.trim() == r);
                match (has_i, has_r) {
                    (true, true) => (Some(locate(headers, i)?), Some(locate(headers, r)?)),
                    (false, false) => (None, None),
                    (true, false) => return Err(IngestError::MissingColumn(r.clone())),
                    (false, true) => return Err(IngestError::MissingColumn(i.clone())),
                }
            }
            _ => (None, None),
        };
        Ok(Self {
            text,
            numeric,
            illicit,
            revenue,
        })
    }
}

fn parse_row(
    record: &csv::StringRecord,
    cols: &ColumnIndex,
    item_id: usize,
) -> Result<LabeledDeclaration, String> {
    let field = |i: usize| record.get(i).unwrap_or("").trim();

    let date_raw = field(cols.text[1]);
    let sgd_date = Some(date_raw)
        .filter(|d| d.len() == 10)
        .and_then(|d| NaiveDate::parse_from_str(d, DATE_FORMAT).ok())
        .ok_or_else(|| format!("bad date '{date_raw}'"))?;

    let mut nums = [0.0f64; 5];
    for (slot, (&idx, name)) in nums
        .iter_mut()
        .zip(cols.numeric.iter().zip(NUMERIC_NAMES.iter()))
    {
        let raw = field(idx);
        let v: f64 = raw
            .parse()
            .map_err(|_| format!("non-numeric {name} '{raw}'"))?;
        if !v.is_finite() {
            return Err(format!("non-numeric {name} '{raw}'"));
        }
        if v < 0.0 {
            return Err(format!("negative {name}"));
        }
        *slot = v;
    }
    let [quantity, gross_weight, fob_value, cif_value, total_taxes] = nums;
    if cif_value < fob_value {
        return Err("cif<fob".to_string());
    }

    let label = match (cols.illicit, cols.revenue) {
        (Some(ii), Some(ri)) => {
            let illicit = match field(ii) {
                "1" => true,
                "0" => false,
                other => return Err(format!("bad illicit flag '{other}'")),
            };
            let rev_raw = field(ri);
            let revenue = if rev_raw.is_empty() {
                if illicit {
                    return Err("missing revenue on illicit row".to_string());
                }
                0.0
            } else {
                let v: f64 = rev_raw
                    .parse()
                    .map_err(|_| format!("non-numeric revenue '{rev_raw}'"))?;
                if !v.is_finite() {
                    return Err(format!("non-numeric revenue '{rev_raw}'"));
                }
                if v < 0.0 {
                    return Err("negative revenue".to_string());
                }
                v
            };
            if !illicit && revenue > 0.0 {
                return Err("revenue on licit row".to_string());
            }
            InspectionLabel { illicit, revenue }
        }
        _ => InspectionLabel::LICIT,
    };

    let declaration = Declaration {
        sgd_id: field(cols.text[0]).to_string(),
        sgd_date,
        importer_id: field(cols.text[2]).to_string(),
        declarant_id: field(cols.text[3]).to_string(),
        country: field(cols.text[4]).to_string(),
        office_id: field(cols.text[5]).to_string(),
        tariff_code: field(cols.text[6]).to_string(),
        quantity,
        gross_weight,
        fob_value,
        cif_value,
        total_taxes,
    };
    Ok(LabeledDeclaration::new(item_id, declaration, label))
}

/// Parses a headed CSV stream. Item ids are assigned in file order over the
/// accepted rows.
pub fn parse_declarations<R: Read>(
    source: R,
    schema: &ColumnMap,
) -> Result<ParseOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let cols = ColumnIndex::resolve(&headers, schema)?;
    let labeled = cols.illicit.is_some();

    let mut outcome = ParseOutcome {
        labeled,
        ..Default::default()
    };
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                // Malformed CSV (e.g. bad UTF-8) is a row-level problem when
                // the reader can tell us where it happened.
                match e.position() {
                    Some(pos) => {
                        outcome.rejects.push(Reject {
                            line_number: pos.line(),
                            reason: format!("malformed row: {e}"),
                        });
                        continue;
                    }
                    None => return Err(e.into()),
                }
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&record, &cols, outcome.items.len()) {
            Ok(item) => outcome.items.push(item),
            Err(reason) => outcome.rejects.push(Reject {
                line_number: line,
                reason,
            }),
        }
    }
    Ok(outcome)
}

pub const CANONICAL_HEADER: [&str; 14] = [
    "sgd.id",
    "sgd.date",
    "importer.id",
    "declarant.id",
    "country",
    "office.id",
    "tariff.code",
    "quantity",
    "gross.weight",
    "fob.value",
    "cif.value",
    "total.taxes",
    "illicit",
    "revenue",
];

/// Canonical CSV writer. Floats use Rust's shortest round-trip formatting so
/// `parse_declarations(write_declarations(x)) == x`.
pub fn write_declarations<W: Write>(
    items: &[LabeledDeclaration],
    sink: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CANONICAL_HEADER)?;
    for item in items {
        let d = &item.declaration;
        let l = item.oracle_label();
        w.write_record([
            d.sgd_id.as_str(),
            &d.sgd_date.format(DATE_FORMAT).to_string(),
            &d.importer_id,
            &d.declarant_id,
            &d.country,
            &d.office_id,
            &d.tariff_code,
            &d.quantity.to_string(),
            &d.gross_weight.to_string(),
            &d.fob_value.to_string(),
            &d.cif_value.to_string(),
            &d.total_taxes.to_string(),
            if l.illicit { "1" } else { "0" },
            &l.revenue.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar rejects report: `line_number,reason`.
pub fn write_rejects<W: Write>(rejects: &[Reject], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["line_number", "reason"])?;
    for r in rejects {
        w.write_record([r.line_number.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Items arriving during one fixed-length window.
#[derive(Debug, Clone)]
pub struct WeeklyBatch {
    pub week_index: usize,
    pub start_date: NaiveDate,
    /// Inclusive.
    pub end_date: NaiveDate,
    pub items: Vec<LabeledDeclaration>,
}

/// Splits `items` into `num_weeks` consecutive 7-day windows starting at
/// `start`. Week boundaries are anchored on `start`, not on ISO weeks.
pub fn slice_weeks(
    items: Vec<LabeledDeclaration>,
    start: NaiveDate,
    num_weeks: usize,
) -> Result<Vec<WeeklyBatch>, IngestError> {
    slice_windows(items, start, num_weeks, 7)
}

/// Generalisation of [`slice_weeks`] to windows of `length_days`. Items before
/// `start` or after the last window are dropped; within a window items are
/// ordered by date, then by their input order.
pub fn slice_windows(
    items: Vec<LabeledDeclaration>,
    start: NaiveDate,
    num_windows: usize,
    length_days: u32,
) -> Result<Vec<WeeklyBatch>, IngestError> {
    if num_windows == 0 {
        return Err(IngestError::NoWeeks);
    }
    if length_days == 0 {
        return Err(IngestError::EmptyWindow);
    }
    let len = i64::from(length_days);
    let mut batches: Vec<WeeklyBatch> = (0..num_windows)
        .map(|w| {
            let start_date = start + Duration::days(w as i64 * len);
            WeeklyBatch {
                week_index: w,
                start_date,
                end_date: start_date + Duration::days(len - 1),
                items: Vec::new(),
            }
        })
        .collect();
    for item in items {
        let offset = (item.declaration.sgd_date - start).num_days();
        if offset < 0 {
            continue;
        }
        let w = (offset / len) as usize;
        if let Some(batch) = batches.get_mut(w) {
            batch.items.push(item);
        }
    }
    for b in &mut batches {
        // Stable sort keeps input order among equal dates.
        b.items.sort_by_key(|it| it.declaration.sgd_date);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "sgd.id,sgd.date,importer.id,declarant.id,country,office.id,tariff.code,quantity,gross.weight,fob.value,cif.value,total.taxes,illicit,revenue\n";

    fn parse(body: &str) -> ParseOutcome {
        let text = format!("{HEADER}{body}");
        parse_declarations(text.as_bytes(), &ColumnMap::default()).unwrap()
    }

    #[test]
    fn parses_table_example_row() {
        let out = parse("SGD347276,2013-11-28,IMP364856,DEC795367,USA,OFFICE91,8703232926,1,150,350,400,50,1,20\n");
        assert!(out.rejects.is_empty());
        assert_eq!(out.items.len(), 1);
        let item = &out.items[0];
        let d = &item.declaration;
        assert_eq!(d.quantity, 1.0);
        assert_eq!(d.gross_weight, 150.0);
        assert_eq!(d.fob_value, 350.0);
        assert_eq!(d.cif_value, 400.0);
        assert_eq!(d.total_taxes, 50.0);
        assert_eq!(d.tariff_code, "8703232926");
        assert_eq!(
            *item.oracle_label(),
            InspectionLabel {
                illicit: true,
                revenue: 20.0
            }
        );
        assert!(!item.is_label_visible());
    }

    #[test]
    fn cif_below_fob_is_rejected() {
        let out = parse("S1,2013-01-01,I,D,USA,O,1234567890,1,150,350,300,50,0,0\n");
        assert!(out.items.is_empty());
        assert_eq!(
            out.rejects,
            vec![Reject {
                line_number: 2,
                reason: "cif<fob".into()
            }]
        );
    }

    #[test]
    fn empty_file_with_header() {
        let out = parse("");
        assert!(out.items.is_empty());
        assert!(out.rejects.is_empty());
        assert!(out.labeled);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = "sgd.id,sgd.date\nS1,2013-01-01\n";
        let err = parse_declarations(text.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(c) if c == "importer.id"));
    }

    #[test]
    fn row_level_rejects_carry_reason_and_line() {
        let out = parse(concat!(
            "S1,2013-01-01,I,D,USA,O,1,abc,150,350,400,50,0,0\n",
            "S2,2013-01-01,I,D,USA,O,1,1,150,350,400,50,1,\n",
            "S3,2013-01-01,I,D,USA,O,1,1,150,350,400,50,0,\n",
            "S4,2013-01-01,I,D,USA,O,1,1,150,350,400,50,0,5\n",
            "S5,13-01-01,I,D,USA,O,1,1,150,350,400,50,0,0\n",
            "S6,2013-01-01,I,D,USA,O,1,-1,150,350,400,50,0,0\n",
        ));
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.items[0].declaration.sgd_id, "S3");
        assert_eq!(out.items[0].oracle_label().revenue, 0.0);
        let reasons: Vec<(u64, &str)> = out
            .rejects
            .iter()
            .map(|r| (r.line_number, r.reason.as_str()))
            .collect();
        assert_eq!(
            reasons,
            vec![
                (2, "non-numeric quantity 'abc'"),
                (3, "missing revenue on illicit row"),
                (5, "revenue on licit row"),
                (6, "bad date '13-01-01'"),
                (7, "negative quantity"),
            ]
        );
    }

    #[test]
    fn unlabeled_source_defaults_to_licit() {
        let text = "sgd.id,sgd.date,importer.id,declarant.id,country,office.id,tariff.code,quantity,gross.weight,fob.value,cif.value,total.taxes\nS1,2013-01-01,I,D,USA,O,1,1,1,1,1,1\n";
        let out = parse_declarations(text.as_bytes(), &ColumnMap::default()).unwrap();
        assert!(!out.labeled);
        assert_eq!(*out.items[0].oracle_label(), InspectionLabel::LICIT);
    }

    #[test]
    fn training_record_audits_hidden_reads() {
        let out = parse("S1,2013-01-01,I,D,USA,O,1,1,150,350,400,50,1,20\n");
        let mut item = out.items[0].clone();
        let audit = LeakageAudit::new();
        let _ = item.training_record(&audit);
        assert_eq!(audit.hidden_reads(), 1);
        item.reveal();
        let _ = item.training_record(&audit);
        let _ = item.oracle_label();
        assert_eq!(audit.hidden_reads(), 1);
    }

    fn item_on(day: i64, id: usize) -> LabeledDeclaration {
        let start = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
        LabeledDeclaration::new(
            id,
            Declaration {
                sgd_id: format!("S{id}"),
                sgd_date: start + Duration::days(day),
                importer_id: "I".into(),
                declarant_id: "D".into(),
                country: "USA".into(),
                office_id: "O".into(),
                tariff_code: "1".into(),
                quantity: 1.0,
                gross_weight: 1.0,
                fob_value: 1.0,
                cif_value: 1.0,
                total_taxes: 0.0,
            },
            InspectionLabel::LICIT,
        )
    }

    #[test]
    fn uniform_daily_stream_splits_evenly() {
        let start = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
        let items: Vec<_> = (0..14).map(|d| item_on(d, d as usize)).collect();
        let weeks = slice_weeks(items, start, 2).unwrap();
        assert_eq!(weeks.len(), 2);
        assert_eq!(weeks[0].items.len(), 7);
        assert_eq!(weeks[1].items.len(), 7);
        assert_eq!(weeks[1].start_date, start + Duration::days(7));
        assert_eq!(weeks[1].end_date, start + Duration::days(13));
    }

    #[test]
    fn trailing_week_can_be_empty() {
        let start = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
        let items: Vec<_> = (0..7).map(|d| item_on(d, d as usize)).collect();
        let weeks = slice_weeks(items, start, 2).unwrap();
        assert_eq!(weeks[0].items.len(), 7);
        assert!(weeks[1].items.is_empty());
    }

    #[test]
    fn start_after_data_gives_empty_batches() {
        let start = NaiveDate::from_ymd_opt(2014, 1, 1).unwrap();
        let items: Vec<_> = (0..7).map(|d| item_on(d, d as usize)).collect();
        let weeks = slice_weeks(items, start, 3).unwrap();
        assert!(weeks.iter().all(|w| w.items.is_empty()));
    }

    #[test]
    fn within_batch_order_is_date_then_input() {
        let start = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
        let items = vec![item_on(3, 0), item_on(1, 1), item_on(3, 2), item_on(1, 3)];
        let weeks = slice_weeks(items, start, 1).unwrap();
        let ids: Vec<usize> = weeks[0].items.iter().map(|i| i.item_id).collect();
        assert_eq!(ids, vec![1, 3, 0, 2]);
    }

    #[test]
    fn zero_weeks_is_an_error() {
        let start = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
        assert!(matches!(
            slice_weeks(Vec::new(), start, 0),
            Err(IngestError::NoWeeks)
        ));
    }
}
