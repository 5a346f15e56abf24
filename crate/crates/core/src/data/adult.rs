//! UCI Adult ("census income") ingestion.
//!
//! Accepts the standard comma-separated layout (14 attributes followed by the
//! income label), with or without a header row. The `adult.test` quirks are
//! handled: a leading `|1x3 Cross validator` line and labels with a trailing
//! period. Rows with any missing value (`?`) are dropped.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::schema::{ColumnKind, ColumnSpec, FeatureSchema};
use crate::data::table::{RawTable, TableBuilder, TargetEncoding};
use crate::error::{DadiError, Result};

pub const SENSITIVE_COLUMN: &str = "sex";
pub const LABEL_COLUMN: &str = "income";
/// Encoded as `b = 1`.
pub const SENSITIVE_POSITIVE: &str = "Female";
/// Encoded as `y = 1`.
pub const LABEL_POSITIVE: &str = ">50K";

const N_FIELDS: usize = 15;

const WORKCLASS: &[&str] = &[
    "Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov", "State-gov",
    "Without-pay", "Never-worked",
];
const EDUCATION: &[&str] = &[
    "Bachelors", "Some-college", "11th", "HS-grad", "Prof-school", "Assoc-acdm", "Assoc-voc",
    "9th", "7th-8th", "12th", "Masters", "1st-4th", "10th", "Doctorate", "5th-6th", "Preschool",
];
const MARITAL: &[&str] = &[
    "Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed",
    "Married-spouse-absent", "Married-AF-spouse",
];
const OCCUPATION: &[&str] = &[
    "Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
    "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
    "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv", "Armed-Forces",
];
const RELATIONSHIP: &[&str] = &[
    "Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried",
];
const RACE: &[&str] = &["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"];
const SEX: &[&str] = &["Female", "Male"];
const NATIVE_COUNTRY: &[&str] = &[
    "United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany",
    "Outlying-US(Guam-USVI-etc)", "India", "Japan", "Greece", "South", "China", "Cuba", "Iran",
    "Honduras", "Philippines", "Italy", "Poland", "Jamaica", "Vietnam", "Mexico", "Portugal",
    "Ireland", "France", "Dominican-Republic", "Laos", "Ecuador", "Taiwan", "Haiti", "Columbia",
    "Hungary", "Guatemala", "Nicaragua", "Scotland", "Thailand", "Yugoslavia", "El-Salvador",
    "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands",
];

/// The 14 raw attributes in file order, with closed vocabularies for the
/// categorical ones.
const ATTRIBUTES: &[(&str, Option<&[&str]>)] = &[
    ("age", None),
    ("workclass", Some(WORKCLASS)),
    ("fnlwgt", None),
    ("education", Some(EDUCATION)),
    ("education-num", None),
    ("marital-status", Some(MARITAL)),
    ("occupation", Some(OCCUPATION)),
    ("relationship", Some(RELATIONSHIP)),
    ("race", Some(RACE)),
    ("sex", Some(SEX)),
    ("capital-gain", None),
    ("capital-loss", None),
    ("hours-per-week", None),
    ("native-country", Some(NATIVE_COUNTRY)),
];

#[derive(Debug, Clone, Copy)]
pub struct AdultOptions {
    /// Keep `sex` as an acquirable attribute (14 action groups). When false the
    /// attribute is only used as the adversary's target (13 groups).
    pub sensitive_acquirable: bool,
}

impl Default for AdultOptions {
    fn default() -> Self {
        AdultOptions {
            sensitive_acquirable: true,
        }
    }
}

pub fn adult_schema(options: AdultOptions) -> FeatureSchema {
    let columns = ATTRIBUTES
        .iter()
        .filter(|(name, _)| options.sensitive_acquirable || *name != SENSITIVE_COLUMN)
        .map(|(name, vocab)| match vocab {
            Some(_) => ColumnSpec::categorical(*name),
            None => ColumnSpec::numeric(*name),
        })
        .collect();
    FeatureSchema::new(
        columns,
        SENSITIVE_COLUMN,
        LABEL_COLUMN,
        options.sensitive_acquirable,
    )
    .expect("adult schema is valid")
}

struct AdultParser {
    builder: TableBuilder,
    /// Raw attribute position for each schema column.
    positions: Vec<usize>,
    sex_pos: usize,
    row: usize,
}

impl AdultParser {
    fn new(schema: &FeatureSchema) -> Self {
        let positions: Vec<usize> = schema
            .columns()
            .iter()
            .map(|c| ATTRIBUTES.iter().position(|(n, _)| *n == c.name).unwrap())
            .collect();
        let vocab = positions
            .iter()
            .map(|&p| ATTRIBUTES[p].1.map(|v| v.iter().map(|s| s.to_string()).collect()))
            .collect();
        debug_assert!(schema
            .columns()
            .iter()
            .zip(&positions)
            .all(|(c, &p)| (c.kind == ColumnKind::Categorical) == ATTRIBUTES[p].1.is_some()));
        let targets = TargetEncoding {
            label_positive: vec![LABEL_POSITIVE.to_string()],
            sensitive_positive: vec![SENSITIVE_POSITIVE.to_string()],
        };
        AdultParser {
            builder: TableBuilder::new(schema.columns(), vocab, targets),
            positions,
            sex_pos: ATTRIBUTES.iter().position(|(n, _)| *n == SENSITIVE_COLUMN).unwrap(),
            row: 0,
        }
    }

    fn feed<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'|'))
            .from_reader(reader);
        let mut first = true;
        for record in rdr.records() {
            let record = record?;
            let is_header = first
                && record
                    .get(0)
                    .is_some_and(|f| f.eq_ignore_ascii_case("age"));
            first = false;
            if is_header {
                continue;
            }
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            let row = self.row;
            self.row += 1;
            if record.len() != N_FIELDS {
                return Err(DadiError::MalformedRow {
                    row,
                    message: format!("expected {N_FIELDS} fields, found {}", record.len()),
                });
            }
            let label = record[N_FIELDS - 1].trim_end_matches('.');
            if label != "?" && label != LABEL_POSITIVE && label != "<=50K" {
                return Err(DadiError::UnknownCategory {
                    row,
                    column: LABEL_COLUMN.into(),
                    value: label.into(),
                });
            }
            let fields: Vec<&str> = self.positions.iter().map(|&p| &record[p]).collect();
            let sex = &record[self.sex_pos];
            if sex != "?" && !SEX.contains(&sex) {
                return Err(DadiError::UnknownCategory {
                    row,
                    column: SENSITIVE_COLUMN.into(),
                    value: sex.into(),
                });
            }
            self.builder.push(row, &fields, label, sex)?;
        }
        Ok(())
    }
}

/// Parses one Adult-formatted stream.
pub fn parse_adult<R: Read>(reader: R, options: AdultOptions) -> Result<(FeatureSchema, RawTable)> {
    let schema = adult_schema(options);
    let mut parser = AdultParser::new(&schema);
    parser.feed(reader)?;
    Ok((schema, parser.builder.finish()?))
}

/// Loads Adult from a file, or from a directory holding `adult.data` and
/// (optionally) `adult.test`, which are concatenated in that order.
pub fn load_adult(path: &Path) -> Result<(FeatureSchema, RawTable)> {
    load_adult_with(path, AdultOptions::default())
}

pub fn load_adult_with(path: &Path, options: AdultOptions) -> Result<(FeatureSchema, RawTable)> {
    let files = if path.is_dir() {
        let data = path.join("adult.data");
        if !data.exists() {
            return Err(DadiError::io(
                &data,
                std::io::Error::new(std::io::ErrorKind::NotFound, "adult.data not found"),
            ));
        }
        let test = path.join("adult.test");
        if test.exists() {
            vec![data, test]
        } else {
            vec![data]
        }
    } else {
        vec![path.to_path_buf()]
    };
    let schema = adult_schema(options);
    let mut parser = AdultParser::new(&schema);
    for f in &files {
        let file = File::open(f).map_err(|e| DadiError::io(f, e))?;
        parser.feed(BufReader::new(file))?;
    }
    let dropped = parser.builder.dropped();
    let table = parser.builder.finish()?;
    log::info!(
        "loaded {} adult rows ({} dropped for missing values)",
        table.n_rows(),
        dropped
    );
    Ok((schema, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXCERPT: &str = "\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K
38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Male, 0, 0, 40, United-States, <=50K
53, Private, 234721, 11th, 7, Married-civ-spouse, Handlers-cleaners, Husband, Black, Male, 0, 0, 40, United-States, <=50K
28, Private, 338409, Bachelors, 13, Married-civ-spouse, Prof-specialty, Wife, Black, Female, 0, 0, 40, Cuba, <=50K
37, Private, 284582, Masters, 14, Married-civ-spouse, Exec-managerial, Wife, White, Female, 0, 0, 40, United-States, <=50K
49, Private, 160187, 9th, 5, Married-spouse-absent, Other-service, Not-in-family, Black, Female, 0, 0, 16, Jamaica, <=50K
52, ?, 209642, HS-grad, 9, Married-civ-spouse, ?, Husband, White, Male, 0, 0, 45, United-States, >50K
31, Private, 45781, Masters, 14, Never-married, Prof-specialty, Not-in-family, White, Female, 14084, 0, 50, ?, >50K
42, Private, 159449, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 5178, 0, 40, United-States, >50K.
";

    #[test]
    fn excerpt_drops_rows_with_missing_values() {
        let (schema, table) = parse_adult(EXCERPT.as_bytes(), AdultOptions::default()).unwrap();
        assert_eq!(table.n_rows(), 8);
        assert_eq!(schema.columns().len(), 14);
        assert_eq!(table.labels, vec![0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(table.sensitive, vec![0, 0, 0, 0, 1, 1, 1, 0]);
    }

    #[test]
    fn header_and_test_banner_are_skipped() {
        let text = format!(
            "|1x3 Cross validator\nage,workclass,fnlwgt,education,education-num,marital-status,occupation,relationship,race,sex,capital-gain,capital-loss,hours-per-week,native-country,income\n{EXCERPT}"
        );
        let (_, table) = parse_adult(text.as_bytes(), AdultOptions::default()).unwrap();
        assert_eq!(table.n_rows(), 8);
    }

    #[test]
    fn sensitive_can_be_withheld() {
        let (schema, _) = parse_adult(
            EXCERPT.as_bytes(),
            AdultOptions {
                sensitive_acquirable: false,
            },
        )
        .unwrap();
        assert_eq!(schema.columns().len(), 13);
        assert!(schema.column_index("sex").is_none());
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = parse_adult("".as_bytes(), AdultOptions::default()).unwrap_err();
        assert!(matches!(err, DadiError::EmptyDataset));
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn wrong_field_count_reports_row() {
        let text = "39, State-gov, 77516\n";
        match parse_adult(text.as_bytes(), AdultOptions::default()).unwrap_err() {
            DadiError::MalformedRow { row, .. } => assert_eq!(row, 0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_category_reports_row() {
        let bad = EXCERPT.replacen("Adm-clerical", "Astronaut", 1);
        let bad = format!("{}{}", EXCERPT.lines().nth(1).unwrap().to_owned() + "\n", bad);
        match parse_adult(bad.as_bytes(), AdultOptions::default()).unwrap_err() {
            DadiError::UnknownCategory { row, column, value } => {
                assert_eq!(row, 1);
                assert_eq!(column, "occupation");
                assert_eq!(value, "Astronaut");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_adult(Path::new("/definitely/not/here/adult.data")).unwrap_err();
        assert!(matches!(err, DadiError::Io { .. }));
    }
}
