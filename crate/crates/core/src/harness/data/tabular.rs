//! Tabular CSV loading: one-hot categoricals, z-scored continuous columns.
//!
//! Column types are inferred: a column is continuous when every non-missing
//! value parses as a number, categorical otherwise, unless a fixed vocabulary
//! is supplied. Means, standard deviations and inferred vocabularies are
//! fitted on the training rows only. Missing values (`?` or empty) become the
//! training mean for continuous columns and all zeros for categorical ones.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{random_split, split_label, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct TabularOptions {
    /// Defaults to the last column.
    pub label_column: Option<String>,
    pub drop_columns: Vec<String>,
    /// Fixed category lists; values outside them count as unknown.
    pub vocabularies: BTreeMap<String, Vec<String>>,
    /// Column names for files without a header row.
    pub header: Option<Vec<String>>,
}

fn is_missing(v: &str) -> bool {
    v.is_empty() || v == "?"
}

pub(crate) fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'|'))
        .from_path(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::Dataset(format!(
                "{}: ragged row at line {}: expected {expected_len} fields, found {len}",
                path.display(),
                pos.as_ref().map_or(0, |p| p.line())
            )),
            _ => Error::Dataset(format!("{}: {e}", path.display())),
        })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

enum Encoder {
    Continuous { mean: f64, scale: f64 },
    Categorical { index: BTreeMap<String, usize> },
}

impl Encoder {
    fn width(&self) -> usize {
        match self {
            Encoder::Continuous { .. } => 1,
            Encoder::Categorical { index } => index.len(),
        }
    }
}

fn class_order(values: &BTreeSet<&str>) -> Vec<String> {
    let mut v: Vec<String> = values.iter().map(|s| s.to_string()).collect();
    if v.iter().all(|s| s.parse::<i64>().is_ok()) {
        v.sort_by_key(|s| s.parse::<i64>().unwrap());
    }
    v
}

/// Encodes `rows` (without header) given a split. Returns the dataset with
/// its unknown-category count filled in.
pub(crate) fn encode(
    header: &[String],
    rows: &[Vec<String>],
    train: Vec<usize>,
    val: Vec<usize>,
    split: String,
    opts: &TabularOptions,
) -> Result<Dataset> {
    let label_col = match &opts.label_column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Dataset(format!("label column {name:?} not found")))?,
        None => header.len().checked_sub(1).ok_or_else(|| Error::Dataset("no columns".into()))?,
    };
    for d in &opts.drop_columns {
        if !header.contains(d) {
            return Err(Error::Dataset(format!("column {d:?} to drop not found")));
        }
    }
    let features: Vec<usize> =
        (0..header.len()).filter(|&c| c != label_col && !opts.drop_columns.contains(&header[c])).collect();

    let mut encoders = Vec::with_capacity(features.len());
    for &c in &features {
        let enc = if let Some(vocab) = opts.vocabularies.get(&header[c]) {
            Encoder::Categorical { index: vocab.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect() }
        } else if rows.iter().all(|r| is_missing(&r[c]) || r[c].parse::<f64>().is_ok()) {
            let vals: Vec<f64> = train.iter().filter_map(|&i| rows[i][c].parse::<f64>().ok()).collect();
            let n = vals.len().max(1) as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            Encoder::Continuous { mean, scale: if std > 0.0 && std.is_finite() { std } else { 1.0 } }
        } else {
            let cats: BTreeSet<&str> = train.iter().map(|&i| rows[i][c].as_str()).filter(|v| !is_missing(v)).collect();
            Encoder::Categorical { index: cats.into_iter().enumerate().map(|(i, v)| (v.to_owned(), i)).collect() }
        };
        encoders.push(enc);
    }
    let width: usize = encoders.iter().map(Encoder::width).sum();

    let classes = class_order(&rows.iter().map(|r| r[label_col].as_str()).collect());
    let class_index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut data = vec![0.0; rows.len() * width];
    let mut unknown = 0;
    let mut is_val = vec![false; rows.len()];
    for &i in &val {
        is_val[i] = true;
    }
    for (i, row) in rows.iter().enumerate() {
        let out = &mut data[i * width..(i + 1) * width];
        let mut off = 0;
        for (enc, &c) in encoders.iter().zip(&features) {
            let v = row[c].as_str();
            match enc {
                Encoder::Continuous { mean, scale } => {
                    out[off] = v.parse::<f64>().map_or(0.0, |x| (x - mean) / scale);
                }
                Encoder::Categorical { index } => match index.get(v) {
                    Some(&k) => out[off + k] = 1.0,
                    None if is_missing(v) => {}
                    None => {
                        if is_val[i] || !opts.vocabularies.is_empty() {
                            unknown += 1;
                        }
                    }
                },
            }
            off += enc.width();
        }
    }
    if unknown > 0 {
        log::warn!("{unknown} unknown categorical value(s) encoded as all zeros");
    }
    let labels = rows.iter().map(|r| class_index[r[label_col].as_str()]).collect();
    let inputs = Tensor::new(vec![rows.len(), width], data)?;
    let mut ds = Dataset::new(inputs, labels, classes.len(), train, val, split)?;
    ds.unknown_categories = unknown;
    Ok(ds)
}

/// Generic CSV with a header row, split 80/20 with a fixed seed.
pub fn load_csv(path: &Path, opts: &TabularOptions) -> Result<Dataset> {
    let mut rows = read_rows(path)?;
    let header = match &opts.header {
        Some(h) => h.clone(),
        None => {
            if rows.is_empty() {
                return Err(Error::Dataset(format!("{}: empty file", path.display())));
            }
            rows.remove(0)
        }
    };
    if rows.first().is_some_and(|r| r.len() != header.len()) {
        return Err(Error::Dataset(format!("{}: header has {} columns, rows have {}", path.display(), header.len(), rows[0].len())));
    }
    let (train, val) = random_split(rows.len())?;
    encode(&header, &rows, train, val, split_label(), opts)
}

pub const ADULT_COLUMNS: [&str; 15] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
];

/// Category lists of the Adult census schema.
pub fn adult_vocabularies() -> BTreeMap<String, Vec<String>> {
    let table: [(&str, &[&str]); 8] = [
        ("workclass", &["Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov", "State-gov", "Without-pay", "Never-worked"]),
        (
            "education",
            &[
                "Bachelors", "Some-college", "11th", "HS-grad", "Prof-school", "Assoc-acdm", "Assoc-voc", "9th", "7th-8th", "12th",
                "Masters", "1st-4th", "10th", "Doctorate", "5th-6th", "Preschool",
            ],
        ),
        (
            "marital-status",
            &["Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed", "Married-spouse-absent", "Married-AF-spouse"],
        ),
        (
            "occupation",
            &[
                "Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial", "Prof-specialty", "Handlers-cleaners",
                "Machine-op-inspct", "Adm-clerical", "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
                "Armed-Forces",
            ],
        ),
        ("relationship", &["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"]),
        ("race", &["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"]),
        ("sex", &["Female", "Male"]),
        (
            "native-country",
            &[
                "United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany", "Outlying-US(Guam-USVI-etc)", "India",
                "Japan", "Greece", "South", "China", "Cuba", "Iran", "Honduras", "Philippines", "Italy", "Poland", "Jamaica",
                "Vietnam", "Mexico", "Portugal", "Ireland", "France", "Dominican-Republic", "Laos", "Ecuador", "Taiwan", "Haiti",
                "Columbia", "Hungary", "Guatemala", "Nicaragua", "Scotland", "Thailand", "Yugoslavia", "El-Salvador",
                "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands",
            ],
        ),
    ];
    table.iter().map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())).collect()
}

fn adult_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut rows = read_rows(path)?;
    if rows.first().is_some_and(|r| r.first().is_some_and(|c| c == "age")) {
        rows.remove(0);
    }
    if let Some(r) = rows.iter().find(|r| r.len() != ADULT_COLUMNS.len()) {
        return Err(Error::Dataset(format!("{}: expected {} columns, found {}", path.display(), ADULT_COLUMNS.len(), r.len())));
    }
    for r in &mut rows {
        let label = r.last_mut().unwrap();
        *label = label.trim_end_matches('.').to_owned();
    }
    Ok(rows)
}

/// UCI Adult: 5 standardized continuous columns plus 99 one-hot columns
/// (104 features), `education-num` dropped as a duplicate of `education`.
/// `path` is either a directory with `adult.data` and `adult.test` (the
/// canonical split) or a single file split 80/20.
pub fn load_adult(path: &Path) -> Result<Dataset> {
    let header: Vec<String> = ADULT_COLUMNS.iter().map(|s| s.to_string()).collect();
    let opts = TabularOptions {
        label_column: Some("income".into()),
        drop_columns: vec!["education-num".into()],
        vocabularies: adult_vocabularies(),
        header: Some(header.clone()),
    };
    if path.is_dir() {
        let mut rows = adult_rows(&path.join("adult.data"))?;
        let n_train = rows.len();
        rows.extend(adult_rows(&path.join("adult.test"))?);
        let n = rows.len();
        let split = "canonical: adult.data train, adult.test val".to_owned();
        encode(&header, &rows, (0..n_train).collect(), (n_train..n).collect(), split, &opts)
    } else {
        let rows = adult_rows(path)?;
        let (train, val) = random_split(rows.len())?;
        encode(&header, &rows, train, val, split_label(), &opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn one_hot_and_zscore_fitted_on_train() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("x,color,y\n");
        for i in 0..10 {
            let color = ["red", "green"][i % 2];
            text.push_str(&format!("{i},{color},{}\n", i % 3));
        }
        let p = write(dir.path(), "t.csv", &text);
        let ds = load_csv(&p, &TabularOptions::default()).unwrap();
        assert_eq!(ds.features(), 3);
        assert_eq!(ds.classes, 3);
        let xs: Vec<f64> = ds.train.iter().map(|&i| ds.inputs.row(i)[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        for i in 0..ds.len() {
            let r = ds.inputs.row(i);
            assert_eq!(r[1] + r[2], 1.0);
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "a,b,y\n1,2,0\n1,0\n");
        let err = load_csv(&p, &TabularOptions::default()).unwrap_err();
        assert!(err.to_string().contains("ragged"), "{err}");
    }

    #[test]
    fn unseen_validation_category_is_zero_and_counted() {
        let header: Vec<String> = ["c", "y"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> =
            [["a", "0"], ["b", "1"], ["z", "0"]].iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
        let ds = encode(&header, &rows, vec![0, 1], vec![2], String::new(), &TabularOptions::default()).unwrap();
        assert_eq!(ds.unknown_categories, 1);
        assert_eq!(ds.inputs.row(2), &[0.0, 0.0]);
    }

    const ADULT_SAMPLE: &str = "\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K
38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Male, 0, 0, 40, United-States, <=50K
53, Private, 234721, 11th, 7, Married-civ-spouse, Handlers-cleaners, Husband, Black, Male, 0, 0, 40, United-States, <=50K
28, Private, 338409, Bachelors, 13, Married-civ-spouse, Prof-specialty, Wife, Black, Female, 0, 0, 40, Cuba, <=50K
37, Private, 284582, Masters, 14, Married-civ-spouse, Exec-managerial, Wife, White, Female, 0, 0, 40, United-States, <=50K
49, Private, 160187, 9th, 5, Married-spouse-absent, Other-service, Not-in-family, Black, Female, 0, 0, 16, Jamaica, <=50K
52, Self-emp-not-inc, 209642, HS-grad, 9, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 45, United-States, >50K
31, Private, 45781, Masters, 14, Never-married, Prof-specialty, Not-in-family, White, Female, 14084, 0, 50, United-States, >50K
42, Private, 159449, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 5178, 0, 40, United-States, >50K
";

    #[test]
    fn adult_has_104_features() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "adult.data", ADULT_SAMPLE);
        let ds = load_adult(&p).unwrap();
        assert_eq!(ds.features(), 104);
        assert_eq!(ds.classes, 2);
        assert_eq!(ds.unknown_categories, 0);
        let vocab: usize = adult_vocabularies().values().map(Vec::len).sum();
        assert_eq!(vocab, 99);
    }

    #[test]
    fn adult_canonical_split_and_test_suffix() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "adult.data", ADULT_SAMPLE);
        let test = "|1x3 Cross validator\n25, Private, 226802, 11th, 7, Never-married, Machine-op-inspct, Own-child, Black, Male, 0, 0, 40, ?, <=50K.\n44, Private, 160323, Some-college, 10, Married-civ-spouse, Machine-op-inspct, Husband, Black, Male, 7688, 0, 40, Atlantis, >50K.\n";
        write(dir.path(), "adult.test", test);
        let ds = load_adult(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 10);
        assert_eq!(ds.val, vec![10, 11]);
        assert_eq!(ds.classes, 2);
        assert_eq!(ds.unknown_categories, 1);
        assert_eq!(ds.labels[10], ds.labels[0]);
    }
}
