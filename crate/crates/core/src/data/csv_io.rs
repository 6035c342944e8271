use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2};

use super::{
    ColumnKind, DataSchema, Dataset, FeatureColumn, SegmentedFeatures, TaskKind, SEGMENT_COLUMN,
};
use crate::error::{Error, Result};

/// Column roles for reading a training CSV.
#[derive(Clone, Debug)]
pub struct CsvSpec {
    pub label_col: String,
    pub segment_col: String,
    pub group_col: Option<String>,
    pub task: TaskKind,
    /// Columns to one-hot encode even if their values look numeric.
    pub categorical: Vec<String>,
}

impl CsvSpec {
    pub fn new(label_col: &str, segment_col: &str, task: TaskKind) -> Self {
        CsvSpec {
            label_col: label_col.into(),
            segment_col: segment_col.into(),
            group_col: None,
            task,
            categorical: Vec::new(),
        }
    }

    pub fn group_col(mut self, col: &str) -> Self {
        self.group_col = Some(col.into());
        self
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read<R: Read>(reader: R) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Empty("csv has no header".into()));
        }
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Err(Error::Empty("csv has no data rows".into()));
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn cell(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("").trim()
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let raw = self.cell(row, col);
        let bad = |message: String| Error::BadCell {
            row: row + 1,
            column: self.header[col].clone(),
            message,
        };
        let v: f64 = raw
            .parse()
            .map_err(|_| bad(format!("cannot parse `{raw}` as a number")))?;
        if !v.is_finite() {
            return Err(bad(format!("non-finite value `{raw}`")));
        }
        Ok(v)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: impl AsRef<Path>, spec: &CsvSpec) -> Result<Dataset> {
    read_csv(open(path.as_ref())?, spec)
}

pub fn load_csv_with_schema(path: impl AsRef<Path>, schema: &DataSchema) -> Result<Dataset> {
    read_csv_with_schema(open(path.as_ref())?, schema)
}

pub fn load_features_with_schema(
    path: impl AsRef<Path>,
    schema: &DataSchema,
) -> Result<SegmentedFeatures> {
    read_features_with_schema(open(path.as_ref())?, schema)
}

/// Reads a labeled CSV and infers its encoding.
///
/// A feature column is numeric when its first cell parses as a number; every
/// later cell must then parse too. Other columns (and those listed in
/// `spec.categorical`) are one-hot encoded in lexicographic category order.
/// Segment names are numbered in order of first appearance.
pub fn read_csv<R: Read>(reader: R, spec: &CsvSpec) -> Result<Dataset> {
    let table = Table::read(reader)?;
    let label = table.column(&spec.label_col)?;
    let segment = table.column(&spec.segment_col)?;
    let group = spec
        .group_col
        .as_deref()
        .map(|g| table.column(g))
        .transpose()?;

    let mut columns = Vec::new();
    for (j, name) in table.header.iter().enumerate() {
        if j == label || j == segment || Some(j) == group {
            continue;
        }
        let forced = spec.categorical.iter().any(|c| c == name);
        let kind = if !forced && table.cell(0, j).parse::<f64>().is_ok() {
            ColumnKind::Numeric
        } else {
            let cats: BTreeSet<&str> = (0..table.rows.len()).map(|i| table.cell(i, j)).collect();
            ColumnKind::Categorical {
                categories: cats.into_iter().map(str::to_string).collect(),
            }
        };
        columns.push(FeatureColumn {
            name: name.clone(),
            kind,
        });
    }

    let mut segment_names: Vec<String> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for i in 0..table.rows.len() {
        let s = table.cell(i, segment);
        if !seen.contains_key(s) {
            seen.insert(s.to_string(), segment_names.len());
            segment_names.push(s.to_string());
        }
    }

    let class_names = match spec.task.n_classes() {
        None => None,
        Some(k) => Some(infer_classes(&table, label, k)?),
    };

    let schema = DataSchema {
        label_col: spec.label_col.clone(),
        segment_col: spec.segment_col.clone(),
        group_col: spec.group_col.clone(),
        task: spec.task,
        columns,
        segment_names,
        class_names,
    };
    decode_labeled(&table, &schema, group)
}

fn infer_classes(table: &Table, label: usize, k: usize) -> Result<Vec<String>> {
    let values: BTreeSet<&str> = (0..table.rows.len()).map(|i| table.cell(i, label)).collect();
    let numeric = values
        .iter()
        .all(|v| v.parse::<usize>().map(|c| c < k).unwrap_or(false));
    if numeric {
        return Ok((0..k).map(|c| c.to_string()).collect());
    }
    if values.len() > k {
        return Err(Error::invalid(format!(
            "label column `{}` has {} distinct values but the task has {k} classes",
            table.header[label],
            values.len()
        )));
    }
    let mut names: Vec<String> = values.into_iter().map(str::to_string).collect();
    // pad so the vocabulary always has k entries
    while names.len() < k {
        names.push(format!("__class{}", names.len()));
    }
    Ok(names)
}

/// Reads a labeled CSV with a known encoding. Segment names missing from
/// the schema are appended to the vocabulary; unseen categories encode as
/// all zeros.
pub fn read_csv_with_schema<R: Read>(reader: R, schema: &DataSchema) -> Result<Dataset> {
    let table = Table::read(reader)?;
    let group = schema
        .group_col
        .as_deref()
        .map(|g| table.column(g))
        .transpose()?;
    decode_labeled(&table, schema, group)
}

pub fn read_features_with_schema<R: Read>(
    reader: R,
    schema: &DataSchema,
) -> Result<SegmentedFeatures> {
    let table = Table::read(reader)?;
    let (x, segments, segment_names) = decode_features(&table, schema)?;
    Ok(SegmentedFeatures {
        x,
        segments,
        segment_names,
    })
}

fn decode_features(
    table: &Table,
    schema: &DataSchema,
) -> Result<(Array2<f64>, Vec<usize>, Vec<String>)> {
    let n = table.rows.len();
    let segment = table.column(&schema.segment_col)?;
    let col_idx = schema
        .columns
        .iter()
        .map(|c| table.column(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut x = Array2::<f64>::zeros((n, schema.n_features()));
    let mut unseen: BTreeSet<String> = BTreeSet::new();
    for i in 0..n {
        let mut offset = 0;
        for (col, &j) in schema.columns.iter().zip(&col_idx) {
            match &col.kind {
                ColumnKind::Numeric => x[[i, offset]] = table.number(i, j)?,
                ColumnKind::Categorical { categories } => {
                    let v = table.cell(i, j);
                    match categories.binary_search_by(|c| c.as_str().cmp(v)) {
                        Ok(pos) => x[[i, offset + pos]] = 1.0,
                        Err(_) => {
                            unseen.insert(format!("{}={}", col.name, v));
                        }
                    }
                }
            }
            offset += col.width();
        }
    }
    if !unseen.is_empty() {
        warn!(
            "{} unseen categories encoded as all zeros: {:?}",
            unseen.len(),
            unseen
        );
    }

    let mut names = schema.segment_names.clone();
    let mut lookup: HashMap<String, usize> =
        names.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let mut segments = Vec::with_capacity(n);
    for i in 0..n {
        let s = table.cell(i, segment);
        let id = match lookup.get(s) {
            Some(&id) => id,
            None => {
                let id = names.len();
                lookup.insert(s.to_string(), id);
                names.push(s.to_string());
                id
            }
        };
        segments.push(id);
    }
    Ok((x, segments, names))
}

fn decode_labeled(
    table: &Table,
    schema: &DataSchema,
    group: Option<usize>,
) -> Result<Dataset> {
    let (x, segments, segment_names) = decode_features(table, schema)?;
    let label = table.column(&schema.label_col)?;
    let n = table.rows.len();
    let mut y = Array1::<f64>::zeros(n);
    match &schema.class_names {
        None => {
            for i in 0..n {
                y[i] = table.number(i, label)?;
            }
        }
        Some(names) => {
            for i in 0..n {
                let v = table.cell(i, label);
                let c = names.iter().position(|c| c == v).ok_or_else(|| Error::BadCell {
                    row: i + 1,
                    column: schema.label_col.clone(),
                    message: format!("unknown class `{v}`"),
                })?;
                y[i] = c as f64;
            }
        }
    }
    let groups = group.map(|g| {
        let mut ids: HashMap<&str, usize> = HashMap::new();
        (0..n)
            .map(|i| {
                let next = ids.len();
                *ids.entry(table.cell(i, g)).or_insert(next)
            })
            .collect::<Vec<_>>()
    });
    let mut schema = schema.clone();
    schema.segment_names = segment_names;
    Dataset::new(x, y, segments, groups, schema)
}

/// Writes the encoded features, the label and a `__segment__` column holding
/// the original segment names.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let schema = data.schema();
    let mut header = data.feature_names();
    header.push(schema.label_col.clone());
    header.push(SEGMENT_COLUMN.to_string());
    w.write_record(&header)?;
    for i in 0..data.n_rows() {
        let mut rec: Vec<String> = data.features().row(i).iter().map(|v| v.to_string()).collect();
        let y = data.labels()[i];
        rec.push(match &schema.class_names {
            Some(names) => names[y as usize].clone(),
            None => y.to_string(),
        });
        rec.push(schema.segment_names[data.segments()[i]].clone());
        w.write_record(&rec)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::decode_categorical_names;
    use ndarray::array;

    fn spec() -> CsvSpec {
        CsvSpec::new("y", "seg", TaskKind::Regression)
    }

    #[test]
    fn minimal_two_rows() {
        let d = read_csv("x1,seg,y\n1.5,a,2\n-1,b,3\n".as_bytes(), &spec()).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.n_features(), 1);
        assert_eq!(d.segment_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.labels(), &array![2.0, 3.0]);
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        let err = read_csv("x1,seg,y\n1,a,2\nNaN,a,3\n".as_bytes(), &spec()).unwrap_err();
        match err {
            Error::BadCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "x1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unparseable_cell_is_rejected() {
        let err = read_csv("x1,seg,y\n1,a,2\nabc,a,3\n".as_bytes(), &spec()).unwrap_err();
        assert!(matches!(err, Error::BadCell { row: 2, .. }));
    }

    #[test]
    fn missing_and_empty() {
        let err = read_csv("x1,seg\n1,a\n".as_bytes(), &spec()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "y"));
        assert!(matches!(
            read_csv("x1,seg,y\n".as_bytes(), &spec()),
            Err(Error::Empty(_))
        ));
        assert!(read_csv("".as_bytes(), &spec()).is_err());
    }

    #[test]
    fn categorical_one_hot_matches_hand_encoding() {
        let csv = "c,x,seg,y\nb,1,s,0\na,2,s,1\nb,3,t,2\n";
        let d = read_csv(csv.as_bytes(), &spec()).unwrap();
        let expected = array![[0.0, 1.0, 1.0], [1.0, 0.0, 2.0], [0.0, 1.0, 3.0]];
        assert_eq!(d.features(), &expected);
        assert_eq!(d.feature_names(), vec!["c=a", "c=b", "x"]);
        let decoded = decode_categorical_names(&d.feature_names(), &d.schema().columns);
        assert_eq!(decoded, vec![("c".to_string(), vec!["a".to_string(), "b".into()])]);
    }

    #[test]
    fn schema_reuse_extends_segments_and_zeroes_unseen_categories() {
        let train = read_csv("c,seg,y\na,s1,0\nb,s2,1\n".as_bytes(), &spec()).unwrap();
        let test = read_features_with_schema(
            "c,seg\nz,s2\na,s9\n".as_bytes(),
            train.schema(),
        )
        .unwrap();
        assert_eq!(test.x, array![[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(test.segments, vec![1, 2]);
        assert_eq!(test.segment_names, vec!["s1", "s2", "s9"]);
    }

    #[test]
    fn string_class_labels_sorted() {
        let spec = CsvSpec::new("y", "seg", TaskKind::Binary);
        let d = read_csv("x,seg,y\n1,a,yes\n2,a,no\n".as_bytes(), &spec).unwrap();
        assert_eq!(d.labels(), &array![1.0, 0.0]);
        assert_eq!(
            d.schema().class_names.as_deref(),
            Some(&["no".to_string(), "yes".to_string()][..])
        );
    }

    #[test]
    fn groups_and_quoting() {
        let spec = spec().group_col("g");
        let csv = "x,seg,y,g\n1,\"a,b\",1,u1\n2,c,2,u2\n3,c,3,u1\n";
        let d = read_csv(csv.as_bytes(), &spec).unwrap();
        assert_eq!(d.groups(), Some(&[0, 1, 0][..]));
        assert_eq!(d.segment_names()[0], "a,b");
    }

    #[test]
    fn write_then_read_back() {
        let d = read_csv("x1,seg,y\n0.1,a,2\n-1e-3,b,3\n".as_bytes(), &spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_csv(&d, &p).unwrap();
        let back = load_csv(&p, &CsvSpec::new("y", SEGMENT_COLUMN, TaskKind::Regression)).unwrap();
        assert_eq!(back.features(), d.features());
        assert_eq!(back.labels(), d.labels());
        assert_eq!(back.segment_names(), d.segment_names());
    }
}
