//! Synthesis records, the morphology taxonomy and dataset handling.
//!
//! A synthesis is described by ten continuous parameters and three reagent
//! names (polymer, surfactant, solvent). Absence of a reagent is encoded by the
//! explicit `No_*` vocabulary entry, so after one-hot expansion every reagent
//! family contributes exactly one `1`.
//!
//! The CSV layout uses the display names of the continuous parameters as
//! column headers, one column per reagent family, and the label columns
//! `Shapes` (required) and `ShapeSizes` (optional), each holding a
//! comma-separated list of category names.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

/// `row` fields count data rows from 0, not counting the header.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: column '{column}': cannot parse '{value}' as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: column '{column}': unknown name '{value}'")]
    Vocabulary {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: {message}")]
    InvalidRecord { row: usize, message: String },
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error("excluding these features leaves an empty feature space")]
    EmptyFeatureSpace,
    #[error("cannot stratify on {category}: {positives} positives out of {total} records")]
    DegenerateStratum {
        category: String,
        positives: usize,
        total: usize,
    },
    #[error("test fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("records and labels differ in length ({records} vs {labels})")]
    Misaligned { records: usize, labels: usize },
    #[error("unknown category '{0}'")]
    UnknownCategory(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            /// All values in schema order.
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            pub fn from_name(s: &str) -> Option<Self> {
                match s {
                    $($label => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

vocabulary!(
    /// Polymer additive. Indicator order follows this declaration.
    Polymer {
        NoPolymer => "No_polymer",
        Paa => "PAA",
        Peg => "PEG",
        Pei => "PEI",
        Pss => "PSS",
        Pvp => "PVP",
    }
);

vocabulary!(
    Surfactant {
        Ctab => "Hexadecyltrimethylammonium bromide",
        Mtab => "Myristyltrimethylammonium bromide",
        NoSurfactant => "No_surfactant",
        Sds => "Sodium dodecylsulfate",
        TritonX100 => "Triton X-100",
    }
);

vocabulary!(
    Solvent {
        Hexanol => "1-Hexanol",
        Dimethylformamide => "Dimethylformamide",
        EthyleneGlycol => "Ethylene glycol",
        IsopropylAlcohol => "Isopropyl alcohol",
        MethylAlcohol => "Methyl alcohol",
        NoSolvent => "No_solvent",
        PropyleneGlycol => "Propylene glycol",
        TertButanol => "tert-Butanol",
    }
);

vocabulary!(
    /// Particle shape. Declaration order is the canonical taxonomy order.
    ShapeCategory {
        Cube => "Cube",
        Stick => "Stick",
        Sphere => "Sphere",
        Flat => "Flat",
        Amorphous => "Amorphous",
    }
);

vocabulary!(
    /// Shape combined with a size class. Flat and amorphous particles carry no
    /// size variant.
    ShapeSizeCategory {
        CubeSmall => "Cube_small",
        CubeMedium => "Cube_medium",
        CubeLarge => "Cube_large",
        StickSmall => "Stick_small",
        StickMedium => "Stick_medium",
        StickLarge => "Stick_large",
        SphereSmall => "Sphere_small",
        SphereMedium => "Sphere_medium",
        SphereLarge => "Sphere_large",
    }
);

impl ShapeSizeCategory {
    pub fn shape(self) -> ShapeCategory {
        use ShapeSizeCategory::*;
        match self {
            CubeSmall | CubeMedium | CubeLarge => ShapeCategory::Cube,
            StickSmall | StickMedium | StickLarge => ShapeCategory::Stick,
            SphereSmall | SphereMedium | SphereLarge => ShapeCategory::Sphere,
        }
    }
}

vocabulary!(
    /// Continuous synthesis parameters in schema order.
    ContinuousFeature {
        CaIon => "Ca ion, mM",
        Co3Ion => "CO3 ion, mM",
        Hco3Ion => "HCO3 ion, mM",
        PolymerMwt => "Polymer Mwt, kDa",
        PolymerWt => "Polymer, % wt.",
        SurfactantWt => "Surfactant, % wt.",
        SolventVol => "Solvent, % vol.",
        Stirring => "Stirring, rpm",
        Temperature => "Temperature, C",
        SynthesisTime => "Synthesis time",
    }
);

impl ContinuousFeature {
    /// Whether the parameter is conventionally reported as a whole number.
    /// Drives number formatting in rendered prompts.
    pub fn is_integral(self) -> bool {
        use ContinuousFeature::*;
        matches!(
            self,
            CaIon | Co3Ion | Hco3Ion | Stirring | Temperature | SynthesisTime
        )
    }
}

/// One synthesis: ten continuous parameters and three reagent names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    /// mM
    pub ca_ion: f64,
    /// mM
    pub co3_ion: f64,
    /// mM
    pub hco3_ion: f64,
    /// kDa
    pub polymer_mwt: f64,
    /// % wt.
    pub polymer_wt: f64,
    /// % wt.
    pub surfactant_wt: f64,
    /// % vol.
    pub solvent_vol: f64,
    /// rpm
    pub stirring: f64,
    /// °C
    pub temperature: f64,
    /// minutes
    pub synthesis_time: f64,
    pub polymer: Polymer,
    pub surfactant: Surfactant,
    pub solvent: Solvent,
}

impl SynthesisRecord {
    pub fn continuous(&self, feature: ContinuousFeature) -> f64 {
        use ContinuousFeature::*;
        match feature {
            CaIon => self.ca_ion,
            Co3Ion => self.co3_ion,
            Hco3Ion => self.hco3_ion,
            PolymerMwt => self.polymer_mwt,
            PolymerWt => self.polymer_wt,
            SurfactantWt => self.surfactant_wt,
            SolventVol => self.solvent_vol,
            Stirring => self.stirring,
            Temperature => self.temperature,
            SynthesisTime => self.synthesis_time,
        }
    }

    fn continuous_mut(&mut self, feature: ContinuousFeature) -> &mut f64 {
        use ContinuousFeature::*;
        match feature {
            CaIon => &mut self.ca_ion,
            Co3Ion => &mut self.co3_ion,
            Hco3Ion => &mut self.hco3_ion,
            PolymerMwt => &mut self.polymer_mwt,
            PolymerWt => &mut self.polymer_wt,
            SurfactantWt => &mut self.surfactant_wt,
            SolventVol => &mut self.solvent_vol,
            Stirring => &mut self.stirring,
            Temperature => &mut self.temperature,
            SynthesisTime => &mut self.synthesis_time,
        }
    }

    /// Checks that every continuous field is finite and non-negative.
    pub fn validate(&self) -> Result<(), String> {
        for &f in ContinuousFeature::ALL {
            let v = self.continuous(f);
            if !v.is_finite() || v < 0.0 {
                return Err(format!("'{}' must be finite and >= 0, got {v}", f.name()));
            }
        }
        Ok(())
    }
}

/// A model input column after one-hot expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Continuous(ContinuousFeature),
    Surfactant(Surfactant),
    Solvent(Solvent),
    Polymer(Polymer),
}

impl Feature {
    /// The full 29-column schema: 10 continuous parameters, then surfactant,
    /// solvent and polymer indicators.
    pub fn all() -> Vec<Feature> {
        let mut out = Vec::with_capacity(29);
        out.extend(ContinuousFeature::ALL.iter().map(|&f| Feature::Continuous(f)));
        out.extend(Surfactant::ALL.iter().map(|&s| Feature::Surfactant(s)));
        out.extend(Solvent::ALL.iter().map(|&s| Feature::Solvent(s)));
        out.extend(Polymer::ALL.iter().map(|&p| Feature::Polymer(p)));
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Continuous(f) => f.name(),
            Feature::Surfactant(s) => s.name(),
            Feature::Solvent(s) => s.name(),
            Feature::Polymer(p) => p.name(),
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::all().into_iter().find(|f| f.name() == name)
    }

    pub fn is_indicator(self) -> bool {
        !matches!(self, Feature::Continuous(_))
    }

    pub fn value(self, record: &SynthesisRecord) -> f64 {
        let hot = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            Feature::Continuous(f) => record.continuous(f),
            Feature::Surfactant(s) => hot(record.surfactant == s),
            Feature::Solvent(s) => hot(record.solvent == s),
            Feature::Polymer(p) => hot(record.polymer == p),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Feature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Feature::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown feature '{name}'")))
    }
}

/// Names of features with no detectable association with shape; dropped
/// before model training.
pub const NON_INFORMATIVE_FEATURES: [&str; 7] = [
    "Stirring, rpm",
    "Ca ion, mM",
    "CO3 ion, mM",
    "Hexadecyltrimethylammonium bromide",
    "Triton X-100",
    "1-Hexanol",
    "Methyl alcohol",
];

/// Expands a record into the model vector for `features`.
pub fn one_hot(record: &SynthesisRecord, features: &[Feature]) -> Vec<f64> {
    features.iter().map(|f| f.value(record)).collect()
}

/// Shape and shape-size sets observed for one synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MorphologyLabel {
    shapes: BTreeSet<ShapeCategory>,
    shape_sizes: BTreeSet<ShapeSizeCategory>,
}

impl MorphologyLabel {
    pub fn new(
        shapes: impl IntoIterator<Item = ShapeCategory>,
        shape_sizes: impl IntoIterator<Item = ShapeSizeCategory>,
    ) -> Result<Self, DataError> {
        let label = MorphologyLabel {
            shapes: shapes.into_iter().collect(),
            shape_sizes: shape_sizes.into_iter().collect(),
        };
        if label.shapes.is_empty() {
            return Err(DataError::InvalidLabel("shape set is empty".into()));
        }
        if let Some(s) = label
            .shape_sizes
            .iter()
            .find(|s| !label.shapes.contains(&s.shape()))
        {
            return Err(DataError::InvalidLabel(format!(
                "{s} listed without shape {}",
                s.shape()
            )));
        }
        Ok(label)
    }

    pub fn shapes(&self) -> &BTreeSet<ShapeCategory> {
        &self.shapes
    }

    pub fn shape_sizes(&self) -> &BTreeSet<ShapeSizeCategory> {
        &self.shape_sizes
    }

    pub fn contains(&self, category: Category) -> bool {
        match category {
            Category::Shape(s) => self.shapes.contains(&s),
            Category::ShapeSize(s) => self.shape_sizes.contains(&s),
        }
    }
}

/// A binary classification target: either a shape or a shape-size class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Shape(ShapeCategory),
    ShapeSize(ShapeSizeCategory),
}

impl Category {
    pub fn all_shapes() -> Vec<Category> {
        ShapeCategory::ALL.iter().map(|&s| Category::Shape(s)).collect()
    }

    pub fn all_shape_sizes() -> Vec<Category> {
        ShapeSizeCategory::ALL
            .iter()
            .map(|&s| Category::ShapeSize(s))
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Shape(s) => s.name(),
            Category::ShapeSize(s) => s.name(),
        }
    }

    /// `shape:<Name>` or `size:<Name>`.
    pub fn qualified(self) -> String {
        match self {
            Category::Shape(s) => format!("shape:{s}"),
            Category::ShapeSize(s) => format!("size:{s}"),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, name) = match s.split_once(':') {
            Some((k, n)) => (Some(k.trim()), n.trim()),
            None => (None, s.trim()),
        };
        let shape = ShapeCategory::from_name(name).map(Category::Shape);
        let size = ShapeSizeCategory::from_name(name).map(Category::ShapeSize);
        let found = match kind {
            Some("shape") => shape,
            Some("size") | Some("shape_size") => size,
            Some(_) => None,
            None => shape.or(size),
        };
        found.ok_or_else(|| DataError::UnknownCategory(s.to_string()))
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.qualified())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_rows * n_cols, "matrix shape mismatch");
        Matrix {
            n_rows,
            n_cols,
            values,
        }
    }

    /// Panics if rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged rows");
            values.extend_from_slice(r);
        }
        Matrix::new(rows.len(), n_cols, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Matrix::new(indices.len(), self.n_cols, values)
    }
}

/// Records with aligned labels and the active feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SynthesisRecord>,
    labels: Vec<MorphologyLabel>,
    features: Vec<Feature>,
}

pub const SHAPES_COLUMN: &str = "Shapes";
pub const SHAPE_SIZES_COLUMN: &str = "ShapeSizes";
pub const POLYMER_COLUMN: &str = "Polymer";
pub const SURFACTANT_COLUMN: &str = "Surfactant";
pub const SOLVENT_COLUMN: &str = "Solvent";

/// Required CSV columns in canonical order; `ShapeSizes` is optional.
pub fn csv_schema() -> Vec<&'static str> {
    let mut cols: Vec<&'static str> = ContinuousFeature::ALL.iter().map(|f| f.name()).collect();
    cols.extend([POLYMER_COLUMN, SURFACTANT_COLUMN, SOLVENT_COLUMN, SHAPES_COLUMN]);
    cols
}

fn split_list(cell: &str) -> impl Iterator<Item = &str> {
    cell.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn join_names<I, T>(items: I) -> String
where
    I: IntoIterator<Item = T>,
    T: fmt::Display,
{
    items
        .into_iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl Dataset {
    /// Dataset over the full 29-column feature schema.
    pub fn new(
        records: Vec<SynthesisRecord>,
        labels: Vec<MorphologyLabel>,
    ) -> Result<Self, DataError> {
        if records.len() != labels.len() {
            return Err(DataError::Misaligned {
                records: records.len(),
                labels: labels.len(),
            });
        }
        for (row, r) in records.iter().enumerate() {
            r.validate()
                .map_err(|message| DataError::InvalidRecord { row, message })?;
        }
        Ok(Dataset {
            records,
            labels,
            features: Feature::all(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SynthesisRecord] {
        &self.records
    }

    pub fn labels(&self) -> &[MorphologyLabel] {
        &self.labels
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name().to_string()).collect()
    }

    /// Number of (synthesis, shape) instances, i.e. the sum of shape-set sizes.
    pub fn shape_instance_count(&self) -> usize {
        self.labels.iter().map(|l| l.shapes.len()).sum()
    }

    /// Number of (synthesis, shape-size) instances.
    pub fn shape_size_instance_count(&self) -> usize {
        self.labels.iter().map(|l| l.shape_sizes.len()).sum()
    }

    pub fn feature_matrix(&self) -> Matrix {
        let mut values = Vec::with_capacity(self.len() * self.features.len());
        for r in &self.records {
            values.extend(self.features.iter().map(|f| f.value(r)));
        }
        Matrix::new(self.len(), self.features.len(), values)
    }

    /// `true` at `i` iff label `i` contains `category`.
    pub fn binary_target(&self, category: Category) -> Vec<bool> {
        self.labels.iter().map(|l| l.contains(category)).collect()
    }

    pub fn positive_count(&self, category: Category) -> usize {
        self.labels.iter().filter(|l| l.contains(category)).count()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            features: self.features.clone(),
        }
    }

    /// Drops the named feature columns. Records are untouched; only the
    /// model-facing column list shrinks.
    pub fn exclude_features<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset, DataError> {
        let mut drop = HashSet::new();
        for n in names {
            let n = n.as_ref();
            let f = self
                .features
                .iter()
                .find(|f| f.name() == n)
                .ok_or_else(|| DataError::UnknownFeature(n.to_string()))?;
            drop.insert(*f);
        }
        let features: Vec<Feature> = self
            .features
            .iter()
            .copied()
            .filter(|f| !drop.contains(f))
            .collect();
        if features.is_empty() {
            return Err(DataError::EmptyFeatureSpace);
        }
        Ok(Dataset {
            records: self.records.clone(),
            labels: self.labels.clone(),
            features,
        })
    }

    /// Restricts the active columns to `features` (in the given order).
    pub fn with_features(&self, features: Vec<Feature>) -> Result<Dataset, DataError> {
        if features.is_empty() {
            return Err(DataError::EmptyFeatureSpace);
        }
        Ok(Dataset {
            records: self.records.clone(),
            labels: self.labels.clone(),
            features,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(file)
    }

    /// Parses the CSV layout described in the module docs. Header names must
    /// match exactly; column order is free.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, DataError> {
        let (records, labels) = read_table(reader, true)?;
        Dataset::new(records, labels)
    }

    /// Writes every record in canonical column order, including `ShapeSizes`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = csv_schema();
        header.push(SHAPE_SIZES_COLUMN);
        wtr.write_record(&header)?;
        for (r, l) in self.records.iter().zip(&self.labels) {
            let mut row: Vec<String> = ContinuousFeature::ALL
                .iter()
                .map(|&f| r.continuous(f).to_string())
                .collect();
            row.push(r.polymer.name().to_string());
            row.push(r.surfactant.name().to_string());
            row.push(r.solvent.name().to_string());
            row.push(join_names(&l.shapes));
            row.push(join_names(&l.shape_sizes));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Records only, for prediction inputs. Label columns may be absent and
/// are ignored when present.
pub fn read_unlabeled_csv<R: Read>(reader: R) -> Result<Vec<SynthesisRecord>, DataError> {
    Ok(read_table(reader, false)?.0)
}

fn read_table<R: Read>(reader: R, labelled: bool) -> Result<(Vec<SynthesisRecord>, Vec<MorphologyLabel>), DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut seen = HashSet::new();
    for h in headers.iter() {
        if !seen.insert(h) {
            return Err(DataError::Schema(format!("duplicate column '{h}'")));
        }
    }
    let schema = csv_schema();
    for h in headers.iter() {
        if !schema.contains(&h) && h != SHAPE_SIZES_COLUMN {
            return Err(DataError::Schema(format!("unexpected column '{h}'")));
        }
    }
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut index = std::collections::HashMap::new();
    for &col in &schema {
        if !labelled && col == SHAPES_COLUMN {
            continue;
        }
        let i = position(col)
            .ok_or_else(|| DataError::Schema(format!("missing column '{col}'")))?;
        index.insert(col, i);
    }
    let sizes_idx = position(SHAPE_SIZES_COLUMN);

    let mut records = Vec::new();
    let mut labels = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        let cell = |col: &str| rec.get(index[col]).unwrap_or("").trim();

        let mut record = SynthesisRecord {
            ca_ion: 0.0,
            co3_ion: 0.0,
            hco3_ion: 0.0,
            polymer_mwt: 0.0,
            polymer_wt: 0.0,
            surfactant_wt: 0.0,
            solvent_vol: 0.0,
            stirring: 0.0,
            temperature: 0.0,
            synthesis_time: 0.0,
            polymer: Polymer::NoPolymer,
            surfactant: Surfactant::NoSurfactant,
            solvent: Solvent::NoSolvent,
        };
        for &f in ContinuousFeature::ALL {
            let raw = cell(f.name());
            let v: f64 = raw.parse().map_err(|_| DataError::Parse {
                row,
                column: f.name().to_string(),
                value: raw.to_string(),
            })?;
            *record.continuous_mut(f) = v;
        }
        let vocab_err = |column: &str, value: &str| DataError::Vocabulary {
            row,
            column: column.to_string(),
            value: value.to_string(),
        };
        let p = cell(POLYMER_COLUMN);
        record.polymer = Polymer::from_name(p).ok_or_else(|| vocab_err(POLYMER_COLUMN, p))?;
        let s = cell(SURFACTANT_COLUMN);
        record.surfactant =
            Surfactant::from_name(s).ok_or_else(|| vocab_err(SURFACTANT_COLUMN, s))?;
        let s = cell(SOLVENT_COLUMN);
        record.solvent = Solvent::from_name(s).ok_or_else(|| vocab_err(SOLVENT_COLUMN, s))?;
        record
            .validate()
            .map_err(|message| DataError::InvalidRecord { row, message })?;

        records.push(record);
        if !labelled {
            continue;
        }
        let shapes = split_list(cell(SHAPES_COLUMN))
            .map(|n| ShapeCategory::from_name(n).ok_or_else(|| vocab_err(SHAPES_COLUMN, n)))
            .collect::<Result<Vec<_>, _>>()?;
        let sizes = match sizes_idx {
            Some(i) => split_list(rec.get(i).unwrap_or(""))
                .map(|n| {
                    ShapeSizeCategory::from_name(n)
                        .ok_or_else(|| vocab_err(SHAPE_SIZES_COLUMN, n))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        };
        let label = MorphologyLabel::new(shapes, sizes).map_err(|e| {
            DataError::InvalidRecord {
                row,
                message: e.to_string(),
            }
        })?;
        labels.push(label);
    }
    Ok((records, labels))
}

/// Train/test row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified train/test split on `stratify_on`.
///
/// The test set holds `round(test_fraction * n)` rows (clamped so both sides
/// are nonempty) with `round(n_test * positives / n)` positives, so the
/// test-set positive fraction is within one sample of the global fraction.
pub fn split_indices(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratify_on: Category,
) -> Result<SplitIndices, DataError> {
    stratified_split(&dataset.binary_target(stratify_on), test_fraction, seed).map_err(|e| {
        match e {
            DataError::DegenerateStratum {
                positives, total, ..
            } => DataError::DegenerateStratum {
                category: stratify_on.to_string(),
                positives,
                total,
            },
            other => other,
        }
    })
}

/// Stratified split over an explicit boolean target.
pub fn stratified_split(
    target: &[bool],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitIndices, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidFraction(test_fraction));
    }
    let n = target.len();
    let mut pos: Vec<usize> = (0..n).filter(|&i| target[i]).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| !target[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(DataError::DegenerateStratum {
            category: String::new(),
            positives: pos.len(),
            total: n,
        });
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let pos_test = ((n_test as f64 * pos.len() as f64 / n as f64).round() as usize)
        .min(pos.len())
        .max(n_test.saturating_sub(neg.len()));
    let neg_test = n_test - pos_test;

    let mut rng = rng_from_seed(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut test: Vec<usize> = pos[..pos_test]
        .iter()
        .chain(&neg[..neg_test])
        .copied()
        .collect();
    let mut train: Vec<usize> = pos[pos_test..]
        .iter()
        .chain(&neg[neg_test..])
        .copied()
        .collect();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Stratified split returning `(train, test)` datasets.
pub fn split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratify_on: Category,
) -> Result<(Dataset, Dataset), DataError> {
    let idx = split_indices(dataset, test_fraction, seed, stratify_on)?;
    Ok((dataset.subset(&idx.train), dataset.subset(&idx.test)))
}
