//! Prompt rendering and answer parsing for few-shot morphology prediction.
//!
//! A synthesis is shown to the model either as prose (a template with
//! `{placeholder}` gaps filled from the record) or as a `name: value` table
//! over the full feature schema. Each example is followed by its answer line,
//! `Answer: 'Cube, Stick'`, with shapes in canonical order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Category, ContinuousFeature, Dataset, Feature, ShapeCategory, SynthesisRecord};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template '{template}' uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template '{template}' has an unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template library is empty")]
    EmptyLibrary,
    #[error("n_examples must lie in [{min}, {max}], got {got}")]
    ExampleCount { got: usize, min: usize, max: usize },
    #[error(
        "not enough examples for {strategy}: need {needed} ({required_target} containing {target}), \
         have {available} ({available_target} containing {target})"
    )]
    InsufficientExamples {
        strategy: &'static str,
        target: ShapeCategory,
        needed: usize,
        available: usize,
        required_target: usize,
        available_target: usize,
    },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

/// Canonical system preamble.
pub const SYSTEM_PREAMBLE: &str = "You are an expert in the synthesis of nanomaterials. \
You analyze the conditions for obtaining a nanomaterial and predict what particle shapes \
will be present in the synthesized material. There are five particle shapes: 'Cube', \
'Stick', 'Sphere', 'Flat' and 'Amorphous'. A nanomaterial can contain particles of \
different shapes. If you cannot say exactly what it is, list the forms that have the \
highest probability in those conditions.";

pub const PLACEHOLDERS: [&str; 15] = [
    "ca_conc",
    "pol_vol",
    "pol_conc",
    "polymer",
    "pol_mass",
    "solvent_volume",
    "solvent",
    "co3_conc",
    "hco3_conc",
    "surf_vol",
    "surf_conc",
    "surfactant",
    "r_temp",
    "stir_ratio",
    "r_time",
];

const TEMPLATE_COPRECIPITATION: &str = "Synthesis was carried out using the co-precipitation technique. \
Initially, {ca_conc} mkl of 1 M CaCl2 was combined with {pol_vol} mkl of {pol_conc} % wt. {polymer} \
polymer having a molecular weight of {pol_mass} kDa. Subsequently, {solvent_volume} mkl of {solvent} \
was introduced, and the volume adjusted to 500 mkl using distilled water. Following that, {co3_conc} \
mkl of 0.1 M Na2CO3 was mixed with {hco3_conc} mkl of 0.1 M NaHCO3, along with {surf_vol} mkl of \
{surf_conc} % wt. {surfactant} serving as the surfactant. Another {solvent_volume} mkl of {solvent} \
was added, and the volume adjusted to 500 mkl using distilled water. Two resulting solutions, both \
heated to {r_temp} C prior to the reaction, were combined under continuous stirring at {stir_ratio} \
rpm while maintaining the temperature. The reaction proceeded for {r_time} min, followed by \
centrifugation.";

const TEMPLATE_TWO_STEP: &str = "All materials were synthesized via the co-precipitation technique. \
In the first step, {ca_conc} mkl of 1 M CaCl2 was combined with {pol_vol} mkl of {pol_conc} % wt. \
{polymer} polymer, characterized by a molecular weight of {pol_mass} kDa. This was followed by the \
addition of {solvent_volume} mkl of {solvent}, and the volume was adjusted to 500 mkl using distilled \
water. In the subsequent step, {co3_conc} mkl of 0.1 M Na2CO3, {hco3_conc} mkl of 0.1 M NaHCO3, and \
{surf_vol} mkl of {surf_conc} % wt. {surfactant} surfactant were combined. Once more, \
{solvent_volume} mkl of {solvent} was added, and the volume was adjusted to 500 mkl using distilled \
water. Finally, two solutions, both heated to {r_temp} C before the reaction, were mixed under \
stirring at {stir_ratio} rpm while maintaining the temperature. The reaction proceeded for {r_time} \
min, followed by centrifugation.";

const TEMPLATE_BURETTES: &str = "CaCO3 nanoparticles were synthesized by the co-precipitation approach \
according to the following manner. In separate burettes two solutions were made, {ca_conc} mkl of 1 M \
CaCl2 and {pol_vol} mkl of {pol_conc} % wt. {polymer} with molecular weight of {pol_mass} kDa were \
mixed in {solvent_volume} mkl of {solvent} before dilution with distilled water up to 500 mkl. \
Similarly, {co3_conc} mkl of 0.1 M Na2CO3 and {hco3_conc} mkl of 0.1 M of NaHCO3 were combined with \
{surf_vol} mkl of {surf_conc} % wt. {surfactant} and {solvent_volume} mkl of {solvent}. Then, the \
solution was also diluted in 500 mkl of water. Both solutions were heated up to {r_temp} C right \
before mixing under stirring at {stir_ratio} rpm for {r_time} min following centrifugation.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    id: String,
    body: String,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(body: &str) -> Result<Vec<Piece<'_>>, usize> {
    let mut out = Vec::new();
    let mut rest = body;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').ok_or(offset + open)? + open;
        out.push(Piece::Text(&rest[..open]));
        out.push(Piece::Slot(&rest[open + 1..close]));
        offset += close + 1;
        rest = &rest[close + 1..];
    }
    out.push(Piece::Text(rest));
    Ok(out)
}

impl Template {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Result<Template, PromptError> {
        let t = Template {
            id: id.into(),
            body: body.into(),
        };
        let ps = pieces(&t.body).map_err(|offset| PromptError::Unterminated {
            template: t.id.clone(),
            offset,
        })?;
        for p in ps {
            if let Piece::Slot(name) = p {
                if !PLACEHOLDERS.contains(&name) {
                    return Err(PromptError::UnknownPlaceholder {
                        template: t.id.clone(),
                        name: name.to_string(),
                    });
                }
            }
        }
        Ok(t)
    }

    /// Reads a UTF-8 template file; the id is the file stem. Trailing
    /// newlines are dropped.
    pub fn load(path: impl AsRef<Path>) -> Result<Template, PromptError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Template::new(id, body.trim_end_matches(['\n', '\r']))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> Vec<&str> {
        pieces(&self.body)
            .expect("validated at construction")
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s),
                Piece::Text(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateLibrary {
    templates: Vec<Template>,
}

impl TemplateLibrary {
    pub fn new(templates: Vec<Template>) -> Result<TemplateLibrary, PromptError> {
        if templates.is_empty() {
            return Err(PromptError::EmptyLibrary);
        }
        Ok(TemplateLibrary { templates })
    }

    /// The three shipped templates: `coprecipitation`, `two_step` and
    /// `burettes`.
    pub fn builtin() -> TemplateLibrary {
        let t = |id, body| Template::new(id, body).expect("built-in templates are valid");
        TemplateLibrary {
            templates: vec![
                t("coprecipitation", TEMPLATE_COPRECIPITATION),
                t("two_step", TEMPLATE_TWO_STEP),
                t("burettes", TEMPLATE_BURETTES),
            ],
        }
    }

    /// Every `*.txt` file in `dir`, sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<TemplateLibrary, PromptError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| PromptError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        TemplateLibrary::new(paths.iter().map(Template::load).collect::<Result<_, _>>()?)
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    fn choose(&self, rng: &mut Rng) -> &Template {
        self.templates.choose(rng).expect("library is non-empty")
    }
}

/// Values that templates mention but records do not carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Volume of the polymer solution, mkl.
    pub pol_vol: f64,
    /// Volume of the surfactant solution, mkl.
    pub surf_vol: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            pol_vol: 20.0,
            surf_vol: 20.0,
        }
    }
}

/// Real-valued parameters: up to three decimals, trailing zeros dropped but
/// at least one decimal kept (`25.0`, `0.155`).
pub fn format_real(v: f64) -> String {
    let mut s = format!("{:.3}", v);
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    if s == "-0.0" {
        s = "0.0".into();
    }
    s
}

/// Formats `v` the way the feature is conventionally reported.
pub fn format_value(feature: ContinuousFeature, v: f64) -> String {
    if feature.is_integral() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format_real(v)
    }
}

/// Synthesis time in minutes rendered as `M min S sec`.
pub fn format_duration(minutes: f64) -> String {
    let total = (minutes * 60.0).round() as i64;
    format!("{} min {} sec", total / 60, total % 60)
}

fn slot_value(name: &str, r: &SynthesisRecord, s: &RenderSettings) -> String {
    use ContinuousFeature as C;
    let fv = |f: C| format_value(f, r.continuous(f));
    let whole = |v: f64| {
        if v.fract() == 0.0 {
            format!("{}", v as i64)
        } else {
            format_real(v)
        }
    };
    match name {
        "ca_conc" => fv(C::CaIon),
        "co3_conc" => fv(C::Co3Ion),
        "hco3_conc" => fv(C::Hco3Ion),
        "pol_mass" => fv(C::PolymerMwt),
        "pol_conc" => fv(C::PolymerWt),
        "surf_conc" => fv(C::SurfactantWt),
        "solvent_volume" => fv(C::SolventVol),
        "stir_ratio" => fv(C::Stirring),
        "r_temp" => fv(C::Temperature),
        "r_time" => format_duration(r.synthesis_time),
        "pol_vol" => whole(s.pol_vol),
        "surf_vol" => whole(s.surf_vol),
        "polymer" => r.polymer.name().to_string(),
        "surfactant" => r.surfactant.name().to_string(),
        "solvent" => r.solvent.name().to_string(),
        other => unreachable!("placeholder {other} was validated"),
    }
}

pub fn render_textual_with(record: &SynthesisRecord, template: &Template, settings: &RenderSettings) -> String {
    let mut out = String::with_capacity(template.body.len() + 64);
    for p in pieces(&template.body).expect("validated at construction") {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => out.push_str(&slot_value(name, record, settings)),
        }
    }
    out
}

pub fn render_textual(record: &SynthesisRecord, template: &Template) -> String {
    render_textual_with(record, template, &RenderSettings::default())
}

/// `name: value` pairs over the full feature schema joined by `; `;
/// indicators are `0`/`1`.
pub fn render_tabular(record: &SynthesisRecord) -> String {
    let mut out = String::new();
    for (i, f) in Feature::all().into_iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let value = match f {
            Feature::Continuous(c) => format_value(c, record.continuous(c)),
            _ => format!("{}", f.value(record) as u8),
        };
        let _ = write!(out, "{}: {}", f.name(), value);
    }
    out
}

/// `Answer: 'A, B'` with shapes in canonical order.
pub fn answer_line<'a>(shapes: impl IntoIterator<Item = &'a ShapeCategory>) -> String {
    let set: BTreeSet<ShapeCategory> = shapes.into_iter().copied().collect();
    let names: Vec<&str> = set.iter().map(|s| s.name()).collect();
    format!("Answer: '{}'", names.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// At least one example contains the target shape.
    AtLeastOneTarget,
    /// Every example contains the target shape. Needs the query's label, so
    /// only meaningful inside an evaluation.
    OnlyTargetClass,
}

impl Sampling {
    pub fn name(self) -> &'static str {
        match self {
            Sampling::AtLeastOneTarget => "at_least_one_target",
            Sampling::OnlyTargetClass => "only_target_class",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFormat {
    Textual,
    Tabular,
}

impl PromptFormat {
    pub fn name(self) -> &'static str {
        match self {
            PromptFormat::Textual => "textual",
            PromptFormat::Tabular => "tabular",
        }
    }
}

pub const MIN_EXAMPLES: usize = 2;
pub const MAX_EXAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub n_examples: usize,
    pub sampling: Sampling,
    pub format: PromptFormat,
    pub target: ShapeCategory,
    pub seed: u64,
    /// Allows `n_examples` outside `[MIN_EXAMPLES, MAX_EXAMPLES]` (still ≥ 1).
    #[serde(default)]
    pub allow_any_count: bool,
    /// Inverts which rows count as target examples: rows lacking the target
    /// shape. Used for negative queries under `OnlyTargetClass`.
    #[serde(default)]
    pub target_absent: bool,
    #[serde(default)]
    pub render: RenderSettings,
}

impl FewShotConfig {
    pub fn new(n_examples: usize, sampling: Sampling, format: PromptFormat, target: ShapeCategory, seed: u64) -> Self {
        FewShotConfig {
            n_examples,
            sampling,
            format,
            target,
            seed,
            allow_any_count: false,
            target_absent: false,
            render: RenderSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let (min, max) = if self.allow_any_count {
            (1, usize::MAX)
        } else {
            (MIN_EXAMPLES, MAX_EXAMPLES)
        };
        if self.n_examples < min || self.n_examples > max {
            return Err(PromptError::ExampleCount {
                got: self.n_examples,
                min,
                max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub synthesis: String,
    pub answer: String,
}

impl PromptExample {
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.synthesis, self.answer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotPrompt {
    pub system_preamble: String,
    pub examples: Vec<PromptExample>,
    pub query: String,
    /// Training-set rows the examples were drawn from, in prompt order.
    pub example_rows: Vec<usize>,
}

impl FewShotPrompt {
    /// Examples followed by the query, blocks separated by blank lines.
    pub fn user_message(&self) -> String {
        let mut blocks: Vec<String> = self.examples.iter().map(|e| e.text()).collect();
        blocks.push(self.query.clone());
        blocks.join("\n\n")
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(self.system_preamble.clone()),
            ChatMessage::user(self.user_message()),
        ]
    }

    /// The whole prompt as one document.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system_preamble, self.user_message())
    }

    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.text())
    }
}

/// Rough token count at four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Renders one synthesis in the configured format, picking a template at
/// random for prose.
fn render(record: &SynthesisRecord, cfg: &FewShotConfig, lib: &TemplateLibrary, rng: &mut Rng) -> String {
    match cfg.format {
        PromptFormat::Textual => render_textual_with(record, lib.choose(rng), &cfg.render),
        PromptFormat::Tabular => render_tabular(record),
    }
}

/// Samples examples from `train` under the configured strategy and renders
/// the prompt. Deterministic in `(config, train, query)`.
pub fn build_prompt(
    config: &FewShotConfig,
    train: &Dataset,
    query: &SynthesisRecord,
    library: &TemplateLibrary,
) -> Result<FewShotPrompt, PromptError> {
    config.validate()?;
    let n = config.n_examples;
    let target = config.target;
    let has_target: Vec<bool> = train.binary_target(Category::Shape(target));
    let positives: Vec<usize> = (0..train.len())
        .filter(|&i| has_target[i] != config.target_absent)
        .collect();
    let mut rng = rng_from_seed(config.seed);
    let deficit = |required_target| PromptError::InsufficientExamples {
        strategy: config.sampling.name(),
        target,
        needed: n,
        available: train.len(),
        required_target,
        available_target: positives.len(),
    };
    let mut rows: Vec<usize> = match config.sampling {
        Sampling::AtLeastOneTarget => {
            if positives.is_empty() || train.len() < n {
                return Err(deficit(1));
            }
            let first = *positives.choose(&mut rng).expect("non-empty");
            let others: Vec<usize> = (0..train.len()).filter(|&i| i != first).collect();
            let mut rows: Vec<usize> = others.choose_multiple(&mut rng, n - 1).copied().collect();
            rows.push(first);
            rows
        }
        Sampling::OnlyTargetClass => {
            if positives.len() < n {
                return Err(deficit(n));
            }
            positives.choose_multiple(&mut rng, n).copied().collect()
        }
    };
    rows.shuffle(&mut rng);
    let examples = rows
        .iter()
        .map(|&i| PromptExample {
            synthesis: render(&train.records()[i], config, library, &mut rng),
            answer: answer_line(train.labels()[i].shapes()),
        })
        .collect();
    let query = render(query, config, library, &mut rng);
    Ok(FewShotPrompt {
        system_preamble: SYSTEM_PREAMBLE.to_string(),
        examples,
        query,
        example_rows: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    /// Canonical order, no duplicates.
    pub shapes: Vec<ShapeCategory>,
    /// Tokens on the answer line that named no shape.
    pub unknown: Vec<String>,
    /// True when no usable answer line was found and the whole text was
    /// scanned for shape words instead.
    pub fallback: bool,
}

impl ParsedAnswer {
    pub fn contains(&self, shape: ShapeCategory) -> bool {
        self.shapes.contains(&shape)
    }
}

fn shape_of_word(word: &str) -> Option<ShapeCategory> {
    let w = word.to_lowercase();
    let singular = w.strip_suffix("es").filter(|s| s.ends_with('h')).or(w.strip_suffix('s'));
    ShapeCategory::ALL.iter().copied().find(|s| {
        let name = s.name().to_lowercase();
        name == w || singular == Some(name.as_str())
    })
}

/// Extracts shape names from the last `Answer:` line, case-insensitively.
/// Without such a line (or if it names no shape) every word of the text is
/// scanned instead.
pub fn parse_answer(text: &str) -> ParsedAnswer {
    const MARK: &str = "answer:";
    let mut shapes = BTreeSet::new();
    let mut unknown = Vec::new();
    let line = text
        .lines()
        .rev()
        .find_map(|l| l.to_ascii_lowercase().rfind(MARK).map(|at| l[at + MARK.len()..].to_string()));
    if let Some(line) = line {
        let spaced = line.replace(" and ", ",").replace(" AND ", ",").replace(" And ", ",");
        for token in spaced.split([',', ';', '/', '&']) {
            let token = token.trim_matches(|c: char| !c.is_alphanumeric());
            if token.is_empty() {
                continue;
            }
            match shape_of_word(token) {
                Some(s) => {
                    shapes.insert(s);
                }
                None => unknown.push(token.to_string()),
            }
        }
        if !shapes.is_empty() {
            return ParsedAnswer {
                shapes: shapes.into_iter().collect(),
                unknown,
                fallback: false,
            };
        }
    }
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        if let Some(s) = shape_of_word(word) {
            shapes.insert(s);
        }
    }
    if shapes.is_empty() {
        log::warn!("no shape found in model answer: {:?}", text);
    }
    ParsedAnswer {
        shapes: shapes.into_iter().collect(),
        unknown,
        fallback: true,
    }
}
