//! Bundled ten-paper synthetic corpus and the rule-based responder that
//! produced its mock script.
//!
//! The responder answers every request the pipeline makes for this corpus
//! from a small fact table. Running the pipeline once through a
//! [`RecordingProvider`] around it yields the complete script, so replays need
//! neither a network nor a model.
//!
//! Planted facts: six relevant papers (`d01`..`d06`) that screen in, one
//! off-topic paper (`d07`) whose independent scores look strong but whose
//! comparative score keeps it out, and one paper (`d04`) whose first
//! extraction the checker rejects.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::collector::parsed::{ImagePart, Paragraph, ParsedFile, Source};
use crate::exec::Exec;
use crate::gateway::{AgentRequest, FnProvider, Gateway, ProviderError, RecordingProvider, RequestTag};
use crate::pipeline::{init_workspace, Pipeline, PipelineConfig, PipelineError, RunSummary, Workspace};
use crate::extraction::Template;

pub const DIRECTION: &str = "urban outdoor air quality: annual PM2.5 and NO2 concentrations at city monitoring stations";
pub const TOPIC: &str = "annual mean PM2.5 and NO2 concentrations";
pub const COLUMNS: [&str; 2] = ["PM2.5 (ug/m3)", "NO2 (ug/m3)"];
pub const YEARS: [u32; 2] = [2018, 2019];
pub const DOMAIN: &str = "Atmosphere";

/// Paper whose first extracted table the checker turns down.
pub const REJECTED_ONCE: &str = "d04";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Values live in a table image.
    Table,
    /// Table image plus a figure.
    TableAndFigure,
    /// Values only appear in running text.
    Text,
    /// No values at all.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPaper {
    pub doc_id: &'static str,
    pub site: &'static str,
    pub relevant: bool,
    pub s1: u8,
    pub s2: u8,
    pub s_r: f64,
    pub layout: Layout,
}

pub const PAPERS: [SyntheticPaper; 10] = [
    SyntheticPaper { doc_id: "d01", site: "Alder", relevant: true, s1: 8, s2: 7, s_r: 0.9, layout: Layout::Table },
    SyntheticPaper { doc_id: "d02", site: "Birch", relevant: true, s1: 9, s2: 8, s_r: 0.95, layout: Layout::Table },
    SyntheticPaper { doc_id: "d03", site: "Cedar", relevant: true, s1: 7, s2: 7, s_r: 0.8, layout: Layout::TableAndFigure },
    SyntheticPaper { doc_id: "d04", site: "Dogwood", relevant: true, s1: 8, s2: 8, s_r: 0.85, layout: Layout::Table },
    SyntheticPaper { doc_id: "d05", site: "Elm", relevant: true, s1: 8, s2: 6, s_r: 0.7, layout: Layout::Text },
    SyntheticPaper { doc_id: "d06", site: "Fir", relevant: true, s1: 7, s2: 8, s_r: 0.75, layout: Layout::Text },
    SyntheticPaper { doc_id: "d07", site: "Gum", relevant: false, s1: 8, s2: 8, s_r: 0.3, layout: Layout::None },
    SyntheticPaper { doc_id: "d08", site: "Hazel", relevant: false, s1: 4, s2: 5, s_r: 0.2, layout: Layout::None },
    SyntheticPaper { doc_id: "d09", site: "Juniper", relevant: false, s1: 3, s2: 6, s_r: 0.1, layout: Layout::None },
    SyntheticPaper { doc_id: "d10", site: "Larch", relevant: false, s1: 5, s2: 4, s_r: 0.25, layout: Layout::None },
];

impl SyntheticPaper {
    fn ordinal(&self) -> u32 {
        PAPERS.iter().position(|p| p.doc_id == self.doc_id).unwrap() as u32
    }

    /// Planted value in tenths, so rendering is exact.
    fn tenths(&self, year_idx: usize, col: usize) -> u32 {
        let i = self.ordinal();
        match col {
            0 => 126 + 37 * i - 15 * year_idx as u32,
            _ => 268 + 23 * i - 11 * year_idx as u32,
        }
    }

    pub fn value(&self, year_idx: usize, col: usize) -> f64 {
        self.tenths(year_idx, col) as f64 / 10.0
    }

    fn value_text(&self, year_idx: usize, col: usize) -> String {
        let t = self.tenths(year_idx, col);
        format!("{}.{}", t / 10, t % 10)
    }

    pub fn has_values(&self) -> bool {
        self.layout != Layout::None
    }

    fn has_table(&self) -> bool {
        matches!(self.layout, Layout::Table | Layout::TableAndFigure)
    }

    pub fn title(&self) -> String {
        if self.relevant {
            format!("Two years of PM2.5 and NO2 monitoring at the {} station", self.site)
        } else {
            match self.doc_id {
                "d07" => format!("Indoor particle exposure in open-plan offices near the {} station", self.site),
                "d08" => format!("Traffic noise complaints around the {} station", self.site),
                "d09" => format!("Pollen calendars recorded at the {} station", self.site),
                _ => format!("Soil moisture trends beside the {} station", self.site),
            }
        }
    }

    fn table_caption(&self) -> String {
        format!("Table 1. Annual mean concentrations at the {} station.", self.site)
    }

    fn figure_caption(&self) -> String {
        format!("Figure 1. Monthly PM2.5 profile at the {} station.", self.site)
    }

    fn paragraphs(&self) -> Vec<String> {
        let mut out = vec![
            format!(
                "This study reports measurements from the {} station over {} and {}.",
                self.site, YEARS[0], YEARS[1]
            ),
            match self.relevant {
                true => format!(
                    "The {} station is an urban background monitor; gravimetric samplers and chemiluminescence analysers ran continuously.",
                    self.site
                ),
                false => format!("Observations near the {} station were gathered by volunteers on weekdays.", self.site),
            },
        ];
        match self.layout {
            Layout::Text => out.push(format!(
                "At the {} station the annual mean PM2.5 was {} ug/m3 in {} and {} ug/m3 in {}, while NO2 averaged {} ug/m3 and {} ug/m3 in the same years.",
                self.site,
                self.value_text(0, 0),
                YEARS[0],
                self.value_text(1, 0),
                YEARS[1],
                self.value_text(0, 1),
                self.value_text(1, 1)
            )),
            Layout::Table | Layout::TableAndFigure => {
                out.push("Annual means are listed in Table 1; both pollutants fell between the two years.".into())
            }
            Layout::None => out.push("No concentration data were collected.".into()),
        }
        out.push("Funding came from a municipal environment programme.".into());
        out
    }

    fn table_image(&self) -> String {
        format!("images/{}-t1.png", self.doc_id)
    }

    fn figure_image(&self) -> String {
        format!("images/{}-f1.png", self.doc_id)
    }

    pub fn parsed_file(&self) -> ParsedFile {
        let tables = if self.has_table() {
            vec![ImagePart {
                id: "T1".into(),
                caption: self.table_caption(),
                image: self.table_image(),
            }]
        } else {
            vec![]
        };
        let figures = if self.layout == Layout::TableAndFigure {
            vec![ImagePart {
                id: "F1".into(),
                caption: self.figure_caption(),
                image: self.figure_image(),
            }]
        } else {
            vec![]
        };
        ParsedFile {
            doc_id: self.doc_id.into(),
            title: self.title(),
            doi: Some(format!("10.5555/synthetic.{}", self.doc_id)),
            source: Some(Source::Local),
            pdf_url: None,
            fetched_at: None,
            paragraphs: self
                .paragraphs()
                .into_iter()
                .enumerate()
                .map(|(index, text)| Paragraph { index, text })
                .collect(),
            figures,
            tables,
        }
    }

    /// Stand-in image bytes: a PNG signature followed by a label. Only the
    /// bytes' digest matters to the mock.
    fn image_bytes(&self, what: &str) -> Vec<u8> {
        let mut b = b"\x89PNG\r\n\x1a\n".to_vec();
        b.extend_from_slice(format!("synthetic {what} for {}\n", self.doc_id).as_bytes());
        b
    }

    fn grid_markdown(&self) -> String {
        let mut s = String::from("| Year | PM2.5 (ug/m3) | NO2 (ug/m3) |\n|---|---|---|\n");
        for (y, year) in YEARS.iter().enumerate() {
            let _ = writeln!(s, "| {year} | {} | {} |", self.value_text(y, 0), self.value_text(y, 1));
        }
        s
    }
}

pub fn paper_by_site(text: &str) -> Option<&'static SyntheticPaper> {
    PAPERS.iter().find(|p| text.contains(&format!("{} station", p.site)))
}

fn part_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^Part (\d+) \[([^\]]+)\]").unwrap())
}

/// `(ordinal, part_id, text)` for each part listed in a request.
fn listed_parts(text: &str) -> Vec<(usize, String, String)> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(c) = part_header_re().captures(line) {
            out.push((c[1].parse().unwrap(), c[2].to_string(), String::new()));
        } else if let Some(last) = out.last_mut() {
            last.2.push_str(line);
            last.2.push('\n');
        }
    }
    out
}

fn fatal(msg: impl Into<String>) -> ProviderError {
    ProviderError::Fatal(msg.into())
}

fn check_reply(accuracy: u8, overall: u8, suggestion: &str) -> String {
    format!(
        "{{'Data Accuracy': {accuracy}, 'Semantic Consistency': 8, 'Data Completeness': 8, 'Overall Score': {overall}, 'Suggestion': \"{suggestion}\"}}"
    )
}

fn extraction_reply(paper: &SyntheticPaper, parts: &[(usize, String, String)]) -> Result<String, ProviderError> {
    let mut table = format!("| {} | {} |\n|---|---|\n", COLUMNS[0], COLUMNS[1]);
    for y in 0..YEARS.len() {
        let _ = writeln!(table, "| {} | {} |", paper.value_text(y, 0), paper.value_text(y, 1));
    }
    let mut explanation = String::new();
    if paper.has_table() {
        let (k, _, _) = parts
            .iter()
            .find(|(_, id, _)| id.starts_with("table:"))
            .ok_or_else(|| fatal("table part missing"))?;
        for y in 0..YEARS.len() {
            for col in 0..COLUMNS.len() {
                let _ = writeln!(
                    explanation,
                    "The number {}: Comes from Part {k}, Row {}, Column {}.",
                    paper.value_text(y, col),
                    y + 1,
                    col + 2
                );
            }
        }
    } else {
        let (k, _, _) = parts
            .iter()
            .find(|(_, _, body)| body.contains("ug/m3"))
            .ok_or_else(|| fatal("paragraph with values missing"))?;
        for y in 0..YEARS.len() {
            for col in 0..COLUMNS.len() {
                let _ = writeln!(explanation, "The number {}: Comes from Part {k}.", paper.value_text(y, col));
            }
        }
    }
    Ok(format!(
        "{table}\n[The Start of Explanation]\n{explanation}[The End of Explanation]\n"
    ))
}

const PLAN_REPLY: &str = r#"{"steps": [
  {"kind": "clustering", "features": ["PM2.5 (ug/m3)", "NO2 (ug/m3)"], "k": 2},
  {"kind": "regression", "features": ["PM2.5 (ug/m3)"], "response": "NO2 (ug/m3)"}
]}"#;

const DISCUSSION_REPLY: &str = "- Both pollutants are lower in the second year at every station.\n\
- PM2.5 and NO2 rise together across stations, which points at shared urban sources.\n\
- Six stations is a small sample; the clusters should be read as descriptive.";

/// Deterministic answer for any request the pipeline makes on this corpus.
pub fn respond(req: &AgentRequest) -> Result<String, ProviderError> {
    let text = req.user_text();
    match req.tag {
        RequestTag::ParagraphScore => Ok(if text.contains("ug/m3") || text.contains("Table 1") {
            "9"
        } else if text.contains("station") {
            "6"
        } else {
            "2"
        }
        .into()),
        RequestTag::IndependentReview => {
            let title = text
                .lines()
                .find_map(|l| l.strip_prefix("Paper title: "))
                .ok_or_else(|| fatal("no title"))?;
            let p = paper_by_site(title).ok_or_else(|| fatal("unknown paper"))?;
            Ok(format!("Topic relevance: {}\nFeasibility: {}", p.s1, p.s2))
        }
        RequestTag::ComparativeReview => {
            let scores: Vec<String> = text
                .lines()
                .filter(|l| l.starts_with("Paper "))
                .map(|l| paper_by_site(l).map(|p| format!("{}", p.s_r)).ok_or_else(|| fatal("unknown paper")))
                .collect::<Result<_, _>>()?;
            Ok(format!("[{}]", scores.join(", ")))
        }
        RequestTag::TableConvert => {
            let p = paper_by_site(&text).ok_or_else(|| fatal("unknown table"))?;
            Ok(format!(
                "[The Start of Title]\nAnnual mean concentrations at the {} station\n[The End of Title]\n\n{}\n[The Start of Footnote]\nAnnual means of daily averages.\n[The End of Footnote]\n",
                p.site,
                p.grid_markdown()
            ))
        }
        RequestTag::FigureSummary => {
            let p = paper_by_site(&text).ok_or_else(|| fatal("unknown figure"))?;
            Ok(format!(
                "- PM2.5 at the {} station peaks in midwinter.\n- Summer months sit well below the annual mean.",
                p.site
            ))
        }
        RequestTag::Mask => {
            let scores: Vec<&str> = listed_parts(&text)
                .iter()
                .map(|(_, id, body)| {
                    if id.starts_with("table:") || body.contains("ug/m3") {
                        "0.95"
                    } else if id.starts_with("figure:") {
                        "0.3"
                    } else if body.contains("station") {
                        "0.6"
                    } else {
                        "0.1"
                    }
                })
                .collect();
            Ok(format!("[{}]", scores.join(", ")))
        }
        RequestTag::Extract => {
            let p = paper_by_site(&text).ok_or_else(|| fatal("unknown paper"))?;
            extraction_reply(p, &listed_parts(&text))
        }
        RequestTag::Check => {
            let p = paper_by_site(&text).ok_or_else(|| fatal("unknown paper"))?;
            let attempt = text
                .lines()
                .find_map(|l| l.strip_prefix("Attempt: "))
                .and_then(|a| a.trim().parse::<u32>().ok())
                .ok_or_else(|| fatal("no attempt number"))?;
            Ok(if p.doc_id == REJECTED_ONCE && attempt == 1 {
                check_reply(5, 5, "You should confirm the second-year values against the table part.")
            } else {
                check_reply(9, 9, "No changes needed.")
            })
        }
        RequestTag::Plan => Ok(PLAN_REPLY.into()),
        RequestTag::Report => Ok(DISCUSSION_REPLY.into()),
        RequestTag::Keyword => Err(fatal("the synthetic corpus is ingested, not searched")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub direction: String,
    pub topic: String,
}

/// File layout of a corpus directory.
#[derive(Debug, Clone)]
pub struct CorpusDir {
    pub root: PathBuf,
}

impl CorpusDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusDir { root: root.into() }
    }

    /// The copy shipped with this crate.
    pub fn bundled() -> Self {
        CorpusDir::new(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus10"))
    }

    pub fn docs(&self) -> PathBuf {
        self.root.join("docs")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn script(&self) -> PathBuf {
        self.root.join("script.tsv")
    }
    pub fn template(&self) -> PathBuf {
        self.root.join("template.txt")
    }
    pub fn gold_extraction(&self) -> PathBuf {
        self.root.join("gold_extraction.tsv")
    }
    pub fn gold_screening(&self) -> PathBuf {
        self.root.join("gold_screening.tsv")
    }
    pub fn meta(&self) -> PathBuf {
        self.root.join("corpus.json")
    }

    pub fn load_meta(&self) -> Result<CorpusMeta, PipelineError> {
        crate::pipeline::workspace::read(&self.meta())
    }
}

pub fn template() -> Template {
    Template::new(COLUMNS.iter().map(|c| c.to_string()).collect()).expect("non-empty")
}

/// Planted values as gold data points: level 1 when stated in prose,
/// level 2 when they sit in a table.
pub fn gold_extraction_text() -> String {
    let mut s = String::from("# doc_id\tlevel\tvalue\tunit\tlabel\tdomain\n");
    for p in PAPERS.iter().filter(|p| p.relevant && p.has_values()) {
        let level = if p.layout == Layout::Text { 1 } else { 2 };
        for (y, year) in YEARS.iter().enumerate() {
            for (c, col) in COLUMNS.iter().enumerate() {
                let _ = writeln!(s, "{}\t{level}\t{}\tug/m3\t{col} {year}\t{DOMAIN}", p.doc_id, p.value_text(y, c));
            }
        }
    }
    s
}

pub fn gold_screening_text() -> String {
    let mut s = String::from("# doc_id\trelevant\n");
    for p in &PAPERS {
        let _ = writeln!(s, "{}\t{}", p.doc_id, u8::from(p.relevant));
    }
    s
}

const CONFIG_TOML: &str = "max_concurrency = 4\n\n[packer]\n# small enough that most papers need paragraph selection\nbudget = 90\n\n[provider]\nkind = \"mock\"\nscript = \"script.tsv\"\nretry_base_ms = 10\n";

fn put(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    crate::fsutil::write_atomic(path, bytes).map_err(|e| PipelineError::io(path, e))
}

/// Write everything but the script.
pub fn write_inputs(dir: &CorpusDir) -> Result<(), PipelineError> {
    for p in &PAPERS {
        let file = p.parsed_file();
        let json = serde_json::to_string_pretty(&file).expect("serialises") + "\n";
        put(&dir.docs().join(format!("{}.json", p.doc_id)), json.as_bytes())?;
        if p.has_table() {
            put(&dir.docs().join(p.table_image()), &p.image_bytes("table"))?;
        }
        if p.layout == Layout::TableAndFigure {
            put(&dir.docs().join(p.figure_image()), &p.image_bytes("figure"))?;
        }
    }
    put(&dir.template(), template().to_text().as_bytes())?;
    put(&dir.gold_extraction(), gold_extraction_text().as_bytes())?;
    put(&dir.gold_screening(), gold_screening_text().as_bytes())?;
    put(&dir.config(), CONFIG_TOML.as_bytes())?;
    let meta = CorpusMeta {
        direction: DIRECTION.into(),
        topic: TOPIC.into(),
    };
    put(&dir.meta(), (serde_json::to_string_pretty(&meta).expect("serialises") + "\n").as_bytes())
}

/// Initialise `workspace` for the corpus and run every stage through `gateway`.
pub fn run_corpus(
    dir: &CorpusDir,
    workspace: &Path,
    gateway: &Gateway,
    exec: Exec,
    stop_after: Option<crate::pipeline::Stage>,
) -> Result<RunSummary, PipelineError> {
    let config = PipelineConfig::load(&dir.config())?;
    let meta = dir.load_meta()?;
    let ws = Workspace::new(workspace);
    init_workspace(&ws, &config, &meta.direction, &meta.topic, Some(&template()))?;
    let pipeline = Pipeline::open(ws, config, gateway, exec)?;
    pipeline.run_stages(Some(&dir.docs()), stop_after)
}

/// Write the inputs, then record the script by running the pipeline once
/// against the rule-based responder in the scratch `workspace`.
pub fn generate(dir: &CorpusDir, workspace: &Path) -> Result<RunSummary, PipelineError> {
    write_inputs(dir)?;
    let recorder = Arc::new(RecordingProvider::new(FnProvider::new("synthetic-responder", respond)));
    let gateway = Gateway::new(recorder.clone()).with_max_in_flight(4);
    let summary = run_corpus(dir, workspace, &gateway, Exec::Parallel(4), None)?;
    put(&dir.script(), recorder.to_mock().to_script_text().as_bytes())?;
    Ok(summary)
}
