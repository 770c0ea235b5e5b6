//! Experiment orchestration: one configuration document, a run directory of
//! artifacts, and the train / transfer / sweep / evaluate / walk steps.
//!
//! Configuration precedence, strongest first: command-line overrides, keys in
//! the config file, built-in defaults. Component seeds are derived from the
//! top-level `seed` (classifier and generator `seed`, evaluation classifier
//! `seed + 1`, language models `seed + 2`), so per-component seed keys in the
//! file are overwritten.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{train_classifier, ClassifierConfig, ClassifierParams, CnnScorer};
use crate::corpus::{self, Dataset, StyleId, StyleSet};
use crate::deleter::{self, DeleterConfig};
use crate::error::{Error, Result};
use crate::evaluator::{
    self, bleu_corpus, geometric_mean, stability_report, style_accuracy, EncoderStates, EvalContext, EvalReport,
    EvalSet, StabilityConfig, Threshold,
};
use crate::generator::{self, GeneratorConfig, GeneratorParams, TrainConfig, TransferResult};
use crate::lm::{self, LanguageModel, LmConfig, LmParams, PrecomputedLm, SubwordLm};
use crate::tokenizer::{train_bpe, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `<domain>.<split>.<style>` and `reference.<source>.<style>`.
    pub root: PathBuf,
    pub domain: String,
    pub styles: Vec<String>,
    pub references: Vec<String>,
    /// Sentences per style kept from the training split.
    #[serde(default)]
    pub subsample: Option<usize>,
    pub subsample_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: PathBuf::from("data/yelp"),
            domain: "sentiment".into(),
            styles: vec!["negative".into(), "positive".into()],
            references: vec!["0".into()],
            subsample: None,
            subsample_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralLmConfig {
    /// Extra plain-text files pooled with the training text.
    #[serde(default)]
    pub text: Vec<PathBuf>,
    /// Precomputed external scores; replaces the trained general model.
    #[serde(default)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            alpha: 0.7,
            beta: 0.5,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            betas: vec![0.0, 0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    pub weights: Vec<f64>,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            weights: (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub vocab_size: usize,
    pub data: DataConfig,
    pub classifier: ClassifierConfig,
    pub eval_classifier: ClassifierConfig,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub lm: LmConfig,
    pub general_lm: GeneralLmConfig,
    pub transfer: TransferConfig,
    pub sweep: SweepConfig,
    pub walk: WalkConfig,
    pub stability: StabilityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            vocab_size: 16000,
            data: DataConfig::default(),
            classifier: ClassifierConfig::default(),
            eval_classifier: ClassifierConfig::evaluation_default(),
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            lm: LmConfig::default(),
            general_lm: GeneralLmConfig::default(),
            transfer: TransferConfig::default(),
            sweep: SweepConfig::default(),
            walk: WalkConfig::default(),
            stability: StabilityConfig {
                exclude: vec![INPUT_COPY.into()],
                ..StabilityConfig::default()
            },
        }
    }
}

/// Name under which the unchanged test inputs are evaluated.
pub const INPUT_COPY: &str = "input_copy";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document; missing keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut base = toml::Table::try_from(ExperimentConfig::default())
            .map_err(|e| Error::Config(format!("default config: {e}")))?;
        merge(&mut base, user);
        let mut cfg: ExperimentConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.derive_seeds();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(alpha) = overrides.alpha {
            self.transfer.alpha = alpha;
        }
        if let Some(beta) = overrides.beta {
            self.transfer.beta = beta;
        }
        if let Some(out) = &overrides.out_dir {
            self.out_dir = out.clone();
        }
        self.derive_seeds();
    }

    fn derive_seeds(&mut self) {
        self.classifier.seed = self.seed;
        self.eval_classifier.seed = self.seed + 1;
        self.generator.seed = self.seed;
        self.train.seed = self.seed;
        self.lm.seed = self.seed + 2;
    }

    pub fn style_set(&self) -> Result<StyleSet> {
        StyleSet::new(self.data.styles.iter().cloned())
    }

    /// Checks value ranges and that every referenced input path exists.
    pub fn validate(&self) -> Result<()> {
        self.style_set()?;
        self.classifier.validate()?;
        self.eval_classifier.validate()?;
        self.train.validate()?;
        DeleterConfig::new(self.transfer.alpha, self.transfer.beta)?;
        for &a in &self.sweep.alphas {
            DeleterConfig::new(a, 0.0)?;
        }
        for &b in &self.sweep.betas {
            DeleterConfig::new(0.0, b)?;
        }
        if self.transfer.batch_size == 0 {
            return Err(Error::Config("transfer.batch_size must be positive".into()));
        }
        if let Some(w) = self.walk.weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Config(format!("walk weight {w} is outside [0, 1]")));
        }
        if !self.data.root.is_dir() {
            return Err(Error::Config(format!("data root {} does not exist", self.data.root.display())));
        }
        for p in self.general_lm.text.iter().chain(&self.general_lm.scores) {
            if !p.is_file() {
                return Err(Error::Config(format!("general LM input {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(format!("{:x}", Sha256::digest(json.as_bytes())))
    }

    fn stamp(&self) -> Result<Vec<(String, String)>> {
        Ok(vec![("config_hash".into(), self.hash()?), ("seed".into(), self.seed.to_string())])
    }

    fn meta(&self, extra: serde_json::Value) -> Result<serde_json::Value> {
        let mut m = serde_json::json!({ "config_hash": self.hash()?, "seed": self.seed });
        if let (Some(m), serde_json::Value::Object(extra)) = (m.as_object_mut(), extra) {
            m.extend(extra);
        }
        Ok(m)
    }
}

/// Fixed artifact names inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths { root: root.to_owned() }
    }

    pub fn classifier(&self) -> PathBuf {
        self.root.join("classifier.safetensors")
    }

    pub fn eval_classifier(&self) -> PathBuf {
        self.root.join("eval_classifier.safetensors")
    }

    pub fn generator(&self) -> PathBuf {
        self.root.join("generator.safetensors")
    }

    pub fn data_lm(&self) -> PathBuf {
        self.root.join("lm.data.safetensors")
    }

    pub fn general_lm(&self) -> PathBuf {
        self.root.join("lm.general.safetensors")
    }

    pub fn transfer_dir(&self, alpha: f64, beta: f64) -> PathBuf {
        self.root.join("transfer").join(format!("a{alpha}_b{beta}"))
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }

    pub fn sweep_svg(&self) -> PathBuf {
        self.root.join("sweep.svg")
    }

    pub fn report_jsonl(&self) -> PathBuf {
        self.root.join("report.jsonl")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn walk(&self) -> PathBuf {
        self.root.join("walk.jsonl")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    pub source: StyleId,
    pub target: StyleId,
}

fn parse_style(token: &str, styles: &StyleSet) -> Result<StyleId> {
    let token = token.trim();
    if let Some(i) = styles.names().iter().position(|n| n == token) {
        return Ok(StyleId(i));
    }
    match token.parse::<usize>() {
        Ok(i) if i < styles.len() => Ok(StyleId(i)),
        _ => Err(Error::Config(format!("unknown style {token:?}"))),
    }
}

/// `"src->tgt"` by name or index; `None` or `"all"` gives every ordered pair.
pub fn parse_directions(spec: Option<&str>, styles: &StyleSet) -> Result<Vec<Direction>> {
    match spec.map(str::trim) {
        None | Some("all") => Ok(styles
            .ids()
            .flat_map(|s| styles.ids().filter(move |t| *t != s).map(move |t| Direction { source: s, target: t }))
            .collect()),
        Some(text) => {
            let (a, b) = text
                .split_once("->")
                .ok_or_else(|| Error::Config(format!("direction {text:?} is not of the form source->target")))?;
            let d = Direction {
                source: parse_style(a, styles)?,
                target: parse_style(b, styles)?,
            };
            if d.source == d.target {
                return Err(Error::Config("source and target style must differ".into()));
            }
            Ok(vec![d])
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn prepare_run_dir(cfg: &ExperimentConfig) -> Result<RunPaths> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let run = cfg.meta(serde_json::json!({ "config": cfg }))?;
    write_json(&cfg.out_dir.join("run.json"), &run)?;
    Ok(RunPaths::new(&cfg.out_dir))
}

/// Loads the dataset and applies the configured training subsample.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let styles = cfg.style_set()?;
    let mut ds = corpus::load_dataset(&cfg.data.root, &cfg.data.domain, &styles)?;
    if let Some(n) = cfg.data.subsample {
        ds.train = corpus::subsample(&ds.train, n, cfg.data.subsample_seed)?;
    }
    Ok(ds)
}

fn load_vocab(paths: &RunPaths) -> Result<Vocabulary> {
    Vocabulary::load(&paths.root, "vocab")
}

/// Learns the vocabulary and trains both classifiers.
pub fn train_classifiers(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let paths = prepare_run_dir(cfg)?;
    let ds = load_data(cfg)?;
    let vocab = train_bpe(ds.train.iter(), ds.styles.len(), cfg.vocab_size)?;
    vocab.save(&paths.root, "vocab")?;
    for (clf_cfg, path) in [(&cfg.classifier, paths.classifier()), (&cfg.eval_classifier, paths.eval_classifier())] {
        let mut params = train_classifier(&ds.train, &ds.dev, &vocab, clf_cfg)?;
        params.provenance_mut().extend(cfg.stamp()?);
        params.save(&path)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

pub fn train_generator(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let paths = prepare_run_dir(cfg)?;
    let ds = load_data(cfg)?;
    let vocab = load_vocab(&paths)?;
    let clf = ClassifierParams::load(&paths.classifier(), &vocab)?;
    let mut gen = generator::fit(&ds.train, &clf, &vocab, &cfg.generator, &cfg.train)?;
    gen.provenance_mut().extend(cfg.stamp()?);
    gen.save(&paths.generator())?;
    log::info!("wrote {}", paths.generator().display());
    Ok(())
}

fn read_text_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Trains the in-domain LM and, unless external scores are configured, the
/// general LM on the pooled training text plus any extra text files.
pub fn train_lms(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let paths = prepare_run_dir(cfg)?;
    let ds = load_data(cfg)?;
    let vocab = load_vocab(&paths)?;
    let train: Vec<Vec<String>> = ds.train.iter().map(|s| s.tokens.clone()).collect();
    let dev: Vec<Vec<String>> = ds.dev.iter().map(|s| s.tokens.clone()).collect();
    let mut data_lm = lm::train_lm(&train, &dev, &vocab, &cfg.lm)?;
    data_lm.provenance_mut().extend(cfg.stamp()?);
    data_lm.save(&paths.data_lm())?;
    if cfg.general_lm.scores.is_none() {
        let mut pooled = train;
        for p in &cfg.general_lm.text {
            pooled.extend(read_text_lines(p)?);
        }
        let mut general = lm::train_lm(&pooled, &dev, &vocab, &cfg.lm)?;
        general.provenance_mut().extend(cfg.stamp()?);
        general.save(&paths.general_lm())?;
    }
    Ok(())
}

/// Files written for one transfer direction.
#[derive(Debug, Clone)]
pub struct TransferArtifact {
    pub direction: Direction,
    /// One output sentence per test line.
    pub output: PathBuf,
    /// `{source, content, target_style, output}` records.
    pub records: PathBuf,
    pub traces: PathBuf,
}

#[derive(Serialize)]
struct TransferRecord<'a> {
    source: String,
    content: String,
    target_style: StyleId,
    output: String,
    truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<&'a str>,
}

struct Models {
    vocab: Vocabulary,
    clf: ClassifierParams,
    gen: GeneratorParams,
}

fn load_models(paths: &RunPaths) -> Result<Models> {
    let vocab = load_vocab(paths)?;
    let clf = ClassifierParams::load(&paths.classifier(), &vocab)?;
    let gen = GeneratorParams::load(&paths.generator(), &vocab)?;
    Ok(Models { vocab, clf, gen })
}

fn transfer_direction(
    models: &Models,
    ds: &Dataset,
    direction: Direction,
    deleter_cfg: &DeleterConfig,
    batch_size: usize,
) -> Result<Vec<TransferResult>> {
    let sentences = ds.test.sentences(direction.source);
    let targets = vec![direction.target; sentences.len()];
    generator::transfer(&models.gen, &models.clf, &models.vocab, sentences, &targets, deleter_cfg, batch_size)
}

fn direction_stem(direction: Direction) -> String {
    format!("{}_to_{}", direction.source, direction.target)
}

/// Transfers the test split at one `(alpha, beta)` for each direction.
pub fn run_transfer(cfg: &ExperimentConfig, directions: &[Direction]) -> Result<Vec<TransferArtifact>> {
    cfg.validate()?;
    let paths = prepare_run_dir(cfg)?;
    let ds = load_data(cfg)?;
    let models = load_models(&paths)?;
    let deleter_cfg = DeleterConfig::new(cfg.transfer.alpha, cfg.transfer.beta)?;
    let dir = paths.transfer_dir(cfg.transfer.alpha, cfg.transfer.beta);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let hash = cfg.hash()?;
    let mut out = Vec::new();
    for &direction in directions {
        let results = transfer_direction(&models, &ds, direction, &deleter_cfg, cfg.transfer.batch_size)?;
        let stem = direction_stem(direction);
        let artifact = TransferArtifact {
            direction,
            output: dir.join(format!("{stem}.txt")),
            records: dir.join(format!("{stem}.records.jsonl")),
            traces: dir.join(format!("{stem}.traces.jsonl")),
        };
        corpus::write_lines(&artifact.output, results.iter().map(|r| r.output.join(" ")))?;
        let mut records = String::new();
        for r in &results {
            let rec = TransferRecord {
                source: r.source.text(),
                content: r.content.join(" "),
                target_style: r.target_style,
                output: r.output.join(" "),
                truncated: r.truncated,
                config_hash: Some(&hash),
            };
            records.push_str(&serde_json::to_string(&rec)?);
            records.push('\n');
        }
        fs::write(&artifact.records, records).map_err(|e| Error::io(&artifact.records, e))?;
        let traces: Vec<_> = results.into_iter().map(|r| r.trace).collect();
        deleter::write_traces(&artifact.traces, &traces)?;
        log::info!("wrote {}", artifact.output.display());
        out.push(artifact);
    }
    let meta = cfg.meta(serde_json::json!({
        "alpha": cfg.transfer.alpha,
        "beta": cfg.transfer.beta,
        "directions": directions,
    }))?;
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(out)
}

/// Test inputs, targets and references for a list of directions, in order.
pub fn eval_set(cfg: &ExperimentConfig, ds: &Dataset, directions: &[Direction]) -> Result<EvalSet> {
    let refs = corpus::load_references(&cfg.data.root, &cfg.data.references, &ds.test)?;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut references = Vec::new();
    for d in directions {
        let sentences = ds.test.sentences(d.source);
        inputs.extend(sentences.iter().map(|s| s.tokens.clone()));
        targets.extend(std::iter::repeat_n(d.target, sentences.len()));
        references.extend(refs.for_style(d.source));
    }
    EvalSet::new(inputs, targets, references)
}

fn g_bleu(s: f64, h: f64) -> Result<f64> {
    if s > 0.0 && h > 0.0 {
        geometric_mean(s, h)
    } else {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub s_bleu: f64,
    pub h_bleu: f64,
    pub g_bleu: f64,
    pub accuracy: f64,
    pub mean_deleted: f64,
}

/// Content and attribute scores of one set of outputs.
pub fn score_outputs(
    outputs: &[Vec<String>],
    set: &EvalSet,
    eval_scorer: &CnnScorer<'_>,
) -> Result<(f64, f64, f64, f64)> {
    let self_refs: Vec<Vec<Vec<String>>> = set.inputs.iter().map(|s| vec![s.clone()]).collect();
    let s = bleu_corpus(outputs, &self_refs)?;
    let h = bleu_corpus(outputs, &set.references)?;
    let labelled: Vec<(Vec<String>, StyleId)> = outputs.iter().cloned().zip(set.targets.iter().copied()).collect();
    let acc = style_accuracy(eval_scorer, &labelled)?;
    Ok((s, h, g_bleu(s, h)?, acc))
}

/// Transfers the test split at every grid point with one checkpoint and
/// writes `sweep.csv` and `sweep.svg`. Rows follow the grid, alpha outer.
pub fn run_sweep(cfg: &ExperimentConfig, alphas: &[f64], betas: &[f64], directions: &[Direction]) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    cfg.validate()?;
    let paths = prepare_run_dir(cfg)?;
    let ds = load_data(cfg)?;
    let models = load_models(&paths)?;
    let eval_clf = ClassifierParams::load(&paths.eval_classifier(), &models.vocab)?;
    let eval_scorer = CnnScorer::new(&eval_clf, &models.vocab)?;
    let set = eval_set(cfg, &ds, directions)?;
    let mut rows = Vec::new();
    for &alpha in alphas {
        for &beta in betas {
            let deleter_cfg = DeleterConfig::new(alpha, beta)?;
            let mut outputs = Vec::new();
            let mut deleted = 0usize;
            for &d in directions {
                for r in transfer_direction(&models, &ds, d, &deleter_cfg, cfg.transfer.batch_size)? {
                    deleted += r.trace.deleted_count();
                    outputs.push(r.output);
                }
            }
            let (s_bleu, h_bleu, g_bleu, accuracy) = score_outputs(&outputs, &set, &eval_scorer)?;
            let row = SweepRow {
                alpha,
                beta,
                s_bleu,
                h_bleu,
                g_bleu,
                accuracy,
                mean_deleted: deleted as f64 / outputs.len().max(1) as f64,
            };
            log::info!("sweep alpha {alpha} beta {beta}: G-BLEU {g_bleu:.2} accuracy {accuracy:.3}");
            rows.push(row);
        }
    }
    let mut writer = csv::Writer::from_path(paths.sweep_csv()).map_err(|e| Error::Config(e.to_string()))?;
    for row in &rows {
        writer.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(paths.sweep_csv(), e))?;
    fs::write(paths.sweep_svg(), render_sweep_svg(&rows)).map_err(|e| Error::io(paths.sweep_svg(), e))?;
    write_json(&paths.root.join("sweep.meta.json"), &cfg.meta(serde_json::json!({ "directions": directions }))?)?;
    Ok(rows)
}

/// Static trade-off plot: accuracy against G-BLEU, one line per beta.
pub fn render_sweep_svg(rows: &[SweepRow]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let max_g = rows.iter().map(|r| r.g_bleu).fold(1.0, f64::max);
    let x = |acc: f64| PAD + acc * (W - 2.0 * PAD);
    let y = |g: f64| H - PAD - g / max_g * (H - 2.0 * PAD);
    let mut betas: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {PAD} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">style accuracy</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(svg, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">G-BLEU</text>"#, H / 2.0, H / 2.0);
    for (i, beta) in betas.iter().enumerate() {
        let color = palette[i % palette.len()];
        let pts: Vec<&SweepRow> = rows.iter().filter(|r| r.beta == *beta).collect();
        let line: Vec<String> = pts.iter().map(|r| format!("{:.1},{:.1}", x(r.accuracy), y(r.g_bleu))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, line.join(" "));
        for r in pts {
            let (cx, cy) = (x(r.accuracy), y(r.g_bleu));
            let _ = writeln!(svg, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="3" fill="{color}"/>"#);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, cx + 4.0, cy - 4.0, r.alpha);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">beta {beta}</text>"#,
            W - PAD - 60.0,
            PAD + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// One evaluated system: a single file aligned with the concatenated test
/// directions, or one file per direction.
#[derive(Debug, Clone)]
pub struct SystemOutputs {
    pub name: String,
    pub paths: Vec<PathBuf>,
}

impl SystemOutputs {
    /// Parses `name=path[,path...]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, paths) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("system {spec:?} is not of the form name=path[,path]")))?;
        Ok(SystemOutputs {
            name: name.trim().to_owned(),
            paths: paths.split(',').map(|p| PathBuf::from(p.trim())).collect(),
        })
    }

    fn read(&self, set: &EvalSet, sizes: &[usize]) -> Result<Vec<Vec<String>>> {
        if self.paths.len() == 1 {
            return evaluator::read_system_output(&self.name, &self.paths[0], set.len());
        }
        if self.paths.len() != sizes.len() {
            return Err(Error::Alignment {
                what: format!("system {} (files per direction)", self.name),
                expected: sizes.len(),
                found: self.paths.len(),
            });
        }
        let mut out = Vec::with_capacity(set.len());
        for (path, &n) in self.paths.iter().zip(sizes) {
            out.extend(evaluator::read_system_output(&self.name, path, n)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub reports: Vec<EvalReport>,
    pub thresholds: Vec<Threshold>,
}

/// Scores every system (plus the input copy) and attaches stability flags.
pub fn run_eval(cfg: &ExperimentConfig, systems: &[SystemOutputs], directions: &[Direction]) -> Result<EvalOutcome> {
    cfg.validate()?;
    let paths = prepare_run_dir(cfg)?;
    let ds = load_data(cfg)?;
    let vocab = load_vocab(&paths)?;
    let eval_clf = ClassifierParams::load(&paths.eval_classifier(), &vocab)?;
    let gen = GeneratorParams::load(&paths.generator(), &vocab)?;
    let data_params = LmParams::load(&paths.data_lm(), &vocab)?;
    let data_lm = SubwordLm::new(&data_params, &vocab)?;
    let general_params;
    let general_sub;
    let general_pre;
    let general_lm: &dyn LanguageModel = match &cfg.general_lm.scores {
        Some(p) => {
            general_pre = PrecomputedLm::load(p)?;
            &general_pre
        }
        None => {
            general_params = LmParams::load(&paths.general_lm(), &vocab)?;
            general_sub = SubwordLm::new(&general_params, &vocab)?;
            &general_sub
        }
    };
    let scorer = CnnScorer::new(&eval_clf, &vocab)?;
    let semantic = EncoderStates::new(&gen, &vocab)?;
    let ctx = EvalContext {
        style_scorer: &scorer,
        data_lm: &data_lm,
        general_lm,
        semantic: &semantic,
    };
    let set = eval_set(cfg, &ds, directions)?;
    let sizes: Vec<usize> = directions.iter().map(|d| ds.test.sentences(d.source).len()).collect();

    let mut reports = vec![evaluator::evaluate_system(INPUT_COPY, &set.inputs, &set, &ctx)?];
    for system in systems {
        let outputs = system.read(&set, &sizes)?;
        reports.push(evaluator::evaluate_system(&system.name, &outputs, &set, &ctx)?);
    }
    let thresholds = stability_report(&mut reports, &cfg.stability);
    let header = cfg.meta(serde_json::json!({
        "conventions": evaluator::REPORT_CONVENTIONS,
        "directions": directions,
        "thresholds": thresholds,
    }))?;
    evaluator::write_reports_jsonl(&paths.report_jsonl(), &reports, &header)?;
    let table = evaluator::render_table(&reports);
    fs::write(paths.report_txt(), &table).map_err(|e| Error::io(paths.report_txt(), e))?;
    Ok(EvalOutcome { reports, thresholds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPoint {
    pub w: f64,
    pub output: String,
}

/// Decodes `content` with style embeddings interpolated along the grid.
pub fn run_walk(cfg: &ExperimentConfig, content: &[String], direction: Direction) -> Result<Vec<WalkPoint>> {
    cfg.validate()?;
    let paths = prepare_run_dir(cfg)?;
    let vocab = load_vocab(&paths)?;
    let gen = GeneratorParams::load(&paths.generator(), &vocab)?;
    let cap = generator::max_decode_len(vocab.encode(content).len());
    let points: Vec<WalkPoint> = gen
        .latent_walk(&vocab, content, direction.source, direction.target, &cfg.walk.weights, cap)?
        .into_iter()
        .map(|(w, out)| WalkPoint { w, output: out.join(" ") })
        .collect();
    let mut text = serde_json::to_string(&cfg.meta(serde_json::json!({ "content": content.join(" "), "direction": direction }))?)?;
    text.push('\n');
    for p in &points {
        text.push_str(&serde_json::to_string(p)?);
        text.push('\n');
    }
    fs::write(paths.walk(), text).map_err(|e| Error::io(paths.walk(), e))?;
    Ok(points)
}
