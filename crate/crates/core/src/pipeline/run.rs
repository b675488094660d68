use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, SourceKind};
use crate::data::{
    encode, infer_schema, stratified_split, synth_table, InferOptions, RawTable, Schema,
    SplitBundle, SplitIds, SynthSpec, UnknownPolicy,
};
use crate::ensemble::{predict, train_classifier, Backbone, Classifier, Predictions};
use crate::error::{Error, Result};
use crate::eval::{auroc, emit_report, MethodReport};
use crate::model::{load_checkpoint, pretrain_erm, save_checkpoint, CheckpointMeta, ModelParams};
use crate::robust::{robustify_all, ModelBank, Strategy, StrategyKind};
use crate::util::{sha256_hex, sub_seed};

const MANIFEST: &str = "manifest.json";
const ERM: &str = "erm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Data,
    Stage1,
    Stage2,
    Classifier,
    Eval,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Data, Phase::Stage1, Phase::Stage2, Phase::Classifier, Phase::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Data => "data",
            Phase::Stage1 => "stage1",
            Phase::Stage2 => "stage2",
            Phase::Classifier => "classifier",
            Phase::Eval => "eval",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown phase {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Last phase to run.
    pub until: Option<Phase>,
    /// Redo phases whose recorded configuration differs instead of failing.
    pub overwrite: bool,
}

/// Completion record of one phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub fingerprint: String,
    /// Relative path to sha256 of every file the phase wrote.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub phases: Vec<PhaseRecord>,
}

/// JTT grid outcome: validation AUROC of each upweight's classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub candidates: Vec<(String, f64)>,
    pub selected: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub ran: Vec<Phase>,
    pub skipped: Vec<Phase>,
    pub methods: Vec<String>,
    pub reports: Vec<MethodReport>,
    pub selection: Option<Selection>,
}

/// Reads the raw table named by the data section.
pub fn load_table(cfg: &PipelineConfig) -> Result<RawTable> {
    match cfg.data.source {
        SourceKind::Synthetic => synth_table(&cfg.data.synth),
        SourceKind::Csv => {
            let csv = &cfg.data.csv;
            let path = csv.path.as_ref().ok_or_else(|| Error::config("data.csv.path is not set"))?;
            let mut table = RawTable::read_csv(path, csv.delimiter_byte()?)?;
            if let Some(cap) = csv.max_rows {
                table.truncate(cap);
            }
            Ok(table)
        }
    }
}

fn infer_options(cfg: &PipelineConfig) -> InferOptions {
    let csv = &cfg.data.csv;
    InferOptions {
        max_card: csv.max_card,
        overrides: csv.kinds.clone(),
        positive_value: csv.positive.clone(),
    }
}

fn target_name(cfg: &PipelineConfig) -> &str {
    match cfg.data.source {
        SourceKind::Synthetic => crate::data::SYNTH_TARGET,
        SourceKind::Csv => cfg.data.csv.target.as_deref().unwrap_or_default(),
    }
}

/// Writes a synthetic table and its inferred schema.
pub fn write_synth(spec: &SynthSpec, csv_path: &Path, schema_path: &Path) -> Result<Schema> {
    let table = synth_table(spec)?;
    let schema = infer_schema(&table, crate::data::SYNTH_TARGET, &InferOptions::default())?;
    table.write_csv(csv_path)?;
    schema.save(schema_path)?;
    Ok(schema)
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::artifact(path, format!("cannot read: {e}")))?;
    Ok(sha256_hex(&bytes))
}

fn fingerprint<T: Serialize>(phase: Phase, upstream: Option<&str>, parts: &T) -> String {
    let v = serde_json::json!({
        "phase": phase.name(),
        "upstream": upstream,
        "config": parts,
    });
    sha256_hex(v.to_string().as_bytes())
}

struct Prepared {
    splits: SplitBundle,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    dir: PathBuf,
    manifest: RunManifest,
    data: Option<Prepared>,
    base: Option<ModelParams>,
    banks: BTreeMap<String, ModelBank>,
    written: Vec<String>,
}

impl<'a> Run<'a> {
    fn open(cfg: &'a PipelineConfig) -> Result<Self> {
        let dir = cfg.out_dir.clone();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(MANIFEST);
        let phases = if path.exists() {
            let old: RunManifest = crate::util::read_json(&path)?;
            old.phases
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg,
            dir,
            manifest: RunManifest {
                tool: "tabdro".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: cfg.clone(),
                phases,
            },
            data: None,
            base: None,
            banks: BTreeMap::new(),
            written: Vec::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn record(&self, phase: Phase) -> Option<&PhaseRecord> {
        self.manifest.phases.iter().find(|r| r.phase == phase)
    }

    fn fingerprint(&self, phase: Phase) -> String {
        let c = self.cfg;
        let up = |p: Phase| self.fingerprint(p);
        match phase {
            Phase::Data => fingerprint(phase, None, &(&c.seed, &c.data, &c.split)),
            Phase::Stage1 => fingerprint(phase, Some(&up(Phase::Data)), &(&c.model, &c.stage1)),
            Phase::Stage2 => fingerprint(
                phase,
                Some(&up(Phase::Stage1)),
                &(&c.stage2.strategies, &c.stage2.upweights, c.stage2.epochs, c.stage2.lr, c.stage2.batch_size),
            ),
            Phase::Classifier => {
                fingerprint(phase, Some(&up(Phase::Stage2)), &(&c.classifier, &c.stage2.routing))
            }
            Phase::Eval => fingerprint(phase, Some(&up(Phase::Classifier)), &c.eval),
        }
    }

    /// True when a matching, intact record exists.
    fn up_to_date(&self, phase: Phase, overwrite: bool) -> Result<bool> {
        let Some(rec) = self.record(phase) else {
            return Ok(false);
        };
        if rec.fingerprint != self.fingerprint(phase) {
            if overwrite {
                return Ok(false);
            }
            return Err(Error::config(format!(
                "{} already holds phase {phase} from a different configuration; pass --overwrite or use a fresh output directory",
                self.dir.display()
            )));
        }
        for (rel, hash) in &rec.artifacts {
            let p = self.path(rel);
            if !p.exists() || &hash_file(&p)? != hash {
                log::warn!("{rel} is missing or changed; redoing phase {phase}");
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn forget_from(&mut self, phase: Phase) {
        self.manifest.phases.retain(|r| r.phase < phase);
    }

    fn note(&mut self, rel: impl Into<String>) {
        self.written.push(rel.into());
    }

    fn finish(&mut self, phase: Phase) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for rel in std::mem::take(&mut self.written) {
            let h = hash_file(&self.path(&rel))?;
            artifacts.insert(rel, h);
        }
        self.forget_from(phase);
        self.manifest.phases.push(PhaseRecord {
            phase,
            fingerprint: self.fingerprint(phase),
            artifacts,
        });
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<()> {
        crate::util::write_json(&self.path(MANIFEST), &self.manifest)
    }

    fn note_tree(&mut self, rel_dir: &str) -> Result<()> {
        let mut files = Vec::new();
        collect_files(&self.path(rel_dir), rel_dir, &mut files)?;
        files.sort();
        self.written.extend(files);
        Ok(())
    }

    // ---- phases ----

    fn phase_data(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let table = load_table(cfg)?;
        let mut schema = infer_schema(&table, target_name(cfg), &infer_options(cfg))?;
        let policy = match cfg.data.source {
            SourceKind::Synthetic => UnknownPolicy::Strict,
            SourceKind::Csv => cfg.data.csv.unknown,
        };
        let ds = encode(&table, &schema, policy)?;
        let mut splits = stratified_split(&ds, cfg.split.ratios, cfg.seed)?;
        if schema.c() > 0 {
            schema.fit_moments(&table, &splits.train.row_ids)?;
            let ds = encode(&table, &schema, policy)?;
            splits.train = ds.select_ids(&splits.train.row_ids)?;
            splits.val = ds.select_ids(&splits.val.row_ids)?;
            splits.test = ds.select_ids(&splits.test.row_ids)?;
        }
        log::info!(
            "data: {} rows, {} categorical + {} continuous features, split {}/{}/{}",
            ds.n(),
            ds.k(),
            ds.c(),
            splits.train.n(),
            splits.val.n(),
            splits.test.n()
        );
        table.write_csv(&self.path("data/dataset.csv"))?;
        schema.save(&self.path("data/schema.json"))?;
        crate::util::write_json(&self.path("data/splits.json"), &splits.ids())?;
        for f in ["data/dataset.csv", "data/schema.json", "data/splits.json"] {
            self.note(f);
        }
        self.data = Some(Prepared { splits });
        Ok(())
    }

    fn data(&mut self) -> Result<&Prepared> {
        if self.data.is_none() {
            let schema = Schema::load(&self.path("data/schema.json"))?;
            let table = RawTable::read_csv(&self.path("data/dataset.csv"), b',')?;
            let policy = match self.cfg.data.source {
                SourceKind::Synthetic => UnknownPolicy::Strict,
                SourceKind::Csv => self.cfg.data.csv.unknown,
            };
            let ds = encode(&table, &schema, policy)?;
            let ids: SplitIds = crate::util::read_json(&self.path("data/splits.json"))?;
            let splits = SplitBundle {
                train: ds.select_ids(&ids.train)?,
                val: ds.select_ids(&ids.val)?,
                test: ds.select_ids(&ids.test)?,
                ratios: self.cfg.split.ratios,
                seed: self.cfg.seed,
            };
            self.data = Some(Prepared { splits });
        }
        Ok(self.data.as_ref().expect("loaded"))
    }

    fn phase_stage1(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let train = self.data()?.splits.train.clone();
        log::info!(
            "stage1: d={} variant={} epochs={} batch={}",
            cfg.model.d,
            cfg.model.variant,
            cfg.stage1.epochs,
            cfg.stage1.batch_size
        );
        let (model, history) = pretrain_erm(&train, &cfg.model, &cfg.stage1, cfg.seed)?;
        let meta = CheckpointMeta {
            mask_rate: cfg.model.mask_rate,
            seed: cfg.seed,
        };
        save_checkpoint(&model, meta, &self.path("base"))?;
        write_history(&self.path("base/loss.csv"), &history)?;
        self.note_tree("base")?;
        self.base = Some(model);
        Ok(())
    }

    fn base(&mut self) -> Result<&ModelParams> {
        if self.base.is_none() {
            let (m, _) = load_checkpoint(&self.path("base"))?;
            self.base = Some(m);
        }
        Ok(self.base.as_ref().expect("loaded"))
    }

    fn strategies(&self) -> Vec<Strategy> {
        let mut out = Vec::new();
        for kind in &self.cfg.stage2.strategies {
            match kind {
                StrategyKind::Jtt => {
                    for &w in &self.cfg.stage2.upweights {
                        if !out.contains(&Strategy::Jtt { upweight: w }) {
                            out.push(Strategy::Jtt { upweight: w });
                        }
                    }
                }
                StrategyKind::Dfr => {
                    if !out.contains(&Strategy::Dfr) {
                        out.push(Strategy::Dfr);
                    }
                }
            }
        }
        out
    }

    fn phase_stage2(&mut self) -> Result<()> {
        let cfg = self.cfg;
        self.data()?;
        self.base()?;
        let base = self.base.as_ref().expect("loaded");
        let splits = &self.data.as_ref().expect("loaded").splits;
        let mut banks = BTreeMap::new();
        for strategy in self.strategies() {
            log::info!("stage2: {} over {} features", strategy.label(), base.k());
            let bank = robustify_all(
                base,
                splits,
                strategy,
                &cfg.finetune(),
                sub_seed(cfg.seed, 2),
                cfg.stage2.parallel,
            )?;
            let rel = format!("banks/{}", strategy.label());
            let dir = self.path(&rel);
            if dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            bank.save(&dir)?;
            banks.insert(strategy.label(), (rel, bank));
        }
        for (label, (rel, bank)) in banks {
            self.note_tree(&rel)?;
            self.banks.insert(label, bank);
        }
        Ok(())
    }

    fn bank(&mut self, label: &str) -> Result<&ModelBank> {
        if !self.banks.contains_key(label) {
            let b = ModelBank::load(&self.path(&format!("banks/{label}")))?;
            self.banks.insert(label.to_string(), b);
        }
        Ok(&self.banks[label])
    }

    fn methods(&self) -> Vec<String> {
        let mut m = vec![ERM.to_string()];
        m.extend(self.strategies().iter().map(Strategy::label));
        m
    }

    fn load_all(&mut self) -> Result<()> {
        self.data()?;
        self.base()?;
        for m in self.methods().into_iter().skip(1) {
            self.bank(&m)?;
        }
        Ok(())
    }

    fn backbone(&self, method: &str) -> Backbone<'_> {
        if method == ERM {
            Backbone::Base(self.base.as_ref().expect("loaded"))
        } else {
            Backbone::Bank {
                bank: &self.banks[method],
                routing: self.cfg.stage2.routing,
            }
        }
    }

    fn phase_classifier(&mut self) -> Result<Option<Selection>> {
        let cfg = self.cfg;
        self.load_all()?;
        let splits = &self.data.as_ref().expect("loaded").splits;
        let mut val_auroc = Vec::new();
        let mut files = Vec::new();
        for method in self.methods() {
            let bb = self.backbone(&method);
            let clf = train_classifier(bb, &splits.train, &cfg.classifier, sub_seed(cfg.seed, 3))?;
            let val = predict(bb, &clf, &splits.val)?;
            let a = auroc(&val.scores, &splits.val.labels)?;
            log::info!("classifier {method}: val AUROC {a:.4}");
            let rel = format!("classifiers/{method}.json");
            clf.save(&self.path(&rel))?;
            let prel = format!("predictions/{method}_val.csv");
            val.write_csv(&self.path(&prel))?;
            files.push(rel);
            files.push(prel);
            val_auroc.push((method, a));
        }
        let jtt: Vec<(String, f64)> = val_auroc
            .iter()
            .filter(|(m, _)| m.starts_with("jtt_"))
            .cloned()
            .collect();
        let selection = if jtt.is_empty() {
            None
        } else {
            // first best wins, so grid order breaks ties
            let mut best = 0;
            for (i, (_, a)) in jtt.iter().enumerate() {
                if *a > jtt[best].1 {
                    best = i;
                }
            }
            let s = Selection {
                selected: jtt[best].0.clone(),
                candidates: jtt,
            };
            crate::util::write_json(&self.path("selection.json"), &s)?;
            files.push("selection.json".into());
            Some(s)
        };
        self.written.extend(files);
        Ok(selection)
    }

    fn phase_eval(&mut self) -> Result<Vec<MethodReport>> {
        let cfg = self.cfg;
        self.load_all()?;
        let test = &self.data.as_ref().expect("loaded").splits.test;
        let mut reports = Vec::new();
        let mut files = Vec::new();
        for method in self.methods() {
            let clf = Classifier::load(&self.path(&format!("classifiers/{method}.json")))?;
            let preds: Predictions = predict(self.backbone(&method), &clf, test)?;
            let rel = format!("predictions/{method}_test.csv");
            preds.write_csv(&self.path(&rel))?;
            files.push(rel);
            let r = MethodReport::build(&method, "test", &preds, test, cfg.eval.delta, cfg.eval.min_support)?;
            log::info!(
                "eval {method}: accuracy {:.4} f1 {:.4} AUROC {:.4}",
                r.metrics.accuracy,
                r.metrics.f1,
                r.metrics.auroc.unwrap_or(f64::NAN)
            );
            reports.push(r);
        }
        let out = self.path("reports");
        for p in emit_report(&reports, &out, &cfg.eval.formats)? {
            let rel = p.strip_prefix(&self.dir).expect("inside run dir");
            files.push(rel_string(rel));
        }
        self.written.extend(files);
        Ok(reports)
    }
}

fn rel_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn collect_files(dir: &Path, rel: &str, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let child = format!("{rel}/{name}");
        if entry.file_type()?.is_dir() {
            collect_files(&entry.path(), &child, out)?;
        } else if !name.ends_with(".tmp") {
            out.push(child);
        }
    }
    Ok(())
}

fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss"])?;
    for (e, l) in history.iter().enumerate() {
        w.write_record([(e + 1).to_string(), l.to_string()])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    crate::util::write_atomic(path, &bytes)
}

/// Runs every phase up to `opts.until`, skipping phases whose recorded
/// configuration and artifacts are unchanged.
pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let mut run = Run::open(cfg)?;
    let until = opts.until.unwrap_or(Phase::Eval);
    let (mut ran, mut skipped) = (Vec::new(), Vec::new());
    let mut reports = Vec::new();
    let mut selection = None;
    let mut redo = false;
    for phase in Phase::ALL.into_iter().filter(|&p| p <= until) {
        if !redo && run.up_to_date(phase, opts.overwrite)? {
            log::info!("phase {phase}: up to date");
            skipped.push(phase);
            continue;
        }
        // everything downstream of a redone phase is stale
        redo = true;
        run.forget_from(phase);
        run.save_manifest()?;
        log::info!("phase {phase}: running");
        match phase {
            Phase::Data => run.phase_data()?,
            Phase::Stage1 => run.phase_stage1()?,
            Phase::Stage2 => run.phase_stage2()?,
            Phase::Classifier => selection = run.phase_classifier()?,
            Phase::Eval => reports = run.phase_eval()?,
        }
        run.finish(phase)?;
        ran.push(phase);
    }
    if until >= Phase::Classifier && selection.is_none() && run.path("selection.json").exists() {
        selection = Some(crate::util::read_json(&run.path("selection.json"))?);
    }
    if until >= Phase::Eval && reports.is_empty() {
        reports = crate::eval::read_reports(&run.path("reports/report.json")).unwrap_or_default();
    }
    Ok(RunSummary {
        out_dir: run.dir.clone(),
        ran,
        skipped,
        methods: run.methods(),
        reports,
        selection,
    })
}
