//! Dataset ingestion, deterministic stratified splitting, and the synthetic
//! corpus generator.

mod synth;
mod templates;

pub use synth::{
    insert_dead_code, jitter_literals, mutate_template, permute_statements, rename_identifiers,
    rename_mutant, synthesize, SynthConfig,
};
pub use templates::{task_templates, DEFAULT_TEMPLATES, SIMILAR_GROUP_A, SIMILAR_GROUP_B};

use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frontend::parse_source;
use crate::graph::{build_fda, FdaGraph};

/// One labeled source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledProgram {
    pub source_id: String,
    pub task_id: usize,
    pub source: String,
}

/// A file that failed to enter the corpus, and why.
#[derive(Debug, Clone)]
pub struct SkipRecord {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no task directories with .mc files under {0}")]
    NoTasksFound(PathBuf),
    #[error("class {class} has {size} programs; at least {min} required")]
    ClassTooSmall {
        class: usize,
        size: usize,
        min: usize,
    },
}

/// Reads a `root/<task>/<name>.mc` corpus. Task directories map to dense
/// 0-based class ids in sorted name order; files that fail to parse are
/// skipped and reported.
pub fn ingest(root: &Path) -> Result<(Vec<LabeledProgram>, Vec<SkipRecord>), CorpusError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut programs = Vec::new();
    let mut skipped = Vec::new();
    let mut class = 0usize;
    for dir in dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "mc"))
            .collect();
        files.sort();
        if files.is_empty() {
            continue;
        }
        for file in files {
            let source = fs::read_to_string(&file)?;
            match parse_source(&source) {
                Ok(_) => programs.push(LabeledProgram {
                    source_id: file
                        .strip_prefix(root)
                        .unwrap_or(&file)
                        .to_string_lossy()
                        .into_owned(),
                    task_id: class,
                    source,
                }),
                Err(e) => skipped.push(SkipRecord {
                    path: file,
                    reason: e.to_string(),
                }),
            }
        }
        class += 1;
    }
    if class == 0 {
        return Err(CorpusError::NoTasksFound(root.to_path_buf()));
    }
    Ok((programs, skipped))
}

/// Writes the corpus in the on-disk layout `dir/<task>/<name>.mc`, plus a
/// `manifest.json` recording the generator settings.
pub fn write_corpus(
    dir: &Path,
    programs: &[LabeledProgram],
    manifest: &SynthConfig,
) -> Result<(), CorpusError> {
    for p in programs {
        let path = dir.join(&p.source_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &p.source)?;
    }
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest).expect("manifest serialization"),
    )?;
    Ok(())
}

/// Train/valid/test partition.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<LabeledProgram>,
    pub valid: Vec<LabeledProgram>,
    pub test: Vec<LabeledProgram>,
}

/// (train, valid, test) membership produced by a stratified split.
pub type SplitParts<T> = (Vec<T>, Vec<T>, Vec<T>);

/// Stratified 3:1:1 split over any labeled items. Per class, `floor(n/5)`
/// items go to valid and test each and the remainder to train; membership is
/// a seeded per-class shuffle.
pub fn split_items<T: Clone>(
    items: &[T],
    class_of: impl Fn(&T) -> usize,
    seed: u64,
) -> Result<SplitParts<T>, CorpusError> {
    use std::collections::BTreeMap;
    let mut by_class: BTreeMap<usize, Vec<&T>> = BTreeMap::new();
    for p in items {
        by_class.entry(class_of(p)).or_default().push(p);
    }
    let (mut train, mut valid, mut test) = (vec![], vec![], vec![]);
    for (&class, members) in &by_class {
        if members.len() < 5 {
            return Err(CorpusError::ClassTooSmall {
                class,
                size: members.len(),
                min: 5,
            });
        }
        let mut order: Vec<usize> = (0..members.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let fifth = members.len() / 5;
        for (i, &idx) in order.iter().enumerate() {
            let p = members[idx].clone();
            if i < fifth {
                valid.push(p);
            } else if i < 2 * fifth {
                test.push(p);
            } else {
                train.push(p);
            }
        }
    }
    Ok((train, valid, test))
}

/// Stratified 3:1:1 split of labeled programs.
pub fn split(programs: &[LabeledProgram], seed: u64) -> Result<Splits, CorpusError> {
    let (train, valid, test) = split_items(programs, |p| p.task_id, seed)?;
    Ok(Splits { train, valid, test })
}

/// Stratified 3:1:1 split of pre-built labeled graphs, with the same
/// membership rule as `split` when item order matches.
pub fn split_graphs(graphs: &[FdaGraph], seed: u64) -> Result<SplitParts<FdaGraph>, CorpusError> {
    split_items(graphs, |g| g.label.unwrap_or(0), seed)
}

/// Builds FDA graphs for a program list, reporting failures as skips.
pub fn build_graphs(programs: &[LabeledProgram]) -> (Vec<FdaGraph>, Vec<SkipRecord>) {
    let mut graphs = Vec::with_capacity(programs.len());
    let mut skipped = Vec::new();
    for p in programs {
        let built = parse_source(&p.source)
            .map_err(|e| e.to_string())
            .and_then(|ast| build_fda(&ast, p.source_id.as_str()).map_err(|e| e.to_string()));
        match built {
            Ok(mut g) => {
                g.label = Some(p.task_id);
                graphs.push(g);
            }
            Err(reason) => skipped.push(SkipRecord {
                path: PathBuf::from(&p.source_id),
                reason,
            }),
        }
    }
    (graphs, skipped)
}
