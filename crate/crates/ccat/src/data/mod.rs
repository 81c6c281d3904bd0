//! Manifest ingestion, summary audio embeddings and the deterministic
//! Kennard-Stone train/dev partition, applied per corpus.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CcatError, Result};
use crate::frontend::{mel_log_magnitude, FeatureConfig, Waveform};

/// Header line written to split manifests.
pub const SPLIT_PROVENANCE: &str = "# ccat-split v1 fraction={frac} embedder=logmel96";

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub path: PathBuf,
    pub mos: f64,
    pub ci95: Option<f64>,
    pub tags: Vec<String>,
}

impl UtteranceRecord {
    /// Corpus grouping label: the first tag, or "" when untagged.
    pub fn corpus(&self) -> &str {
        self.tags.first().map(String::as_str).unwrap_or("")
    }
}

/// Parse a manifest CSV with header `id,path,mos[,ci95][,tags]`. Lines
/// starting with `#` are comments; tags are `;`-separated within the cell.
pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CcatError::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CcatError::Parse(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_col, path_col, mos_col) = match (col("id"), col("path"), col("mos")) {
        (Some(i), Some(p), Some(m)) => (i, p, m),
        _ => {
            return Err(CcatError::Parse(format!(
                "{}: header must contain id,path,mos",
                path.display()
            )))
        }
    };
    let ci_col = col("ci95");
    let tags_col = col("tags");

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| CcatError::Parse(format!("{}: {e}", path.display())))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<&str> {
            row.get(i).ok_or_else(|| {
                CcatError::Parse(format!("{}: line {line}: missing column {i}", path.display()))
            })
        };
        let id = field(id_col)?.to_string();
        if id.is_empty() {
            return Err(CcatError::Parse(format!(
                "{}: line {line}: empty id",
                path.display()
            )));
        }
        if !seen.insert(id.clone()) {
            return Err(CcatError::Parse(format!(
                "{}: line {line}: duplicate id {id}",
                path.display()
            )));
        }
        let wav_path = PathBuf::from(field(path_col)?);
        let mos: f64 = field(mos_col)?.parse().map_err(|_| {
            CcatError::Parse(format!("{}: line {line}: bad mos value", path.display()))
        })?;
        if !(1.0..=5.0).contains(&mos) {
            return Err(CcatError::Label(format!(
                "{}: line {line}: MOS {mos} outside [1, 5]",
                path.display()
            )));
        }
        let ci95 = match ci_col.and_then(|c| row.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| {
                    CcatError::Parse(format!("{}: line {line}: bad ci95 value", path.display()))
                })?;
                if v < 0.0 {
                    return Err(CcatError::Parse(format!(
                        "{}: line {line}: negative ci95",
                        path.display()
                    )));
                }
                Some(v)
            }
            None => None,
        };
        let tags = tags_col
            .and_then(|c| row.get(c))
            .map(|s| {
                s.split(';')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        records.push(UtteranceRecord {
            id,
            path: wav_path,
            mos,
            ci95,
            tags,
        });
    }
    Ok(records)
}

/// Write a manifest, optionally preceded by a `#` provenance comment.
pub fn write_manifest(path: &Path, records: &[UtteranceRecord], comment: Option<&str>) -> Result<()> {
    let mut out = Vec::new();
    if let Some(c) = comment {
        writeln!(out, "{c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "path", "mos", "ci95", "tags"])
        .map_err(|e| CcatError::Parse(e.to_string()))?;
    for r in records {
        w.write_record([
            r.id.as_str(),
            &r.path.display().to_string(),
            &r.mos.to_string(),
            &r.ci95.map(|v| v.to_string()).unwrap_or_default(),
            &r.tags.join(";"),
        ])
        .map_err(|e| CcatError::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CcatError::Parse(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Fixed-length summary of one recording: per-band mean and population
/// standard deviation of the 48-band log-mel spectrogram, 96 values total.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryEmbedding(pub Vec<f64>);

impl SummaryEmbedding {
    pub const LEN: usize = 96;
}

pub fn summary_embedding(w: &Waveform) -> Result<SummaryEmbedding> {
    let cfg = FeatureConfig::mel();
    let spec = mel_log_magnitude::<f64>(w, &cfg)?;
    let (t, bands) = (spec.num_frames(), spec.num_bins());
    let mut vector = Vec::with_capacity(2 * bands);
    let mut stds = Vec::with_capacity(bands);
    for b in 0..bands {
        let mean = (0..t).map(|ti| spec.at(ti, b)).sum::<f64>() / t as f64;
        let var = (0..t).map(|ti| (spec.at(ti, b) - mean).powi(2)).sum::<f64>() / t as f64;
        vector.push(mean);
        stds.push(var.sqrt());
    }
    vector.extend(stds);
    debug_assert_eq!(vector.len(), SummaryEmbedding::LEN);
    Ok(SummaryEmbedding(vector))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Classic Kennard-Stone selection: seed with the maximum-distance pair,
/// then repeatedly add the point whose minimum distance to the selected set
/// is largest, breaking ties by lowest index. Returns `(train, dev)` index
/// lists; `train` keeps selection order.
pub fn kennard_stone_split(
    embeddings: &[Vec<f64>],
    train_fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = embeddings.len();
    if n < 2 {
        return Err(CcatError::TooFewPoints(format!(
            "kennard-stone needs at least 2 points, got {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CcatError::Config(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let width = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != width) {
        return Err(CcatError::Shape("embeddings of mixed widths".into()));
    }
    let target = ((train_fraction * n as f64 - 1e-9).ceil() as usize)
        .clamp(2, n);

    // seed: the pair at maximum distance, lexicographically first on ties
    let (mut bi, mut bj, mut best) = (0usize, 1usize, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(&embeddings[i], &embeddings[j]);
            if d > best {
                (bi, bj, best) = (i, j, d);
            }
        }
    }
    let mut selected = vec![bi, bj];
    let mut in_train = vec![false; n];
    in_train[bi] = true;
    in_train[bj] = true;
    // running minimum distance of every point to the selected set
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| {
            squared_distance(&embeddings[i], &embeddings[bi])
                .min(squared_distance(&embeddings[i], &embeddings[bj]))
        })
        .collect();

    while selected.len() < target {
        let (mut pick, mut best) = (usize::MAX, f64::NEG_INFINITY);
        for i in 0..n {
            if !in_train[i] && min_dist[i] > best {
                best = min_dist[i];
                pick = i;
            }
        }
        in_train[pick] = true;
        selected.push(pick);
        for i in 0..n {
            if !in_train[i] {
                let d = squared_distance(&embeddings[i], &embeddings[pick]);
                if d < min_dist[i] {
                    min_dist[i] = d;
                }
            }
        }
    }
    let dev: Vec<usize> = (0..n).filter(|i| !in_train[*i]).collect();
    Ok((selected, dev))
}

/// Split records into train/dev, Kennard-Stone within each corpus label.
/// `embed` maps a record to its embedding vector (the default pipeline loads
/// the file and applies [`summary_embedding`]).
pub fn split_corpus<F>(
    records: &[UtteranceRecord],
    train_fraction: f64,
    mut embed: F,
) -> Result<(Vec<UtteranceRecord>, Vec<UtteranceRecord>)>
where
    F: FnMut(&UtteranceRecord) -> Result<Vec<f64>>,
{
    let mut corpora: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match corpora.iter_mut().find(|(label, _)| *label == r.corpus()) {
            Some((_, idxs)) => idxs.push(i),
            None => corpora.push((r.corpus(), vec![i])),
        }
    }
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (_, idxs) in corpora {
        let embeddings: Vec<Vec<f64>> = idxs
            .iter()
            .map(|&i| embed(&records[i]))
            .collect::<Result<_>>()?;
        let (tr, dv) = kennard_stone_split(&embeddings, train_fraction)?;
        train.extend(tr.into_iter().map(|k| records[idxs[k]].clone()));
        dev.extend(dv.into_iter().map(|k| records[idxs[k]].clone()));
    }
    Ok((train, dev))
}

/// Provenance header for split manifests.
pub fn split_header(train_fraction: f64) -> String {
    SPLIT_PROVENANCE.replace("{frac}", &format!("{train_fraction}"))
}
