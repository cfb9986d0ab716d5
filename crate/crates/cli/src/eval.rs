use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use uses_core::datasim::manifest::resolve;
use uses_core::datasim::{load_manifest, LoadedExample, ManifestEntry};
use uses_core::dsp::{read_wav, AudioBuffer};
use uses_core::losses::{permutations, sdr, si_snr, si_snr_improvement, MetricRecord};
use uses_core::model::{write_atomic, MemoryMode, UsesModel};
use uses_core::{Result, UsesError};

use crate::infer::load_model;

/// Utterance id of the per-metric mean lines.
pub const AGGREGATE_ID: &str = "mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Metric {
    SiSnr,
    Sdr,
    SiSnri,
}

impl Metric {
    fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "si_snr" => Ok(Metric::SiSnr),
            "sdr" => Ok(Metric::Sdr),
            "si_snri" => Ok(Metric::SiSnri),
            other => Err(UsesError::Config(format!(
                "unknown metric {other:?} (expected si_snr, sdr or si_snri)"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Metric::SiSnr => "si_snr",
            Metric::Sdr => "sdr",
            Metric::SiSnri => "si_snri",
        }
    }

    fn score(self, est: &[f64], mixture: &[f64], reference: &[f64]) -> Result<f64> {
        match self {
            Metric::SiSnr => si_snr(est, reference),
            Metric::Sdr => sdr(est, reference),
            Metric::SiSnri => si_snr_improvement(est, mixture, reference),
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    utterance_id: &'a str,
    error: String,
}

/// (utterance id, estimate, reference) per scored source
type Scored = Vec<(String, Vec<f64>, Vec<f64>)>;

fn estimate(entry: &ManifestEntry, ex: &LoadedExample, base: &Path, model: Option<&UsesModel<f32>>) -> Result<AudioBuffer> {
    if let Some(p) = entry.estimate_path() {
        return read_wav(resolve(base, p));
    }
    let Some(model) = model else {
        return Err(UsesError::Config(format!(
            "{}: no estimate in the manifest and no --checkpoint given",
            entry.id()
        )));
    };
    match ex {
        LoadedExample::Enhance(m) => model.enhance(&m.mixture, m.mode()),
        LoadedExample::Separate(s) => model.enhance(&s.mixture, MemoryMode::Denoise),
    }
}

fn check_len(id: &str, est: &AudioBuffer, len: usize) -> Result<()> {
    if est.len() != len {
        return Err(UsesError::Shape(format!("{id}: estimate has {} samples, reference {len}", est.len())));
    }
    Ok(())
}

/// Pairs each reference with an estimate channel; separation uses the
/// permutation with the highest total SI-SNR.
fn pair(entry: &ManifestEntry, base: &Path, model: Option<&UsesModel<f32>>) -> Result<(Scored, Vec<f64>)> {
    let id = entry.id();
    let ex = entry.load(base)?;
    let est = estimate(entry, &ex, base, model)?;
    match &ex {
        LoadedExample::Enhance(m) => {
            let target = m.target(m.mode())?;
            check_len(id, &est, target.len())?;
            let scored = vec![(id.to_string(), est.channel(0).to_vec(), target.channel(0).to_vec())];
            Ok((scored, m.mixture.channel(0).to_vec()))
        }
        LoadedExample::Separate(s) => {
            let n = s.sources.channels();
            check_len(id, &est, s.sources.len())?;
            if est.channels() != n {
                return Err(UsesError::Shape(format!(
                    "{id}: {} estimated sources for {n} references",
                    est.channels()
                )));
            }
            let mut best: Option<(f64, Vec<usize>)> = None;
            for perm in permutations(n) {
                let mut total = 0.0;
                for (r, &e) in perm.iter().enumerate() {
                    total += si_snr(est.channel(e), s.sources.channel(r))?;
                }
                if best.as_ref().map_or(true, |(b, _)| total > *b) {
                    best = Some((total, perm));
                }
            }
            let perm = best.expect("at least one permutation").1;
            let scored = perm
                .iter()
                .enumerate()
                .map(|(r, &e)| (format!("{id}/s{r}"), est.channel(e).to_vec(), s.sources.channel(r).to_vec()))
                .collect();
            Ok((scored, s.mixture.channel(0).to_vec()))
        }
    }
}

fn score_entry(
    entry: &ManifestEntry,
    base: &Path,
    model: Option<&UsesModel<f32>>,
    metrics: &[Metric],
) -> Result<Vec<MetricRecord>> {
    let (scored, mixture) = pair(entry, base, model)?;
    let mut out = Vec::new();
    for (utt, est, reference) in &scored {
        for &m in metrics {
            out.push(MetricRecord::new(utt.clone(), m.name(), m.score(est, &mixture, reference)?));
        }
    }
    Ok(out)
}

pub fn run(manifest: &Path, checkpoint: Option<&Path>, metrics: &[String], output: Option<&Path>) -> Result<()> {
    let mut parsed = metrics.iter().map(|m| Metric::parse(m)).collect::<Result<Vec<_>>>()?;
    parsed.dedup();
    if parsed.is_empty() {
        return Err(UsesError::Config("no metrics requested".into()));
    }
    let model = checkpoint.map(load_model).transpose()?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = load_manifest(manifest)?;

    let mut text = Vec::new();
    let mut sums: BTreeMap<Metric, (f64, usize)> = BTreeMap::new();
    let mut first_err = None;
    let mut succeeded = 0;
    for entry in &entries {
        match score_entry(entry, base, model.as_ref(), &parsed) {
            Ok(records) => {
                succeeded += 1;
                for r in &records {
                    let m = Metric::parse(&r.metric)?;
                    let s = sums.entry(m).or_insert((0.0, 0));
                    s.0 += r.value;
                    s.1 += 1;
                    serde_json::to_writer(&mut text, r)?;
                    text.push(b'\n');
                }
            }
            Err(e) => {
                log::warn!("{}: {e}", entry.id());
                serde_json::to_writer(&mut text, &ErrorRecord { utterance_id: entry.id(), error: e.to_string() })?;
                text.push(b'\n');
                first_err.get_or_insert(e);
            }
        }
    }
    for (m, (sum, n)) in &sums {
        serde_json::to_writer(&mut text, &MetricRecord::new(AGGREGATE_ID, m.name(), sum / *n as f64))?;
        text.push(b'\n');
    }
    match output {
        Some(p) => write_atomic(p, &text)?,
        None => std::io::stdout().write_all(&text)?,
    }
    log::info!("scored {succeeded} of {} manifest entries", entries.len());
    match first_err {
        Some(e) if succeeded == 0 => Err(e),
        _ => Ok(()),
    }
}
