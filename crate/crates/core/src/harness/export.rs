use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::RunReport;
use super::model::save_model;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// `iteration,layer_index,alpha` rows for one seed of the report.
pub fn alpha_trace_csv(report: &RunReport, seed: u64) -> Result<String> {
    let run = report
        .runs
        .iter()
        .find(|r| r.seed == seed)
        .ok_or_else(|| Error::Evaluation(format!("no run for seed {seed} in report")))?;
    let mut out = String::from("iteration,layer_index,alpha\n");
    for p in &run.alpha_trace {
        writeln!(out, "{},{},{}", p.iteration, p.layer, p.alpha).unwrap();
    }
    Ok(out)
}

pub fn export_alpha_trace(report: &RunReport, seed: u64, path: &Path) -> Result<()> {
    write_text(path, &alpha_trace_csv(report, seed)?)
}

/// One row per seed and epoch; alpha columns follow the DA-layer order.
pub fn metrics_csv(report: &RunReport) -> String {
    let layers = report
        .runs
        .first()
        .and_then(|r| r.epochs.first())
        .map_or(0, |e| e.alphas.len());
    let mut out = String::from("seed,epoch,l_source,l_target,total,target_accuracy,learning_rate");
    for l in 0..layers {
        write!(out, ",alpha_{l}").unwrap();
    }
    out.push('\n');
    for r in &report.runs {
        for e in &r.epochs {
            write!(
                out,
                "{},{},{},{},{},{},{}",
                r.seed, e.epoch, e.l_source, e.l_target, e.total, e.target_accuracy, e.learning_rate
            )
            .unwrap();
            for a in &e.alphas {
                write!(out, ",{a}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn summary_csv(report: &RunReport) -> String {
    let mut out = String::from("seed,target_accuracy,source_accuracy\n");
    for r in &report.runs {
        writeln!(out, "{},{},{}", r.seed, r.target_accuracy, r.source_accuracy).unwrap();
    }
    let (t, s) = (report.target_accuracy, report.source_accuracy);
    writeln!(out, "mean,{},{}", t.mean, s.mean).unwrap();
    writeln!(out, "std,{},{}", t.std, s.std).unwrap();
    out
}

/// Writes the resolved config, the report (JSON plus CSV views), one alpha
/// trace per seed and one model file per seed. Returns the files written.
pub fn write_run_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    report: &RunReport,
    models: &[Network],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = dir.join(name);
        write_text(&p, &text)?;
        written.push(p);
        Ok(())
    };
    put("config.toml".into(), cfg.to_toml())?;
    put(
        "report.json".into(),
        serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    put("metrics.csv".into(), metrics_csv(report))?;
    put("summary.csv".into(), summary_csv(report))?;
    for r in &report.runs {
        put(format!("alpha_trace_seed{}.csv", r.seed), alpha_trace_csv(report, r.seed)?)?;
    }
    for (r, m) in report.runs.iter().zip(models) {
        let p = dir.join(format!("model_seed{}.bin", r.seed));
        save_model(m, &p)?;
        written.push(p);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// How histogram channels are picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSampling {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelHistogram {
    pub channel: usize,
    /// `bins + 1` increasing edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub source_counts: Vec<usize>,
    pub target_counts: Vec<usize>,
}

fn bin_of(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((v - lo) / width).floor() as usize).min(bins - 1)
}

/// Histograms of features taken right after DA-layer `layer`, in FROZEN
/// mode, over whole source and target sets, for randomly sampled channels.
/// Both domains share bin edges per channel.
pub fn compute_histograms(
    net: &Network,
    source: &Tensor,
    target: &Tensor,
    layer: usize,
    bins: usize,
    sampling: ChannelSampling,
) -> Result<Vec<ChannelHistogram>> {
    if bins == 0 {
        return Err(Error::Config("histograms need at least one bin".into()));
    }
    if !net.is_frozen() {
        return Err(Error::State("histograms are taken in FROZEN mode".into()));
    }
    let hs = net.da_activations(source, source.batch(), layer)?;
    let ht = net.da_activations(target, 0, layer)?;
    let channels = hs.channels();
    let picked = {
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let mut idx = sample(&mut rng, channels, sampling.count.min(channels)).into_vec();
        idx.sort_unstable();
        idx
    };
    let column = |h: &Tensor, c: usize| -> Vec<f64> { (0..h.batch()).map(|i| h.get2(i, c)).collect() };

    let mut out = Vec::with_capacity(picked.len());
    for c in picked {
        let (vs, vt) = (column(&hs, c), column(&ht, c));
        let (mut lo, mut hi) = vs
            .iter()
            .chain(&vt)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        } else if lo == hi {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let width = (hi - lo) / bins as f64;
        let count = |vals: &[f64]| {
            let mut counts = vec![0; bins];
            vals.iter().for_each(|&v| counts[bin_of(v, lo, width, bins)] += 1);
            counts
        };
        out.push(ChannelHistogram {
            channel: c,
            edges: (0..=bins).map(|b| if b == bins { hi } else { lo + b as f64 * width }).collect(),
            source_counts: count(&vs),
            target_counts: count(&vt),
        });
    }
    Ok(out)
}

pub fn histograms_csv(hists: &[ChannelHistogram], layer: usize, sampling: ChannelSampling) -> String {
    let mut out = format!(
        "# layer={layer} sampled_channels={} sampling_seed={}\nchannel,bin_left,bin_right,source_count,target_count\n",
        hists.len(),
        sampling.seed
    );
    for h in hists {
        for b in 0..h.source_counts.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                h.channel,
                h.edges[b],
                h.edges[b + 1],
                h.source_counts[b],
                h.target_counts[b]
            )
            .unwrap();
        }
    }
    out
}

pub fn export_histograms(
    net: &Network,
    source: &Tensor,
    target: &Tensor,
    layer: usize,
    bins: usize,
    sampling: ChannelSampling,
    path: &Path,
) -> Result<Vec<ChannelHistogram>> {
    let hists = compute_histograms(net, source, target, layer, bins, sampling)?;
    write_text(path, &histograms_csv(&hists, layer, sampling))?;
    Ok(hists)
}
