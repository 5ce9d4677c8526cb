use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lapool_core::attribution::{explain, Target};
use lapool_core::dot;
use lapool_core::gradcheck::{run_all, table, CheckResult};
use lapool_core::graph::Graph;
use lapool_core::lapool::{lapool_layer, LaPool};
use lapool_core::nn::ParamStore;
use lapool_core::pipeline::dataset::motif_nodes;
use lapool_core::pipeline::{evaluate_splits, metrics_csv, train_new, Dataset, Model};
use lapool_core::signal::{plot_data, run_demo};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{PsiInit, RunConfig};
use crate::error::{CliError, Result};

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, &s)
}

fn require<'a>(value: &'a Option<PathBuf>, name: &'static str) -> Result<&'a Path> {
    value.as_deref().ok_or(CliError::MissingInput(name))
}

fn load_model(path: &Path) -> Result<(Model, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let model = Model::from_json(&text)?;
    let id = format!("{:x}", Sha256::digest(text.as_bytes()));
    Ok((model, id[..16].to_string()))
}

fn read_graph(path: &Path) -> Result<Graph> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(Graph::read(path)?)
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    if !path.join("manifest.json").exists() {
        return Err(CliError::io(path.join("manifest.json"), std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(Dataset::read(path)?)
}

pub fn gen_data(config: &RunConfig, out: &Path) -> Result<String> {
    let c = &config.gen_data;
    let dataset = Dataset::generate(&c.task, c.count)?;
    dataset.write(out, Some(&c.task))?;
    Ok(format!("wrote {} graphs to {}", c.count, out.display()))
}

pub fn train(config: &RunConfig, out: &Path) -> Result<String> {
    let dataset = read_dataset(require(&config.dataset, "dataset")?)?;
    let (model, report) = train_new(&dataset, &config.train)?;
    model.save(out.join("model.json"))?;
    write_json(&out.join("report.json"), &report)?;
    write(&out.join("history.csv"), &report.history_csv()?)?;
    write(&out.join("metrics.csv"), &metrics_csv(&report.final_metrics)?)?;
    let best = report.best_epoch;
    Ok(format!("trained {} epochs (kept epoch {best}); metrics in {}", report.epochs_run, out.display()))
}

pub fn eval(config: &RunConfig, out: &Path) -> Result<String> {
    let (model, _) = load_model(require(&config.checkpoint, "checkpoint")?)?;
    let dataset = read_dataset(require(&config.dataset, "dataset")?)?;
    let evaluations = evaluate_splits(&model, &dataset)?;
    write_json(&out.join("eval.json"), &evaluations)?;
    let csv = metrics_csv(&evaluations)?;
    write(&out.join("metrics.csv"), &csv)?;
    Ok(csv.trim_end().to_string())
}

#[derive(Serialize)]
struct PoolResult<'a> {
    centroids: &'a [usize],
    affinity: Vec<Vec<f64>>,
    pooled_features: Vec<Vec<f64>>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn pool(config: &RunConfig, out: &Path) -> Result<String> {
    let g = read_graph(require(&config.graph, "graph")?)?;
    let section = &config.pool;
    let d = g.feature_dim();
    let layer = LaPool::new("pool", d, section.layer);
    let mut params = ParamStore::new();
    match section.psi {
        PsiInit::Identity => {
            params.insert("pool.psi.weight", Array2::eye(d));
            params.insert("pool.psi.bias", Array2::zeros((1, d)));
        }
        PsiInit::Glorot => layer.psi.init(&mut params, &mut ChaCha8Rng::seed_from_u64(section.seed)),
    }
    let (pooled, px, assignment) = lapool_layer(&g, g.node_features(), &layer, &params)?;
    pooled.write(out.join("pooled.json"))?;
    write_json(
        &out.join("assignment.json"),
        &PoolResult { centroids: &assignment.centroids, affinity: rows(&assignment.affinity), pooled_features: rows(&px) },
    )?;
    write(&out.join("pooled.dot"), &dot::pooled_graph(&pooled, &assignment.centroids))?;
    write(&out.join("overview.dot"), &dot::pooling_overview(&g, &assignment, &pooled))?;
    Ok(format!("pooled {} nodes into {} (centroids {:?})", g.n(), pooled.n(), assignment.centroids))
}

pub fn explain_cmd(config: &RunConfig, out: &Path) -> Result<String> {
    let (model, id) = load_model(require(&config.checkpoint, "checkpoint")?)?;
    let g = read_graph(require(&config.graph, "graph")?)?;
    let section = &config.explain;
    let mask: Option<Vec<bool>> = match section.target {
        Target::Logit { label } if g.node_labels.is_some() => Some(motif_nodes(&g, label)),
        _ => g.motif_mask.as_ref().map(|m| m.iter().map(|&v| v != 0).collect()),
    };
    let (_, report) = explain(&model, &g, section.target, section.ig, mask.as_deref(), &id)?;
    write_json(&out.join("attribution.json"), &report)?;
    let mask_u8: Option<Vec<u8>> = mask.as_ref().map(|m| m.iter().map(|&b| u8::from(b)).collect());
    write(&out.join("attribution.dot"), &dot::attribution_map(&g, &report.node_importance, mask_u8.as_deref()))?;
    let score = report.pr_auc.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    Ok(format!(
        "attribution over {} nodes, completeness error {:.2e}, PR-AUC {score}",
        g.n(),
        report.feature_completeness.relative_error
    ))
}

pub fn signal_demo(config: &RunConfig, out: &Path) -> Result<String> {
    let c = &config.signal_demo;
    let report = run_demo(c)?;
    write(&out.join("signal_demo.csv"), &report.to_csv()?)?;
    write_json(&out.join("summary.json"), &report.summary)?;
    if let Some(&k) = c.ks().first() {
        write_json(&out.join("plot.json"), &plot_data(c, c.first_seed, k)?)?;
    }
    let lines: Vec<String> = report
        .summary
        .iter()
        .map(|s| {
            format!(
                "k={}: max wins {:.1}%, median |dE| max {:.4}, min {:.4}",
                s.k,
                100.0 * s.max_win_rate,
                s.median_abs_delta_max,
                s.median_abs_delta_min
            )
        })
        .collect();
    Ok(lines.join("\n"))
}

pub fn gradcheck(config: &RunConfig, out: &Path) -> Result<String> {
    let results: Vec<CheckResult> = run_all(&config.gradcheck)?;
    let text = table(&results);
    write(&out.join("gradcheck.txt"), &text)?;
    let by_name: BTreeMap<&str, &CheckResult> = results.iter().map(|r| (r.name.as_str(), r)).collect();
    write_json(&out.join("gradcheck.json"), &by_name)?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        print!("{text}");
        return Err(CliError::GradcheckFailed(failed.join(", ")));
    }
    Ok(text.trim_end().to_string())
}
