//! End-to-end run: sample data, fit the prior, train, evaluate.

use std::path::Path;
use std::sync::Arc;

use crate::body::{build_template, sample_dataset, sample_poses, write_dataset, BodyTemplate, TrainingSample};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport};
use crate::mesh::{build_mesh_graph, uniform_laplacian};
use crate::net::BodyModel;
use crate::prior::{fit_prior_from_meshes, write_prior, GmmPrior, PriorFitReport};
use crate::train::{train, TrainOutcome, TrainOutput};

/// Fits the prior on `count` meshes from a dedicated pose stream.
pub fn fit_template_prior(
    template: &BodyTemplate,
    config: &crate::config::PriorConfig,
) -> Result<(GmmPrior, PriorFitReport)> {
    let graph = build_mesh_graph(&template.mesh)?;
    let (lap, _) = uniform_laplacian(&graph, &template.mesh.vertices)?;
    let meshes: Vec<_> = sample_poses(template, config.meshes, config.pose_seed)?
        .into_iter()
        .map(|p| p.vertices)
        .collect();
    fit_prior_from_meshes(&lap, &meshes, &config.gmm)
}

pub struct Datasets {
    pub train: Vec<TrainingSample<f32>>,
    pub eval: Vec<TrainingSample<f32>>,
}

pub fn sample_splits(template: &BodyTemplate, config: &PipelineConfig) -> Result<Datasets> {
    let d = &config.data;
    let mut train = sample_dataset::<f32>(template, d.train_count + d.eval_count, d.seed, &d.sample)?;
    let eval = train.split_off(d.train_count);
    Ok(Datasets { train, eval })
}

pub struct PipelineOutcome {
    pub prior: Arc<GmmPrior>,
    pub prior_report: PriorFitReport,
    pub training: TrainOutcome<f32>,
    /// Final scores on the held-out split, if it is nonempty.
    pub eval: Option<EvalReport>,
}

/// Runs every stage. With `out`, writes `config.json`, `data/{train,eval}`,
/// `prior.lmp`, `metrics.jsonl`, `checkpoint/` and `report.json` under it.
pub fn run_pipeline(config: &PipelineConfig, out: Option<&Path>) -> Result<PipelineOutcome> {
    config.validate()?;
    let template = build_template(config.data.template_seed)?;
    let data = sample_splits(&template, config)?;
    let (prior, prior_report) = fit_template_prior(&template, &config.prior)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
        let d = &config.data;
        write_dataset(&dir.join("data/train"), &data.train, d.seed, d.template_seed, &d.sample)?;
        if !data.eval.is_empty() {
            write_dataset(&dir.join("data/eval"), &data.eval, d.seed, d.template_seed, &d.sample)?;
        }
        write_prior(&dir.join("prior.lmp"), &prior)?;
    }
    let prior = Arc::new(prior);
    let model = BodyModel::<f32>::from_template(&template)?;
    let eval_set = (!data.eval.is_empty()).then_some(data.eval.as_slice());
    let output = TrainOutput {
        dir: out.map(Path::to_path_buf),
    };
    let training = train(&config.train, &data.train, eval_set, prior.clone(), &model, &output)?;
    let eval = match eval_set {
        Some(set) => Some(evaluate(&training.params, &model, set, &config.train.render)?),
        None => None,
    };
    if let (Some(dir), Some(report)) = (out, &eval) {
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    }
    Ok(PipelineOutcome {
        prior,
        prior_report,
        training,
        eval,
    })
}
