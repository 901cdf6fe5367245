//! Pipeline stages. Each reads its inputs, writes fixed-name artifacts under
//! the output directory and logs one summary line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mvsfuse_core::blending::{frequency_fuse, poisson_blend, PoissonMode};
use mvsfuse_core::evaluation::{aggregate, eval_scene, reports_to_json_lines, EvalReport};
use mvsfuse_core::filtering::{
    filter_mesh_faces, filter_outliers, filter_sky, merge_clouds, OutlierParams, SkyFilterParams,
};
use mvsfuse_core::geometry::Mat4;
use mvsfuse_core::io::{
    load_colmap_model, load_image, load_mask, load_mesh, load_point_cloud, save_colmap_model, save_image, save_mesh,
    save_point_cloud, ColmapModel, PlyFormat,
};
use mvsfuse_core::projection::{distribute_points, sample_uniform};
use mvsfuse_core::registration::{align_clouds, IcpParams};
use mvsfuse_core::PointCloud;

use crate::config::{BlendMethod, SceneConfig};

pub const PREPARED_CLOUD: &str = "prepared.ply";
pub const SPARSE_DIR: &str = "sparse";
pub const ALIGNED_CLOUD: &str = "aligned.ply";
pub const TRANSFORM_FILE: &str = "transform.txt";
pub const FILTERED_MESH: &str = "mesh_filtered.ply";
pub const BLENDED_DIR: &str = "blended";
pub const MERGED_CLOUD: &str = "merged.ply";
pub const EVAL_FILE: &str = "eval.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prepare,
    Align,
    Mesh,
    Blend,
    Merge,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Prepare,
        Stage::Align,
        Stage::Mesh,
        Stage::Blend,
        Stage::Merge,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Align => "align",
            Stage::Mesh => "mesh",
            Stage::Blend => "blend",
            Stage::Merge => "merge",
            Stage::Eval => "eval",
        }
    }

    pub fn is_configured(self, config: &SceneConfig) -> bool {
        match self {
            Stage::Prepare => config.prepare.is_some(),
            Stage::Align => config.align.is_some(),
            Stage::Mesh => config.mesh.is_some(),
            Stage::Blend => config.blend.is_some(),
            Stage::Merge => config.merge.is_some(),
            Stage::Eval => config.eval.is_some(),
        }
    }
}

/// A validated config together with the directory its relative paths start from.
pub struct StageContext<'a> {
    pub config: &'a SceneConfig,
    pub base: &'a Path,
}

impl StageContext<'_> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    fn output(&self, name: &str) -> Result<PathBuf> {
        let dir = self.output_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(dir.join(name))
    }
}

fn load_cloud(path: &Path) -> Result<PointCloud> {
    load_point_cloud(path).with_context(|| format!("loading {}", path.display()))
}

pub fn run_stage(stage: Stage, ctx: &StageContext) -> Result<()> {
    let start = Instant::now();
    let summary = match stage {
        Stage::Prepare => prepare(ctx)?,
        Stage::Align => align(ctx)?,
        Stage::Mesh => mesh(ctx)?,
        Stage::Blend => blend(ctx)?,
        Stage::Merge => merge(ctx)?,
        Stage::Eval => eval(ctx)?,
    };
    log::info!(
        "stage={} scene={} {summary} wall_ms={}",
        stage.name(),
        ctx.config.scene,
        start.elapsed().as_millis()
    );
    Ok(())
}

fn prepare(ctx: &StageContext) -> Result<String> {
    let cfg = ctx.config.prepare.as_ref().context("config has no prepare section")?;
    let cloud_path = ctx.resolve(&cfg.cloud);
    let mut cloud = load_cloud(&cloud_path)?;
    let loaded = cloud.len();
    if let Some(outliers) = cfg.outliers {
        cloud = filter_outliers(&cloud, &OutlierParams::from(outliers)).context("outlier filter")?;
    }
    let after_outliers = cloud.len();
    if let Some(sky) = cfg.sky {
        cloud = filter_sky(&cloud, &SkyFilterParams::from(sky)).context("sky filter")?.0;
    }
    let after_sky = cloud.len();
    if cloud.is_empty() {
        bail!("no points left after filtering {}", cloud_path.display());
    }
    if let Some(device) = &ctx.config.device {
        cloud = cloud.with_source(device.clone());
    }
    let cloud = sample_uniform(&cloud, ctx.config.sample_count, ctx.config.seed)?;

    let cameras_dir = ctx.resolve(&cfg.cameras);
    let (input_model, poses) =
        load_colmap_model(&cameras_dir).with_context(|| format!("loading camera model {}", cameras_dir.display()))?;
    let names: Vec<String> = input_model.images.values().map(|i| i.name.clone()).collect();
    let distribution = distribute_points(&cloud, &poses, ctx.config.out_of_range_policy.into())?;
    let model = ColmapModel::from_distribution(&distribution, &poses, &names)?;
    let observations: usize = distribution.tracks.iter().map(|t| t.observations.len()).sum();

    save_point_cloud(&cloud, ctx.output(PREPARED_CLOUD)?, PlyFormat::BinaryLittleEndian)?;
    save_colmap_model(&model, ctx.output(SPARSE_DIR)?)?;
    Ok(format!(
        "points_in={loaded} after_outliers={after_outliers} after_sky={after_sky} sampled={} cameras={} observations={observations}",
        cloud.len(),
        poses.len()
    ))
}

/// `transform.txt`: the 4×4 homogeneous matrix, one row per line.
pub fn format_transform(m: &Mat4) -> String {
    let mut out = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{}", m[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

fn align(ctx: &StageContext) -> Result<String> {
    let cfg = ctx.config.align.as_ref().context("config has no align section")?;
    let source = load_cloud(&ctx.resolve(&cfg.source_cloud))?;
    let target = load_cloud(&ctx.resolve(&cfg.target_cloud))?;
    let load_poses = |p: &Path| {
        let dir = ctx.resolve(p);
        load_colmap_model(&dir)
            .map(|(_, poses)| poses)
            .with_context(|| format!("loading camera model {}", dir.display()))
    };
    let source_poses = load_poses(&cfg.source_cameras)?;
    let target_poses = load_poses(&cfg.target_cameras)?;
    let mut params = IcpParams::for_target(&target);
    if let Some(d) = cfg.max_corr_dist {
        params.max_corr_dist = d;
    }
    params.max_iterations = cfg.max_iterations;
    params.passes = cfg.passes;
    params.convergence_eps = cfg.convergence_eps;

    let result = align_clouds(&source, &source_poses, &target, &target_poses, &params)?;
    save_point_cloud(
        &result.aligned,
        ctx.output(ALIGNED_CLOUD)?,
        PlyFormat::BinaryLittleEndian,
    )?;
    let path = ctx.output(TRANSFORM_FILE)?;
    std::fs::write(&path, format_transform(&result.transform().to_matrix()))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(format!(
        "matched_poses={} init_rms={:e} final_rms={:e} iterations={} scale={}",
        result.initial.pairs,
        result.icp.initial_rms(),
        result.icp.alignment.rms,
        result.icp.iterations,
        result.transform().scale()
    ))
}

fn mesh(ctx: &StageContext) -> Result<String> {
    let cfg = ctx.config.mesh.as_ref().context("config has no mesh section")?;
    let path = ctx.resolve(&cfg.input);
    let mesh = load_mesh(&path).with_context(|| format!("loading {}", path.display()))?;
    let filtered = filter_mesh_faces(&mesh, &cfg.thresholds())?;
    save_mesh(&filtered, ctx.output(FILTERED_MESH)?, PlyFormat::BinaryLittleEndian)?;
    Ok(format!(
        "faces_in={} faces_out={} vertices_out={}",
        mesh.faces().len(),
        filtered.faces().len(),
        filtered.vertices().len()
    ))
}

fn blend(ctx: &StageContext) -> Result<String> {
    let cfg = ctx.config.blend.as_ref().context("config has no blend section")?;
    let dir = ctx.output(BLENDED_DIR)?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for pair in &cfg.pairs {
        let original = load_image(ctx.resolve(&pair.original))?;
        let rendered = load_image(ctx.resolve(&pair.rendered))?;
        let out = match pair.method {
            BlendMethod::Frequency => frequency_fuse(&original, &rendered, pair.cutoff.expect("validated"))?,
            BlendMethod::NormalClone | BlendMethod::MonochromeTransfer => {
                let mask = load_mask(ctx.resolve(pair.mask.as_ref().expect("validated")))?;
                let mode = if pair.method == BlendMethod::NormalClone {
                    PoissonMode::NormalClone
                } else {
                    PoissonMode::MonochromeTransfer
                };
                poisson_blend(&original, &rendered, &mask, mode).with_context(|| format!("blending {}", pair.output))?
            }
        };
        save_image(&out, dir.join(&pair.output))?;
    }
    Ok(format!("pairs={}", cfg.pairs.len()))
}

fn merge(ctx: &StageContext) -> Result<String> {
    let cfg = ctx.config.merge.as_ref().context("config has no merge section")?;
    let clouds = cfg
        .inputs
        .iter()
        .map(|input| {
            let path = ctx.resolve(&input.path);
            let cloud = load_cloud(&path)?;
            Ok(match (&input.source, cloud.sources().is_some()) {
                (Some(label), _) => cloud.with_source(label.clone()),
                (None, true) => cloud,
                (None, false) => {
                    let stem = path
                        .file_stem()
                        .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
                    cloud.with_source(stem)
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_clouds(&clouds, cfg.dedup_voxel)?;
    save_point_cloud(&merged, ctx.output(MERGED_CLOUD)?, PlyFormat::BinaryLittleEndian)?;
    let total: usize = clouds.iter().map(PointCloud::len).sum();
    Ok(format!(
        "inputs={} points_in={total} points_out={}",
        clouds.len(),
        merged.len()
    ))
}

/// Path of the evaluated cloud: the configured one, else the merge output.
pub fn prediction_path(ctx: &StageContext) -> Option<PathBuf> {
    let cfg = ctx.config.eval.as_ref()?;
    Some(match &cfg.prediction {
        Some(p) => ctx.resolve(p),
        None => ctx.output_dir().join(MERGED_CLOUD),
    })
}

fn eval(ctx: &StageContext) -> Result<String> {
    let cfg = ctx.config.eval.as_ref().context("config has no eval section")?;
    let gt = load_cloud(&ctx.resolve(&cfg.ground_truth))?;
    let pred = load_cloud(&prediction_path(ctx).expect("eval configured"))?;
    let report = eval_scene(&ctx.config.scene, &pred, &gt, cfg.tau)?;
    let reports = [report];
    let summary = aggregate(&reports)?;
    let text = reports_to_json_lines(&reports, &summary);
    let path = ctx.output(EVAL_FILE)?;
    std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    print!("{text}");
    let r: &EvalReport = &reports[0];
    Ok(format!(
        "precision={:.4} recall={:.4} fscore={:.4} tau={}",
        r.precision, r.recall, r.fscore, r.tau
    ))
}
