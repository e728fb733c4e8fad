use std::fs;
use std::path::{Path, PathBuf};

use dwnet::correspondence::{build_part_index, coarse_warp};
use dwnet::generator::{sample_quadruple, GeneratorConfig, GeneratorNet, Rollout, Trainer};
use dwnet::iuv_io::synthetic::SceneConfig;
use dwnet::iuv_io::{
    generate_synthetic_sequence, load_params, parse_key_values, read_iuv, read_keypoint_track, read_map, read_sequence,
    read_tensor, save_params, validate_iuv, write_grid, write_map, write_mask, write_sequence, SyntheticScene,
};
use dwnet::losses::{random_conv_extractor, write_loss_csv};
use dwnet::metrics::{akd, frechet_distance, perceptual_distance, pooled_embeddings, EmbeddingSet, KeypointTrack};
use dwnet::warp::bilinear_sample;
use dwnet::{Error, FeatureMap, IuvMap, VideoSample, DEFAULT_PARTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{generator_base, Dims, Overrides, Profile, RunConfig};
use crate::export::write_png;
use crate::fail::{CliResult, Failure};

/// Attempts per scene before giving up on finding one that stays in frame.
const SCENE_ATTEMPTS: usize = 1000;

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))
}

pub fn synth(run: &RunConfig, out: &Path, png: bool) -> CliResult<()> {
    if run.frames < 2 {
        return Err(Failure::config(format!(
            "--frames {} is too few: training videos need a source and at least 2 driving frames",
            run.frames
        )));
    }
    if run.scenes == 0 {
        return Err(Failure::config("--scenes must be at least 1"));
    }
    create_dir(out)?;
    let cfg = SceneConfig {
        height: run.dims.height,
        width: run.dims.width,
        frames: run.frames,
        ..SceneConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    for i in 0..run.scenes {
        let mut found = None;
        for _ in 0..SCENE_ATTEMPTS {
            let scene_seed: u64 = rng.random();
            let Ok(scene) = SyntheticScene::random(&cfg, scene_seed) else { continue };
            match generate_synthetic_sequence::<f32>(&scene, run.frames, scene_seed) {
                Ok(seq) => {
                    found = Some(seq);
                    break;
                }
                Err(Error::OutOfFrame(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        let seq = found.ok_or_else(|| Failure::config(format!("no scene of size {} stays in frame", run.dims)))?;
        let dir = out.join(format!("scene_{i:03}"));
        write_sequence(&dir, &seq.sample, Some((&seq.gt_grids, &seq.foreground)))?;
        if png {
            for k in 0..seq.sample.len() {
                write_png(&dir.join(format!("frame_{k:04}.png")), &seq.sample.frame(k).expect("frame in range").image)?;
            }
        }
    }
    let manifest = format!(
        "scenes={}\nframes={}\nheight={}\nwidth={}\nseed={}\n",
        run.scenes, run.frames, run.dims.height, run.dims.width, run.seed
    );
    let path = out.join("dataset.txt");
    fs::write(&path, manifest).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    println!("wrote {} scenes of {} frames to {}", run.scenes, run.frames + 1, out.display());
    Ok(())
}

fn read_valid_iuv(path: &Path) -> CliResult<IuvMap<f32>> {
    let iuv = read_iuv(path)?;
    let report = validate_iuv(&iuv, DEFAULT_PARTS);
    if !report.is_valid() {
        return Err(Failure::validation(format!("{}: invalid IUV map: {report}", path.display())));
    }
    Ok(iuv)
}

pub struct WarpArgs<'a> {
    pub source_iuv: &'a Path,
    pub driving_iuv: &'a Path,
    pub source_img: &'a Path,
    pub refiner: Option<&'a Path>,
    pub out: &'a Path,
    pub png: bool,
}

pub fn warp(args: &WarpArgs<'_>) -> CliResult<()> {
    let source_iuv = read_valid_iuv(args.source_iuv)?;
    let driving_iuv = read_valid_iuv(args.driving_iuv)?;
    let image: FeatureMap<f32> = read_map(args.source_img)?;
    if image.channels() != 3 || image.height() != source_iuv.height() || image.width() != source_iuv.width() {
        return Err(Failure::validation(format!(
            "source image is {}x{}x{}, source IUV is {}x{}",
            image.channels(),
            image.height(),
            image.width(),
            source_iuv.height(),
            source_iuv.width()
        )));
    }
    let (grid, matched) = match args.refiner {
        Some(ckpt) => {
            let net = load_generator(ckpt, &Overrides::default())?;
            let c = net.config;
            if (c.image_height, c.image_width) != (image.height(), image.width())
                || (c.image_height, c.image_width) != (driving_iuv.height(), driving_iuv.width())
            {
                return Err(Failure::config(format!(
                    "refiner checkpoint expects {}x{} images",
                    c.image_height, c.image_width
                )));
            }
            net.full_grid(&image, &source_iuv, &driving_iuv)?
        }
        None => {
            let r = coarse_warp(&build_part_index(&source_iuv, DEFAULT_PARTS), &driving_iuv)?;
            (r.grid, r.matched)
        }
    };
    let warped = bilinear_sample(&image, &grid)?;
    create_dir(args.out)?;
    write_grid(args.out.join("grid.dwt"), &grid)?;
    write_mask(args.out.join("mask.dwt"), &matched, grid.height(), grid.width())?;
    write_map(args.out.join("warped.dwt"), &warped)?;
    if args.png {
        write_png(&args.out.join("warped.png"), &warped)?;
    }
    let hits = matched.iter().filter(|&&m| m).count();
    println!("matched {hits} of {} driving pixels; wrote {}", matched.len(), args.out.display());
    Ok(())
}

/// Sequence directories under `dir` (or `dir` itself), in name order.
fn sequence_dirs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if dir.join("manifest.txt").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::validation(format!("{}: no sequence directories", dir.display())));
    }
    Ok(dirs)
}

fn checkpoint_meta(run: &RunConfig, cfg: &GeneratorConfig, steps: usize) -> Vec<(&'static str, String)> {
    vec![
        ("kind", "generator".into()),
        ("profile", run.profile.to_string()),
        ("dims", Dims { height: cfg.image_height, width: cfg.image_width }.to_string()),
        ("pose_channels", cfg.pose_channels.to_string()),
        ("appearance_channels", cfg.appearance_channels.to_string()),
        ("decoder_channels", cfg.decoder_channels.to_string()),
        ("refiner_channels", cfg.refiner_channels.to_string()),
        ("res_blocks", cfg.res_blocks.to_string()),
        ("seed", run.seed.to_string()),
        ("steps", steps.to_string()),
        ("lambda", run.lambda.to_string()),
        ("lr", run.lr.to_string()),
    ]
}

pub fn train(run: &RunConfig, data: &Path, out: &Path) -> CliResult<()> {
    let videos: Vec<VideoSample<f32>> = sequence_dirs(data)?
        .iter()
        .map(read_sequence)
        .collect::<Result<_, _>>()?;
    let mut gcfg = run.generator()?;
    let first = &videos[0].source.image;
    if !run.dims_explicit {
        gcfg.image_height = first.height();
        gcfg.image_width = first.width();
        gcfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    }
    for (i, v) in videos.iter().enumerate() {
        let img = &v.source.image;
        if (img.height(), img.width()) != (gcfg.image_height, gcfg.image_width) {
            return Err(Failure::config(format!(
                "video {i} is {}x{}, model expects {}x{}",
                img.height(),
                img.width(),
                gcfg.image_height,
                gcfg.image_width
            )));
        }
        if v.len() < 3 {
            return Err(Failure::validation(format!("video {i} has {} frames; training needs 3", v.len())));
        }
    }
    let generator = GeneratorNet::<f32>::new(gcfg, run.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x7261_696e);
    let mut trainer = Trainer::new(generator, run.train(), &mut rng);
    let mut records = Vec::with_capacity(run.steps);
    let report_every = (run.steps / 10).max(1);
    for step in 0..run.steps {
        let video = &videos[rng.random_range(0..videos.len())];
        let quad = sample_quadruple(video.len(), &mut rng)?;
        let rec = trainer.train_step(video, quad)?;
        if (step + 1) % report_every == 0 {
            eprintln!(
                "step {}/{}: d {:.4} g {:.4} rec {:.4} total {:.4}",
                rec.step, run.steps, rec.d_loss, rec.g_loss, rec.rec_loss, rec.total
            );
        }
        records.push(rec);
    }
    let meta = checkpoint_meta(run, &gcfg, run.steps);
    save_params(out, &trainer.generator.params(), &meta)?;
    write_loss_csv(out.join("losses.csv"), &records)?;
    println!("trained {} steps; wrote checkpoint {}", run.steps, out.display());
    Ok(())
}

/// Rebuilds the generator recorded in a checkpoint and loads its weights.
/// Explicit `--profile` or `--dims` must agree with the checkpoint.
pub fn load_generator(dir: &Path, explicit: &Overrides) -> CliResult<GeneratorNet<f32>> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let kv = parse_key_values(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let meta = |k: &str| -> CliResult<&String> {
        kv.get(&format!("meta.{k}"))
            .ok_or_else(|| Failure::config(format!("{}: checkpoint lacks `{k}`", dir.display())))
    };
    if meta("kind")? != "generator" {
        return Err(Failure::config(format!("{}: not a generator checkpoint", dir.display())));
    }
    let profile: Profile = meta("profile")?.parse().map_err(Failure::config)?;
    let dims: Dims = meta("dims")?.parse().map_err(Failure::config)?;
    let count = |k: &str| -> CliResult<usize> {
        meta(k)?
            .parse()
            .map_err(|_| Failure::config(format!("{}: bad `{k}`", dir.display())))
    };
    if let Some(p) = explicit.profile.filter(|p| *p != profile) {
        return Err(Failure::config(format!("checkpoint was trained with profile {profile}, not {p}")));
    }
    if let Some(d) = explicit.dims.filter(|d| *d != dims) {
        return Err(Failure::config(format!("checkpoint was trained at {dims}, not {d}")));
    }
    let cfg = GeneratorConfig {
        image_height: dims.height,
        image_width: dims.width,
        pose_channels: count("pose_channels")?,
        appearance_channels: count("appearance_channels")?,
        decoder_channels: count("decoder_channels")?,
        refiner_channels: count("refiner_channels")?,
        res_blocks: count("res_blocks")?,
        ..generator_base(profile)
    };
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    let mut net = GeneratorNet::<f32>::new(cfg, 0)?;
    load_params(dir, &mut net.params_mut())?;
    Ok(net)
}

pub struct GenerateInput {
    pub sequence: Option<PathBuf>,
    pub source_img: Option<PathBuf>,
    pub source_iuv: Option<PathBuf>,
    pub poses: Vec<PathBuf>,
}

pub fn generate(explicit: &Overrides, checkpoint: &Path, input: &GenerateInput, out: &Path, png: bool) -> CliResult<()> {
    let net = load_generator(checkpoint, explicit)?;
    let (source, poses) = match (&input.sequence, &input.source_img, &input.source_iuv) {
        (Some(dir), None, None) if input.poses.is_empty() => {
            let v: VideoSample<f32> = read_sequence(dir)?;
            let poses: Vec<IuvMap<f32>> = v.driving.iter().map(|f| f.iuv.clone()).collect();
            (v.source, poses)
        }
        (None, Some(img), Some(iuv)) if !input.poses.is_empty() => {
            let frame = dwnet::Frame::new(read_map(img)?, read_valid_iuv(iuv)?)?;
            let poses = input.poses.iter().map(|p| read_valid_iuv(p)).collect::<CliResult<Vec<_>>>()?;
            (frame, poses)
        }
        _ => {
            return Err(Failure::config(
                "give either --sequence DIR, or --source-img, --source-iuv and at least one --pose",
            ))
        }
    };
    let c = net.config;
    if (source.image.height(), source.image.width()) != (c.image_height, c.image_width) {
        return Err(Failure::config(format!(
            "inputs are {}x{}, checkpoint expects {}x{}",
            source.image.height(),
            source.image.width(),
            c.image_height,
            c.image_width
        )));
    }
    create_dir(out)?;
    let mut n = 0;
    for frame in Rollout::new(&net, &source, poses.iter()) {
        let frame = frame?;
        let k = frame.index();
        write_map(out.join(format!("frame_{k:04}.dwt")), frame.image())?;
        if png {
            write_png(&out.join(format!("frame_{k:04}.png")), frame.image())?;
        }
        n += 1;
    }
    println!("generated {n} frames into {}", out.display());
    Ok(())
}

/// Frames of a sequence directory (its driving frames) or of a directory of
/// `.dwt` images, plus keypoints when every frame carries them.
fn read_frames(dir: &Path) -> CliResult<(Vec<FeatureMap<f32>>, Option<KeypointTrack>)> {
    if dir.join("manifest.txt").is_file() {
        let v: VideoSample<f32> = read_sequence(dir)?;
        let kps: Option<Vec<_>> = v.driving.iter().map(|f| f.keypoints.clone()).collect();
        let track = kps.map(KeypointTrack::new).transpose()?;
        return Ok((v.driving.into_iter().map(|f| f.image).collect(), track));
    }
    let entries = fs::read_dir(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dwt"))
        .collect();
    files.sort();
    let frames = files.iter().map(read_map).collect::<Result<Vec<_>, _>>()?;
    Ok((frames, None))
}

fn read_embeddings(path: &Path) -> CliResult<EmbeddingSet> {
    let t = read_tensor(path)?;
    let [n, d] = t.shape[..] else {
        return Err(Failure::validation(format!("{}: embeddings must be n x d, got {:?}", path.display(), t.shape)));
    };
    let values = t
        .scalar_values::<f64>()
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    Ok(EmbeddingSet::new(n, d, values)?)
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub perceptual: Option<f64>,
    pub fid: Option<f64>,
    pub akd: Option<f64>,
}

pub struct EvaluateInput {
    pub generated: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub generated_embeddings: Option<PathBuf>,
    pub reference_embeddings: Option<PathBuf>,
    pub generated_keypoints: Option<PathBuf>,
    pub reference_keypoints: Option<PathBuf>,
    pub extractor_seed: u64,
    pub out: Option<PathBuf>,
}

fn pair<'a>(a: &'a Option<PathBuf>, b: &'a Option<PathBuf>, what: &str) -> CliResult<Option<(&'a Path, &'a Path)>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(Failure::config(format!("{what} needs both a generated and a reference input"))),
    }
}

pub fn evaluate(input: &EvaluateInput) -> CliResult<Report> {
    let frames = pair(&input.generated, &input.reference, "frame comparison")?;
    let embeddings = pair(&input.generated_embeddings, &input.reference_embeddings, "FID")?;
    let keypoints = pair(&input.generated_keypoints, &input.reference_keypoints, "AKD")?;
    if frames.is_none() && embeddings.is_none() && keypoints.is_none() {
        return Err(Failure::config("nothing to evaluate"));
    }
    let extractor = random_conv_extractor::<f32>(3, input.extractor_seed);
    let mut report = Report {
        perceptual: None,
        fid: None,
        akd: None,
    };
    let mut frame_tracks = None;
    if let Some((g, r)) = frames {
        let (gen, gen_kp) = read_frames(g)?;
        let (refs, ref_kp) = read_frames(r)?;
        if gen.len() != refs.len() || gen.is_empty() {
            return Err(Failure::validation(format!(
                "{} generated frames vs {} reference frames",
                gen.len(),
                refs.len()
            )));
        }
        let mut total = 0.0;
        for (a, b) in gen.iter().zip(&refs) {
            total += perceptual_distance(&extractor, a, b)?;
        }
        report.perceptual = Some(total / gen.len() as f64);
        if embeddings.is_none() && gen.len() >= 2 {
            report.fid = Some(frechet_distance(
                &pooled_embeddings(&extractor, &gen)?,
                &pooled_embeddings(&extractor, &refs)?,
            )?);
        }
        frame_tracks = gen_kp.zip(ref_kp);
    }
    if let Some((g, r)) = embeddings {
        report.fid = Some(frechet_distance(&read_embeddings(g)?, &read_embeddings(r)?)?);
    }
    let tracks = match keypoints {
        Some((g, r)) => Some((
            KeypointTrack::new(read_keypoint_track(g)?)?,
            KeypointTrack::new(read_keypoint_track(r)?)?,
        )),
        None => frame_tracks,
    };
    if let Some((g, r)) = tracks {
        report.akd = Some(akd(&g, &r)?);
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = &input.out {
        fs::write(path, format!("{json}\n")).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    }
    println!("{json}");
    Ok(report)
}
