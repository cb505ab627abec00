//! The `trkt` command line.
//!
//! Exit codes: 0 success, 1 validation/shape/frame errors, 2 format or i/o
//! errors, 64 usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use trkt_core::attention::fuse_attention;
use trkt_core::dfm::{refine_frame, RefineConfig};
use trkt_core::io;
use trkt_core::metrics::{
    eval_detection, eval_sgdet, tide_errors, ErrorCounts, TideConfig, DEFAULT_KS, DEFAULT_MAX_DETS,
};
use trkt_core::proposals::{extract_proposals, wbf, Connectivity, ExtractConfig, WbfConfig};
use trkt_core::temporal::{estimate_block_flow, warp_attention};
use trkt_core::{DetectionSet, DetectionSource, Error, ErrorKind, FrameRef, Provenance, Result};

use crate::dataset::{create_dir, frame_file, read_json, write_json};
use crate::experiment::{pseudo_graphs, run_experiment, RunConfig};
use crate::scenario::{synth_scenario, ScenarioConfig};

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "trkt",
    version,
    about = "Attention-guided detection refinement for video scene graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct FrameArgs {
    #[arg(long, default_value = "video")]
    video: String,
    #[arg(long, default_value_t = 0)]
    frame_index: usize,
    /// Frame width in pixels.
    #[arg(long)]
    width: u32,
    /// Frame height in pixels.
    #[arg(long)]
    height: u32,
}

impl FrameArgs {
    fn frame(&self) -> Result<FrameRef> {
        FrameRef::new(
            self.video.clone(),
            self.frame_index,
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic video and write its pipeline inputs.
    Synth {
        #[arg(long, conflicts_with = "canonical")]
        config: Option<PathBuf>,
        /// Use the built-in randomized layout instead of a config file.
        #[arg(long)]
        canonical: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse relation attention into object attention.
    FuseAttn {
        #[arg(long)]
        obj: PathBuf,
        #[arg(long)]
        rel: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// Warp an attention stack along backward flow.
    Warp {
        #[arg(long)]
        attn: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frame the flow points into.
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// Block-matching flow between two attention stacks.
    EstimateFlow {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        cur: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        block: usize,
        #[arg(long, default_value_t = 2)]
        radius: usize,
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// Threshold proposals from an attention stack.
    Extract {
        #[arg(long)]
        attn: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 4)]
        min_area: usize,
        /// Use 8-connectivity instead of 4.
        #[arg(long)]
        eight: bool,
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// Weighted box fusion of several detection files of one frame.
    Wbf {
        #[arg(long = "dets", required = true, num_args = 1..)]
        dets: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.55)]
        iou: f64,
        #[arg(long, default_value_t = 0.0)]
        skip_below: f64,
    },
    /// Refine one frame's external detections.
    Refine {
        /// Fused attention of this frame.
        #[arg(long)]
        attn: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        logits: PathBuf,
        /// Fused attention of the previous frame.
        #[arg(long)]
        prev_attn: Option<PathBuf>,
        /// Backward flow into this frame.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write every intermediate detection set here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Refinement settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Ground an annotation on detections and propagate it to every frame.
    PseudoGraph {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long = "dets", required = true, num_args = 1..)]
        dets: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Box AP/AR of predictions against ground truth (files paired in order).
    EvalDet {
        #[arg(long = "pred", required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        #[arg(long = "gt", required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        #[arg(long = "max-dets", num_args = 1.., default_values_t = DEFAULT_MAX_DETS)]
        max_dets: Vec<usize>,
    },
    /// Scene graph detection recall@K.
    EvalSgdet {
        #[arg(long = "pred", required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        #[arg(long = "gt", required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        #[arg(long = "k", num_args = 1.., default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
    },
    /// Detection error taxonomy counts summed over frames.
    Tide {
        #[arg(long = "pred", required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        #[arg(long = "gt", required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        t_fg: f64,
        #[arg(long, default_value_t = 0.1)]
        t_bg: f64,
    },
    /// Full experiment: baseline vs refined reports and the ablation grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Format | ErrorKind::Io => EXIT_FORMAT,
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("trkt: {e}");
            exit_code(&e)
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn load_sets(paths: &[PathBuf]) -> Result<Vec<DetectionSet>> {
    paths.iter().map(|p| io::load_detections(p, None)).collect()
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            config,
            canonical,
            seed,
            out,
        } => {
            let mut cfg = match (config, canonical) {
                (Some(path), _) => read_json::<ScenarioConfig>(&path)?,
                (None, true) => ScenarioConfig::canonical(seed.unwrap_or(0)),
                (None, false) => {
                    return Err(Error::Validation(
                        "synth needs --config or --canonical".into(),
                    ))
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let data = synth_scenario(&cfg)?;
            data.save(&out)?;
            write_json(&cfg, &out.join("scenario.json"))?;
            println!(
                "wrote {} frames of {} to {}",
                data.frames.len(),
                data.manifest.video_id,
                out.display()
            );
            Ok(())
        }
        Command::FuseAttn {
            obj,
            rel,
            out,
            frame,
        } => {
            let f = frame.frame()?;
            let a = io::load_attention_stack(&obj, f.clone())?;
            let r = io::load_attention_stack(&rel, f)?;
            io::save_attention_stack(&fuse_attention(&a, &r)?, &out)
        }
        Command::Warp {
            attn,
            flow,
            out,
            frame,
        } => {
            let f = frame.frame()?;
            let prev = io::load_attention_stack(&attn, f.clone())?;
            let flow = io::load_flow(&flow, f)?;
            io::save_attention_stack(&warp_attention(&prev, &flow)?, &out)
        }
        Command::EstimateFlow {
            prev,
            cur,
            out,
            block,
            radius,
            frame,
        } => {
            let f = frame.frame()?;
            let p = io::load_attention_stack(&prev, f.clone())?;
            let c = io::load_attention_stack(&cur, f)?;
            io::save_flow(&estimate_block_flow(&p, &c, block, radius)?, &out)
        }
        Command::Extract {
            attn,
            out,
            threshold,
            min_area,
            eight,
            frame,
        } => {
            let a = io::load_attention_stack(&attn, frame.frame()?)?;
            let cfg = ExtractConfig {
                threshold,
                connectivity: if eight {
                    Connectivity::Eight
                } else {
                    Connectivity::Four
                },
                min_area_cells: min_area,
            };
            io::save_detections(&extract_proposals(&a, &cfg)?, &out)
        }
        Command::Wbf {
            dets,
            out,
            iou,
            skip_below,
        } => {
            let sets = load_sets(&dets)?;
            let refs: Vec<&DetectionSet> = sets.iter().collect();
            let cfg = WbfConfig {
                iou_threshold: iou,
                skip_below,
            };
            io::save_detections(&wbf(&refs, &cfg, DetectionSource::Fused)?, &out)
        }
        Command::Refine {
            attn,
            dets,
            logits,
            prev_attn,
            flow,
            out,
            trace,
            config,
        } => {
            let cfg: RefineConfig = match config {
                Some(p) => read_json(&p)?,
                None => RefineConfig::default(),
            };
            let d_e = io::load_detections(&dets, None)?;
            let frame = d_e.frame.clone();
            let a =
                io::load_attention_stack(&attn, frame.clone())?.with_provenance(Provenance::Fused);
            let logits = io::load_logits(&logits)?;
            let pa = match (prev_attn, flow) {
                (Some(prev), Some(flow)) => {
                    let prev = io::load_attention_stack(&prev, frame.clone())?;
                    Some(warp_attention(
                        &prev,
                        &io::load_flow(&flow, frame.clone())?,
                    )?)
                }
                (Some(_), None) => {
                    eprintln!("trkt: warning: no flow for {frame}; motion stage skipped");
                    None
                }
                (None, _) => None,
            };
            let t = refine_frame(&a, pa.as_ref(), &logits, &d_e, &cfg)?;
            io::save_detections(&t.d_final, &out)?;
            if let Some(p) = trace {
                write_json(&t, &p)?;
            }
            Ok(())
        }
        Command::PseudoGraph {
            annotation,
            dets,
            out_dir,
        } => {
            let ann = io::load_scene_graph(&annotation, None)?;
            let sets = load_sets(&dets)?;
            let graphs = pseudo_graphs(&ann, &sets)?;
            create_dir(&out_dir)?;
            for g in &graphs {
                io::save_localized_graph(
                    g,
                    frame_file(&out_dir, g.frame.frame_index, "pseudo_graph.json"),
                )?;
            }
            Ok(())
        }
        Command::EvalDet { pred, gt, max_dets } => {
            let m = eval_detection(&load_sets(&pred)?, &load_sets(&gt)?, &max_dets)?;
            print_json(&m)
        }
        Command::EvalSgdet { pred, gt, ks } => {
            let load = |ps: &[PathBuf]| -> Result<Vec<_>> {
                ps.iter()
                    .map(|p| io::load_localized_graph(p, None))
                    .collect()
            };
            print_json(&eval_sgdet(&load(&pred)?, &load(&gt)?, &ks)?)
        }
        Command::Tide {
            pred,
            gt,
            t_fg,
            t_bg,
        } => {
            let (p, g) = (load_sets(&pred)?, load_sets(&gt)?);
            if p.len() != g.len() {
                return Err(Error::Validation(format!(
                    "{} prediction files vs {} ground-truth files",
                    p.len(),
                    g.len()
                )));
            }
            let cfg = TideConfig { t_fg, t_bg };
            let total = p
                .iter()
                .zip(&g)
                .map(|(p, g)| tide_errors(p, g, &cfg))
                .fold(ErrorCounts::default(), |a, b| a + b);
            print_json(&total)
        }
        Command::Run {
            config,
            input,
            output,
        } => {
            let mut cfg: RunConfig = read_json(&config)?;
            if let Some(i) = input {
                cfg.input_dir = i;
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            let report = run_experiment(&cfg)?;
            print!("{}", report.render());
            println!(
                "report written to {}",
                Path::new(&cfg.output_dir).join("report.json").display()
            );
            Ok(())
        }
    }
}
