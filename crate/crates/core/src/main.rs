use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ovmm::agent::{run_episode, Agent, AgentConfig, HeuristicAgent, RunSetup};
use ovmm::eval::{MetricProfile, SummaryTable};
use ovmm::harness::{
    episode_seed, generate_episodes, generate_scenes, load_scenes, load_suite, report, run_batch, save_scenes,
    write_jsonl, write_pgm, AgentSpec, RunConfig, SuiteParams,
};
use ovmm::nav::ActionSpace;
use ovmm::protocol::serve;
use ovmm::scene::{EpisodeSplit, SceneGenParams};
use ovmm::sim::{NoiseProfile, SimConfig};

/// Open-vocabulary mobile manipulation simulator and benchmark harness.
/// Log verbosity follows RUST_LOG (default: warn).
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate apartment scenes into a directory (one JSON file each).
    GenScenes {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        rooms: usize,
        #[arg(long, default_value_t = 10.0)]
        width: f64,
        #[arg(long, default_value_t = 8.0)]
        height: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate episodes for every scene in a directory (JSONL output).
    GenEpisodes {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value_t = 5)]
        per_scene: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// train, val_sc_ui or val_uc_ui
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 129)]
        categories: usize,
        #[arg(long, default_value_t = 2535)]
        instances: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a batch of episodes and write sorted JSONL results.
    Run {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        agent: AgentArgs,
        /// builtin, exec:<shell command> or tcp:<host:port>
        #[arg(long, default_value = "builtin")]
        agent_spec: String,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one summary row per results file.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Also print per-stage step accounting.
        #[arg(long)]
        stages: bool,
    },
    /// Run the builtin agent on one episode and dump map channels as PGM
    /// images plus the step trace.
    DumpDebug {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long)]
        episode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the builtin agent over the wire protocol (stdio or TCP).
    AgentProxy {
        #[command(flatten)]
        agent: AgentArgs,
        /// Listen on this address instead of stdio.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long, value_enum, default_value_t = Perception::Gt)]
    perception: Perception,
    /// Overrides the preset's dropout probability.
    #[arg(long)]
    dropout: Option<f64>,
    /// Overrides the preset's misclassification probability.
    #[arg(long)]
    misclassify: Option<f64>,
    /// sim or real
    #[arg(long, default_value = "sim")]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct AgentArgs {
    #[arg(long, value_enum, default_value_t = Space::Continuous)]
    action_space: Space,
    /// Skip the gaze skill and grasp as soon as the object is found.
    #[arg(long)]
    no_gaze: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Perception {
    Gt,
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Discrete,
    Continuous,
}

impl AgentArgs {
    fn config(&self) -> AgentConfig {
        let mut c = AgentConfig {
            action_space: match self.action_space {
                Space::Discrete => ActionSpace::discrete(),
                Space::Continuous => ActionSpace::continuous(),
            },
            ..AgentConfig::default()
        };
        c.gaze.enabled = !self.no_gaze;
        c
    }
}

impl SuiteArgs {
    fn noise(&self) -> NoiseProfile {
        let mut n = match self.perception {
            Perception::Gt => NoiseProfile::GROUND_TRUTH,
            Perception::Noisy => NoiseProfile::NOISY,
        };
        if let Some(p) = self.dropout {
            n.dropout_prob = p;
        }
        if let Some(p) = self.misclassify {
            n.misclassify_prob = p;
        }
        n
    }

    fn profile(&self) -> Result<MetricProfile> {
        MetricProfile::by_name(&self.profile).ok_or_else(|| anyhow!("unknown metric profile {:?}", self.profile))
    }
}

fn parse_agent_spec(s: &str) -> Result<AgentSpec> {
    if s == "builtin" {
        Ok(AgentSpec::BuiltinHeuristic)
    } else if let Some(cmd) = s.strip_prefix("exec:") {
        Ok(AgentSpec::ExternalExec(cmd.to_string()))
    } else if let Some(addr) = s.strip_prefix("tcp:") {
        Ok(AgentSpec::ExternalTcp(addr.to_string()))
    } else {
        bail!("agent spec must be builtin, exec:<command> or tcp:<address>")
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::GenScenes {
            count,
            seed,
            rooms,
            width,
            height,
            out,
        } => {
            let params = SceneGenParams {
                rooms,
                width,
                height,
                ..Default::default()
            };
            let scenes = generate_scenes(count, seed, &params)?;
            save_scenes(&out, &scenes)?;
            println!("wrote {} scenes to {}", scenes.len(), out.display());
        }
        Cmd::GenEpisodes {
            scenes,
            per_scene,
            seed,
            split,
            categories,
            instances,
            out,
        } => {
            let split = EpisodeSplit::parse(&split).ok_or_else(|| anyhow!("unknown split {split:?}"))?;
            let scenes = load_scenes(&scenes)?;
            let params = SuiteParams {
                scenes: scenes.len(),
                episodes_per_scene: per_scene,
                seed,
                split,
                catalog_categories: categories,
                catalog_instances: instances,
                ..Default::default()
            };
            let episodes = generate_episodes(&scenes, &params)?;
            write_jsonl(&out, &episodes)?;
            println!("wrote {} episodes to {}", episodes.len(), out.display());
        }
        Cmd::Run {
            suite,
            agent,
            agent_spec,
            parallelism,
            out,
        } => {
            let cfg = RunConfig {
                scenes: suite.scenes.clone(),
                episodes: suite.episodes.clone(),
                agent: parse_agent_spec(&agent_spec)?,
                agent_config: agent.config(),
                perception: suite.noise(),
                profile: suite.profile()?,
                sim: SimConfig::default(),
                global_seed: suite.seed,
                parallelism,
                output: out,
            };
            let table = run_batch(&cfg)?;
            println!("{table}");
        }
        Cmd::Report { files, stages } => {
            let tables = report(&files)?;
            println!("{}", SummaryTable::header());
            for t in &tables {
                println!("{}", t.row());
            }
            if stages {
                for t in &tables {
                    println!("\n{}\n{}", t.label, t.stage_rows());
                }
            }
        }
        Cmd::DumpDebug {
            suite: args,
            agent,
            episode,
            out,
        } => {
            let suite = load_suite(&args.scenes, &args.episodes)?;
            let ep = suite
                .episode(&episode)
                .ok_or_else(|| anyhow!("no episode {episode:?}"))?
                .clone();
            let seed = episode_seed(args.seed, &ep.id);
            let setup = RunSetup {
                sim: SimConfig::default(),
                noise: args.noise(),
                profile: args.profile()?,
                seed,
            };
            let mut heuristic = HeuristicAgent::new(agent.config());
            let run = run_episode(suite.scene_of(&ep), ep.clone(), &mut heuristic, &setup);
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            let map = heuristic
                .map()
                .ok_or_else(|| anyhow!("agent never initialized its map"))?;
            let names = [
                "object",
                "start_receptacle",
                "goal_receptacle",
                "obstacles",
                "explored",
                "current",
                "past",
            ];
            for (i, name) in names.iter().enumerate() {
                let ch = map.query_channel(i)?;
                write_pgm(&out.join(format!("{name}.pgm")), ch.rows(), ch.cols(), |r, c| {
                    if ch.data()[r * ch.cols() + c] {
                        255
                    } else {
                        0
                    }
                })?;
            }
            write_jsonl(&out.join("trace.jsonl"), &run.trace.records)?;
            std::fs::write(out.join("result.json"), serde_json::to_string_pretty(&run.result)?)?;
            println!(
                "{}: overall={} partial={} steps={} phase={} -> {}",
                ep.id,
                run.result.overall,
                run.result.partial,
                run.result.total_steps,
                heuristic.phase_name(),
                out.display()
            );
        }
        Cmd::AgentProxy { agent, listen } => {
            let config = agent.config();
            let make = move || -> Box<dyn Agent> { Box::new(HeuristicAgent::new(config)) };
            match listen {
                None => {
                    let stdin = std::io::stdin().lock();
                    let stdout = BufWriter::new(std::io::stdout().lock());
                    serve(stdin, stdout, make)?;
                }
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).with_context(|| addr.clone())?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    for stream in listener.incoming() {
                        let stream = stream?;
                        std::thread::spawn(move || {
                            let reader = match stream.try_clone() {
                                Ok(s) => BufReader::new(s),
                                Err(e) => return log::warn!("connection: {e}"),
                            };
                            if let Err(e) = serve(reader, BufWriter::new(stream), make) {
                                log::warn!("connection: {e}");
                            }
                        });
                    }
                }
            }
        }
    }
    Ok(())
}
