//! One function per subcommand.

use std::path::{Path, PathBuf};

use pianorl::env::RolloutLog;
use pianorl::eval::{emit_roll_svg, emit_roll_table, eval_protocol, score_f1};
use pianorl::io::{config_hash, save_json, write_text, ArtifactHeader};
use pianorl::learn::residual::{curve_to_text, residual_rollout};
use pianorl::learn::{run_mode, train_residual, train_residual_threaded, ResidualConfig, RolloutMode};
use pianorl::pipeline::{matrix_table, run_matrix, Setup};
use pianorl::score::{load_fingering, parse_midi};
use pianorl::{Config, Error};

use crate::artifacts::*;
use crate::{Cli, Command, EvalTarget, Global, Profile};

struct Ctx<'a> {
    g: &'a Global,
    cfg: Config,
    header: ArtifactHeader,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.g.out.join(name)
    }

    fn setup(&self) -> CliResult<Setup> {
        Ok(Setup::new(self.cfg.clone(), load_roll(self.g)?)?)
    }

    /// Header with the final (command-adjusted) config.
    fn refresh_header(&mut self) {
        self.header.config_hash = config_hash(&self.cfg);
    }
}

pub fn load_config(g: &Global) -> CliResult<Config> {
    let mut base = Config::default();
    if g.profile == Profile::Compact {
        base.residual = ResidualConfig::compact();
    }
    let mut cfg = Config::load(&base, g.config.as_deref(), &g.overrides)?;
    if let Some(p) = g.gap {
        cfg.gap.preset = p;
    }
    if let Some(s) = g.gap_seed {
        cfg.gap.seed = s;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    let line = std::iter::once("pianorl".to_string()).chain(std::env::args().skip(1)).collect::<Vec<_>>().join(" ");
    let mut ctx = Ctx {
        header: ArtifactHeader::new(line, g.seed, config_hash(&cfg)),
        cfg,
        g,
    };
    std::fs::create_dir_all(&g.out).map_err(|e| Error::Io {
        path: g.out.clone(),
        source: e,
    })?;
    match &cli.command {
        Command::Parse { midi, fingering, split } => parse(&ctx, midi, fingering.as_deref(), *split),
        Command::TrainSim {
            steps,
            target_f1,
            randomize,
            name,
        } => {
            if let Some(s) = steps {
                ctx.cfg.ppo.total_steps = *s;
            }
            if target_f1.is_some() {
                ctx.cfg.ppo.target_f1 = *target_f1;
            }
            if *randomize {
                ctx.cfg.ppo.randomize = Some(ctx.cfg.gap.effective_ranges());
            }
            ctx.refresh_header();
            train_sim(&ctx, name)
        }
        Command::Rollout { mode, traj, policy } => rollout(&ctx, *mode, traj.as_deref(), policy.as_deref()),
        Command::Refine { traj, iterations, output } => {
            if let Some(i) = iterations {
                ctx.cfg.refine.iterations = *i;
            }
            ctx.refresh_header();
            refine(&ctx, traj.as_deref(), output.as_deref())
        }
        Command::TrainResidual {
            base,
            from_scratch,
            episodes,
            threaded,
            name,
        } => {
            if let Some(e) = episodes {
                ctx.cfg.residual.episodes = *e;
            }
            ctx.cfg.residual.validate()?;
            ctx.refresh_header();
            train_res(&ctx, base.as_deref(), *from_scratch, *threaded, name)
        }
        Command::Eval {
            what,
            rollouts,
            traj,
            policy,
            residual,
        } => eval(&ctx, *what, *rollouts, traj.as_deref(), policy.as_deref(), residual.as_deref()),
        Command::Matrix {
            rollouts,
            reuse_sim,
            randomized_closed_loop,
        } => matrix(&ctx, *rollouts, *reuse_sim, *randomized_closed_loop),
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing {
                path: path.to_path_buf(),
                hint: "check the path".into(),
            }
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
            .into()
        }
    })
}

fn parse(ctx: &Ctx, midi: &Path, fingering: Option<&Path>, split: u8) -> CliResult<()> {
    let mut roll = parse_midi(&read(midi)?, split)?;
    if let Some(f) = fingering {
        let text = String::from_utf8_lossy(&read(f)?).into_owned();
        roll = load_fingering(&roll, &text)?;
    }
    let out = ctx.path(ROLL);
    save_json(&out, &ctx.header, &roll)?;
    println!(
        "{}: {} notes over {} steps, fingered: {} -> {}",
        roll.title(),
        roll.notes().len(),
        roll.num_steps(),
        roll.is_fingered(),
        out.display()
    );
    Ok(())
}

fn train_sim(ctx: &Ctx, name: &str) -> CliResult<()> {
    let setup = ctx.setup()?;
    let out = setup.train_sim(ctx.g.seed)?;
    save_json(&ctx.path(&format!("{name}.json")), &ctx.header, &out.policy)?;
    out.best_trajectory.save(&ctx.path(&traj_name(name)), &ctx.header)?;
    let mut curve = ctx.header.render("curve");
    curve.push_str("env_steps f1\n");
    for (s, f) in &out.curve {
        curve.push_str(&format!("{s} {f}\n"));
    }
    write_text(&ctx.path(&format!("{name}_curve.txt")), &curve)?;
    println!("best nominal F1 {:.2} after {} env steps per hand", 100.0 * out.best_f1, out.env_steps);
    match out.diverged {
        Some(msg) => Err(Error::Diverged(msg).into()),
        None => Ok(()),
    }
}

fn rollout(ctx: &Ctx, mode: RolloutMode, traj: Option<&Path>, policy: Option<&Path>) -> CliResult<()> {
    let setup = ctx.setup()?;
    let mut env = setup.real_env();
    let log = match mode {
        RolloutMode::OpenLoop => {
            let t = load_traj(&traj.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(TAU_SIM)), "train-sim")?;
            run_mode(&mut env, mode, None, Some(&t), ctx.g.seed)?
        }
        _ => {
            let p = load_policy(&policy.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(&format!("{PI_SIM}.json"))))?;
            run_mode(&mut env, mode, Some(&p), None, ctx.g.seed)?
        }
    };
    let f1 = score_f1(&log.active_per_step(), &setup.roll)?.f1;
    write_text(&ctx.path(&format!("rollout_{mode}.log")), &log.to_text(&ctx.header))?;
    println!("{mode} on {} gap: F1 {:.2}", ctx.cfg.gap.preset, 100.0 * f1);
    Ok(())
}

fn refine(ctx: &Ctx, traj: Option<&Path>, output: Option<&Path>) -> CliResult<()> {
    let setup = ctx.setup()?;
    let input = load_traj(&traj.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(TAU_SIM)), "train-sim")?;
    input.check_matches(&setup.roll)?;
    let mut env = setup.real_env();
    let out = pianorl::refine::refine(&mut env, &input, &ctx.cfg.refine, &ctx.cfg.hand, ctx.g.seed)?;
    let dest = output.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(TAU_STAR));
    out.best.save(&dest, &ctx.header)?;
    let mut hist = ctx.header.render("refine-history");
    hist.push_str("iteration f1\n");
    for (i, f) in out.history.iter().enumerate() {
        hist.push_str(&format!("{i} {f}\n"));
    }
    write_text(&ctx.path("refine_history.txt"), &hist)?;
    println!(
        "refined F1 {:.2} (iteration {} of {}, start {:.2}) -> {}",
        100.0 * out.best_f1,
        out.best_iteration,
        ctx.cfg.refine.iterations,
        100.0 * out.history[0],
        dest.display()
    );
    Ok(())
}

fn train_res(ctx: &Ctx, base: Option<&Path>, from_scratch: bool, threaded: bool, name: &str) -> CliResult<()> {
    let setup = ctx.setup()?;
    let (base, cfg) = if from_scratch {
        (setup.rest_trajectory(), setup.scratch_config())
    } else {
        let t = load_traj(&base.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(TAU_STAR)), "refine")?;
        (t, ctx.cfg.residual.clone())
    };
    base.check_matches(&setup.roll)?;
    let mut env = setup.real_env();
    let train = if threaded { train_residual_threaded } else { train_residual };
    let out = train(&mut env, &base, &cfg, &ctx.cfg.hand, ctx.g.seed)?;
    write_text(&ctx.path(&format!("{name}_curve.txt")), &curve_to_text(&out.curve, &ctx.header))?;
    let artifact = ResidualArtifact {
        base,
        policies: out.best,
        best_f1: out.best_f1,
        best_episode: out.best_episode,
        from_scratch,
    };
    save_json(&ctx.path(&format!("{name}.json")), &ctx.header, &artifact)?;
    let start = out.curve.first().map_or(f64::NAN, |p| p.mean);
    println!(
        "residual F1 {:.2} at episode {} (start {:.2})",
        out.best_f1, out.best_episode, start
    );
    Ok(())
}

fn eval(
    ctx: &Ctx,
    what: EvalTarget,
    n: usize,
    traj: Option<&Path>,
    policy: Option<&Path>,
    residual: Option<&Path>,
) -> CliResult<()> {
    if n == 0 {
        return Err(Error::Config("eval needs at least one rollout".into()).into());
    }
    let setup = ctx.setup()?;
    let mut env = setup.real_env();
    let mut first: Option<RolloutLog> = None;
    let mut keep = |log: RolloutLog| {
        let active = log.active_per_step();
        first.get_or_insert(log);
        active
    };
    let (label, (mean, sd, _)) = match what {
        EvalTarget::OpenLoop => {
            let path = match traj {
                Some(p) => p.to_path_buf(),
                None if ctx.path(TAU_STAR).exists() => ctx.path(TAU_STAR),
                None => ctx.path(TAU_SIM),
            };
            let t = load_traj(&path, "train-sim")?;
            let r = eval_protocol(n, &setup.roll, |s| Ok(keep(run_mode(&mut env, RolloutMode::OpenLoop, None, Some(&t), s)?)))?;
            ("open-loop", r)
        }
        EvalTarget::ClosedLoop | EvalTarget::Hybrid => {
            let p = load_policy(&policy.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(&format!("{PI_SIM}.json"))))?;
            let (mode, label) = if what == EvalTarget::Hybrid {
                (RolloutMode::Hybrid, "hybrid")
            } else {
                (RolloutMode::ClosedLoop, "closed-loop")
            };
            let r = eval_protocol(n, &setup.roll, |s| Ok(keep(run_mode(&mut env, mode, Some(&p), None, s)?)))?;
            (label, r)
        }
        EvalTarget::Residual => {
            let a = load_residual(&residual.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(&format!("{RESIDUAL}.json"))))?;
            a.base.check_matches(&setup.roll)?;
            let r = eval_protocol(n, &setup.roll, |s| Ok(keep(residual_rollout(&mut env, &a.base, Some(&a.policies), s)?)))?;
            ("residual", r)
        }
    };
    let log = first.expect("at least one rollout");
    let report = score_f1(&log.active_per_step(), &setup.roll)?;
    write_text(&ctx.path(&format!("eval_{label}.svg")), &emit_roll_svg(&report, &setup.roll))?;
    write_text(&ctx.path(&format!("eval_{label}.txt")), &emit_roll_table(&report, &ctx.header))?;
    println!("{label}: F1 {mean:.2} ± {sd:.2} over {n} rollouts");
    Ok(())
}

fn matrix(ctx: &Ctx, n: usize, reuse_sim: bool, randomized_cl: bool) -> CliResult<()> {
    let setup = ctx.setup()?;
    let (policy, tau_sim) = if reuse_sim {
        (load_policy(&ctx.path(&format!("{PI_SIM}.json")))?, load_traj(&ctx.path(TAU_SIM), "train-sim")?)
    } else {
        let out = setup.train_sim(ctx.g.seed)?;
        save_json(&ctx.path(&format!("{PI_SIM}.json")), &ctx.header, &out.policy)?;
        out.best_trajectory.save(&ctx.path(TAU_SIM), &ctx.header)?;
        (out.policy, out.best_trajectory)
    };
    tau_sim.check_matches(&setup.roll)?;
    let closed_loop = if randomized_cl {
        let mut dr = setup.clone();
        dr.cfg.ppo.randomize = Some(ctx.cfg.gap.effective_ranges());
        dr.train_sim(ctx.g.seed)?.policy
    } else {
        policy
    };
    let run = run_matrix(&setup, &tau_sim, &closed_loop, ctx.g.seed, n)?;
    let table = matrix_table(&run.rows, &ctx.header);
    write_text(&ctx.path("matrix.txt"), &table)?;
    print!("{table}");
    Ok(())
}
