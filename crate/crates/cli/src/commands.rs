// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use dncplace::baseline::{greedy_place, random_place};
use dncplace::board::{parse_arch, BoardArch, PlacementState};
use dncplace::decomposition::{
    run_decomposition, summarize, summary_csv, summary_table, ReuseSetting, SubtaskPlan, SummaryRow,
};
use dncplace::features::{assemble_state, Grid, CHANNEL_NAMES, NUM_CHANNELS};
use dncplace::netlist::{generate_synthetic, parse_netlist, BlockType, Netlist};
use dncplace::nn::gradcheck::gradient_check;
use dncplace::nn::{ModelWeights, NetworkSpec};
use dncplace::ppo::{decode_argmax, train, Task};
use dncplace::wirelength::{export_vpr_place, import_vpr_place, total_hpwl};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Managed, RunConfig};
use crate::{BaselineKind, Cli, Command, Failure, Instance, Preset};

type Result<T> = std::result::Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.seeds.clear();
    }
    let ctx = Ctx {
        out: cli.out.clone(),
        jobs: cli.jobs.max(1),
    };
    match cli.command {
        Command::Train { instance, episodes } => {
            if let Some(n) = episodes {
                cfg.ppo.episodes_total = n;
            }
            cmd_train(&ctx, cfg, &instance)
        }
        Command::Decompose { instance } => cmd_decompose(&ctx, cfg, &instance),
        Command::Baseline { instance, kind } => cmd_baseline(&ctx, cfg, &instance, kind),
        Command::Gradcheck { corrupt_gradient } => cmd_gradcheck(cfg, corrupt_gradient),
        Command::Gen { preset } => cmd_gen(&ctx, cfg, preset),
        Command::ExportPlace { instance, weights } => cmd_export_place(&ctx, cfg, &instance, &weights),
        Command::DumpState { instance, place, block } => {
            cmd_dump_state(&ctx, cfg, &instance, place.as_deref(), block.as_deref())
        }
    }
}

struct Ctx {
    out: PathBuf,
    jobs: usize,
}

impl Ctx {
    fn write(&self, rel: impl AsRef<Path>, contents: &str) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("cannot create `{}`", dir.display()))
                .map_err(runtime)?;
        }
        std::fs::write(&path, contents)
            .with_context(|| format!("cannot write `{}`", path.display()))
            .map_err(runtime)
    }
}

struct Loaded {
    arch: BoardArch,
    netlist: Netlist,
    netlist_path: PathBuf,
}

fn read_input(kind: &str, path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {kind} `{}`", path.display()))
        .map_err(usage)
}

/// Resolves instance paths (flags win over config), records them in `cfg`, and parses both files.
fn load_instance(cfg: &mut RunConfig, instance: &Instance) -> Result<Loaded> {
    if let Some(p) = &instance.netlist {
        cfg.netlist = Some(p.clone());
    }
    if let Some(p) = &instance.arch {
        cfg.arch = Some(p.clone());
    }
    let netlist_path = cfg
        .netlist
        .clone()
        .ok_or_else(|| usage(anyhow!("no netlist given: pass --netlist or set `netlist` in the config")))?;
    let arch_path = cfg
        .arch
        .clone()
        .ok_or_else(|| usage(anyhow!("no architecture given: pass --arch or set `arch` in the config")))?;
    let netlist = parse_netlist(&read_input("netlist", &netlist_path)?)
        .with_context(|| format!("in netlist `{}`", netlist_path.display()))
        .map_err(usage)?;
    let arch = parse_arch(&read_input("architecture", &arch_path)?)
        .with_context(|| format!("in architecture `{}`", arch_path.display()))
        .map_err(usage)?;
    cfg.check().map_err(usage)?;
    Ok(Loaded {
        arch,
        netlist,
        netlist_path,
    })
}

fn network_spec(cfg: &RunConfig, arch: &BoardArch) -> Result<NetworkSpec> {
    let spec = cfg.spec.unwrap_or_else(|| NetworkSpec::for_board(arch.width(), arch.height()));
    if (spec.width, spec.height) != (arch.width(), arch.height()) {
        return Err(usage(anyhow!(
            "network spec is {}x{} but the board is {}x{}",
            spec.width,
            spec.height,
            arch.width(),
            arch.height()
        )));
    }
    Ok(spec)
}

/// Managed block ids and the greedy placement of every other block.
fn base_placement(cfg: &RunConfig, l: &Loaded) -> Result<(PlacementState, Vec<usize>)> {
    let n = l.netlist.num_blocks();
    let mut base = PlacementState::new(&l.arch, n);
    let managed = match cfg.managed {
        Managed::All => (0..n).collect(),
        Managed::Clb => l.netlist.ids_of_type(BlockType::Clb),
    };
    let others: Vec<usize> = (0..n).filter(|b| !managed.contains(b)).collect();
    let order = l.netlist.placement_order(&others).map_err(runtime)?;
    greedy_place(&l.arch, &l.netlist, &mut base, &order).map_err(runtime)?;
    Ok((base, managed))
}

fn place_file(l: &Loaded, state: &PlacementState) -> Result<String> {
    let name = l.netlist_path.file_name().map(|n| n.to_string_lossy().into_owned());
    export_vpr_place(state, &l.netlist, &l.arch, name.as_deref()).map_err(runtime)
}

fn cmd_train(ctx: &Ctx, mut cfg: RunConfig, instance: &Instance) -> Result<ExitCode> {
    let l = load_instance(&mut cfg, instance)?;
    let spec = network_spec(&cfg, &l.arch)?;
    let (base, managed) = base_placement(&cfg, &l)?;
    let hash = cfg.hash();
    let task = Task::new(&l.arch, &l.netlist, base, &managed).map_err(runtime)?;
    let out = train(&task, &spec, &cfg.ppo, cfg.seed, None).map_err(runtime)?;
    ctx.write("curve.csv", &out.stats.to_csv(Some(&hash)))?;
    ctx.write("weights.json", &out.weights.to_checkpoint())?;
    ctx.write("best.place", &place_file(&l, &out.best)?)?;
    println!("best HPWL {}", out.best_hpwl);
    Ok(ExitCode::SUCCESS)
}

enum Job {
    Setting(ReuseSetting, u64),
    Baseline(u64),
}

fn cmd_decompose(ctx: &Ctx, mut cfg: RunConfig, instance: &Instance) -> Result<ExitCode> {
    let l = load_instance(&mut cfg, instance)?;
    let spec = network_spec(&cfg, &l.arch)?;
    let (base, managed) = base_placement(&cfg, &l)?;
    let plan = SubtaskPlan::new(
        &l.netlist,
        &managed,
        cfg.granularity,
        cfg.episodes_per_subtask,
        cfg.iterations,
    )
    .map_err(usage)?;
    let hash = cfg.hash();
    let seeds = cfg.seeds();
    let settings: Vec<ReuseSetting> = cfg
        .settings
        .iter()
        .map(|&n| ReuseSetting::from_number(n))
        .collect::<std::result::Result<_, _>>()
        .map_err(usage)?;
    let mut jobs: Vec<Job> = Vec::new();
    for &s in &settings {
        jobs.extend(seeds.iter().map(|&seed| Job::Setting(s, seed)));
    }
    if cfg.baseline {
        jobs.extend(seeds.iter().map(|&seed| Job::Baseline(seed)));
    }

    let run_job = |job: &Job| -> Result<f64> {
        match *job {
            Job::Setting(setting, seed) => {
                let dir = format!("setting{}_seed{seed}", setting.number());
                let abs = ctx.out.join(&dir);
                std::fs::create_dir_all(&abs)
                    .with_context(|| format!("cannot create `{}`", abs.display()))
                    .map_err(runtime)?;
                let r = run_decomposition(&l.arch, &l.netlist, &base, &plan, setting, &spec, &cfg.ppo, seed, Some(&abs))
                    .map_err(runtime)?;
                ctx.write(format!("{dir}/curve.csv"), &r.curve_csv(Some(&hash)))?;
                ctx.write(format!("{dir}/best.place"), &place_file(&l, &r.final_placement)?)?;
                let audits = serde_json::to_string_pretty(&r.audits).expect("audits serialize");
                ctx.write(format!("{dir}/audit.json"), &audits)?;
                log::info!("setting {} seed {seed}: best HPWL {}", setting.number(), r.final_hpwl);
                Ok(r.final_hpwl)
            }
            Job::Baseline(seed) => {
                let dir = format!("baseline_seed{seed}");
                let task = Task::new(&l.arch, &l.netlist, base.clone(), &managed).map_err(runtime)?;
                let mut ppo = cfg.ppo;
                ppo.episodes_total = plan.episodes_per_subtask * plan.granularity() * plan.iterations;
                let out = train(&task, &spec, &ppo, seed, None).map_err(runtime)?;
                ctx.write(format!("{dir}/curve.csv"), &out.stats.to_csv(Some(&hash)))?;
                ctx.write(format!("{dir}/weights.json"), &out.weights.to_checkpoint())?;
                ctx.write(format!("{dir}/best.place"), &place_file(&l, &out.best)?)?;
                log::info!("baseline seed {seed}: best HPWL {}", out.best_hpwl);
                Ok(out.best_hpwl)
            }
        }
    };

    let results = run_parallel(&jobs, ctx.jobs, run_job)?;

    let mut rows: Vec<SummaryRow> = Vec::new();
    let per_seed = seeds.len();
    for (i, &s) in settings.iter().enumerate() {
        let vals = &results[i * per_seed..(i + 1) * per_seed];
        rows.push(summarize(managed.len(), plan.granularity(), Some(s), vals));
    }
    if cfg.baseline {
        let start = settings.len() * per_seed;
        rows.push(summarize(managed.len(), 1, None, &results[start..start + per_seed]));
    }
    ctx.write("summary.csv", &summary_csv(&rows, Some(&hash)))?;
    let table = summary_table(&rows);
    ctx.write("summary.txt", &table)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

/// Runs independent jobs on up to `workers` threads; results keep job order.
fn run_parallel<J: Sync, F>(jobs: &[J], workers: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&J) -> Result<f64> + Sync,
{
    if workers <= 1 {
        return jobs.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn cmd_baseline(ctx: &Ctx, mut cfg: RunConfig, instance: &Instance, kind: BaselineKind) -> Result<ExitCode> {
    let l = load_instance(&mut cfg, instance)?;
    let (mut state, managed) = base_placement(&cfg, &l)?;
    let order = l.netlist.placement_order(&managed).map_err(runtime)?;
    match kind {
        BaselineKind::Greedy => greedy_place(&l.arch, &l.netlist, &mut state, &order),
        BaselineKind::Random => random_place(
            &l.arch,
            &l.netlist,
            &mut state,
            &order,
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
        ),
    }
    .map_err(runtime)?;
    state
        .validate(&l.arch, &l.netlist)
        .map_err(|e| runtime(anyhow!("baseline produced an illegal placement: {e}")))?;
    let report = total_hpwl(&state, &l.netlist);
    ctx.write("placement.place", &place_file(&l, &state)?)?;
    ctx.write("wirelength.csv", &format!("# config {}\n{}", cfg.hash(), report.to_csv()))?;
    println!("HPWL {}", report.total);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(cfg: RunConfig, corrupt: bool) -> Result<ExitCode> {
    let spec = cfg.spec.unwrap_or_else(NetworkSpec::tiny);
    let report = gradient_check(&spec, cfg.seed, corrupt).map_err(usage)?;
    for g in &report.groups {
        println!("{:<32} {:.3e}", g.name, g.max_rel_error);
    }
    if report.passed() {
        println!("PASS max relative error {:.3e} < {:.0e}", report.max_error(), report.tolerance);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL max relative error {:.3e} >= {:.0e}", report.max_error(), report.tolerance);
        Ok(ExitCode::from(1))
    }
}

fn cmd_gen(ctx: &Ctx, cfg: RunConfig, preset: Preset) -> Result<ExitCode> {
    // (clb, io, nets, max fanout, width, height, io capacity)
    let (clb, io, nets, fanout, w, h, io_cap) = match preset {
        Preset::Tseng => (56, 174, 300, 8, 24, 24, 2),
        Preset::Small => (22, 8, 36, 4, 7, 7, 2),
        Preset::Toy => (3, 1, 4, 2, 4, 4, 1),
    };
    let netlist = generate_synthetic(clb, io, nets, fanout, cfg.seed).map_err(usage)?;
    let arch = BoardArch::perimeter_io(w, h, io_cap);
    ctx.write("netlist.net", &netlist.serialize())?;
    ctx.write("arch.arch", &arch.serialize())?;
    println!(
        "{} blocks ({clb} CLB, {io} IO), {} nets on {w}x{h}",
        netlist.num_blocks(),
        netlist.nets().len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_export_place(ctx: &Ctx, mut cfg: RunConfig, instance: &Instance, weights: &Path) -> Result<ExitCode> {
    let l = load_instance(&mut cfg, instance)?;
    let w = ModelWeights::from_checkpoint(&read_input("checkpoint", weights)?)
        .with_context(|| format!("in checkpoint `{}`", weights.display()))
        .map_err(usage)?;
    cfg.spec = Some(w.spec);
    network_spec(&cfg, &l.arch)?;
    let (base, managed) = base_placement(&cfg, &l)?;
    let task = Task::new(&l.arch, &l.netlist, base, &managed).map_err(runtime)?;
    let state = decode_argmax(&task, &w).map_err(runtime)?;
    ctx.write("placement.place", &place_file(&l, &state)?)?;
    println!("HPWL {}", total_hpwl(&state, &l.netlist).total);
    Ok(ExitCode::SUCCESS)
}

fn cmd_dump_state(
    ctx: &Ctx,
    mut cfg: RunConfig,
    instance: &Instance,
    place: Option<&Path>,
    block: Option<&str>,
) -> Result<ExitCode> {
    let l = load_instance(&mut cfg, instance)?;
    let state = match place {
        Some(p) => import_vpr_place(&read_input("placement", p)?, &l.netlist, &l.arch)
            .with_context(|| format!("in placement `{}`", p.display()))
            .map_err(usage)?,
        None => PlacementState::new(&l.arch, l.netlist.num_blocks()),
    };
    let id = match block {
        Some(name) => {
            l.netlist
                .block_by_name(name)
                .ok_or_else(|| usage(anyhow!("unknown block `{name}`")))?
                .id
        }
        None => {
            let unplaced: Vec<usize> = (0..l.netlist.num_blocks()).filter(|&b| state.position(b).is_none()).collect();
            *l.netlist
                .placement_order(&unplaced)
                .map_err(runtime)?
                .first()
                .ok_or_else(|| usage(anyhow!("every block is already placed")))?
        }
    };
    let tensor = assemble_state(&l.arch, &state, &l.netlist, id).map_err(usage)?;
    for (c, name) in CHANNEL_NAMES.iter().enumerate().take(NUM_CHANNELS) {
        ctx.write(format!("{name}.csv"), &tensor.channel_grid(c).to_csv())?;
    }
    let mask = Grid {
        width: tensor.width,
        height: tensor.height,
        data: tensor.current_mask.cells.iter().map(|&b| f64::from(u8::from(b))).collect(),
    };
    ctx.write("mask.csv", &mask.to_csv())?;
    println!(
        "block {} ({} legal cells)",
        l.netlist.blocks()[id].name,
        tensor.current_mask.count()
    );
    Ok(ExitCode::SUCCESS)
}
