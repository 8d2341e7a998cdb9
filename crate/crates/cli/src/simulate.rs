use adp_core::adp::{
    check_uniformization_bound, simulate, ActionId, AdpModel, Horizon, ModelSpec, Sampler, TabularAdp,
};
use adp_core::rate::Temperature;
use adp_core::rng::stream_rng;
use anyhow::{bail, Context, Result};

use crate::args::{SamplerChoice, SimulateArgs};
use crate::config::RunConfig;
use crate::output::{create, csv_writer, ensure_dir, read_json, run_jobs, write_json};

pub fn load_model(path: &std::path::Path) -> Result<TabularAdp> {
    let spec: ModelSpec = read_json(path)?;
    TabularAdp::from_spec(&spec).with_context(|| format!("invalid model {}", path.display()))
}

pub fn sampler_for(choice: SamplerChoice, lambda_bar: Option<f64>) -> Result<Sampler> {
    Ok(match choice {
        SamplerChoice::Iaa => Sampler::Iaa,
        SamplerChoice::Aaa => Sampler::Aaa,
        SamplerChoice::Unif => Sampler::Uniformized {
            lambda_bar: lambda_bar.context("--lambda-bar is required with --sampler unif")?,
        },
    })
}

pub fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let beta = Temperature::new(args.beta)?;
    let horizon = args.horizon.horizon()?;
    let sampler = sampler_for(args.sampler, args.lambda_bar)?;
    if let Sampler::Uniformized { lambda_bar } = sampler {
        let Horizon::MaxTime(t) = horizon else {
            bail!("uniformization needs --horizon-time");
        };
        check_uniformization_bound(&model, lambda_bar, beta, t)?;
    }
    if args.replications == 0 {
        bail!("--replications must be at least 1");
    }

    let out = &args.run.out;
    ensure_dir(out)?;
    write_json(
        &out.join("run_config.json"),
        &RunConfig {
            command: "simulate".into(),
            model: args.model.display().to_string(),
            sampler: Some(format!("{:?}", args.sampler).to_lowercase()),
            lambda_bar: args.lambda_bar,
            beta: args.beta,
            horizon: Some(horizon),
            seed: args.run.seed,
            replications: args.replications,
            thresholds: None,
        },
    )?;

    let seed = args.run.seed;
    let trajectories = run_jobs(args.run.streams, args.replications, |r| {
        let mut rng = stream_rng(seed, r);
        Ok(simulate(
            &model,
            sampler,
            beta,
            horizon,
            model.initial_state(),
            &mut rng,
        )?)
    })?;

    let names = model.action_names();
    let mut summary = csv_writer(&out.join("summary.csv"))?;
    let mut header = vec![
        "replication".to_string(),
        "arrivals".into(),
        "trivial".into(),
        "final_time".into(),
        "mean_wait".into(),
    ];
    header.extend(names.iter().map(|n| format!("count_{n}")));
    summary.write_record(&header)?;

    for (r, traj) in trajectories.iter().enumerate() {
        let mut w = create(&out.join(format!("trajectory_{r:04}.jsonl")))?;
        traj.write_jsonl(&mut w, |a| match a {
            ActionId::Trivial => "Id".to_string(),
            ActionId::Action(i) => model.action_name(i),
        })?;
        std::io::Write::flush(&mut w)?;

        let mut counts = vec![0u64; names.len()];
        let mut trivial = 0u64;
        for rec in &traj.records {
            match rec.action {
                ActionId::Trivial => trivial += 1,
                ActionId::Action(a) => counts[a] += 1,
            }
        }
        let final_time = traj.records.last().map_or(0.0, |r| r.time);
        let mean_wait = if traj.is_empty() {
            0.0
        } else {
            final_time / traj.len() as f64
        };
        let mut row = vec![
            r.to_string(),
            traj.len().to_string(),
            trivial.to_string(),
            final_time.to_string(),
            mean_wait.to_string(),
        ];
        row.extend(counts.iter().map(|c| c.to_string()));
        summary.write_record(&row)?;
    }
    summary.flush()?;
    Ok(())
}
