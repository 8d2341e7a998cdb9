use adp_core::adp::{Horizon, Sampler};
use adp_core::rate::Temperature;
use adp_core::rng::stream_rng;
use adp_core::spiking::{inter_spike_intervals, simulate_spiking, write_raster, SpikingNetwork};
use adp_core::stats::{mean_stderr, permutation_serial_test, CHI2_P_FLOOR};
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::args::{SamplerChoice, SpikingArgs};
use crate::config::RunConfig;
use crate::output::{create, csv_writer, ensure_dir, read_json, run_jobs, write_json};

pub fn load_network(path: &std::path::Path) -> Result<SpikingNetwork> {
    let net: SpikingNetwork = read_json(path)?;
    net.validate()
        .with_context(|| format!("invalid network {}", path.display()))?;
    Ok(net)
}

#[derive(Debug, Clone, Serialize)]
pub struct SerialTest {
    pub neuron: usize,
    pub intervals: usize,
    pub permutations: usize,
    pub p_value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpikingStats {
    pub seed: u64,
    pub replications: usize,
    pub horizon: f64,
    pub mean_counts: Vec<f64>,
    pub count_stderr: Vec<f64>,
    /// `(count_i − count_j)` z-score for two-neuron networks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_count_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isi_serial_test: Option<SerialTest>,
}

pub fn run_spiking_demo(args: &SpikingArgs) -> Result<SpikingStats> {
    let net = load_network(&args.model)?;
    let beta = Temperature::new(args.beta)?;
    let t_max = args.horizon_time;
    if !(t_max > 0.0 && t_max.is_finite()) {
        bail!("--horizon-time must be positive and finite");
    }
    if args.replications == 0 || args.isi_bins == 0 {
        bail!("--replications and --isi-bins must be positive");
    }
    let sampler = match args.sampler {
        SamplerChoice::Iaa => Sampler::Iaa,
        SamplerChoice::Aaa => Sampler::Aaa,
        SamplerChoice::Unif => bail!("spiking-demo supports --sampler iaa or aaa"),
    };
    let seed = args.run.seed;
    let trains = run_jobs(args.run.streams, args.replications, |r| {
        let mut rng = stream_rng(seed, r);
        Ok(simulate_spiking(
            &net,
            sampler,
            Horizon::MaxTime(t_max),
            beta,
            &mut rng,
        )?)
    })?;

    let out = &args.run.out;
    ensure_dir(out)?;
    write_json(
        &out.join("run_config.json"),
        &RunConfig {
            command: "spiking-demo".into(),
            model: args.model.display().to_string(),
            sampler: Some(format!("{:?}", args.sampler).to_lowercase()),
            lambda_bar: None,
            beta: args.beta,
            horizon: Some(Horizon::MaxTime(t_max)),
            seed,
            replications: args.replications,
            thresholds: None,
        },
    )?;
    let mut raster = create(&out.join("raster.csv"))?;
    write_raster(&trains[0], &mut raster)?;

    let n = net.n;
    let counts: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            trains
                .iter()
                .map(|t| t.actions().filter(|&a| a == j).count() as f64)
                .collect()
        })
        .collect();
    let moments: Vec<(f64, f64)> = counts.iter().map(|c| mean_stderr(c)).collect();

    let mut summary = csv_writer(&out.join("summary.csv"))?;
    summary.write_record(["neuron", "total_spikes", "mean_count", "count_stderr", "rate"])?;
    for (j, c) in counts.iter().enumerate() {
        let (m, se) = moments[j];
        let se = if se.is_finite() { se } else { 0.0 };
        summary.write_record([
            (j + 1).to_string(),
            (c.iter().sum::<f64>() as u64).to_string(),
            m.to_string(),
            se.to_string(),
            (m / t_max).to_string(),
        ])?;
    }
    summary.flush()?;

    let width = t_max / args.isi_bins as f64;
    let mut hist = csv_writer(&out.join("isi_histogram.csv"))?;
    hist.write_record(["neuron", "bin_lo", "bin_hi", "count"])?;
    let mut isis_by_neuron = Vec::with_capacity(n);
    for j in 0..n {
        let isis: Vec<f64> = trains.iter().flat_map(|t| inter_spike_intervals(t, j)).collect();
        let mut bins = vec![0u64; args.isi_bins];
        for &d in &isis {
            bins[((d / width) as usize).min(args.isi_bins - 1)] += 1;
        }
        for (b, c) in bins.iter().enumerate() {
            hist.write_record([
                (j + 1).to_string(),
                (b as f64 * width).to_string(),
                ((b + 1) as f64 * width).to_string(),
                c.to_string(),
            ])?;
        }
        isis_by_neuron.push(isis);
    }
    hist.flush()?;

    let pair_count_z = (n == 2).then(|| {
        let diffs: Vec<f64> = counts[0].iter().zip(&counts[1]).map(|(a, b)| a - b).collect();
        let (m, se) = mean_stderr(&diffs);
        if se > 0.0 {
            m / se
        } else {
            0.0
        }
    });
    let isi_serial_test = if n == 1 && isis_by_neuron[0].len() >= 3 {
        let mut rng = stream_rng(seed, u64::MAX);
        let p = permutation_serial_test(&isis_by_neuron[0], args.permutations, &mut rng);
        Some(SerialTest {
            neuron: 1,
            intervals: isis_by_neuron[0].len(),
            permutations: args.permutations,
            p_value: p,
            threshold: CHI2_P_FLOOR,
            pass: p > CHI2_P_FLOOR,
        })
    } else {
        None
    };
    let stats = SpikingStats {
        seed,
        replications: args.replications,
        horizon: t_max,
        mean_counts: moments.iter().map(|m| m.0).collect(),
        count_stderr: moments
            .iter()
            .map(|m| if m.1.is_finite() { m.1 } else { 0.0 })
            .collect(),
        pair_count_z,
        isi_serial_test,
    };
    write_json(&out.join("stats.json"), &stats)?;
    Ok(stats)
}
