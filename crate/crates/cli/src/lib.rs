//! Command implementations behind the `adp` binary.

pub mod args;
pub mod config;
pub mod output;
pub mod rl;
pub mod simulate;
pub mod spiking_demo;
pub mod validate;

use anyhow::Result;

use args::{Cli, Command};

/// Whether every check run by the command passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    Failed,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate(a) => simulate::run_simulate(a).map(|_| Outcome::Passed),
        Command::ValidateEquivalence(a) => {
            let report = validate::run_validate(a)?;
            for t in report.failed() {
                match t.p_value {
                    Some(p) => eprintln!("FAIL {}: p-value {p:.3e} below {}", t.name, t.threshold),
                    None => eprintln!(
                        "FAIL {}: statistic {} vs threshold {}",
                        t.name, t.statistic, t.threshold
                    ),
                }
            }
            Ok(if report.overall_pass {
                Outcome::Passed
            } else {
                Outcome::Failed
            })
        }
        Command::RlTrain(a) => {
            let c = rl::run_rl_train(a)?;
            println!(
                "linf policy gap {:.3e}, objective gap {:.3e}",
                c.linf_policy_gap, c.objective_gap
            );
            Ok(Outcome::Passed)
        }
        Command::RlEval(a) => {
            let e = rl::run_rl_eval(a)?;
            println!(
                "kl {:.6} (monte carlo {:.6} ± {:.6})",
                e.kl_closed_form, e.kl_monte_carlo.estimate, e.kl_monte_carlo.stderr
            );
            Ok(Outcome::Passed)
        }
        Command::SpikingDemo(a) => {
            let s = spiking_demo::run_spiking_demo(a)?;
            Ok(match s.isi_serial_test {
                Some(t) if !t.pass => Outcome::Failed,
                _ => Outcome::Passed,
            })
        }
    }
}
