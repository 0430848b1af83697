use std::path::PathBuf;

use anyhow::Result;
use plansim_core::costdb::{load_profile, save_profile, synthetic_profile};
use plansim_core::HardwareSpec;

use crate::config::{self, invalid, Outputs, Source};

#[derive(clap::Args)]
pub struct ValidateArgs {
    /// Profile files to check.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

#[derive(clap::Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hardware spec (JSON) the kernel durations are derived from.
    #[arg(long)]
    hardware: Option<PathBuf>,
    /// Destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn validate(args: ValidateArgs) -> Result<()> {
    let mut bad = 0;
    for path in &args.paths {
        match load_profile(path) {
            Ok(t) => println!(
                "ok {}: {} operator entries, {} collective rows",
                path.display(),
                t.ops.len(),
                t.collectives.len()
            ),
            Err(e) => {
                bad += 1;
                println!("FAILED {}: {e}", path.display());
            }
        }
    }
    if bad > 0 {
        return Err(invalid(format!(
            "{bad} of {} profile(s) failed validation",
            args.paths.len()
        )));
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let hw = match args.hardware {
        Some(p) => config::hardware(Some(Source::Path(p)), std::path::Path::new(""))?,
        None => HardwareSpec::a100_cluster(),
    };
    let text = save_profile(&synthetic_profile(&hw, args.seed));
    match args.out {
        Some(p) => {
            let mut out = Outputs::default();
            out.add(Some(&p), text);
            out.commit()
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
