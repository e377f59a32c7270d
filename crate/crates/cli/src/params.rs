//! `params`: exact parameter totals for every architecture, with the
//! floored millions the literature quotes alongside.

use std::path::PathBuf;

use clap::Args;

use aunets_core::net::{param_count, ArchDescriptor, Profile, ProfileName};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Args)]
pub struct ParamsArgs {
    /// Network profile: tiny or vgg16.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// 237029186 -> "237,029,186".
fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Floored millions, the convention behind quotes like "237m". Floor is
/// deliberate: 251,743,874 is quoted as 251m, not 252m.
fn floor_millions(n: u64) -> String {
    format!("{}m", n / 1_000_000)
}

pub fn render_table(profile: &Profile) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12}  {:>17} {:>6}  {:>17} {:>6}\n",
        "architecture", "total", "", "learnable", ""
    ));
    for arch in ArchDescriptor::ALL {
        let total = param_count(profile, arch, false);
        let learn = param_count(profile, arch, true);
        out.push_str(&format!(
            "{:<12}  {:>17} {:>6}  {:>17} {:>6}\n",
            arch.as_str(),
            group_thousands(total),
            floor_millions(total),
            group_thousands(learn),
            floor_millions(learn),
        ));
    }
    out
}

pub fn run(args: ParamsArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let name_str = cfg.resolve(args.profile, "profile", "vgg16".to_string())?;
    let name = ProfileName::parse(&name_str)
        .map_err(|e| crate::config::UsageError(e.to_string()))?;
    let profile = Profile::by_name(name, 2);
    print!("{}", render_table(&profile));
    Ok(())
}
