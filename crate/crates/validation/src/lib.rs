//! Acceptance suite for the workspace. The checks live in `tests/acceptance.rs`.

use std::path::PathBuf;
use std::process::Command;

/// Path to the `ikc` binary next to the running test executable, built first if missing.
pub fn ikc_binary() -> std::io::Result<PathBuf> {
    let exe = std::env::current_exe()?;
    let profile_dir = exe.parent().and_then(|deps| deps.parent()).map(PathBuf::from).unwrap_or_default();
    let bin = profile_dir.join(format!("ikc{}", std::env::consts::EXE_SUFFIX));
    if !bin.exists() {
        let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
        let mut cmd = Command::new(cargo);
        cmd.args(["build", "-p", "ikc-cli", "--bin", "ikc"]);
        if profile_dir.file_name().is_some_and(|n| n == "release") {
            cmd.arg("--release");
        }
        let status = cmd.status()?;
        if !status.success() || !bin.exists() {
            return Err(std::io::Error::other(format!("could not build {}", bin.display())));
        }
    }
    Ok(bin)
}
