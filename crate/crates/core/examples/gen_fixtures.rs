// SPDX-License-Identifier: Apache-2.0

//! Rewrites `fixtures/networks.json` from the layer tables in the library.

use std::path::Path;

fn main() -> std::io::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/networks.json");
    std::fs::write(&path, dpred::fixtures::networks_json())?;
    println!("wrote {}", path.display());
    Ok(())
}
