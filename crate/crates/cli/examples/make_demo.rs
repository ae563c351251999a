//! Generate a self-contained demo workspace: a toy conv net, synthetic
//! data, its architecture descriptor, a synthetic latency table (clearly
//! labeled as such; real deployments must measure), and a search space.
//!
//! Usage: cargo run -p mixbit-cli --example make_demo -- <dir> [seed]

use std::path::Path;

use mixbit_core::costmodel::LatencyTable;
use mixbit_core::netlab::{Dataset, Network};
use mixbit_core::proxy::synthetic;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dir = args.get(1).map(String::as_str).unwrap_or("demo");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
    let dir = Path::new(dir);
    std::fs::create_dir_all(dir).expect("create demo dir");

    let net = Network::conv_net(1, 8, 8, &[4, 8, 8], 3, 4).expect("conv net");
    net.save(&dir.join("net.json")).expect("write net");
    net.descriptor()
        .save(&dir.join("descriptor.json"))
        .expect("write descriptor");

    let data = Dataset::blobs(net.num_classes(), 64, net.input_dim(), 0.5, seed);
    data.save(&dir.join("data.dset")).expect("write data");

    // synthetic latency numbers: proportional to MACs with a mild per-bit
    // slope; stand-ins for measurements, usable for exercising the latency
    // constraint only
    let mut lat = LatencyTable::default();
    for layer in net.descriptor().quantizable() {
        for bits in [2u8, 4, 8] {
            let t = layer.mac_count as f64 / 1e5 * (0.5 + 0.0625 * bits as f64);
            lat.insert(&layer.name, bits, (t * 1e4).round() / 1e4);
        }
    }
    lat.save_csv(&dir.join("latency_synthetic.csv"))
        .expect("write latency");

    synthetic::space()
        .save_toml(&dir.join("space.toml"))
        .expect("write space");

    println!(
        "demo files in {}: net.json descriptor.json data.dset latency_synthetic.csv space.toml",
        dir.display()
    );
}
