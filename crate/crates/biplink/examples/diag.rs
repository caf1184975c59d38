// temporary diagnostic: per-layer embedding distance stats on the planted benchmark
use biplink::autodiff::Tape;
use biplink::gat::{encode_adjacency, GatConfig, GatParams};
use biplink::ingest::{build_hetero_adjacency, tanimoto_similarity, jaccard_similarity, AdjacencyConfig};
use biplink::synthgen::{generate, SynthSpec};

fn main() {
    let spec = SynthSpec::default();
    let (_, y, fp, ints) = generate(&spec).unwrap();
    let k_d = tanimoto_similarity(&fp);
    let k_t = jaccard_similarity(&ints);
    let adj = build_hetero_adjacency(&k_d, &k_t, &y, &AdjacencyConfig::default()).unwrap();
    let config = GatConfig { seed: 7, ..GatConfig::default() };
    let params = GatParams::init(&config).unwrap();
    let mut tape = Tape::new();
    let (set, _) = encode_adjacency(&mut tape, &config, &params, &adj, false);
    for (l, &h) in set.layers.iter().enumerate() {
        let v = tape.value(h);
        let n = v.nrows();
        // row norm spread and pairwise distance stats over drugs
        let mut dmin = f64::MAX; let mut dmax: f64 = 0.0; let mut dsum = 0.0; let mut cnt = 0.0;
        for i in 0..60 {
            for j in (i+1)..60 {
                let d: f64 = (0..v.ncols()).map(|c| (v[[i,c]]-v[[j,c]]).powi(2)).sum();
                dmin = dmin.min(d); dmax = dmax.max(d); dsum += d; cnt += 1.0;
            }
        }
        let mean_entry: f64 = v.iter().sum::<f64>() / (v.len() as f64);
        let var_entry: f64 = v.iter().map(|x| (x-mean_entry).powi(2)).sum::<f64>() / v.len() as f64;
        println!("layer {}: {}x{} entries mean {:.4} std {:.4}; drug pair sqdist min {:.4e} mean {:.4e} max {:.4e}",
            l+1, n, v.ncols(), mean_entry, var_entry.sqrt(), dmin, dsum/cnt, dmax);
    }
}
