use std::path::PathBuf;
use graphdr::data::{ingest_citation_files, make_split, normalize_adjacency};
use graphdr::metrics::classification_report;
use graphdr::models::{forward, GraphContext, ModelKind, ModelSpec};
use graphdr::rng::Rng;
use graphdr::train::{train, TrainConfig};

fn main() {
    for (name, content, cites) in [
        ("cora", "data/cora/cora.content", "data/cora/cora.cites"),
        ("citeseer", "data/citeseer/citeseer.content", "data/citeseer/citeseer.cites"),
    ] {
        let ds = ingest_citation_files(&PathBuf::from(content), &PathBuf::from(cites)).unwrap();
        let split = make_split(&ds, 20, 500, 1000).unwrap();
        let norm = normalize_adjacency(&ds.edges).unwrap();
        let graph = GraphContext::new(&ds.edges, &norm);
        let x = ds.features_dense();
        let spec = ModelSpec::new(ModelKind::Gcn, ds.d(), ds.num_classes());
        for seeds in [vec![1u64, 2, 3, 4, 5], vec![8735, 2021, 5555, 25, 888]] {
            let mut accs = Vec::new();
            for &seed in &seeds {
                let cfg = TrainConfig::for_kind(ModelKind::Gcn).with_seed(seed);
                let (params, _) = train(&spec, &x, &graph, &ds.labels, &split, &cfg).unwrap();
                let mut rng = Rng::new(0);
                let pass = forward(&spec, &params, &x, &graph, false, &mut rng).unwrap();
                let r = classification_report(pass.tape.value(pass.logits), &ds.labels, &split.test).unwrap();
                accs.push(r.accuracy);
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            println!("{name} GCN seeds {seeds:?}: mean {mean:.2} {accs:?}");
        }
    }
}
