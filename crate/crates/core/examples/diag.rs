//! Ad-hoc diagnostic: guidance-vs-score localization quality per domain.
use adgen::attention::{attention_matrix_var, guidance_scores_var};
use adgen::autograd::Graph;
use adgen::checkpoint::Checkpoint;
use adgen::comparer::PooledPatchesVar;
use adgen::evaluation::auroc;
use adgen::inference::{build_reference_bank, score_query, scatter_scores};
use adgen::model::PatchSetVar;
use adgen::mvtec::load_mvtec_layout;
use adgen::pyramid::patchify;
use adgen::training::model_from_checkpoint;
use rand_chacha::rand_core::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (ckpt_path, root, domain, size) = (&args[1], &args[2], &args[3], args[4].parse::<usize>().unwrap());
    let (model, _) = model_from_checkpoint(&Checkpoint::load(ckpt_path.as_ref()).unwrap()).unwrap();
    let data = load_mvtec_layout(root.as_ref(), domain, size).unwrap();
    let normals = data.train_normals();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let bank = build_reference_bank(&normals, 1.0, &model, &mut rng).unwrap();

    // Guidance anomaly = 1 - a  (low similarity -> anomalous), scattered like scores.
    let mut g_scores = Vec::new();
    let mut g_labels = Vec::new();
    let mut s_scores = Vec::new();
    for sample in data.test_pool() {
        let mask = sample.mask.clone();
        // guidance per scale vs the full bank
        let pyr = model.extract_pyramid(&sample.pixels).unwrap();
        let sets = patchify(&pyr);
        let mut scores = score_query(sample, &bank, &model).unwrap();
        for (i, set) in sets.iter().enumerate() {
            let mut g = Graph::<f32>::new();
            let qv = g.input(set.patches.clone().into_dyn());
            let q = PatchSetVar { var: qv, coords: set.coords.clone(), scale_index: set.scale_index, stride: set.stride, grid: (0,0) };
            let rv = g.input(bank.per_scale[i].clone().into_dyn());
            let a = attention_matrix_var(&mut g, &model, &q, rv, i).unwrap();
            let guid = guidance_scores_var(&mut g, a);
            let gv = g.value(guid);
            // replace scores with (1 - guidance) to scatter
            for (j, val) in gv.iter().enumerate() {
                scores.per_scale[i][j] = 1.0 - val;
            }
            let _ = PooledPatchesVar { var: rv, scale_index: i, count: 0 };
        }
        let gmap = scatter_scores(&scores, size);
        let smap = scatter_scores(&score_query(sample, &bank, &model).unwrap(), size);
        for y in 0..size { for x in 0..size {
            g_scores.push(gmap.map[(y,x)] as f64);
            s_scores.push(smap.map[(y,x)] as f64);
            g_labels.push(mask.as_ref().map(|m| m[(y,x)]).unwrap_or(0));
        }}
    }
    println!("{domain}: guidance pixel AUROC {:.4}, score pixel AUROC {:.4}",
        auroc(&g_scores, &g_labels).unwrap(), auroc(&s_scores, &g_labels).unwrap());
}
