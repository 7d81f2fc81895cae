//! Per-defect-kind pixel AUROC on a target domain.
use adgen::checkpoint::Checkpoint;
use adgen::evaluation::auroc;
use adgen::inference::{build_reference_bank, score_pixels};
use adgen::mvtec::load_mvtec_layout;
use adgen::training::model_from_checkpoint;
use rand_chacha::rand_core::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (ckpt, root, domain, size) = (&args[1], &args[2], &args[3], args[4].parse::<usize>().unwrap());
    let (model, _) = model_from_checkpoint(&Checkpoint::load(ckpt.as_ref()).unwrap()).unwrap();
    let data = load_mvtec_layout(root.as_ref(), domain, size).unwrap();
    let normals = data.train_normals();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let bank = build_reference_bank(&normals, 1.0, &model, &mut rng).unwrap();

    for kind in ["blob", "scratch", "swap"] {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        // normal test pixels as negatives + this kind's abnormal images
        for s in data.test_pool() {
            let is_kind = s.path.contains(&format!("/test/{kind}/"));
            if s.label == 1 && !is_kind { continue; }
            let map = score_pixels(s, &bank, &model).unwrap();
            for y in 0..size { for x in 0..size {
                scores.push(map.map[(y, x)] as f64);
                labels.push(s.mask.as_ref().map(|m| m[(y, x)]).unwrap_or(0));
            }}
        }
        match auroc(&scores, &labels) {
            Ok(a) => println!("{domain}/{kind}: pixel AUROC {a:.4}"),
            Err(e) => println!("{domain}/{kind}: {e}"),
        }
    }
}
