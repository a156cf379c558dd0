use std::path::Path;
use tacsim_core::translation::{Direction, Generator, GanConfig, PairedSet};
use tacsim_core::data::Manifest;
use tacsim_core::data::Split;

#[test]
#[ignore]
fn probe_gan_residual() {
    let base = Path::new("/tmp/acc/gan-pairs");
    let manifest = Manifest::read(&base.join("manifest.jsonl")).unwrap();
    let cfg = GanConfig { base_channels: 32, ..Default::default() };
    let gen = Generator::load(Path::new("/tmp/acc/gan_lr_nodrop/lr_gan.tsnn"), Direction::LR, cfg).unwrap();
    let val = PairedSet::from_manifest(&manifest, base, Direction::LR, Split::Val, 64).unwrap();
    // error stratified by target intensity (white disc vs black bg) and input luminance
    let mut by_bucket = [[0.0f64; 2]; 4]; // [sum sq err, count] per bucket
    for k in 0..val.len().min(20) {
        let out = gen.translate(&val.inputs[k]).unwrap();
        let tgt = &val.targets[k];
        let inp = &val.inputs[k];
        for i in 0..tgt.pixels.len() {
            let e = out.pixels[i] as f64 - tgt.pixels[i] as f64;
            let t = tgt.pixels[i] as f64;      // target: ~0 bg, ~255 marker
            let l = inp.pixels[i] as f64;      // input luminance
            let b = match (t > 64.0, l > 64.0) {
                (false, false) => 0, // bg, dark input
                (false, true) => 1,  // bg, bright input
                (true, false) => 2,  // marker, dark input (ambiguous?)
                (true, true) => 3,   // marker, bright input
            };
            by_bucket[b][0] += e * e;
            by_bucket[b][1] += 1.0;
        }
    }
    for k in 0..val.len().min(20) {
        let out = gen.translate(&val.inputs[k]).unwrap();
        let tgt = &val.targets[k];
        let inp = &val.inputs[k];
        let mse: f64 = out.pixels.iter().zip(&tgt.pixels).map(|(&o, &t)| {
            let e = o as f64 - t as f64; e * e
        }).sum::<f64>() / tgt.pixels.len() as f64;
        let lum: f64 = inp.pixels.iter().map(|&v| v as f64).sum::<f64>() / inp.pixels.len() as f64;
        println!("img {k}: input-lum {lum:.1} psnr {:.2}", 10.0 * (255.0f64*255.0 / mse).log10());
    }
    let total: f64 = by_bucket.iter().map(|b| b[0]).sum();
    let n: f64 = by_bucket.iter().map(|b| b[1]).sum();
    println!("overall mse {:.2} psnr {:.2}", total / n, 10.0 * (255.0f64 * 255.0 / (total / n)).log10());
    for (name, b) in ["bg/dark", "bg/bright", "marker/dark", "marker/bright"].iter().zip(by_bucket) {
        println!("{name}: frac {:.3} mse {:.1} share-of-error {:.3}", b[1] / n, b[0] / b[1].max(1.0), b[0] / total);
    }
}
