fn main() {
    use da_monodepth::data::{render_scene, DomainStyle, SceneSpec};
    for (seed, style) in [(3u64, "bright"), (3, "dusk"), (7, "bright"), (11, "bright")] {
        let spec = SceneSpec {
            seed,
            height: 128,
            width: 128,
            style: DomainStyle::preset(style).unwrap(),
        };
        let s = render_scene(&spec).unwrap();
        da_monodepth::data::write_rgb_png(format!("/tmp/scene_{seed}_{style}.png"), &s.rgb).unwrap();
        let max = s.depth.iter().cloned().fold(0.0f64, f64::max);
        let gray = s.depth.mapv(|d| ((d / max) * 255.0) as u8);
        da_monodepth::data::write_label_png(format!("/tmp/depth_{seed}.png"), &gray).unwrap();
        let lab = s.labels.mapv(|l| l * 50);
        da_monodepth::data::write_label_png(format!("/tmp/sem_{seed}.png"), &lab).unwrap();
    }
    println!("done");
}
