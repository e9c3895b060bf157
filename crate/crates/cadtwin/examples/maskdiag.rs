use cadtwin::pipeline::{load_asset, load_scene};
use cadtwin::render::{render, RenderConfig};
use cadtwin::vehicle::assemble;
fn main() {
    let scene = load_scene(std::path::Path::new("/tmp/full/fix/scene.json")).unwrap();
    let obs = scene.to_observations().unwrap();
    let fit = load_asset(std::path::Path::new("/tmp/full/asset.cta")).unwrap();
    let mesh = assemble(&fit.vehicle);
    let cfg = RenderConfig { tau: 0.0, shade: false, ..Default::default() };
    for i in [0usize, 5, 10] {
        let out = render(&mesh, &obs.cameras[i], &fit.appearance, &cfg).unwrap();
        let mask = &obs.masks[i];
        let (w, h) = (mask.width, mask.height);
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let a = out.mask.data[y * w + x] > 0.5;
                let b = mask.data[y * w + x] > 0.5;
                let px = match (a, b) {
                    (true, true) => [90u8, 90, 90],
                    (false, false) => [0, 0, 0],
                    (true, false) => [255, 40, 40],  // fit covers, truth empty
                    (false, true) => [40, 120, 255], // truth covers, fit empty
                };
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img.save(format!("/tmp/diff{i}.png")).unwrap();
    }
}
