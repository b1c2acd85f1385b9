//! Random shift, rotation and flips applied to a small test pattern.

use codelnet::preprocess::{apply_draw, AugmentDraw, AugmentParams};
use codelnet::rng::{stream, Stream};
use codelnet::Tensor;

fn show(t: &Tensor) {
    let n = t.shape()[2];
    for row in t.data()[..n * n].chunks(n) {
        let line: String = row
            .iter()
            .map(|&v| {
                if v > 0.5 {
                    '#'
                } else if v > 0.05 {
                    '+'
                } else {
                    '.'
                }
            })
            .collect();
        println!("  {line}");
    }
}

fn main() {
    let n = 16;
    // an "L" shape so flips and rotations are visible
    let image = Tensor::from_fn(&[1, n, n], |i| {
        let (r, c) = (i / n, i % n);
        let on = (3..12).contains(&r) && (4..6).contains(&c)
            || (10..12).contains(&r) && (4..10).contains(&c);
        f32::from(u8::from(on))
    });
    println!("original");
    show(&image);

    let fixed = AugmentDraw {
        angle: 90.0,
        ..AugmentDraw::IDENTITY
    };
    println!("rotated 90 degrees");
    show(&apply_draw(&image, &fixed));

    let params = AugmentParams {
        max_shift: 3,
        ..Default::default()
    };
    let mut rng = stream(7, Stream::Augment, &[0]);
    for _ in 0..2 {
        let draw = params.draw(&mut rng);
        println!(
            "dx {} dy {} angle {:.1} flip_h {} flip_v {}",
            draw.dx, draw.dy, draw.angle, draw.flip_h, draw.flip_v
        );
        show(&apply_draw(&image, &draw));
    }
}
