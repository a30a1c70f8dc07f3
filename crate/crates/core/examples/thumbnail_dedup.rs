//! Finding training images that duplicate test images via 30x30 thumbnails.
//!
//! cargo run --example thumbnail_dedup [candidates_dir reference_dir threshold]

use lpref::dataset::{
    find_duplicates, format_dedup_report, load_thumbnails, thumbnail_distance, Thumbnail,
};

fn gradient(w: usize, h: usize, shift: u8) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let v = ((x * 255 / w) as u8).wrapping_add(shift);
            rgb.extend_from_slice(&[v, (y * 255 / h) as u8, 128]);
        }
    }
    rgb
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [cand, reference, threshold] = &args[..] {
        let threshold: f64 = threshold.parse()?;
        let pairs = find_duplicates(
            &load_thumbnails(cand)?,
            &load_thumbnails(reference)?,
            threshold,
        );
        print!("{}", format_dedup_report(&pairs, threshold));
        return Ok(());
    }

    // the same picture at two resolutions, a slightly edited copy, and an unrelated one
    let thumb = |w, h, shift| Thumbnail::from_rgb(w, h, &gradient(w, h, shift)).unwrap();
    let test_set = vec![("test-0001".to_string(), thumb(640, 480, 0))];
    let crawled = vec![
        ("crawl-small".to_string(), thumb(320, 240, 0)),
        ("crawl-edited".to_string(), thumb(640, 480, 3)),
        ("crawl-other".to_string(), thumb(300, 300, 120)),
    ];
    for (id, t) in &crawled {
        println!(
            "{id}: distance {:.1}",
            thumbnail_distance(t, &test_set[0].1)
        );
    }
    let threshold = 200.0;
    println!();
    print!(
        "{}",
        format_dedup_report(&find_duplicates(&crawled, &test_set, threshold), threshold)
    );
    Ok(())
}
