//! Greedy IoU matching and mAP on a hand-sized test set.
//!
//! cargo run --example score_detections

use lpref::dataset::{parse_detections, AnswerRules, GroundTruthSet};
use lpref::scoring::{match_class, mean_average_precision, LabelSpace, IOU_THRESHOLD};

const GROUND_TRUTH: &str = "\
# image category xmin ymin xmax ymax
img1 1 0 0 10 10
img1 1 20 20 30 30
img2 1 0 0 10 10
img2 2 50 50 90 90
img3
";

const ANSWERS: &str = "\
# image category confidence xmin ymin xmax ymax
img1 1 0.95 0 0 10 10
img1 1 0.90 1 1 11 11
img2 1 0.80 0 0 10 9
img1 1 0.60 20 20 31 30
img2 2 0.70 55 55 95 95
img3 2 0.99 0 0 5 5
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels = LabelSpace::contiguous(2);
    let gts = GroundTruthSet::parse(GROUND_TRUTH, labels.clone(), "inline")?;
    let images = gts.images.iter().cloned().collect();
    let dets = parse_detections(
        ANSWERS,
        AnswerRules {
            label_space: &labels,
            images: Some(&images),
        },
    )
    .map_err(|errs| format!("{errs:?}"))?;

    let class1: Vec<_> = dets
        .iter()
        .filter(|d| d.category_id == 1)
        .cloned()
        .collect();
    let gt1: Vec<_> = gts
        .objects
        .iter()
        .filter(|g| g.category_id == 1)
        .cloned()
        .collect();
    println!("class 1 matches, in confidence order:");
    for m in match_class(&class1, &gt1, IOU_THRESHOLD) {
        let d = &class1[m.detection];
        println!(
            "  {} conf {:.2} iou {:.3} -> {:?} (gt {:?})",
            d.image_id,
            d.confidence(),
            m.iou,
            m.flag,
            m.ground_truth
        );
    }

    let result = mean_average_precision(&dets, &gts.objects, &labels)?;
    println!("\nclass  AP      GT  TP  FP");
    for c in &result.per_class {
        println!(
            "{:<5}  {:.4}  {:>2}  {:>2}  {:>2}",
            c.category_id, c.ap, c.num_gt, c.num_tp, c.num_fp
        );
    }
    println!("mAP {:.4}", result.map);
    Ok(())
}
