// Confusion matrix and mean intersection-over-union.

use lsk3d::metrics::{argmax_rows, miou, ConfusionMatrix, Report};

pub fn run_example() -> lsk3d::Result<()> {
    let logits = [
        2.0, 0.1, 0.0, // -> 0
        0.0, 1.0, 0.2, // -> 1
        0.3, 0.2, 0.9, // -> 2
        1.5, 1.4, 0.0, // -> 0
    ];
    let predicted = argmax_rows(&logits, 3);
    let truth = [0, 1, 2, 1];
    let mut cm = ConfusionMatrix::new(3);
    cm.add_all(&truth, &predicted)?;
    let report = miou(&cm);
    println!("accuracy {:.3}", cm.accuracy());
    print!("{}", report.csv());
    assert_eq!(report.per_class, vec![Some(0.5), Some(0.5), Some(1.0)]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
