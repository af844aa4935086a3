//! Finite-difference verification of the hand-written backward passes:
//! the combined pre-training loss and the classification loss with trigger
//! rows, both on the tiny encoder in double precision.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use hicl::encoder::EncoderConfig;
use hicl::finetune::tiny_classification_check;
use hicl::gradcheck::finite_difference_check;
use hicl::pretrain::{check_gradients, tiny_pretrain_batch, PretrainConfig};
use hicl::tensors::TensorMap;
use ndarray::array;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run_example(&args) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

pub fn run_example(_args: &[String]) -> hicl::Result<()> {
    // The checker itself on f(w) = sum w^3, whose gradient is 3 w^2.
    let mut point = TensorMap::new();
    point.insert("w", array![[0.5, -1.0, 2.0]]);
    let mut analytic = TensorMap::new();
    analytic.insert("w", point.expect("w").mapv(|v| 3.0 * v * v));
    let cubic = finite_difference_check(&point, &analytic, 1e-5, |t| Ok(t.expect("w").mapv(|v| v.powi(3)).sum()))?;
    println!("cubic: max relative error {:.2e}", cubic.max_rel_error);

    let config = EncoderConfig::tiny(20);
    let batch = tiny_pretrain_batch(&config, 4, 3);
    let pre = check_gradients(&config, &PretrainConfig::default(), &batch, 1e-5)?;
    let (name, worst) = pre.worst().expect("tensors checked");
    println!("pre-training loss: {} tensors, worst {name} at {worst:.2e}", pre.per_tensor.len());

    let cls = tiny_classification_check(1e-5)?;
    let trig = cls.per_tensor.iter().find(|(n, _)| n == "triggers").expect("trigger rows checked");
    println!(
        "classification loss: {} tensors, max {:.2e}; trigger rows {:.2e}",
        cls.per_tensor.len(),
        cls.max_rel_error,
        trig.1
    );
    assert!(pre.max_rel_error < 1e-4 && cls.max_rel_error < 1e-4);
    Ok(())
}
