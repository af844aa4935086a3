//! Input reformulation: where trigger terms go for each placement preset
//! and how the original tokens are recovered.
//!
//! ```text
//! cargo run --release --example trigger_layout
//! ```

use hicl::corpus::build_vocab;
use hicl::corpus::RawPost;
use hicl::finetune::{reformulate_input, Placement, Segment, TriggerConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run_example(&args) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

pub fn run_example(_args: &[String]) -> hicl::Result<()> {
    let x_text = "the game last night was wild";
    let retrieved_texts = ["what a match #worldcup", "cannot believe that goal"];
    let posts: Vec<RawPost> = std::iter::once(x_text)
        .chain(retrieved_texts)
        .enumerate()
        .map(|(i, t)| RawPost::new(i.to_string(), t))
        .collect();
    let vocab = build_vocab(&posts, 100)?;
    let x = vocab.tokenize(x_text);
    let retrieved: Vec<Vec<u32>> = retrieved_texts.iter().map(|t| vocab.tokenize(t)).collect();

    for placement in [Placement::Front, Placement::Middle, Placement::End, Placement::All] {
        let cfg = TriggerConfig::preset(placement, 2);
        let input = reformulate_input(&x, &retrieved, &cfg, 64)?;
        let shown: Vec<String> = input
            .ids
            .iter()
            .zip(&input.trigger_mask)
            .map(|(&id, &trig)| {
                if trig {
                    "[T]".to_string()
                } else {
                    vocab.token(id).unwrap_or("?").to_string()
                }
            })
            .collect();
        println!("{placement:<6} triggers at {:?}", input.trigger_positions());
        println!("       {}", shown.join(" "));
        assert_eq!(input.segment_tokens(Segment::Source), x);
        for (i, r) in retrieved.iter().enumerate() {
            assert_eq!(&input.segment_tokens(Segment::Retrieved(i)), r);
        }
    }
    println!("stripping triggers and frame tokens recovers every segment");

    let cfg = TriggerConfig::preset(Placement::Middle, 5);
    let tight = reformulate_input(&x, &retrieved, &cfg, 20)?;
    println!(
        "with max_len 20 only {} retrieved post(s) fit; length {}",
        (0..retrieved.len())
            .filter(|&i| !tight.segment_tokens(Segment::Retrieved(i)).is_empty())
            .count(),
        tight.ids.len()
    );
    Ok(())
}
