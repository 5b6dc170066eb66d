//! A new survey cycle drops one question and adds another. Diff the two key
//! spaces to see which output units a trained head is missing or still scoring.
//!
//! cargo run --example label_drift

use lantern::synth::{generate_dataset, label_space_diff, DatasetManifest, GeneratorConfig, QuestionSpec, QuestionType};
use lantern::Result;

fn main() -> Result<()> {
    let old = generate_dataset(&GeneratorConfig {
        n_users: 1,
        ..GeneratorConfig::default()
    })?
    .manifest;

    let questions = old.questions();
    let retired = questions[0].question_id;
    let next_id = questions.iter().map(|q| q.question_id).max().unwrap_or(0) + 1;
    let mut specs: Vec<QuestionSpec> = questions
        .iter()
        .filter(|q| q.question_id != retired)
        .map(|q| QuestionSpec {
            question_id: q.question_id,
            question_type: q.question_type,
            n_options: q.key_ids.len(),
            serve_probability: old.keys[q.key_ids[0]].serve_probability,
        })
        .collect();
    specs.push(QuestionSpec {
        question_id: next_id,
        question_type: QuestionType::MultiChoice,
        n_options: 3,
        serve_probability: 0.9,
    });
    let new = DatasetManifest::from_questions(old.survey_dim, old.external_dim, &specs, old.generator_seed, old.cycle_id + 1)?;

    println!("cycle {} has {} keys, cycle {} has {}", old.cycle_id, old.n_keys(), new.cycle_id, new.n_keys());
    print!("{}", label_space_diff(&old, &new));
    println!("unchanged cycle:");
    print!("{}", label_space_diff(&old, &old));
    Ok(())
}
