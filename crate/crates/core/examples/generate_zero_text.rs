//! Trains a word trigram model, draws a low-posterior sequence and audits it.

use zerosense::corpus::LanguageClass;
use zerosense::synth::english_like_text;
use zerosense::zerotext::{
    audit_vacuum, generate_zero_text, GenSpec, NgramModel, ProbabilityOracle, Tokenization, ValidVocab,
};

fn main() -> zerosense::Result<()> {
    let text = english_like_text(400_000, 3)?;
    let model = NgramModel::train(&text, 3, Tokenization::Word)?;
    let valid = ValidVocab::for_script(model.vocabulary(), LanguageClass::Latin, 0.8)?;

    let spec = GenSpec {
        tau_init: 1e-5,
        ..GenSpec::new(30, 7)
    };
    let generation = generate_zero_text(&spec, &model, &valid)?;
    let words: Vec<&str> = generation.tokens.iter().map(|&id| model.vocabulary().token(id)).collect();
    println!("{}", words.join(" "));

    let audit = audit_vacuum(&generation.tokens, &model)?;
    println!(
        "max posterior {:.2e}, threshold in force up to {:.0e}, {} fallbacks",
        audit.max_posterior,
        generation.log.max_tau(),
        generation.log.fallbacks()
    );

    let natural = model.encode("the first of the two")?;
    println!("natural text max posterior {:.3}", audit_vacuum(&natural, &model)?.max_posterior);
    Ok(())
}
