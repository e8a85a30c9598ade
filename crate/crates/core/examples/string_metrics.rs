//! Character precision and normalized edit distance on a few transcriptions.

use zerosense::metrics::{levenshtein, score_strings, NormalizeOptions};

fn main() {
    let gt = "The quick brown fox jumps over the lazy dog.";
    let predictions = [
        "The quick brown fox jumps over the lazy dog.",
        "The quick brown fax jumps over the lazy dog",
        "The  quick   brown fox",
        "",
        "ﬁve ligatures fold under NFKC",
    ];
    let options = NormalizeOptions::default();
    println!("{:<48} {:>9} {:>8} {:>5}", "prediction", "precision", "NED sim", "edits");
    for p in predictions {
        let m = score_strings(gt, p, &options);
        println!("{:<48} {:>9.3} {:>8.3} {:>5}", format!("{p:?}"), m.precision, m.ned_similarity, levenshtein(gt, p));
    }
}
