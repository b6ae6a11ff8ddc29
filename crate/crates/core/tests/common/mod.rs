#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// Judgment corpus as (file name, text), sorted by name.
pub fn judgment_corpus() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(fixture("judgments"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

const PIECES: &[&str] = &[
    "<type>", "</type>", "<rubric>", "</rubric>", "<justify>", "</justify>", "<eval>", "</eval>",
    "<solution>", "</solution>", "<answer>", "</answer>", "<quote_A>", "</quote_A>", "<quote_B>",
    "</quote_B>", "<summary_A>", "</summary_A>", "[[A]]", "[[B]]", "[[C]]", "Chat", "Reasoning", "(40%)",
    "(0.5)", "\n", " ", "<", ">", "/", "[", "]", "%", "é", "\u{0}",
];

/// Tag soup, random code points, or a corpus entry with random edits.
pub fn fuzz_input(rng: &mut ChaCha8Rng, seeds: &[String]) -> String {
    match rng.gen_range(0..3) {
        0 => {
            let n = rng.gen_range(0..24);
            (0..n).map(|_| PIECES[rng.gen_range(0..PIECES.len())]).collect()
        }
        1 => {
            let n = rng.gen_range(0..64);
            (0..n).map(|_| char::from_u32(rng.gen_range(0..0x300)).unwrap_or('?')).collect()
        }
        _ => {
            let mut chars: Vec<char> = seeds[rng.gen_range(0..seeds.len())].chars().collect();
            for _ in 0..rng.gen_range(1..6) {
                if chars.is_empty() {
                    break;
                }
                let at = rng.gen_range(0..chars.len());
                match rng.gen_range(0..3) {
                    0 => {
                        chars.remove(at);
                    }
                    1 => chars.insert(at, PIECES[rng.gen_range(0..PIECES.len())].chars().next().unwrap_or('<')),
                    _ => {
                        let end = (at + rng.gen_range(1..40)).min(chars.len());
                        chars.drain(at..end);
                    }
                }
            }
            chars.into_iter().collect()
        }
    }
}
