//! Golden test for the full cleanup pipeline on a real multi-line tweet,
//! plus a seeded fuzz check that cleaning is a fixed point of itself.

use humor_core::rng;
use humor_core::textclean::{clean, CleanConfig};
use rand::Rng;

const RAW_TWEET: &str = "Saber, entender y estar convencides que la frase #LaESILaDefendemosEntreTodes es nuestra linea es nuestro eje.\n#AlertaESI!!!!\nVamos por mas!!! e invitamos a todas aquellas personas que quieran se parte.";

const CLEANED_TWEET: &str = "xxbos saber , entender y estar convencides que la frase # laesiladefendemosentretodes es nuestra linea es nuestro eje. xxnl # alertaesi xxrep 4 ! xxnl vamos por mas ! ! ! e invitamos a todas aquellas personas que quieran se parte.";

#[test]
fn golden_multiline_tweet() {
    let got = clean(RAW_TWEET, &CleanConfig::default());
    assert_eq!(got.as_str(), CLEANED_TWEET);
}

#[test]
fn golden_output_is_a_fixed_point() {
    let cfg = CleanConfig::default();
    let once = clean(RAW_TWEET, &cfg);
    let twice = clean(once.as_str(), &cfg);
    assert_eq!(once, twice);
}

fn fuzz_tweet(rng: &mut impl Rng) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'c', 'j', 'A', 'J', 'Á', 'é', 'ñ', 'Ñ', '0', '7', '!', '?', '#', '.', ',',
        '¡', '¿', '😂', '€', '_', ' ', ' ', ' ', '\t', '\n', '\n', '\r',
    ];
    let len = rng.gen_range(0..80);
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

#[test]
fn clean_is_idempotent_on_fuzz_corpus() {
    let cfg = CleanConfig::default();
    let mut rng = rng::stream(20190924, "clean-fuzz", 0);
    for case in 0..10_000 {
        let raw = fuzz_tweet(&mut rng);
        let once = clean(&raw, &cfg);
        let twice = clean(once.as_str(), &cfg);
        assert_eq!(once, twice, "case {case}: not idempotent for {raw:?}");
    }
}

#[test]
fn cleaned_output_invariants_on_fuzz_corpus() {
    let cfg = CleanConfig::default();
    let mut rng = rng::stream(20190924, "clean-inv", 0);
    for case in 0..10_000 {
        let raw = fuzz_tweet(&mut rng);
        let out = clean(&raw, &cfg);
        let s = out.as_str();
        assert!(
            !s.contains('\n') && !s.contains('\r') && !s.contains("  ") && !s.contains('\t'),
            "case {case}: whitespace invariant broken for {raw:?}: {s:?}"
        );
        assert!(
            !s.chars().any(|c| c.is_uppercase()),
            "case {case}: uppercase survived for {raw:?}: {s:?}"
        );
        assert!(
            s == "xxbos" || s.starts_with("xxbos "),
            "case {case}: missing bos for {raw:?}: {s:?}"
        );
        // Every char-repetition marker carries a count ≥ threshold and a
        // single-character payload.
        let words: Vec<&str> = s.split(' ').collect();
        for (i, w) in words.iter().enumerate() {
            if *w == "xxrep" {
                let n: usize = words[i + 1].parse().expect("xxrep count");
                assert!(n >= cfg.rep_threshold);
                assert_eq!(words[i + 2].chars().count(), 1, "payload in {s:?}");
            }
        }
    }
}
