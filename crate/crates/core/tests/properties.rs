use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use zerosense::corpus::{
    detect_language, load_corpus, save_corpus, BBox, Corpus, Granularity, LanguageClass, LoadOptions, PageAnnotation,
    SourceStyle, TextBlock,
};
use zerosense::font::MonospaceMetrics;
use zerosense::layout::{
    compute_capacity, fits, reconstruct_layout, solve_font_size, LayoutParams, MergeRule, MAX_FONT_SIZE,
};
use zerosense::metrics::{
    char_precision, f_prior, k_quality, levenshtein, ned, normalize, score_strings, NormalizeOptions,
};
use zerosense::perturb::{extract_lines, group_lines, perturb_page, shuffle_words_in_line, PerturbOptions};
use zerosense::render::{compression_ratio_from_counts, pad_to_canvas, RenderTheta, WHITE};
use zerosense::zerotext::{
    audit_vacuum, generate_zero_text, GenSpec, ProbabilityOracle, TokenId, ValidVocab, Vocabulary,
};

fn bbox_in(page_w: u32, page_h: u32) -> impl Strategy<Value = BBox> {
    (0..page_w - 1, 0..page_h - 1).prop_flat_map(move |(x, y)| {
        (Just(x), Just(y), 1..=page_w - x, 1..=page_h - y).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
    })
}

fn word() -> impl Strategy<Value = String> {
    "[a-zA-Z]{1,9}"
}

fn page(id: usize) -> impl Strategy<Value = PageAnnotation> {
    (200u32..1500, 200u32..1500).prop_flat_map(move |(w, h)| {
        let block = (bbox_in(w, h), prop::collection::vec(word(), 1..6), proptest::option::of(8u32..60))
            .prop_map(|(bbox, words, size)| TextBlock {
                font_size: size,
                ..TextBlock::new(bbox, words.join(" "))
            });
        (prop::collection::vec(block, 1..8), any::<bool>()).prop_map(move |(blocks, words)| PageAnnotation {
            id: format!("p{id}"),
            image: format!("images/p{id}.png").into(),
            page_w: w,
            page_h: h,
            granularity: if words { Granularity::Word } else { Granularity::Paragraph },
            blocks,
        })
    })
}

/// A dense plain DP, independent of the library's implementation.
fn dp_levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Words laid out on a grid of lines within one column.
fn word_grid() -> impl Strategy<Value = PageAnnotation> {
    let line = prop::collection::vec((20u32..80, 18u32..21), 1..6);
    prop::collection::vec(line, 1..10).prop_map(|lines| {
        let mut blocks = Vec::new();
        let mut y = 20;
        for (li, words) in lines.iter().enumerate() {
            let mut x = 30;
            for (wi, &(w, h)) in words.iter().enumerate() {
                blocks.push(TextBlock::new(BBox::new(x, y, w, h).unwrap(), format!("w{li}_{wi}")));
                x += w + 8;
            }
            y += 34;
        }
        PageAnnotation {
            id: "grid".into(),
            image: "grid.png".into(),
            page_w: 600,
            page_h: y + 20,
            granularity: Granularity::Word,
            blocks,
        }
    })
}

struct FixedOracle {
    vocab: Vocabulary,
    probs: Vec<f64>,
}

impl FixedOracle {
    fn new(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        Self {
            vocab: Vocabulary::new((0..weights.len()).map(|i| format!("t{i}")).collect(), &[]).unwrap(),
            probs: weights.iter().map(|w| w / total).collect(),
        }
    }
}

impl ProbabilityOracle for FixedOracle {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn distribution(&self, context: &[TokenId]) -> zerosense::Result<Vec<f64>> {
        // rotate with the last token so the posterior depends on context
        let shift = context.last().map_or(0, |&t| t as usize + 1);
        let n = self.probs.len();
        Ok((0..n).map(|i| self.probs[(i + shift) % n]).collect())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trips(pages in prop::collection::vec(0usize..1, 1..5).prop_flat_map(|v| {
        v.iter().enumerate().map(|(i, _)| page(i)).collect::<Vec<_>>()
    })) {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus { name: "c".into(), source_style: SourceStyle::OmniLike, pages };
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path(), &LoadOptions { check_images: false, ..LoadOptions::default() }).unwrap();
        prop_assert_eq!(&loaded, &corpus);
        for p in &loaded.pages {
            for b in &p.blocks {
                prop_assert!(b.bbox.w > 0 && b.bbox.h > 0 && b.bbox.fits_page(p.page_w, p.page_h));
            }
        }
    }

    #[test]
    fn language_moves_monotonically_with_non_ascii(ascii in "[a-z][a-z ]{0,29}", extra in 0usize..60) {
        let mut seen_logographic = false;
        for k in 0..=extra {
            let text = format!("{ascii}{}", "中".repeat(k));
            let lang = detect_language(&text, 0.8).unwrap();
            prop_assert_eq!(lang, detect_language(&text, 0.8).unwrap());
            if seen_logographic {
                prop_assert_eq!(lang, LanguageClass::Logographic);
            }
            seen_logographic |= lang == LanguageClass::Logographic;
        }
    }

    #[test]
    fn single_column_merge_reaches_fixpoint(boxes in prop::collection::vec((0u32..100, 110u32..300, 0u32..1200, 12u32..30), 1..40)) {
        let blocks: Vec<TextBlock> = boxes
            .iter()
            .enumerate()
            .map(|(i, &(x, r, y, h))| TextBlock::new(BBox::new(x, y, r - x, h).unwrap(), format!("w{i}")))
            .collect();
        let r = reconstruct_layout(&blocks, 400, MergeRule::EdgeGap).unwrap();
        prop_assert_eq!(r.columns, 1);
        let params = LayoutParams::for_boxes(blocks.iter().map(|b| &b.bbox), MergeRule::EdgeGap).unwrap();
        for (i, a) in r.paragraphs.iter().enumerate() {
            for b in &r.paragraphs[i + 1..] {
                prop_assert!(!params.mergeable(&a.bbox, &b.bbox), "{:?} and {:?} still mergeable", a.bbox, b.bbox);
            }
        }
    }

    #[test]
    fn merging_loses_no_text_region(boxes in prop::collection::vec(bbox_in(800, 800), 1..40), rule in prop_oneof![Just(MergeRule::EdgeGap), Just(MergeRule::CenterBand)]) {
        let blocks: Vec<TextBlock> = boxes.iter().map(|&b| TextBlock::new(b, "x")).collect();
        let r = reconstruct_layout(&blocks, 800, rule).unwrap();
        for b in &boxes {
            prop_assert!(r.paragraphs.iter().any(|p| p.bbox.contains(b)), "{b:?} not covered");
        }
        let words: usize = r.paragraphs.iter().map(|p| p.text.split_whitespace().count()).sum();
        prop_assert_eq!(words, boxes.len());
    }

    #[test]
    fn font_size_is_monotone_and_tight(text in "[a-z]{1,10}( [a-z]{1,10}){0,40}", w in 10u32..1200, h in 8u32..300, dw in 0u32..300, dh in 0u32..300) {
        let m = MonospaceMetrics::default();
        let small = BBox::new(0, 0, w, h).unwrap();
        let large = BBox::new(0, 0, w + dw, h + dh).unwrap();
        let s = solve_font_size(&text, &small, &m, LanguageClass::Latin).unwrap();
        prop_assert!(solve_font_size(&text, &large, &m, LanguageClass::Latin).unwrap() >= s);
        let cap = h.min(MAX_FONT_SIZE);
        if fits(&text, &small, s, &m, LanguageClass::Latin) {
            prop_assert!(s == cap || !fits(&text, &small, s + 1, &m, LanguageClass::Latin));
        } else {
            prop_assert_eq!(s, 8);
        }
    }

    #[test]
    fn capacity_is_additive(a in "[a-z]{1,8}( [a-z]{1,8}){0,10}", b in "[a-z]{1,8}( [a-z]{1,8}){0,10}") {
        prop_assert_eq!(
            compute_capacity(&format!("{a} {b}"), LanguageClass::Latin),
            compute_capacity(&a, LanguageClass::Latin) + compute_capacity(&b, LanguageClass::Latin)
        );
    }

    #[test]
    fn generation_contract(weights in prop::collection::vec(1e-9f64..1.0, 3..40), capacity in 0u32..60, seed in any::<u64>(), tau in prop_oneof![Just(1e-6), Just(1e-3), Just(0.05)]) {
        let oracle = FixedOracle::new(&weights);
        let n = weights.len() as TokenId;
        let valid = ValidVocab::from_ids((0..n).filter(|i| i % 3 != 1).collect()).unwrap();
        let spec = GenSpec { tau_init: tau, ..GenSpec::new(capacity, seed) };
        let g = generate_zero_text(&spec, &oracle, &valid).unwrap();
        prop_assert_eq!(g.tokens.len(), capacity as usize);
        prop_assert!(g.tokens.iter().all(|&t| valid.contains(t)));
        prop_assert_eq!(&g, &generate_zero_text(&spec, &oracle, &valid).unwrap());
        if capacity > 0 && !g.log.steps.iter().any(|s| s.fallback) {
            let ceiling = g.log.max_tau();
            let audit = audit_vacuum(&g.tokens, &oracle).unwrap();
            prop_assert!(audit.max_posterior < ceiling, "{} >= {}", audit.max_posterior, ceiling);
        }
    }

    #[test]
    fn padding_keeps_aspect(w in 1u32..3000, h in 1u32..3000) {
        let theta = RenderTheta { canvas_w: 640, canvas_h: 640, ..RenderTheta::default() };
        let img = image::RgbImage::from_pixel(w, h, image::Rgb([0, 0, 0]));
        let out = pad_to_canvas(&img, &theta);
        prop_assert_eq!(out.dimensions(), (640, 640));
        let cw = (0..640).take_while(|&x| *out.get_pixel(x, 0) != WHITE).count() as f64;
        let ch = (0..640).take_while(|&y| *out.get_pixel(0, y) != WHITE).count() as f64;
        let (w, h) = (w as f64, h as f64);
        prop_assert!((ch - cw * h / w).abs() <= 1.0 || (cw - ch * w / h).abs() <= 1.0, "{}x{} -> {}x{}", w, h, cw, ch);
    }

    #[test]
    fn compression_ratio_is_homogeneous(c in 1u32..100_000, v in prop::collection::vec(1u32..1000, 1..5)) {
        let doubled: Vec<u32> = v.iter().map(|x| x * 2).collect();
        prop_assert_eq!(
            compression_ratio_from_counts(c, &v).unwrap(),
            compression_ratio_from_counts(2 * c, &doubled).unwrap()
        );
    }

    #[test]
    fn perturbation_preserves_words_and_slots(page in word_grid(), seed in any::<u64>()) {
        let lines = extract_lines(&page).unwrap();
        let heights: Vec<f64> = lines.iter().map(|l| l.bbox.h as f64).collect();
        let opts = PerturbOptions::default();
        let groups = group_lines(&heights, opts.tolerance, opts.tolerance_base);
        let p = perturb_page(&page, &lines, &groups, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut before: Vec<_> = page.blocks.iter().map(|b| (b.text.clone(), b.bbox.w, b.bbox.h)).collect();
        let mut after: Vec<_> = p.page.blocks.iter().map(|b| (b.text.clone(), b.bbox.w, b.bbox.h)).collect();
        before.sort();
        after.sort();
        prop_assert_eq!(before, after);
        let slots: Vec<BBox> = lines.iter().map(|l| l.bbox).collect();
        prop_assert_eq!(p.lines.iter().map(|l| l.bbox).collect::<Vec<_>>(), slots);
    }

    #[test]
    fn relaid_words_stay_in_line(widths in prop::collection::vec((10u32..60, 0u32..20), 1..10), seed in any::<u64>()) {
        let mut x = 5;
        let words: Vec<TextBlock> = widths
            .iter()
            .enumerate()
            .map(|(i, &(w, gap))| {
                let b = TextBlock::new(BBox::new(x, 10, w, 20).unwrap(), format!("{i}"));
                x += w + gap;
                b
            })
            .collect();
        let right = words.iter().map(|w| w.bbox.right()).max().unwrap();
        let out = shuffle_words_in_line(&words, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(out.len(), words.len());
        for pair in out.windows(2) {
            prop_assert!(pair[0].bbox.right() <= pair[1].bbox.x, "{:?} overlaps {:?}", pair[0].bbox, pair[1].bbox);
        }
        prop_assert!(out.iter().all(|w| w.bbox.right() <= right));
    }

    #[test]
    fn levenshtein_matches_dp_and_is_a_metric(a in "[abc]{0,12}", b in "[abc]{0,12}", c in "[abc]{0,12}") {
        prop_assert_eq!(levenshtein(&a, &b), dp_levenshtein(&a, &b));
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn decomposition_closes(full in 0.0f64..1.0, zero in 0.0f64..1.0, raw in 0.01f64..1.0) {
        let prior = f_prior(full, zero);
        let k = k_quality(full, prior, raw).unwrap();
        prop_assert!((prior + raw * k - full).abs() < 1e-12);
    }

    #[test]
    fn precision_ignores_whitespace_runs_and_compatibility_forms(words in prop::collection::vec("[a-z]{1,6}", 1..8), pred in "[a-z ]{0,40}", gaps in prop::collection::vec(1usize..4, 8)) {
        let opts = NormalizeOptions::default();
        let gt = words.join(" ");
        let spaced: String = words
            .iter()
            .zip(&gaps)
            .map(|(w, &g)| format!("{w}{}", " ".repeat(g)))
            .collect();
        prop_assert_eq!(char_precision(&gt, &pred, &opts), char_precision(&spaced, &pred, &opts));
        let ligature = pred.replace("fi", "\u{FB01}");
        prop_assert_eq!(char_precision(&gt, &pred, &opts), char_precision(&gt, &ligature, &opts));
    }

    #[test]
    fn ned_similarity_bounds(a in "[ab ]{0,15}", b in "[ab ]{0,15}") {
        let opts = NormalizeOptions::default();
        let m = score_strings(&a, &b, &opts);
        prop_assert!((0.0..=1.0).contains(&m.ned_similarity));
        prop_assert_eq!(m.ned_similarity == 1.0, normalize(&a, &opts) == normalize(&b, &opts));
        let raw = ned(&a, &b);
        prop_assert!((raw.ned_similarity + raw.ned_distance - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniform_oracle_selects_uniformly() {
    let n = 10;
    let oracle = FixedOracle::new(&vec![1.0; n]);
    let valid = ValidVocab::from_ids((0..n as TokenId).collect()).unwrap();
    let draws = 20_000;
    let g = generate_zero_text(&GenSpec::new(draws, 42), &oracle, &valid).unwrap();
    let mut counts = vec![0u32; n];
    for t in g.tokens {
        counts[t as usize] += 1;
    }
    let p = 1.0 / n as f64;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (t, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "token {t}: {c} draws, expected {mean} +- {:.1}", 3.0 * sigma);
    }
}
