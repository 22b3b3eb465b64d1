use shorthand_wasm::{abbreviation_view, heatmap, simulate, Demo};

#[test]
fn abbreviation_view_reports_savings() {
    let v = abbreviation_view("I am good, thanks.");
    assert_eq!(v.abbreviation, "iag,t");
    assert_eq!(v.normalized, "i am good, thanks");
    assert_eq!((v.abbrev_len, v.full_len), (5, 17));
    let hit = v.ksr_hit.unwrap();
    assert!((hit - 100.0 * 12.0 / 17.0).abs() < 1e-9);
    assert!((v.ksr_miss.unwrap() + 100.0 * 5.0 / 17.0).abs() < 1e-9);
    assert_eq!(abbreviation_view("...").ksr_hit, None);
}

#[test]
fn typing_simulation_is_seeded() {
    let a = simulate("hay", 0.5, 7).unwrap();
    assert_eq!(a, simulate("hay", 0.5, 7).unwrap());
    assert_eq!(a.typed.chars().count(), 3);
    let clean = simulate("hay", 0.0, 7).unwrap();
    assert_eq!((clean.typed.as_str(), clean.changed), ("hay", 0));
    assert!(simulate("hay", -1.0, 0).is_err());
}

#[test]
fn heatmap_is_a_distribution_over_the_grid() {
    let h = heatmap('g', 0.4, 5000, 1).unwrap();
    assert_eq!(h.rows, ["qwertyuiop", "asdfghjkl'", "zxcvbnm,.!"]);
    assert_eq!(h.freq.len(), 30);
    assert!((h.freq.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let g = h.rows.concat().find('g').unwrap();
    let top = h.freq.iter().cloned().fold(0.0, f64::max);
    assert_eq!(h.freq[g], top);
    assert!(heatmap('#', 0.4, 10, 1).is_err());
}

#[test]
fn lut_expands_from_bundled_dialogs() {
    let demo = Demo::build();
    assert_eq!(demo.dialog_count(), 32);
    let opts = demo.expand_options("lut", "", "dysw", false, 5).unwrap();
    assert_eq!(opts[0].phrase, "did you sleep well");
    assert_eq!(opts[0].count, 1);
    assert!(demo.expand_options("gpt", "", "hay", false, 5).is_err());
}

#[test]
fn context_changes_the_ngram_ranking() {
    let demo = Demo::build();
    let tea = demo.expand_options("ngram", "How is the tea?", "hau", false, 3).unwrap();
    let cat = demo.expand_options("ngram", "Where is the cat?", "hau", false, 3).unwrap();
    assert_eq!(tea[0].phrase, "hot as usual");
    assert_eq!(cat[0].phrase, "hiding as usual");
    assert!(tea[0].score.unwrap() < 0.0);
}

#[test]
fn noisy_matching_recovers_a_neighbouring_key() {
    let demo = Demo::build();
    // 'a' sits next to 's'
    assert!(demo.expand_options("lut", "", "dyaw", false, 5).unwrap().is_empty());
    let opts = demo.expand_options("lut", "", "dyaw", true, 5).unwrap();
    assert!(opts.iter().any(|o| o.phrase == "did you sleep well"));
}
