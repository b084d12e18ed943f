use std::path::Path;

use nmt::extract::{extract_pairs, extract_segments};

fn page() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bilingual_page.html")).unwrap()
}

#[test]
fn aligned_pairs_from_saved_page() {
    let pairs = extract_pairs(&page(), ".pair .en", ".pair .vi").unwrap();
    assert_eq!(
        pairs,
        vec![
            (
                "The cat sat on the mat.".to_string(),
                "Con mèo ngồi trên tấm thảm.".to_string()
            ),
            (
                "It was raining all day long.".to_string(),
                "Trời mưa cả ngày.".to_string()
            ),
            (
                "We read books & newspapers.".to_string(),
                "Chúng tôi đọc sách và báo.".to_string()
            ),
        ]
    );
}

#[test]
fn unbalanced_selectors_are_rejected() {
    assert_eq!(extract_segments(&page(), ".en").unwrap().len(), 4);
    let e = extract_pairs(&page(), ".en", ".vi").unwrap_err();
    assert!(e.to_string().contains("4 source and 3 target"), "{e}");
}

#[test]
fn bad_selector_is_a_config_error() {
    let e = extract_segments(&page(), "p[[").unwrap_err();
    assert_eq!(e.exit_code(), 1);
}
