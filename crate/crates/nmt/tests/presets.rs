use std::path::Path;

use nmt::config::{ExperimentConfig, PRESETS};

#[test]
fn shipped_config_files_match_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in PRESETS {
        let path = dir.join(format!("{name}.cfg"));
        let loaded = ExperimentConfig::load(&path, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
        let preset = ExperimentConfig::preset(name).unwrap();
        assert_eq!(loaded.to_text(), preset.to_text(), "{name}");
    }
}

#[test]
fn combined_preset_file_values() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let c = ExperimentConfig::load(&dir.join("combined.cfg"), &["beam_size=8".into()]).unwrap();
    assert_eq!(c.family(), "transformer");
    assert_eq!(c.alpha, 1.5);
    assert_eq!(c.beam_size, 8);
    assert_eq!(c.ensemble_n, 8);
    assert_eq!(c.ensemble_interval, 0.03);
}
