#![no_main]

use ifss_core::volume::{format_schedules, parse_schedules, AnnotationSchedule};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(lines) = parse_schedules(text) else { return };
    let scheds: Vec<AnnotationSchedule> = lines
        .into_iter()
        .filter_map(|idx| {
            let depth = idx.last().map_or(1, |l| l.saturating_add(1));
            AnnotationSchedule::new(depth, idx).ok()
        })
        .collect();
    let again = parse_schedules(&format_schedules(&scheds)).unwrap();
    assert_eq!(again.len(), scheds.len());
});
