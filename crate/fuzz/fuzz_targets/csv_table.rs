#![no_main]

use duti::io::read_table;
use duti::types::Task;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = read_table(data) else { return };
    assert_eq!(table.features.nrows(), table.labels.len());
    assert_eq!(table.lines.len(), table.labels.len());
    let _ = table.clone().into_dataset(Task::Regression);
    if let Ok(k) = table.implied_classes() {
        let task = Task::Classification { classes: k };
        let _ = table.clone().into_dataset(task);
        let _ = table.into_trusted(task);
    }
});
