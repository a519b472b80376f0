//! CSV rendering shared by the report writers.

/// Rows (header first) as CSV text with `\n` line endings.
pub(crate) fn csv_string(rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for row in rows {
        w.write_record(row).expect("writing to memory cannot fail");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory cannot fail")).expect("fields are UTF-8")
}
