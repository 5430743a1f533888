//! Writes an embedding matrix in the binary format, reads it back and shows
//! what a damaged file looks like to the reader.

use selective_evidence::matrix::{cosine_checked, read_matrix, write_matrix, EmbeddingMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = EmbeddingMatrix::from_rows(
        &[[0.5f32, -1.0, 2.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
        None,
    )?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("m.bin");
    write_matrix(&m, &path)?;
    let back = read_matrix(&path)?;
    println!(
        "{} rows x {} dims, {} bytes, identical: {}",
        back.rows(),
        back.dim(),
        m.to_bytes().len(),
        back == m
    );

    // zero rows are flagged, not rejected
    let c = cosine_checked(back.row(0), back.row(1));
    println!(
        "cosine(row0, row1) = {} degenerate = {}",
        c.value, c.degenerate
    );

    let mut bytes = m.to_bytes();
    bytes.truncate(bytes.len() - 4);
    match EmbeddingMatrix::from_bytes(&bytes, &path) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file accepted?"),
    }
    Ok(())
}
