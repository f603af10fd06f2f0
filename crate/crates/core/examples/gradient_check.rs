//! Run the full finite-difference suite: every op, then the composed losses.

use hclora::gradcheck::suite;

fn main() -> hclora::Result<()> {
    let reports = suite(None)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", reports.len());

    // The checker catches a broken backward and names the op.
    for r in suite(Some("attention"))?.iter().filter(|r| !r.passed()) {
        println!("with corrupted attention backward: {}", r.label);
    }
    Ok(())
}
