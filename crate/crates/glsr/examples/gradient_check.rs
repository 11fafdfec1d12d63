//! Verify every analytic gradient against central finite differences, from
//! the primitive ops up through the whole network.

fn main() -> glsr::Result<()> {
    println!("module      max rel err   tolerance");
    let mut all_ok = true;
    for o in glsr::cli::gradcheck_suite("all")? {
        let ok = o.max_rel_err < o.tolerance;
        all_ok &= ok;
        println!(
            "{:<10}  {:>11.3e}  {:>10.0e}  {}",
            o.name,
            o.max_rel_err,
            o.tolerance,
            if ok { "ok" } else { "EXCEEDED" }
        );
    }
    if !all_ok {
        std::process::exit(1);
    }
    Ok(())
}
