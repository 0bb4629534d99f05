//! Constraint numbers, feasibility ranges and the numerical-rank oracle.

use normkit::constraints::{constraint_count, constraint_rank_oracle, feasibility_bound, NormMethod};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = 8;
    for method in NormMethod::ALL {
        println!("{}", feasibility_bound(method, d));
    }
    println!();
    println!("method  d  m  g  zeta  chi  oracle");
    for (method, m, g) in [
        (NormMethod::Bn, 4, 1),
        (NormMethod::Bw, 16, 1),
        (NormMethod::Bw, 4, 1),
        (NormMethod::Gn, 4, 2),
        (NormMethod::Gw, 4, 2),
        (NormMethod::Gw, 4, 4),
    ] {
        let r = constraint_count(method, d, m, g, Some(1000))?;
        let oracle = match constraint_rank_oracle(method, d, m, g, 3, 0) {
            Ok(rank) => rank.to_string(),
            Err(e) => format!("({e})"),
        };
        println!("{:<7} {d}  {m:<2} {g}  {:<5} {:<4} {oracle}", method.to_string(), r.zeta_batch, r.chi);
    }
    Ok(())
}
