//! Cochran's Q over correlated binary outcomes, chi-square tail
//! probabilities and Kendall's tau-b between two score vectors.

use memprobe::stats::{chi2_sf, cochran_q, kendall_tau_b, pearson, CochranQ, CorrelationMatrix};

fn main() -> memprobe::Result<()> {
    // rows are blocks, columns treatments
    let table = vec![
        vec![true, true, false],
        vec![true, false, false],
        vec![true, true, true],
        vec![false, true, false],
        vec![true, true, false],
        vec![true, false, false],
    ];
    println!("{:?}", cochran_q(&table)?);

    // the streaming accumulator merges partial tables
    let (a, b) = table.split_at(3);
    let mut left = CochranQ::new(3);
    let mut right = CochranQ::new(3);
    a.iter().for_each(|r| left.add_block(r));
    b.iter().for_each(|r| right.add_block(r));
    println!("{:?}", left.merge(&right).finish()?);

    for (x, k) in [(3.841458820694124, 1.0), (5.991464547107979, 2.0), (25.0, 10.0)] {
        println!("P(chi2_{k} > {x}) = {:.6e}", chi2_sf(x, k));
    }

    let dev = [71.2, 64.0, 80.5, 80.5, 55.1, 77.7];
    let test = [69.0, 66.3, 79.9, 74.0, 58.2, 70.1];
    println!("tau_b = {:.4}", kendall_tau_b(&dev, &test)?);
    println!("pearson = {:.4}", pearson(&dev, &test)?);
    let m = CorrelationMatrix::kendall(&[("dev".into(), dev.to_vec()), ("test".into(), test.to_vec())])?;
    print!("{}", m.to_tsv());
    Ok(())
}
