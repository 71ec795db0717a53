//! Rank-k SVD of a row-partitioned matrix. Sites reveal p-vectors and scalars
//! only; the result matches a centralized decomposition.
//!
//! ```text
//! cargo run --example distributed_svd
//! ```

use fedfit::compdef::{matrix_to_csv, CompType};
use fedfit::master::render_svd;
use fedfit::sim::{seeded_definition, spawn_sites};
use fedfit::svd::{sign_aligned_distance, svd_oracle, SvdOptions};
use fedfit::synth::{contiguous_split, rng, row_block, standard_normal_matrix};

fn main() {
    let x = standard_normal_matrix(60, 5, &mut rng(3));
    let csvs: Vec<String> = contiguous_split(60, 3).into_iter().map(|r| matrix_to_csv(&row_block(&x, r))).collect();
    let defn = seeded_definition(3, CompType::RankKSvd, None, "svd demo");
    let fed = spawn_sites(3, &defn, &csvs).unwrap();

    let opts = SvdOptions { k: 3, thr: 1e-12, max_iter: 200 };
    let r = fed.master().unwrap().run_svd(&opts).unwrap();
    print!("{}", render_svd(&r));

    let oracle = svd_oracle(&x, 3).unwrap();
    for j in 0..3 {
        println!(
            "component {}: d {:.10} vs {:.10}, v distance {:.1e}, {} iterations",
            j + 1,
            r.d[j],
            oracle.d[j],
            sign_aligned_distance(&r.v.column(j), &oracle.v.column(j)),
            r.iterations_per_component[j]
        );
    }
}
