mod common;

use common::{check_radiomics, random_quantized, Rng};
use ctharm_core::radiomics::{glcm_matrix, glrlm_matrix, FOUR_DIRECTIONS};

#[test]
fn matrices_and_features_match_brute_force() {
    let c = check_radiomics(100, 8, 0x5eed_0002);
    assert_eq!(c.mismatches, 0);
    assert!(c.max_matrix_err <= 1e-10, "matrix gap {}", c.max_matrix_err);
    assert!(c.max_feature_err <= 1e-10, "feature {} off by {}", c.worst_feature, c.max_feature_err);
}

#[test]
fn non_square_grids() {
    let mut rng = Rng::new(44);
    for _ in 0..20 {
        let q = random_quantized(&mut rng, 5, 11);
        for &d in &FOUR_DIRECTIONS {
            let p = glcm_matrix(&q, d).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let m = glrlm_matrix(&q, d).unwrap();
            let covered: u64 = (1..=q.n_levels)
                .flat_map(|l| (1..=m.max_length).map(move |len| (l, len)))
                .map(|(l, len)| m.get(l, len) * len as u64)
                .sum();
            assert_eq!(covered as usize, q.count());
        }
    }
}
