//! Mittag-Leffler evaluation against high-precision reference values
//! (tests/oracle/ml_oracle.py, output frozen in ml_oracle.out) and the
//! structural identities of the density/CDF pair.

use proptest::prelude::*;
use zlab::special::{gamma, l2_norm_f_squared, ml_cdf, ml_density, ml_neg, MlParams};

/// (α, x, E_α(-x), E_{α,α}(-x)) from mpmath at 30+ digits.
const ML_TABLE: &[(f64, f64, f64, f64)] = &[
    (0.55, 0.5, 0.612_366_649_610_897_6, 0.287_208_606_666_520_9),
    (0.55, 2.0, 0.245_710_801_385_420_1, 0.058_993_205_672_528_02),
    (0.55, 3.5, 0.146_353_852_891_831_3, 0.022_225_356_723_996_9),
    (0.55, 5.0, 0.103_134_944_224_606_3, 0.011_263_449_881_053_66),
    (
        0.55,
        8.0,
        0.064_438_255_526_724_06,
        0.004_455_442_235_127_592,
    ),
    (
        0.55,
        12.0,
        0.042_835_067_290_850_32,
        0.001_978_461_259_922_18,
    ),
    (
        0.55,
        20.0,
        0.025_605_611_839_809_56,
        0.000_708_740_221_523_185_4,
    ),
    (
        0.55,
        45.0,
        0.011_334_358_569_048_33,
        0.000_139_025_630_058_186_4,
    ),
    (0.75, 0.5, 0.603_790_345_095_246_8, 0.421_842_312_468_582),
    (0.75, 2.0, 0.202_078_483_412_954_5, 0.084_363_572_245_660_56),
    (0.75, 3.5, 0.104_434_228_145_610_7, 0.027_151_723_225_886_33),
    (
        0.75,
        5.0,
        0.067_923_974_332_643_94,
        0.012_140_520_971_468_21,
    ),
    (
        0.75,
        8.0,
        0.039_335_854_041_138_19,
        0.004_175_273_412_467_294,
    ),
    (
        0.75,
        12.0,
        0.025_085_777_706_384_88,
        0.001_707_291_031_274_458,
    ),
    (
        0.75,
        20.0,
        0.014_527_522_154_459_5,
        0.000_573_560_412_953_950_4,
    ),
    (
        0.75,
        45.0,
        0.006_271_335_681_634_059,
        0.000_106_936_914_331_003_8,
    ),
    (0.95, 0.5, 0.604_614_027_342_131_7, 0.569_283_246_697_538_2),
    (0.95, 2.0, 0.149_625_061_841_114_6, 0.122_013_176_546_261),
    (
        0.95,
        3.5,
        0.047_816_310_636_837_01,
        0.029_654_179_380_301_72,
    ),
    (
        0.95,
        5.0,
        0.021_268_437_291_731_11,
        0.008_752_856_762_023_74,
    ),
    (
        0.95,
        8.0,
        0.008_931_091_521_831_815,
        0.001_618_977_692_248_675,
    ),
    (
        0.95,
        12.0,
        0.005_153_797_763_285_423,
        0.000_504_233_700_807_746_3,
    ),
    (
        0.95,
        20.0,
        0.002_843_222_578_076_63,
        0.000_150_401_748_467_458_4,
    ),
    (
        0.95,
        45.0,
        0.001_191_080_505_681_8,
        0.000_026_263_973_612_838_94,
    ),
];

#[test]
fn ml_neg_matches_reference_in_every_regime() {
    for &(alpha, x, want, _) in ML_TABLE {
        let got = ml_neg(alpha, x).unwrap();
        assert!(
            (got - want).abs() < 1e-12,
            "E_{alpha}(-{x}) = {got}, want {want}"
        );
        assert!(
            ((got - want) / want).abs() < 1e-10,
            "E_{alpha}(-{x}) relative"
        );
    }
}

#[test]
fn two_parameter_branch_matches_reference() {
    // density_regular(x) = λ E_{α,α}(-λ x^α); with λ = 1 and x = z^(1/α)
    for &(alpha, z, _, want) in ML_TABLE {
        let p = MlParams::new(alpha, 1.0).unwrap();
        let got = p.density_regular(z.powf(1.0 / alpha));
        assert!(
            ((got - want) / want).abs() < 1e-9,
            "E_{alpha},{alpha}(-{z}) = {got}, want {want}"
        );
    }
}

#[test]
fn ml_neg_large_argument() {
    let got = ml_neg(0.55, 100.0).unwrap();
    assert!((got - 0.005_090_049_131_218_492).abs() < 1e-10);
    assert!(((got - 0.005_090_049_131_218_492) / got).abs() < 1e-12);
}

#[test]
fn exponential_limit_on_grid() {
    for i in 0..500 {
        let x = 50.0 * i as f64 / 499.0;
        assert!((ml_neg(1.0, x).unwrap() - (-x).exp()).abs() < 1e-10);
    }
}

#[test]
fn density_reference_value() {
    let p = MlParams::new(0.55, 0.3).unwrap();
    let got = ml_density(&p, 2.0).unwrap();
    assert!(
        ((got - 0.068_679_230_565_836_05) / got).abs() < 1e-10,
        "{got}"
    );
    let cdf = ml_cdf(&p, 2.0).unwrap();
    assert!((cdf - 0.354_512_980_054_306_6).abs() < 1e-12, "{cdf}");
}

#[test]
fn exponential_density_value() {
    let p = MlParams::new(1.0, 0.3).unwrap();
    assert!((ml_density(&p, 1.0).unwrap() - 0.222_245_466_204_515_35).abs() < 1e-12);
    assert!((ml_cdf(&p, 1.0).unwrap() - 0.259_181_779_318_282_1).abs() < 1e-12);
}

#[test]
fn l2_norm_reference_values() {
    for (alpha, lambda, want) in [
        (0.55, 0.3, 0.321_764_963_223_032_1),
        (0.75, 1.0, 0.637_723_497_968_267_4),
        (0.6, 0.3, 0.187_981_271_643_463_4),
    ] {
        let got = l2_norm_f_squared(&MlParams::new(alpha, lambda).unwrap()).unwrap();
        assert!(
            ((got - want) / want).abs() < 1e-8,
            "α={alpha} λ={lambda}: {got} vs {want}"
        );
    }
}

#[test]
fn cdf_tends_to_one() {
    let p = MlParams::new(0.55, 0.3).unwrap();
    assert!(p.cdf(1e6) > 0.99);
}

#[test]
fn finite_difference_of_cdf_is_density() {
    for alpha in [0.55, 0.75, 1.0] {
        for lambda in [0.1, 0.3, 1.0] {
            let p = MlParams::new(alpha, lambda).unwrap();
            for i in 0..=40 {
                let x = 1e-3 * 10f64.powf(4.0 * i as f64 / 40.0);
                let h = 1e-5 * x;
                let fd = (p.cdf(x + h) - p.cdf(x - h)) / (2.0 * h);
                let f = p.density(x);
                assert!(
                    ((fd - f) / f).abs() < 1e-5,
                    "α={alpha} λ={lambda} x={x}: {fd} vs {f}"
                );
            }
        }
    }
}

#[test]
fn density_singular_factor_at_origin() {
    let p = MlParams::new(0.55, 0.3).unwrap();
    for x in [1e-8, 1e-10, 1e-14] {
        let r = p.density(x) * gamma(0.55) * x.powf(0.45) / 0.3;
        assert!((r - 1.0).abs() < 1e-3, "{x}: {r}");
    }
}

#[test]
fn scaling_identity() {
    for alpha in [0.55, 0.8] {
        let unit = MlParams::new(alpha, 1.0).unwrap();
        for lambda in [0.1, 0.3, 2.5] {
            let p = MlParams::new(alpha, lambda).unwrap();
            let c = lambda.powf(1.0 / alpha);
            for i in 1..30 {
                let x = 0.01 * 1.5f64.powi(i);
                let lhs = p.density(x);
                let rhs = c * unit.density(c * x);
                assert!(
                    ((lhs - rhs) / lhs).abs() < 1e-9,
                    "α={alpha} λ={lambda} x={x}"
                );
            }
        }
    }
}

proptest! {
    #[test]
    fn cdf_is_strictly_increasing(alpha in 0.51f64..1.0, lambda in 0.05f64..3.0,
                                  x in 1e-4f64..500.0, step in 1e-3f64..1.0) {
        let p = MlParams::new(alpha, lambda).unwrap();
        let x2 = x * (1.0 + step);
        prop_assert!(p.cdf(x) < p.cdf(x2));
        prop_assert!(p.cdf(x) >= 0.0 && p.cdf(x2) < 1.0);
    }

    #[test]
    fn survival_complements_cdf(alpha in 0.51f64..1.0, lambda in 0.05f64..3.0, x in 0.0f64..1e4) {
        let p = MlParams::new(alpha, lambda).unwrap();
        prop_assert!((p.cdf(x) + p.survival(x) - 1.0).abs() < 1e-13);
    }
}
