use std::fs;

use cvxint::domain::BoxDomain;
use cvxint::field::{GridSpec, ScalarField, VectorField};
use cvxint::io::{read_initial, read_raw, read_scalar, write_raw, write_scalar, write_vector, FieldHeader, HEADER_LEN};
use proptest::prelude::*;

fn grid(dim: usize) -> GridSpec {
    GridSpec::new(BoxDomain::unit(dim), 0.5, 9, 3, 1000, 1.0).unwrap()
}

#[test]
fn header_layout_is_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.bin");
    let mut u = ScalarField::zeros(&grid(2));
    u.values[0] = 1.5;
    write_scalar(&path, &u).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 8 * 4 * 81);
    assert_eq!(&bytes[..8], b"CVXINT01");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 9);
    assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 4);
    assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 0.5);
    assert_eq!(f64::from_le_bytes(bytes[64..72].try_into().unwrap()), 1.5);
}

#[test]
fn vector_fields_are_component_major() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.bin");
    let g = grid(2);
    let mut v = VectorField::zeros(&g);
    for (c, comp) in v.components.iter_mut().enumerate() {
        comp.iter_mut().enumerate().for_each(|(i, x)| *x = (c * 1000 + i) as f64);
    }
    write_vector(&path, &v).unwrap();
    let (h, data) = read_raw(&path).unwrap();
    assert_eq!(h, FieldHeader::for_grid(&g, 2));
    assert_eq!(data, v.components.concat());
}

#[test]
fn mismatches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.bin");
    write_scalar(&path, &ScalarField::zeros(&grid(1))).unwrap();
    assert!(read_scalar(&path, &grid(2)).is_err());
    assert!(read_initial(&path).is_err());

    let mut bytes = fs::read(&path).unwrap();
    bytes.pop();
    fs::write(&path, &bytes).unwrap();
    assert!(read_raw(&path).is_err());
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert!(read_raw(&path).is_err());

    let h = FieldHeader::for_grid(&grid(1), 1);
    assert!(write_raw(&path, &h, &[0.0; 3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scalar_round_trip(values in prop::collection::vec(-1e6f64..1e6, 36)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.bin");
        let g = grid(1);
        let u = ScalarField { grid: g.clone(), values };
        write_scalar(&path, &u).unwrap();
        prop_assert_eq!(read_scalar(&path, &g).unwrap(), u);
    }

    #[test]
    fn initial_slice_round_trip(values in prop::collection::vec(-10.0f64..10.0, 16)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u0.bin");
        let h = FieldHeader { dims: 1, components: 1, nx: 16, levels: 1, t_final: 1.0, x_lo: 0.0, x_hi: 1.0 };
        write_raw(&path, &h, &values).unwrap();
        let (back, data) = read_initial(&path).unwrap();
        prop_assert_eq!(back, h);
        prop_assert_eq!(data, values);
    }
}
