use crowdsim::kernels::Derivative;
use crowdsim_py::{flatten_rows, parse_derivative};

#[test]
fn derivative_names() {
    assert_eq!(parse_derivative("value").unwrap(), Derivative::Value);
    assert_eq!(parse_derivative("ddx").unwrap(), Derivative::Ddx);
    assert_eq!(parse_derivative("ddy").unwrap(), Derivative::Ddy);
    assert!(parse_derivative("dxx").is_err());
}

#[test]
fn rows_are_flattened_row_major() {
    let rows = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
    assert_eq!(flatten_rows(&rows, 3, 2).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!(flatten_rows(&rows, 2, 3).is_err());
    assert!(flatten_rows(&[vec![1.0], vec![1.0, 2.0]], 1, 2).is_err());
}
