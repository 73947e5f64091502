mod common;

#[test]
fn invariance_falls_without_collapse() {
    let (start, end, var) = common::vicreg_on_noisy_copies(200);
    println!("l_inv {start:.4} -> {end:.4}, l_var {var:.4}");
    assert!(end < 0.1 * start, "l_inv {start} -> {end}");
    assert!(var < 0.1, "l_var {var}");
}
