mod oracles;

#[test]
fn empty_data_reproduces_prior_moments() {
    oracles::gibbs::prior_moments(40_000).unwrap();
}

#[test]
fn geweke_joint_distribution() {
    // r and the simulated times mix slowly; thin hard so KS sees near-independent draws.
    oracles::gibbs::geweke(4000, 200).unwrap();
}

#[test]
fn lambda_conditional_matches_metropolis() {
    oracles::gibbs::lambda_vs_metropolis().unwrap();
}

#[test]
fn r_and_gamma0_conditional_matches_metropolis() {
    oracles::gibbs::r_gamma0_vs_metropolis().unwrap();
}
