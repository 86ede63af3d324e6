use std::process::ExitCode;

fn main() -> ExitCode {
    let outcomes: Vec<_> = simplex_tf_validation::all().iter().map(|criterion| {
        let outcome = criterion();
        println!("{outcome}");
        outcome
    }).collect();
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("acceptance: {passed} of {} criteria pass", outcomes.len());
    if passed == outcomes.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
