fn main() {
    std::process::exit(subgoal_critic::cli::main_entry());
}
