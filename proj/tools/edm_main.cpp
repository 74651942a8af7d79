#include "edm/run_experiment.hpp"

int main(int argc, char** argv) { return edm::cli::main_entry(argc, argv); }
