#include "enecg/cli/run.hpp"

int main(int argc, char** argv) { return enecg::cli::run(argc, argv); }
