#include "mipl/cli.hpp"

int main(int argc, char** argv) { return mipl::cli::run(argc, argv); }
