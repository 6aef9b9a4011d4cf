#include "smoe/cli.hpp"

int main(int argc, char** argv) { return smoe::cli::run(argc, argv); }
