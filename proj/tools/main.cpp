#include "hcp/cli.hpp"

int main(int argc, char** argv) { return hcp::cli::run(argc, argv); }
