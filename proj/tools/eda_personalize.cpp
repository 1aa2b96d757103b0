#include "edap/cli.hpp"

int main(int argc, char** argv) { return edap::cli::dispatch(argc, argv); }
