#include "oltr/cli.hpp"

int main(int argc, char** argv) { return oltr::cli::dispatch(argc, argv); }
