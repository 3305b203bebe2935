#include "patternrl/cli.hpp"

int main(int argc, char** argv) { return patternrl::cli::dispatch(argc, argv); }
