#include "tof/cli.hpp"

int main(int argc, char** argv) { return tof::cli::run(argc, argv); }
