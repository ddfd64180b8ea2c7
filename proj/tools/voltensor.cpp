#include "voltensor/cli.hpp"

int main(int argc, char** argv) { return voltensor::cli::run(argc, argv); }
