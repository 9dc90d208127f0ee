#include "cli.hpp"

int main(int argc, char** argv) { return vpcnn::cli::run(argc, argv); }
