#include "dsnet/cli.hpp"

int main(int argc, char** argv) { return dsnet::run_cli(argc, argv); }
