#include "last/cli.hpp"

int main(int argc, char** argv) { return last::run_cli(argc, argv); }
