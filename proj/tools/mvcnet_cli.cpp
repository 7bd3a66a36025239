#include "mvcnet/cli.hpp"

int main(int argc, char** argv) { return mvcnet::run_cli(argc, argv); }
