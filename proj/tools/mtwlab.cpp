#include "mtwlab/cli.hpp"

int main(int argc, char** argv) { return mtwlab::run_cli(argc, argv); }
