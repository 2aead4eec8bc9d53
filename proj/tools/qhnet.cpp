#include "qhnet/cli.hpp"

int main(int argc, char** argv) { return qhnet::run_cli(argc, argv); }
