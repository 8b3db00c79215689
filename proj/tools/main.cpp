#include "dcp/cli.hpp"

int main(int argc, char** argv) { return dcp::cli_main(argc, argv); }
