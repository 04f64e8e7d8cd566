#include "skpp/cli.hpp"

int main(int argc, char** argv) { return skpp::run_cli(argc, argv); }
