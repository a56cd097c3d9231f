#include "prokcat/cli.hpp"

int main(int argc, char** argv) { return prokcat::run_cli(argc, argv); }
