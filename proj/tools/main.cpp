#include "alertcast/cli.hpp"

int main(int argc, char** argv) { return alertcast::run_cli(argc, argv); }
