#include "aci/cli.hpp"

int main(int argc, char** argv) { return aci::run_command(argc, argv); }
