#include "metanerv/commands.hpp"

int main(int argc, char** argv) { return metanerv::run_cli(argc, argv); }
