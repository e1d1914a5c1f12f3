#include "cglm/cli.hpp"

int main(int argc, char** argv) { return cglm::run_cli(argc, argv); }
