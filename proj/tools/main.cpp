#include "argpersona/cli.hpp"

int main(int argc, char** argv) { return argpersona::cli::run(argc, argv); }
