#include "ctts/cli.hpp"

int main(int argc, char** argv) { return ctts::cli::run(argc, argv); }
