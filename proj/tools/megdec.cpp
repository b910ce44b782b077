#include "cli.hpp"

int main(int argc, char** argv) { return megdec::cli::run(argc, argv); }
