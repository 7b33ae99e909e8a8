#include "eiarag/cli.hpp"

int main(int argc, char** argv) { return eiarag::cli::run(argc, argv); }
