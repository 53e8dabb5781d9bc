#include "commands.hpp"

int main(int argc, char** argv) { return robustaug::cli::run_cli(argc, argv); }
