#include "dmp3dad/cli.hpp"

int main(int argc, char** argv) { return dmp3dad::cli::main(argc, argv); }
