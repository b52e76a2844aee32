#include "topobda/cli.hpp"

int main(int argc, char** argv) { return topobda::cli_main(argc, argv); }
