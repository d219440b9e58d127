#include "fssuw/cli.hpp"

int main(int argc, char** argv) { return fssuw::cli::dispatch(argc, argv); }
