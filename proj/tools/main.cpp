#include "mpose/cli.hpp"

int main(int argc, char** argv) { return mpose::run_cli(argc, argv); }
