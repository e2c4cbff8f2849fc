#include "tgpssm/cli.hpp"

int main(int argc, char** argv) { return tgpssm::run(argc, argv); }
