#include "duoseg/cli/commands.hpp"

int main(int argc, char** argv) { return duoseg::dispatch(argc, argv); }
