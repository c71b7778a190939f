#include "fine_imitate/commands.hpp"

int main(int argc, char** argv) { return fi::cli::run(argc, argv); }
